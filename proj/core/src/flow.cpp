#include "msif/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "msif/errors.hpp"
#include "msif/parallel.hpp"

namespace msif {

namespace {

constexpr float kFloMagic = 202021.25f;  // spells "PIEH" in little-endian bytes

struct Grid {
  int w = 0, h = 0;
  std::vector<double> d;
  double at(int y, int x) const {
    return d[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
  double& at(int y, int x) {
    return d[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
  static Grid zeros(int w, int h) {
    Grid g;
    g.w = w;
    g.h = h;
    g.d.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
    return g;
  }
};

Grid from_image(const Image& im) {
  Grid g;
  g.w = im.width;
  g.h = im.height;
  g.d = im.pixels;
  return g;
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// 5-tap binomial smoothing, clamped borders, then 2x decimation.
Grid pyr_down(const Grid& src) {
  static const double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  Grid tmp = Grid::zeros(src.w, src.h);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t) acc += k[t + 2] * src.at(y, clampi(x + t, 0, src.w - 1));
      tmp.at(y, x) = acc;
    }
  Grid tmp2 = Grid::zeros(src.w, src.h);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t) acc += k[t + 2] * tmp.at(clampi(y + t, 0, src.h - 1), x);
      tmp2.at(y, x) = acc;
    }
  Grid out = Grid::zeros((src.w + 1) / 2, (src.h + 1) / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = tmp2.at(y * 2, x * 2);
  return out;
}

double sample_bilinear(const Grid& g, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(g.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(g.h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, g.w - 1);
  const int y1 = std::min(y0 + 1, g.h - 1);
  const double wx = x - x0;
  const double wy = y - y0;
  const double top = g.at(y0, x0) * (1.0 - wx) + g.at(y0, x1) * wx;
  const double bot = g.at(y1, x0) * (1.0 - wx) + g.at(y1, x1) * wx;
  return top * (1.0 - wy) + bot * wy;
}

Grid resize_grid(const Grid& src, int nw, int nh) {
  Grid out = Grid::zeros(nw, nh);
  const double sx = static_cast<double>(src.w) / nw;
  const double sy = static_cast<double>(src.h) / nh;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      out.at(y, x) = sample_bilinear(src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

// Summed-area table: S(y,x) = sum over rows < y, cols < x.
struct Integral {
  int w = 0, h = 0;
  std::vector<double> s;  // (h+1) x (w+1)
  void build(const Grid& g) {
    w = g.w;
    h = g.h;
    s.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    for (int y = 0; y < h; ++y) {
      double row = 0.0;
      for (int x = 0; x < w; ++x) {
        row += g.at(y, x);
        s[static_cast<std::size_t>(y + 1) * (w + 1) + (x + 1)] =
            s[static_cast<std::size_t>(y) * (w + 1) + (x + 1)] + row;
      }
    }
  }
  // inclusive rect, clipped to bounds
  double rect(int x0, int y0, int x1, int y1) const {
    x0 = clampi(x0, 0, w - 1);
    y0 = clampi(y0, 0, h - 1);
    x1 = clampi(x1, 0, w - 1);
    y1 = clampi(y1, 0, h - 1);
    const auto at = [&](int yy, int xx) {
      return s[static_cast<std::size_t>(yy) * (w + 1) + xx];
    };
    return at(y1 + 1, x1 + 1) - at(y0, x1 + 1) - at(y1 + 1, x0 + 1) + at(y0, x0 + 1);
  }
};

}  // namespace

FlowField dense_flow(const Image& frame_a, const Image& frame_b, const FlowParams& params) {
  if (frame_a.width != frame_b.width || frame_a.height != frame_b.height)
    throw ShapeError("dense_flow: frame sizes differ, " + std::to_string(frame_a.width) + "x" +
                     std::to_string(frame_a.height) + " vs " + std::to_string(frame_b.width) +
                     "x" + std::to_string(frame_b.height));
  if (frame_a.width < 2 || frame_a.height < 2)
    throw ShapeError("dense_flow: frames too small");
  if (params.window < 3 || params.window % 2 == 0)
    throw ValueError("dense_flow: window must be odd and >= 3");
  if (params.levels < 1 || params.iters < 1)
    throw ValueError("dense_flow: levels and iters must be >= 1");

  // Don't let the pyramid shrink below the analysis window.
  int levels = params.levels;
  while (levels > 1 && ((frame_a.width >> (levels - 1)) < params.window ||
                        (frame_a.height >> (levels - 1)) < params.window))
    --levels;

  std::vector<Grid> pa, pb;
  pa.push_back(from_image(frame_a));
  pb.push_back(from_image(frame_b));
  for (int l = 1; l < levels; ++l) {
    pa.push_back(pyr_down(pa.back()));
    pb.push_back(pyr_down(pb.back()));
  }

  const int half = params.window / 2;
  Grid u, v;
  for (int l = levels - 1; l >= 0; --l) {
    const Grid& A = pa[static_cast<std::size_t>(l)];
    const Grid& B = pb[static_cast<std::size_t>(l)];
    const int w = A.w, h = A.h;
    if (l == levels - 1) {
      u = Grid::zeros(w, h);
      v = Grid::zeros(w, h);
    } else {
      const double sx = static_cast<double>(w) / u.w;
      const double sy = static_cast<double>(h) / u.h;
      Grid nu = resize_grid(u, w, h);
      Grid nv = resize_grid(v, w, h);
      for (auto& e : nu.d) e *= sx;
      for (auto& e : nv.d) e *= sy;
      u = std::move(nu);
      v = std::move(nv);
    }

    // spatial gradients of the template frame, central differences
    Grid ix = Grid::zeros(w, h), iy = Grid::zeros(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        ix.at(y, x) = (A.at(y, clampi(x + 1, 0, w - 1)) - A.at(y, clampi(x - 1, 0, w - 1))) / 2.0;
        iy.at(y, x) = (A.at(clampi(y + 1, 0, h - 1), x) - A.at(clampi(y - 1, 0, h - 1), x)) / 2.0;
      }

    Grid ixx = Grid::zeros(w, h), ixy = Grid::zeros(w, h), iyy = Grid::zeros(w, h);
    for (std::size_t i = 0; i < ix.d.size(); ++i) {
      ixx.d[i] = ix.d[i] * ix.d[i];
      ixy.d[i] = ix.d[i] * iy.d[i];
      iyy.d[i] = iy.d[i] * iy.d[i];
    }
    Integral sxx, sxy, syy;
    sxx.build(ixx);
    sxy.build(ixy);
    syy.build(iyy);

    // textured-pixel mask from the averaged structure tensor
    std::vector<char> textured(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int x0 = x - half, x1 = x + half, y0 = y - half, y1 = y + half;
        const double cnt = static_cast<double>(
            (clampi(x1, 0, w - 1) - clampi(x0, 0, w - 1) + 1) *
            (clampi(y1, 0, h - 1) - clampi(y0, 0, h - 1) + 1));
        const double gxx = sxx.rect(x0, y0, x1, y1) / cnt;
        const double gxy = sxy.rect(x0, y0, x1, y1) / cnt;
        const double gyy = syy.rect(x0, y0, x1, y1) / cnt;
        const double tr = gxx + gyy;
        const double det = gxx * gyy - gxy * gxy;
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
        const double lmin = tr / 2.0 - disc;
        textured[static_cast<std::size_t>(y) * w + x] = lmin >= params.eig_threshold ? 1 : 0;
      }

    Grid it = Grid::zeros(w, h), ixt = Grid::zeros(w, h), iyt = Grid::zeros(w, h);
    for (int iter = 0; iter < params.iters; ++iter) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double bw = sample_bilinear(B, x + u.at(y, x), y + v.at(y, x));
          const double diff = bw - A.at(y, x);
          it.at(y, x) = diff;
          ixt.at(y, x) = ix.at(y, x) * diff;
          iyt.at(y, x) = iy.at(y, x) * diff;
        }
      Integral sxt, syt;
      sxt.build(ixt);
      syt.build(iyt);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (!textured[static_cast<std::size_t>(y) * w + x]) {
            u.at(y, x) = 0.0;
            v.at(y, x) = 0.0;
            continue;
          }
          const int x0 = x - half, x1 = x + half, y0 = y - half, y1 = y + half;
          const double gxx = sxx.rect(x0, y0, x1, y1);
          const double gxy = sxy.rect(x0, y0, x1, y1);
          const double gyy = syy.rect(x0, y0, x1, y1);
          const double bx = -sxt.rect(x0, y0, x1, y1);
          const double by = -syt.rect(x0, y0, x1, y1);
          const double det = gxx * gyy - gxy * gxy;
          if (det <= 1e-12) continue;
          const double du = (gyy * bx - gxy * by) / det;
          const double dv = (gxx * by - gxy * bx) / det;
          if (!std::isfinite(du) || !std::isfinite(dv)) continue;
          u.at(y, x) += du;
          v.at(y, x) += dv;
        }
    }
  }

  FlowField out = FlowField::zeros(frame_a.width, frame_a.height);
  for (std::size_t i = 0; i < u.d.size(); ++i) {
    out.u[i] = static_cast<float>(u.d[i]);
    out.v[i] = static_cast<float>(v.d[i]);
  }
  return out;
}

namespace {

std::vector<double> pool_box(const FlowField& flow, int x0, int y0, int nx, int ny) {
  std::vector<double> out(50, 0.0);
  for (int ci = 0; ci < 5; ++ci) {
    const int r0 = (ci * ny) / 5;
    const int r1 = ((ci + 1) * ny + 4) / 5;
    for (int cj = 0; cj < 5; ++cj) {
      const int c0 = (cj * nx) / 5;
      const int c1 = ((cj + 1) * nx + 4) / 5;
      double su = 0.0, sv = 0.0;
      for (int r = r0; r < r1; ++r) {
        const int py = clampi(y0 + r, 0, flow.height - 1);
        for (int c = c0; c < c1; ++c) {
          const int px = clampi(x0 + c, 0, flow.width - 1);
          su += flow.u[flow.idx(py, px)];
          sv += flow.v[flow.idx(py, px)];
        }
      }
      const double n = static_cast<double>((r1 - r0) * (c1 - c0));
      out[static_cast<std::size_t>(ci * 5 + cj)] = su / n;
      out[static_cast<std::size_t>(25 + ci * 5 + cj)] = sv / n;
    }
  }
  return out;
}

}  // namespace

std::vector<double> roi_pool_flow(const FlowField& flow, Vec2 center) {
  if (center.x < 0.0 || center.x >= flow.width || center.y < 0.0 || center.y >= flow.height)
    throw ValueError("roi_pool_flow: center (" + std::to_string(center.x) + ", " +
                     std::to_string(center.y) + ") outside " + std::to_string(flow.width) + "x" +
                     std::to_string(flow.height) + " field");
  const int cx = static_cast<int>(std::lround(center.x));
  const int cy = static_cast<int>(std::lround(center.y));
  return pool_box(flow, cx - 12, cy - 12, 25, 25);
}

std::vector<double> roi_pool_flow(const FlowField& flow, const BBox& box) {
  const int x0 = static_cast<int>(std::lround(box.x_tl));
  const int x1 = static_cast<int>(std::lround(box.x_br));
  const int y0 = static_cast<int>(std::lround(box.y_tl));
  const int y1 = static_cast<int>(std::lround(box.y_br));
  if (x1 <= x0 || y1 <= y0) {
    // degenerate box: pool a fixed 25x25 region at its midpoint instead
    return roi_pool_flow(flow, Vec2{(box.x_tl + box.x_br) / 2.0, (box.y_tl + box.y_br) / 2.0});
  }
  Vec2 c{(box.x_tl + box.x_br) / 2.0, (box.y_tl + box.y_br) / 2.0};
  if (c.x < 0.0 || c.x >= flow.width || c.y < 0.0 || c.y >= flow.height)
    throw ValueError("roi_pool_flow: box center (" + std::to_string(c.x) + ", " +
                     std::to_string(c.y) + ") outside " + std::to_string(flow.width) + "x" +
                     std::to_string(flow.height) + " field");
  return pool_box(flow, x0, y0, x1 - x0 + 1, y1 - y0 + 1);
}

Tensor flow_node_attrs(const std::vector<double>& pooled, const Tensor& projection) {
  if (pooled.size() != 50)
    throw ShapeError("flow_node_attrs: pooled vector has " + std::to_string(pooled.size()) +
                     " entries, expected 50");
  if (projection.shape() != Shape{50, 2})
    throw ShapeError("flow_node_attrs: projection shape " + shape_to_string(projection.shape()) +
                     ", expected [50, 2]");
  Tensor row = Tensor::from({1, 50}, pooled);
  return reshape(matmul(row, projection), {2});
}

std::vector<FlowField> scene_flows(const std::vector<Image>& frames, const FlowParams& params) {
  if (frames.size() < 2) return {};
  std::vector<FlowField> out(frames.size() - 1);
  parallel_for(static_cast<std::int64_t>(out.size()), [&](std::int64_t i) {
    out[static_cast<std::size_t>(i)] =
        dense_flow(frames[static_cast<std::size_t>(i)], frames[static_cast<std::size_t>(i) + 1],
                   params);
  });
  return out;
}

void write_flo(const std::string& path, const FlowField& flow) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_flo: cannot open " + path + " for writing");
  const std::int32_t w = flow.width, h = flow.height;
  f.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      row[static_cast<std::size_t>(2 * x)] = flow.u[flow.idx(y, x)];
      row[static_cast<std::size_t>(2 * x) + 1] = flow.v[flow.idx(y, x)];
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * 4));
  }
  if (!f) throw IoError("write_flo: short write to " + path);
}

FlowField read_flo(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("read_flo: cannot open " + path);
  float magic = 0.0f;
  std::int32_t w = 0, h = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  if (!f || magic != kFloMagic)
    throw CorruptFileError("read_flo: " + path + " is not a flow file");
  if (w < 1 || h < 1) throw CorruptFileError("read_flo: bad dimensions in " + path);
  FlowField flow = FlowField::zeros(w, h);
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    if (f.gcount() != static_cast<std::streamsize>(row.size() * 4))
      throw CorruptFileError("read_flo: truncated data in " + path);
    for (int x = 0; x < w; ++x) {
      flow.u[flow.idx(y, x)] = row[static_cast<std::size_t>(2 * x)];
      flow.v[flow.idx(y, x)] = row[static_cast<std::size_t>(2 * x) + 1];
    }
  }
  return flow;
}

}  // namespace msif
