#include "msif/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "msif/errors.hpp"

namespace msif {

namespace {

constexpr int kWidth = 800;
constexpr int kHeight = 480;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 24;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 52;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range pad_range(double lo, double hi) {
  if (!(lo < hi)) {  // degenerate or reversed: open a window around the value
    const double pad = std::abs(lo) > 1e-12 ? std::abs(lo) * 0.1 : 1.0;
    return {lo - pad, lo + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

// Round tick spacing to 1/2/5 * 10^k near span/target.
std::vector<double> ticks(const Range& r, int target = 6) {
  const double span = r.hi - r.lo;
  double raw = span / target;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  double t = std::ceil(r.lo / step) * step;
  for (; t <= r.hi + step * 1e-9; t += step) out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  return out;
}

void open_doc(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
     << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" "
        "text-anchor=\"middle\">"
     << escape(title) << "</text>\n";
}

void axes(std::ostringstream& os, const Range& xr, const Range& yr, const std::string& x_label,
          const std::string& y_label) {
  const int x0 = kMarginLeft;
  const int x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom;
  const int y1 = kMarginTop;
  auto sx = [&](double x) { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto sy = [&](double y) { return y0 - (y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  for (double t : ticks(xr)) {
    const double px = sx(t);
    os << "<line x1=\"" << num(px) << "\" y1=\"" << y0 << "\" x2=\"" << num(px) << "\" y2=\"" << y1
       << "\" stroke=\"#dddddd\"/>\n"
       << "<text x=\"" << num(px) << "\" y=\"" << y0 + 18
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << num(t)
       << "</text>\n";
  }
  for (double t : ticks(yr)) {
    const double py = sy(t);
    os << "<line x1=\"" << x0 << "\" y1=\"" << num(py) << "\" x2=\"" << x1 << "\" y2=\"" << num(py)
       << "\" stroke=\"#dddddd\"/>\n"
       << "<text x=\"" << x0 - 8 << "\" y=\"" << num(py + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num(t)
       << "</text>\n";
  }
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12
     << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n"
     << "<text x=\"18\" y=\"" << (y0 + y1) / 2
     << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
        "transform=\"rotate(-90 18 "
     << (y0 + y1) / 2 << ")\">" << escape(y_label) << "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series) {
  if (series.empty()) throw ValueError("svg_line_chart: no series");
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  bool first = true;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw ShapeError("svg_line_chart: series " + s.label + " has " + std::to_string(s.x.size()) +
                       " x values and " + std::to_string(s.y.size()) + " y values");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (first) {
        xlo = xhi = s.x[i];
        ylo = yhi = s.y[i];
        first = false;
      } else {
        xlo = std::min(xlo, s.x[i]);
        xhi = std::max(xhi, s.x[i]);
        ylo = std::min(ylo, s.y[i]);
        yhi = std::max(yhi, s.y[i]);
      }
    }
  }
  if (first) throw ValueError("svg_line_chart: no finite points to draw");
  const Range xr = pad_range(xlo, xhi);
  const Range yr = pad_range(ylo, yhi);

  std::ostringstream os;
  open_doc(os, title);
  axes(os, xr, yr, x_label, y_label);

  const int x0 = kMarginLeft;
  const int x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom;
  const int y1 = kMarginTop;
  auto sx = [&](double x) { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto sy = [&](double y) { return y0 - (y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << num(sx(s.x[i])) << "," << num(sy(s.y[i])) << " ";
    }
    os << "\"/>\n";
    const int ly = kMarginTop + 16 + static_cast<int>(si) * 18;
    os << "<line x1=\"" << x1 - 150 << "\" y1=\"" << ly - 4 << "\" x2=\"" << x1 - 126 << "\" y2=\""
       << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << x1 - 120 << "\" y=\"" << ly
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_histogram(const std::string& title, const std::string& x_label,
                          const std::vector<double>& values, int bins) {
  if (values.empty()) throw ValueError("svg_histogram: no values");
  if (bins < 1) throw ValueError("svg_histogram: bin count must be >= 1");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    if (!std::isfinite(v)) throw ValueError("svg_histogram: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo < hi)) {  // all values equal: one spike bin around the value
    bins = 1;
    const double pad = std::abs(lo) > 1e-12 ? std::abs(lo) * 0.05 : 0.5;
    lo -= pad;
    hi += pad;
  }
  bins = std::min<int>(bins, static_cast<int>(values.size()));

  std::vector<int> counts(bins, 0);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    counts[b] += 1;
  }
  const int peak = *std::max_element(counts.begin(), counts.end());

  const Range xr = pad_range(lo, hi);
  const Range yr{0.0, peak * 1.08};
  std::ostringstream os;
  open_doc(os, title);
  axes(os, xr, yr, x_label, "count");

  const int x0 = kMarginLeft;
  const int x1 = kWidth - kMarginRight;
  const int y0 = kHeight - kMarginBottom;
  const int y1 = kMarginTop;
  auto sx = [&](double x) { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto sy = [&](double y) { return y0 - (y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

  const double bw = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) {
    if (counts[b] == 0) continue;
    const double bx0 = sx(lo + b * bw);
    const double bx1 = sx(lo + (b + 1) * bw);
    const double by = sy(counts[b]);
    os << "<rect x=\"" << num(bx0 + 0.5) << "\" y=\"" << num(by) << "\" width=\""
       << num(std::max(1.0, bx1 - bx0 - 1.0)) << "\" height=\"" << num(sy(0) - by)
       << "\" fill=\"#1f77b4\" fill-opacity=\"0.85\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << content;
  if (!f) throw IoError("short write to " + path);
}

}  // namespace msif
