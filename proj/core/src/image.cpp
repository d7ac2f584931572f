#include "msif/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "msif/errors.hpp"

namespace msif {

double Image::mean() const {
  if (pixels.empty()) return 0.0;
  double acc = 0.0;
  for (double p : pixels) acc += p;
  return acc / static_cast<double>(pixels.size());
}

Image apply_gamma(const Image& im, double g) {
  if (!(g > 0.0)) throw ValueError("apply_gamma: gamma must be > 0, got " + std::to_string(g));
  Image out = im;
  for (auto& p : out.pixels) {
    if (p < 0.0 || p > 1.0)
      throw ValueError("apply_gamma: pixel value " + std::to_string(p) + " outside [0,1]");
    p = std::pow(p, g);
  }
  return out;
}

Image quantize16(const Image& im) {
  Image out = im;
  for (auto& p : out.pixels) {
    const double c = std::clamp(p, 0.0, 1.0);
    p = std::round(c * 65535.0) / 65535.0;
  }
  return out;
}

Image resize_bilinear(const Image& im, int new_w, int new_h) {
  if (new_w < 1 || new_h < 1)
    throw ValueError("resize_bilinear: target size must be positive");
  if (im.width < 1 || im.height < 1) throw ValueError("resize_bilinear: empty source image");
  if (new_w == im.width && new_h == im.height) return im;
  Image out = Image::zeros(new_w, new_h);
  const double sx = static_cast<double>(im.width) / new_w;
  const double sy = static_cast<double>(im.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    // pixel-center convention: dst center maps to src center
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, im.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, im.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, im.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, im.width - 1);
      const double wx = fx - x0;
      const double top = im.at(y0, x0) * (1.0 - wx) + im.at(y0, x1) * wx;
      const double bot = im.at(y1, x0) * (1.0 - wx) + im.at(y1, x1) * wx;
      out.at(y, x) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

void write_pgm16(const std::string& path, const Image& im) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pgm16: cannot open " + path + " for writing");
  f << "P5\n" << im.width << " " << im.height << "\n65535\n";
  std::vector<unsigned char> buf(im.pixels.size() * 2);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) {
    const double c = std::clamp(im.pixels[i], 0.0, 1.0);
    const auto v = static_cast<std::uint16_t>(std::lround(c * 65535.0));
    buf[2 * i] = static_cast<unsigned char>(v >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write_pgm16: short write to " + path);
}

Image read_pgm16(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("read_pgm16: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw CorruptFileError("read_pgm16: " + path + " is not a binary PGM");
  long w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w < 1 || h < 1)
    throw CorruptFileError("read_pgm16: bad header in " + path);
  if (maxval != 65535)
    throw CorruptFileError("read_pgm16: " + path + " maxval " + std::to_string(maxval) +
                           ", expected 65535");
  f.get();  // single whitespace byte after maxval
  Image im = Image::zeros(static_cast<int>(w), static_cast<int>(h));
  std::vector<unsigned char> buf(im.pixels.size() * 2);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw CorruptFileError("read_pgm16: truncated pixel data in " + path);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) {
    const std::uint16_t v =
        static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    im.pixels[i] = v / 65535.0;
  }
  return im;
}

}  // namespace msif
