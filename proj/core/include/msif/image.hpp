#pragma once

#include <string>
#include <vector>

namespace msif {

// Grayscale image, row-major, intensity in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  static Image zeros(int w, int h) {
    Image im;
    im.width = w;
    im.height = h;
    im.pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0);
    return im;
  }

  double& at(int y, int x) {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
  double at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }

  double mean() const;
};

// Elementwise power law; g > 1 darkens. Throws on g <= 0 or values outside [0,1].
Image apply_gamma(const Image& im, double g);

// Snap every pixel onto the 16-bit grid k/65535 used by the PGM writer, so an
// in-memory image and its file round-trip compare bit-equal.
Image quantize16(const Image& im);

Image resize_bilinear(const Image& im, int new_w, int new_h);

// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
void write_pgm16(const std::string& path, const Image& im);
Image read_pgm16(const std::string& path);

}  // namespace msif
