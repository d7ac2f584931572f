#pragma once

#include <string>

#include "msif/errors.hpp"

namespace msif {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Axis-aligned box, top-left / bottom-right vertices in pixel coordinates.
struct BBox {
  double x_tl = 0.0;
  double y_tl = 0.0;
  double x_br = 0.0;
  double y_br = 0.0;

  double width() const { return x_br - x_tl; }
  double height() const { return y_br - y_tl; }
};

inline Vec2 bbox_center(Vec2 tl, Vec2 br) {
  if (!(tl.x < br.x) || !(tl.y < br.y))
    throw ValueError("bbox_center: degenerate box, tl (" + std::to_string(tl.x) + ", " +
                     std::to_string(tl.y) + ") not strictly above-left of br (" +
                     std::to_string(br.x) + ", " + std::to_string(br.y) + ")");
  return Vec2{(tl.x + br.x) / 2.0, (tl.y + br.y) / 2.0};
}

inline Vec2 bbox_center(const BBox& b) {
  return bbox_center(Vec2{b.x_tl, b.y_tl}, Vec2{b.x_br, b.y_br});
}

}  // namespace msif
