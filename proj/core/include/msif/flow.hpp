#pragma once

#include <string>
#include <vector>

#include "msif/geometry.hpp"
#include "msif/image.hpp"
#include "msif/tensor.hpp"

namespace msif {

struct FlowParams {
  int window = 15;          // odd square window for the least-squares system
  int levels = 3;           // pyramid levels
  int iters = 3;            // warp iterations per level
  double eig_threshold = 1e-6;  // min eigenvalue of the averaged structure tensor
};

// Dense per-pixel motion in px/frame. Stored as float-32 so cached .flo files
// round-trip bit-exactly.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;

  static FlowField zeros(int w, int h) {
    FlowField f;
    f.width = w;
    f.height = h;
    f.u.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0f);
    f.v.assign(f.u.size(), 0.0f);
    return f;
  }

  std::size_t idx(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x);
  }
};

// Pyramidal Lucas-Kanade flow from frame_a to frame_b: at each pixel the 2x2
// least-squares system over a window of the brightness-constancy constraint.
// Pixels whose averaged structure tensor has min eigenvalue below threshold
// get flow 0.
FlowField dense_flow(const Image& frame_a, const Image& frame_b, const FlowParams& params);

// Average-pools both flow channels over the box onto a 5x5 grid; returns 50
// values, channel-major (25 u then 25 v). Out-of-bounds cells clamp to the
// border. A degenerate box falls back to a 25x25 px box at its center.
std::vector<double> roi_pool_flow(const FlowField& flow, const BBox& box);
std::vector<double> roi_pool_flow(const FlowField& flow, Vec2 center);

// Learned 50->2 projection bridging pooled flow to graph node attributes.
Tensor flow_node_attrs(const std::vector<double>& pooled, const Tensor& projection);

// Flow for every consecutive frame pair; result[t] maps frame t -> t+1.
std::vector<FlowField> scene_flows(const std::vector<Image>& frames, const FlowParams& params);

// Middlebury .flo format (magic float "PIEH", int32 w/h, interleaved f32 u,v).
void write_flo(const std::string& path, const FlowField& flow);
FlowField read_flo(const std::string& path);

}  // namespace msif
