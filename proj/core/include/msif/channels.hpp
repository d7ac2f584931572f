#pragma once

#include <utility>
#include <vector>

#include "msif/graph.hpp"
#include "msif/image.hpp"
#include "msif/tensor.hpp"

namespace msif {

// Graph convolution followed by a temporal convolution, per time step:
// adj_norm[t] * attrs[t] * weight, PReLU, then conv along T.
struct StgcnLayer {
  Tensor weight;           // [C_in, C_out]
  Tensor temporal_kernel;  // [C_out, C_out, kt], kt odd
  Tensor prelu_alpha;      // scalar
};

Tensor stgcn_forward(const SpatioTemporalGraph& graph, const StgcnLayer& layer);

struct LstmCell {
  Tensor w_xf, w_hf, w_xi, w_hi, w_xo, w_ho, w_xc, w_hc;  // [in,hid] / [hid,hid]
  Tensor b_f, b_i, b_o, b_c;                              // [hid]
};

// One step of the standard gated recurrence; x [1,in], h/c [1,hid].
std::pair<Tensor, Tensor> lstm_step(const LstmCell& cell, const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev);

// Conv stack to a small single-channel map, rows of that map fed through the
// LSTM, final hidden state projected to the 2-wide frame feature.
struct ImageChannel {
  int input_w = 40;
  int input_h = 30;
  int map_rows = 8;
  int map_cols = 5;
  Tensor conv1_w, conv1_b, conv1_alpha;  // [8,1,3,3] stride 2
  Tensor conv2_w, conv2_b, conv2_alpha;  // [16,8,3,3] stride 2
  Tensor conv3_w, conv3_b;               // [1,16,3,3] stride 1
  LstmCell lstm;                         // input map_cols wide
  Tensor proj_w, proj_b;                 // [hid,2], [2]
};

// frames.size() must equal expected_frames; output [T, 2].
Tensor image_channel_forward(const std::vector<Image>& frames, const ImageChannel& channel,
                             int expected_frames);

}  // namespace msif
