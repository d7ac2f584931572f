#include "msif/channels.hpp"

#include <string>

#include "msif/errors.hpp"

namespace msif {

Tensor stgcn_forward(const SpatioTemporalGraph& graph, const StgcnLayer& layer) {
  const Shape& sa = graph.attrs.shape();
  const Shape& sw = layer.weight.shape();
  if (sw.size() != 2 || sa.size() != 3 || sa[2] != sw[0])
    throw ShapeError("stgcn_forward: attrs " + shape_to_string(sa) +
                     " channel extent does not feed weight " + shape_to_string(sw));
  const Shape& sk = layer.temporal_kernel.shape();
  if (sk.size() != 3 || sk[0] != sw[1] || sk[1] != sw[1] || sk[2] % 2 == 0)
    throw ShapeError("stgcn_forward: temporal kernel " + shape_to_string(sk) +
                     " must be [C_out,C_out,odd] with C_out " + std::to_string(sw[1]));

  const std::int64_t t_len = sa[0];
  std::vector<Tensor> per_t;
  per_t.reserve(static_cast<std::size_t>(t_len));
  for (std::int64_t t = 0; t < t_len; ++t) {
    Tensor at = select0(graph.attrs, t);        // [N,C_in]
    Tensor an = select0(graph.adj_norm, t);     // [N,N]
    per_t.push_back(matmul(matmul(an, at), layer.weight));
  }
  Tensor h = prelu(stack0(per_t), layer.prelu_alpha);  // [T,N,C_out]
  const int pad = static_cast<int>((sk[2] - 1) / 2);
  return temporal_conv(h, layer.temporal_kernel, pad);
}

std::pair<Tensor, Tensor> lstm_step(const LstmCell& cell, const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev) {
  auto gate = [&](const Tensor& wx, const Tensor& wh, const Tensor& b) {
    return add(add(matmul(x, wx), matmul(h_prev, wh)), b);
  };
  Tensor f = sigmoid(gate(cell.w_xf, cell.w_hf, cell.b_f));
  Tensor i = sigmoid(gate(cell.w_xi, cell.w_hi, cell.b_i));
  Tensor o = sigmoid(gate(cell.w_xo, cell.w_ho, cell.b_o));
  Tensor g = tanh(gate(cell.w_xc, cell.w_hc, cell.b_c));
  Tensor c = add(mul(f, c_prev), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

Tensor image_channel_forward(const std::vector<Image>& frames, const ImageChannel& channel,
                             int expected_frames) {
  if (static_cast<int>(frames.size()) != expected_frames)
    throw ValueError("image_channel_forward: got " + std::to_string(frames.size()) +
                     " frames, expected " + std::to_string(expected_frames));
  const std::int64_t hid = channel.proj_w.dim(0);
  std::vector<Tensor> feats;
  feats.reserve(frames.size());
  for (const Image& frame : frames) {
    Image im = resize_bilinear(frame, channel.input_w, channel.input_h);
    Tensor x = Tensor::from({1, channel.input_h, channel.input_w}, im.pixels);
    Tensor c1 = prelu(add(conv2d(x, channel.conv1_w, 2, 1), channel.conv1_b), channel.conv1_alpha);
    Tensor c2 = prelu(add(conv2d(c1, channel.conv2_w, 2, 1), channel.conv2_b), channel.conv2_alpha);
    Tensor c3 = add(conv2d(c2, channel.conv3_w, 1, 1), channel.conv3_b);
    Tensor map = reshape(adaptive_avg_pool2d(c3, channel.map_rows, channel.map_cols),
                         {channel.map_rows, channel.map_cols});
    Tensor h = Tensor::zeros({1, hid});
    Tensor c = Tensor::zeros({1, hid});
    for (int r = 0; r < channel.map_rows; ++r) {
      Tensor row = reshape(select0(map, r), {1, channel.map_cols});
      auto [nh, nc] = lstm_step(channel.lstm, row, h, c);
      h = nh;
      c = nc;
    }
    feats.push_back(reshape(add(matmul(h, channel.proj_w), channel.proj_b), {2}));
  }
  return stack0(feats);  // [T,2]
}

}  // namespace msif
