#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msif/rng.hpp"

namespace msif {

using Shape = std::vector<std::int64_t>;

std::string shape_to_string(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

// One node of the computation tape. Nodes are created in forward order and
// linked through their parents, so any walk that visits parents first is
// topological by construction.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same extent as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Pulls this node's grad into its parents' grads. Empty for leaves.
  std::function<void(TensorNode&)> backward;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad();
};

}  // namespace detail

// Dense float-64 array with optional reverse-mode gradient. Copying a Tensor
// copies the handle, not the buffer; use clone() for a detached deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor from(Shape shape, std::vector<double> data);
  // Leaf with requires_grad set; entries uniform in [-bound, bound].
  static Tensor param_uniform(Shape shape, double bound, Rng& rng);
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;
  std::int64_t dim(int i) const;
  int rank() const;

  const std::vector<double>& values() const;
  // Mutating values of a non-leaf would silently desynchronize the tape.
  std::vector<double>& mutable_values();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool is_leaf() const;

  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  // Detached deep copy (leaf, no grad history).
  Tensor clone() const;
  bool all_finite() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// ---- elementwise arithmetic (numpy-style trailing broadcast) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, double b);
Tensor div(double a, const Tensor& b);
Tensor neg(const Tensor& a);

// ---- unary maps ----
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
// Single learnable slope shared across all elements; alpha is a scalar tensor.
Tensor prelu(const Tensor& a, const Tensor& alpha);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D cross-correlation. input [Cin,H,W], kernels [Cout,Cin,kh,kw], zero pad.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

// Convolution along the time axis of a [T,N,Cin] tensor with kernels
// [Cout,Cin,kt] and zero padding; output [T,N,Cout] when pad = (kt-1)/2.
Tensor temporal_conv(const Tensor& x, const Tensor& kernels, int padding);

// Full learned map over the time axis: x [Tin,N,C], weight [Tout,Tin],
// out[t,n,c] = sum_s weight[t,s] * x[s,n,c].
Tensor time_linear(const Tensor& x, const Tensor& weight);

// Mean pooling of a [C,H,W] map onto a [C,oh,ow] grid.
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);

// ---- reductions ----
Tensor sum(const Tensor& a);   // rank-0 result
Tensor mean(const Tensor& a);  // rank-0 result

// ---- structure ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor broadcast_to(const Tensor& a, Shape shape);
Tensor select0(const Tensor& a, std::int64_t index);      // drop leading axis
Tensor stack0(const std::vector<Tensor>& parts);          // new leading axis
Tensor slice_last(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor concat_last(const std::vector<Tensor>& parts);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
// every requires_grad tensor reachable from the loss.
void backward(const Tensor& loss);

}  // namespace msif
