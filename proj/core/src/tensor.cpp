#include "msif/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msif/errors.hpp"

namespace msif {

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace detail {

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

}  // namespace detail

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

void check_shape(const Shape& s, const char* who) {
  for (auto d : s)
    if (d <= 0)
      throw ShapeError(std::string(who) + ": invalid dimension in shape " + shape_to_string(s));
}

NodePtr new_node(Shape shape, std::vector<double> value, std::vector<NodePtr> parents = {}) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

Shape broadcast_result(const Shape& a, const Shape& b, const char* op) {
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    const std::int64_t da = i < ra ? a[ra - 1 - i] : 1;
    const std::int64_t db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(a) +
                       " with " + shape_to_string(b));
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

// Flat index into `from` for every flat index of `to`, with stride 0 on
// broadcast (size-1 or missing) axes.
std::vector<std::int64_t> broadcast_index_map(const Shape& from, const Shape& to) {
  const int rt = static_cast<int>(to.size());
  const int rf = static_cast<int>(from.size());
  std::vector<std::int64_t> fstride(rt, 0);
  std::int64_t s = 1;
  for (int i = rf - 1; i >= 0; --i) {
    if (from[i] != 1) fstride[rt - rf + i] = s;
    s *= from[i];
  }
  const std::int64_t n = shape_numel(to);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> coord(rt, 0);
  for (std::int64_t idx = 0; idx < n; ++idx) {
    std::int64_t f = 0;
    for (int i = 0; i < rt; ++i) f += coord[i] * fstride[i];
    map[static_cast<std::size_t>(idx)] = f;
    for (int i = rt - 1; i >= 0; --i) {
      if (++coord[i] < to[i]) break;
      coord[i] = 0;
    }
  }
  return map;
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  if (!a.defined() || !b.defined()) throw ValueError(std::string(name) + ": undefined tensor");
  const NodePtr pa = a.node_ptr();
  const NodePtr pb = b.node_ptr();
  Shape out_shape = broadcast_result(pa->shape, pb->shape, name);
  const std::int64_t n = shape_numel(out_shape);
  const bool same = pa->shape == pb->shape;

  std::vector<std::int64_t> ia, ib;
  if (!same) {
    ia = broadcast_index_map(pa->shape, out_shape);
    ib = broadcast_index_map(pb->shape, out_shape);
  }
  auto ai = [&](std::int64_t i) { return same ? i : ia[static_cast<std::size_t>(i)]; };
  auto bi = [&](std::int64_t i) { return same ? i : ib[static_cast<std::size_t>(i)]; };

  std::vector<double> value(static_cast<std::size_t>(n));
  const auto& av = pa->value;
  const auto& bv = pb->value;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = av[static_cast<std::size_t>(ai(i))];
    const double y = bv[static_cast<std::size_t>(bi(i))];
    double r = 0.0;
    switch (op) {
      case BinOp::kAdd: r = x + y; break;
      case BinOp::kSub: r = x - y; break;
      case BinOp::kMul: r = x * y; break;
      case BinOp::kDiv: r = x / y; break;
    }
    value[static_cast<std::size_t>(i)] = r;
  }

  auto node = new_node(std::move(out_shape), std::move(value), {pa, pb});
  if (node->requires_grad) {
    node->backward = [op, pa, pb, same, ia = std::move(ia), ib = std::move(ib)](TensorNode& self) {
      const std::int64_t n = self.numel();
      auto aidx = [&](std::int64_t i) { return same ? i : ia[static_cast<std::size_t>(i)]; };
      auto bidx = [&](std::int64_t i) { return same ? i : ib[static_cast<std::size_t>(i)]; };
      const bool ga = pa->requires_grad;
      const bool gb = pb->requires_grad;
      if (ga) pa->ensure_grad();
      if (gb) pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double g = self.grad[static_cast<std::size_t>(i)];
        const std::size_t j = static_cast<std::size_t>(aidx(i));
        const std::size_t k = static_cast<std::size_t>(bidx(i));
        switch (op) {
          case BinOp::kAdd:
            if (ga) pa->grad[j] += g;
            if (gb) pb->grad[k] += g;
            break;
          case BinOp::kSub:
            if (ga) pa->grad[j] += g;
            if (gb) pb->grad[k] -= g;
            break;
          case BinOp::kMul:
            if (ga) pa->grad[j] += g * pb->value[k];
            if (gb) pb->grad[k] += g * pa->value[j];
            break;
          case BinOp::kDiv: {
            const double y = pb->value[k];
            if (ga) pa->grad[j] += g / y;
            if (gb) pb->grad[k] -= g * pa->value[j] / (y * y);
            break;
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

// out = f(x) elementwise; dfdx receives (x, f(x)).
template <class F, class DF>
Tensor unary(const Tensor& a, const char* name, F f, DF dfdx) {
  if (!a.defined()) throw ValueError(std::string(name) + ": undefined tensor");
  const NodePtr pa = a.node_ptr();
  std::vector<double> value(pa->value.size());
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = f(pa->value[i]);
  auto node = new_node(pa->shape, std::move(value), {pa});
  if (node->requires_grad) {
    node->backward = [pa, dfdx](TensorNode& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.value.size(); ++i)
        pa->grad[i] += self.grad[i] * dfdx(pa->value[i], self.value[i]);
    };
  }
  return Tensor(std::move(node));
}

}  // namespace

// ---- construction ----

Tensor Tensor::zeros(Shape shape) {
  check_shape(shape, "zeros");
  const auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0)));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  check_shape(shape, "full");
  const auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v)));
}

Tensor Tensor::scalar(double v) { return Tensor(new_node(Shape{}, {v})); }

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  check_shape(shape, "from");
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("from: shape " + shape_to_string(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::param_uniform(Shape shape, double bound, Rng& rng) {
  check_shape(shape, "param_uniform");
  const auto n = shape_numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = rng.uniform(-bound, bound);
  auto t = Tensor(new_node(std::move(shape), std::move(data)));
  t.set_requires_grad(true);
  return t;
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  auto t = from(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

// ---- accessors ----

const Shape& Tensor::shape() const {
  if (!node_) throw ValueError("shape: undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::numel() const {
  if (!node_) throw ValueError("numel: undefined tensor");
  return node_->numel();
}

std::int64_t Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw ShapeError("dim: axis " + std::to_string(i) + " out of range for shape " +
                     shape_to_string(s));
  return s[static_cast<std::size_t>(i)];
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

const std::vector<double>& Tensor::values() const {
  if (!node_) throw ValueError("values: undefined tensor");
  return node_->value;
}

std::vector<double>& Tensor::mutable_values() {
  if (!node_) throw ValueError("mutable_values: undefined tensor");
  if (!node_->parents.empty())
    throw ValueError("mutable_values: refusing to mutate a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (!node_) throw ValueError("item: undefined tensor");
  if (node_->numel() != 1)
    throw ShapeError("item: tensor of shape " + shape_to_string(node_->shape) +
                     " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (!node_) throw ValueError("set_requires_grad: undefined tensor");
  if (v && !node_->parents.empty())
    throw ValueError("set_requires_grad: only leaf tensors can start a gradient");
  node_->requires_grad = v;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && node_->parents.empty(); }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!node_) throw ValueError("grad: undefined tensor");
  if (node_->grad.empty())
    throw ValueError("grad: no gradient recorded; run backward first");
  return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (!node_) throw ValueError("mutable_grad: undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  if (!node_) throw ValueError("clone: undefined tensor");
  return Tensor(new_node(node_->shape, node_->value));
}

bool Tensor::all_finite() const {
  if (!node_) return false;
  for (double v : node_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- arithmetic ----

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv, "div"); }

Tensor add(const Tensor& a, double b) {
  return unary(a, "add", [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}
Tensor sub(const Tensor& a, double b) { return add(a, -b); }
Tensor sub(double a, const Tensor& b) {
  return unary(b, "sub", [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}
Tensor mul(const Tensor& a, double b) {
  return unary(a, "mul", [b](double x) { return x * b; }, [b](double, double) { return b; });
}
Tensor div(const Tensor& a, double b) { return mul(a, 1.0 / b); }
Tensor div(double a, const Tensor& b) {
  return unary(b, "div", [a](double x) { return a / x; },
               [a](double x, double) { return -a / (x * x); });
}
Tensor neg(const Tensor& a) { return mul(a, -1.0); }

// ---- unary maps ----

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid",
               [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor prelu(const Tensor& a, const Tensor& alpha) {
  if (!a.defined() || !alpha.defined()) throw ValueError("prelu: undefined tensor");
  if (alpha.numel() != 1)
    throw ShapeError("prelu: slope must be a scalar, got shape " +
                     shape_to_string(alpha.shape()));
  const NodePtr pa = a.node_ptr();
  const NodePtr ps = alpha.node_ptr();
  const double s = ps->value[0];
  std::vector<double> value(pa->value.size());
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double x = pa->value[i];
    value[i] = x >= 0.0 ? x : s * x;
  }
  auto node = new_node(pa->shape, std::move(value), {pa, ps});
  if (node->requires_grad) {
    node->backward = [pa, ps](TensorNode& self) {
      const double s = ps->value[0];
      if (pa->requires_grad) pa->ensure_grad();
      if (ps->requires_grad) ps->ensure_grad();
      for (std::size_t i = 0; i < self.value.size(); ++i) {
        const double x = pa->value[i];
        const double g = self.grad[i];
        if (pa->requires_grad) pa->grad[i] += g * (x >= 0.0 ? 1.0 : s);
        if (ps->requires_grad && x < 0.0) ps->grad[0] += g * x;
      }
    };
  }
  return Tensor(std::move(node));
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw ValueError("matmul: undefined tensor");
  const NodePtr pa = a.node_ptr();
  const NodePtr pb = b.node_ptr();
  if (pa->shape.size() != 2 || pb->shape.size() != 2 || pa->shape[1] != pb->shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(pa->shape) + " and " +
                     shape_to_string(pb->shape));
  const std::int64_t m = pa->shape[0], k = pa->shape[1], n = pb->shape[1];
  std::vector<double> value(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = pa->value[static_cast<std::size_t>(i * k + p)];
      for (std::int64_t j = 0; j < n; ++j)
        value[static_cast<std::size_t>(i * n + j)] +=
            av * pb->value[static_cast<std::size_t>(p * n + j)];
    }
  auto node = new_node(Shape{m, n}, std::move(value), {pa, pb});
  if (node->requires_grad) {
    node->backward = [pa, pb, m, k, n](TensorNode& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            const double g = self.grad[static_cast<std::size_t>(i * n + j)];
            for (std::int64_t p = 0; p < k; ++p)
              pa->grad[static_cast<std::size_t>(i * k + p)] +=
                  g * pb->value[static_cast<std::size_t>(p * n + j)];
          }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            const double g = self.grad[static_cast<std::size_t>(i * n + j)];
            for (std::int64_t p = 0; p < k; ++p)
              pb->grad[static_cast<std::size_t>(p * n + j)] +=
                  g * pa->value[static_cast<std::size_t>(i * k + p)];
          }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  if (!input.defined() || !kernels.defined()) throw ValueError("conv2d: undefined tensor");
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
  const NodePtr px = input.node_ptr();
  const NodePtr pk = kernels.node_ptr();
  if (px->shape.size() != 3 || pk->shape.size() != 4 || px->shape[0] != pk->shape[1])
    throw ShapeError("conv2d: input " + shape_to_string(px->shape) + " and kernels " +
                     shape_to_string(pk->shape) + " do not match [Cin,H,W] x [Cout,Cin,kh,kw]");
  const std::int64_t cin = px->shape[0], h = px->shape[1], w = px->shape[2];
  const std::int64_t cout = pk->shape[0], kh = pk->shape[2], kw = pk->shape[3];
  const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv2d: kernels " + shape_to_string(pk->shape) +
                     " larger than padded input " + shape_to_string(px->shape));

  std::vector<double> value(static_cast<std::size_t>(cout * oh * ow), 0.0);
  for (std::int64_t oc = 0; oc < cout; ++oc)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::int64_t ic = 0; ic < cin; ++ic)
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox * stride + kx - padding;
              if (ix < 0 || ix >= w) continue;
              acc += px->value[static_cast<std::size_t>((ic * h + iy) * w + ix)] *
                     pk->value[static_cast<std::size_t>(((oc * cin + ic) * kh + ky) * kw + kx)];
            }
          }
        value[static_cast<std::size_t>((oc * oh + oy) * ow + ox)] = acc;
      }

  auto node = new_node(Shape{cout, oh, ow}, std::move(value), {px, pk});
  if (node->requires_grad) {
    node->backward = [px, pk, stride, padding, cin, h, w, cout, kh, kw, oh, ow](TensorNode& self) {
      if (px->requires_grad) px->ensure_grad();
      if (pk->requires_grad) pk->ensure_grad();
      for (std::int64_t oc = 0; oc < cout; ++oc)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const double g = self.grad[static_cast<std::size_t>((oc * oh + oy) * ow + ox)];
            if (g == 0.0) continue;
            for (std::int64_t ic = 0; ic < cin; ++ic)
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * stride + ky - padding;
                if (iy < 0 || iy >= h) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = ox * stride + kx - padding;
                  if (ix < 0 || ix >= w) continue;
                  const std::size_t xi = static_cast<std::size_t>((ic * h + iy) * w + ix);
                  const std::size_t ki =
                      static_cast<std::size_t>(((oc * cin + ic) * kh + ky) * kw + kx);
                  if (px->requires_grad) px->grad[xi] += g * pk->value[ki];
                  if (pk->requires_grad) pk->grad[ki] += g * px->value[xi];
                }
              }
          }
    };
  }
  return Tensor(std::move(node));
}

Tensor temporal_conv(const Tensor& x, const Tensor& kernels, int padding) {
  if (!x.defined() || !kernels.defined()) throw ValueError("temporal_conv: undefined tensor");
  if (padding < 0) throw ValueError("temporal_conv: padding must be >= 0");
  const NodePtr px = x.node_ptr();
  const NodePtr pk = kernels.node_ptr();
  if (px->shape.size() != 3 || pk->shape.size() != 3 || px->shape[2] != pk->shape[1])
    throw ShapeError("temporal_conv: input " + shape_to_string(px->shape) + " and kernels " +
                     shape_to_string(pk->shape) + " do not match [T,N,Cin] x [Cout,Cin,kt]");
  const std::int64_t t = px->shape[0], nn = px->shape[1], cin = px->shape[2];
  const std::int64_t cout = pk->shape[0], kt = pk->shape[2];
  const std::int64_t ot = t + 2 * padding - kt + 1;
  if (ot <= 0)
    throw ShapeError("temporal_conv: kernel span " + std::to_string(kt) +
                     " exceeds padded length of " + shape_to_string(px->shape));

  std::vector<double> value(static_cast<std::size_t>(ot * nn * cout), 0.0);
  for (std::int64_t to = 0; to < ot; ++to)
    for (std::int64_t i = 0; i < nn; ++i)
      for (std::int64_t oc = 0; oc < cout; ++oc) {
        double acc = 0.0;
        for (std::int64_t dt = 0; dt < kt; ++dt) {
          const std::int64_t ti = to + dt - padding;
          if (ti < 0 || ti >= t) continue;
          for (std::int64_t ic = 0; ic < cin; ++ic)
            acc += px->value[static_cast<std::size_t>((ti * nn + i) * cin + ic)] *
                   pk->value[static_cast<std::size_t>((oc * cin + ic) * kt + dt)];
        }
        value[static_cast<std::size_t>((to * nn + i) * cout + oc)] = acc;
      }

  auto node = new_node(Shape{ot, nn, cout}, std::move(value), {px, pk});
  if (node->requires_grad) {
    node->backward = [px, pk, padding, t, nn, cin, cout, kt, ot](TensorNode& self) {
      if (px->requires_grad) px->ensure_grad();
      if (pk->requires_grad) pk->ensure_grad();
      for (std::int64_t to = 0; to < ot; ++to)
        for (std::int64_t i = 0; i < nn; ++i)
          for (std::int64_t oc = 0; oc < cout; ++oc) {
            const double g = self.grad[static_cast<std::size_t>((to * nn + i) * cout + oc)];
            if (g == 0.0) continue;
            for (std::int64_t dt = 0; dt < kt; ++dt) {
              const std::int64_t ti = to + dt - padding;
              if (ti < 0 || ti >= t) continue;
              for (std::int64_t ic = 0; ic < cin; ++ic) {
                const std::size_t xi = static_cast<std::size_t>((ti * nn + i) * cin + ic);
                const std::size_t ki = static_cast<std::size_t>((oc * cin + ic) * kt + dt);
                if (px->requires_grad) px->grad[xi] += g * pk->value[ki];
                if (pk->requires_grad) pk->grad[ki] += g * px->value[xi];
              }
            }
          }
    };
  }
  return Tensor(std::move(node));
}

Tensor time_linear(const Tensor& x, const Tensor& weight) {
  if (!x.defined() || !weight.defined()) throw ValueError("time_linear: undefined tensor");
  const NodePtr px = x.node_ptr();
  const NodePtr pw = weight.node_ptr();
  if (px->shape.size() != 3 || pw->shape.size() != 2 || pw->shape[1] != px->shape[0])
    throw ShapeError("time_linear: input " + shape_to_string(px->shape) + " and weight " +
                     shape_to_string(pw->shape) + " do not match [Tin,N,C] x [Tout,Tin]");
  const std::int64_t tin = px->shape[0], nn = px->shape[1], c = px->shape[2];
  const std::int64_t tout = pw->shape[0];
  const std::int64_t plane = nn * c;
  std::vector<double> value(static_cast<std::size_t>(tout * plane), 0.0);
  for (std::int64_t to = 0; to < tout; ++to)
    for (std::int64_t s = 0; s < tin; ++s) {
      const double wv = pw->value[static_cast<std::size_t>(to * tin + s)];
      if (wv == 0.0) continue;
      for (std::int64_t j = 0; j < plane; ++j)
        value[static_cast<std::size_t>(to * plane + j)] +=
            wv * px->value[static_cast<std::size_t>(s * plane + j)];
    }
  auto node = new_node(Shape{tout, nn, c}, std::move(value), {px, pw});
  if (node->requires_grad) {
    node->backward = [px, pw, tin, tout, plane](TensorNode& self) {
      if (px->requires_grad) px->ensure_grad();
      if (pw->requires_grad) pw->ensure_grad();
      for (std::int64_t to = 0; to < tout; ++to)
        for (std::int64_t s = 0; s < tin; ++s) {
          const double wv = pw->value[static_cast<std::size_t>(to * tin + s)];
          double wg = 0.0;
          for (std::int64_t j = 0; j < plane; ++j) {
            const double g = self.grad[static_cast<std::size_t>(to * plane + j)];
            if (px->requires_grad)
              px->grad[static_cast<std::size_t>(s * plane + j)] += g * wv;
            wg += g * px->value[static_cast<std::size_t>(s * plane + j)];
          }
          if (pw->requires_grad) pw->grad[static_cast<std::size_t>(to * tin + s)] += wg;
        }
    };
  }
  return Tensor(std::move(node));
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  if (!x.defined()) throw ValueError("adaptive_avg_pool2d: undefined tensor");
  if (out_h < 1 || out_w < 1) throw ValueError("adaptive_avg_pool2d: output size must be >= 1");
  const NodePtr px = x.node_ptr();
  if (px->shape.size() != 3)
    throw ShapeError("adaptive_avg_pool2d: expected [C,H,W], got " + shape_to_string(px->shape));
  const std::int64_t c = px->shape[0], h = px->shape[1], w = px->shape[2];
  const std::int64_t oh = out_h, ow = out_w;
  auto bin_lo = [](std::int64_t i, std::int64_t in, std::int64_t out) {
    return (i * in) / out;
  };
  auto bin_hi = [](std::int64_t i, std::int64_t in, std::int64_t out) {
    return ((i + 1) * in + out - 1) / out;
  };
  std::vector<double> value(static_cast<std::size_t>(c * oh * ow), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const std::int64_t y0 = bin_lo(oy, h, oh), y1 = bin_hi(oy, h, oh);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t x0 = bin_lo(ox, w, ow), x1 = bin_hi(ox, w, ow);
        double acc = 0.0;
        for (std::int64_t iy = y0; iy < y1; ++iy)
          for (std::int64_t ix = x0; ix < x1; ++ix)
            acc += px->value[static_cast<std::size_t>((ch * h + iy) * w + ix)];
        value[static_cast<std::size_t>((ch * oh + oy) * ow + ox)] =
            acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  auto node = new_node(Shape{c, oh, ow}, std::move(value), {px});
  if (node->requires_grad) {
    node->backward = [px, c, h, w, oh, ow, bin_lo, bin_hi](TensorNode& self) {
      px->ensure_grad();
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t y0 = bin_lo(oy, h, oh), y1 = bin_hi(oy, h, oh);
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t x0 = bin_lo(ox, w, ow), x1 = bin_hi(ox, w, ow);
            const double g = self.grad[static_cast<std::size_t>((ch * oh + oy) * ow + ox)] /
                             static_cast<double>((y1 - y0) * (x1 - x0));
            for (std::int64_t iy = y0; iy < y1; ++iy)
              for (std::int64_t ix = x0; ix < x1; ++ix)
                px->grad[static_cast<std::size_t>((ch * h + iy) * w + ix)] += g;
          }
        }
    };
  }
  return Tensor(std::move(node));
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  if (!a.defined()) throw ValueError("sum: undefined tensor");
  const NodePtr pa = a.node_ptr();
  double acc = 0.0;
  for (double v : pa->value) acc += v;
  auto node = new_node(Shape{}, {acc}, {pa});
  if (node->requires_grad) {
    node->backward = [pa](TensorNode& self) {
      pa->ensure_grad();
      const double g = self.grad[0];
      for (auto& pg : pa->grad) pg += g;
    };
  }
  return Tensor(std::move(node));
}

Tensor mean(const Tensor& a) {
  if (!a.defined()) throw ValueError("mean: undefined tensor");
  return div(sum(a), static_cast<double>(a.numel()));
}

// ---- structure ----

Tensor reshape(const Tensor& a, Shape shape) {
  if (!a.defined()) throw ValueError("reshape: undefined tensor");
  check_shape(shape, "reshape");
  const NodePtr pa = a.node_ptr();
  if (shape_numel(shape) != pa->numel())
    throw ShapeError("reshape: cannot view " + shape_to_string(pa->shape) + " as " +
                     shape_to_string(shape));
  auto node = new_node(std::move(shape), pa->value, {pa});
  if (node->requires_grad) {
    node->backward = [pa](TensorNode& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

Tensor broadcast_to(const Tensor& a, Shape shape) {
  if (!a.defined()) throw ValueError("broadcast_to: undefined tensor");
  check_shape(shape, "broadcast_to");
  const NodePtr pa = a.node_ptr();
  // verify compatibility: every axis of a must match or be 1
  {
    const int rf = static_cast<int>(pa->shape.size());
    const int rt = static_cast<int>(shape.size());
    bool ok = rf <= rt;
    for (int i = 0; ok && i < rf; ++i) {
      const std::int64_t df = pa->shape[rf - 1 - i];
      const std::int64_t dt = shape[rt - 1 - i];
      if (df != dt && df != 1) ok = false;
    }
    if (!ok)
      throw ShapeError("broadcast_to: cannot broadcast " + shape_to_string(pa->shape) + " to " +
                       shape_to_string(shape));
  }
  auto map = broadcast_index_map(pa->shape, shape);
  const std::int64_t n = shape_numel(shape);
  std::vector<double> value(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    value[static_cast<std::size_t>(i)] = pa->value[static_cast<std::size_t>(map[i])];
  auto node = new_node(std::move(shape), std::move(value), {pa});
  if (node->requires_grad) {
    node->backward = [pa, map = std::move(map)](TensorNode& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[static_cast<std::size_t>(map[i])] += self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

Tensor select0(const Tensor& a, std::int64_t index) {
  if (!a.defined()) throw ValueError("select0: undefined tensor");
  const NodePtr pa = a.node_ptr();
  if (pa->shape.empty())
    throw ShapeError("select0: cannot index a rank-0 tensor");
  if (index < 0 || index >= pa->shape[0])
    throw ShapeError("select0: index " + std::to_string(index) + " out of range for shape " +
                     shape_to_string(pa->shape));
  Shape out_shape(pa->shape.begin() + 1, pa->shape.end());
  const std::int64_t n = shape_numel(out_shape);
  std::vector<double> value(pa->value.begin() + index * n, pa->value.begin() + (index + 1) * n);
  auto node = new_node(std::move(out_shape), std::move(value), {pa});
  if (node->requires_grad) {
    node->backward = [pa, index, n](TensorNode& self) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        pa->grad[static_cast<std::size_t>(index * n + i)] +=
            self.grad[static_cast<std::size_t>(i)];
    };
  }
  return Tensor(std::move(node));
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValueError("stack0: nothing to stack");
  const Shape& s0 = parts[0].shape();
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != s0)
      throw ShapeError("stack0: mismatched shapes " + shape_to_string(s0) + " and " +
                       shape_to_string(p.shape()));
    parents.push_back(p.node_ptr());
  }
  const std::int64_t n = shape_numel(s0);
  Shape out_shape;
  out_shape.push_back(static_cast<std::int64_t>(parts.size()));
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  std::vector<double> value;
  value.reserve(static_cast<std::size_t>(n) * parts.size());
  for (const auto& p : parents) value.insert(value.end(), p->value.begin(), p->value.end());
  auto node = new_node(std::move(out_shape), std::move(value), std::move(parents));
  if (node->requires_grad) {
    node->backward = [n](TensorNode& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = self.parents[k];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          p->grad[static_cast<std::size_t>(i)] +=
              self.grad[k * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor slice_last(const Tensor& a, std::int64_t start, std::int64_t len) {
  if (!a.defined()) throw ValueError("slice_last: undefined tensor");
  const NodePtr pa = a.node_ptr();
  if (pa->shape.empty()) throw ShapeError("slice_last: cannot slice a rank-0 tensor");
  const std::int64_t last = pa->shape.back();
  if (len < 1 || start < 0 || start + len > last)
    throw ShapeError("slice_last: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for shape " +
                     shape_to_string(pa->shape));
  Shape out_shape = pa->shape;
  out_shape.back() = len;
  const std::int64_t rows = pa->numel() / last;
  std::vector<double> value(static_cast<std::size_t>(rows * len));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < len; ++j)
      value[static_cast<std::size_t>(r * len + j)] =
          pa->value[static_cast<std::size_t>(r * last + start + j)];
  auto node = new_node(std::move(out_shape), std::move(value), {pa});
  if (node->requires_grad) {
    node->backward = [pa, start, len, last, rows](TensorNode& self) {
      pa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < len; ++j)
          pa->grad[static_cast<std::size_t>(r * last + start + j)] +=
              self.grad[static_cast<std::size_t>(r * len + j)];
    };
  }
  return Tensor(std::move(node));
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValueError("concat_last: nothing to concatenate");
  const Shape& s0 = parts[0].shape();
  if (s0.empty()) throw ShapeError("concat_last: cannot concatenate rank-0 tensors");
  std::vector<NodePtr> parents;
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i + 1 < s.size(); ++i) ok = s[i] == s0[i];
    if (!ok)
      throw ShapeError("concat_last: mismatched shapes " + shape_to_string(s0) + " and " +
                       shape_to_string(s));
    parents.push_back(p.node_ptr());
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = s0;
  out_shape.back() = total;
  const std::int64_t rows = shape_numel(out_shape) / total;
  std::vector<double> value(static_cast<std::size_t>(rows * total));
  std::int64_t off = 0;
  for (std::size_t k = 0; k < parents.size(); ++k) {
    const std::int64_t wk = widths[k];
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < wk; ++j)
        value[static_cast<std::size_t>(r * total + off + j)] =
            parents[k]->value[static_cast<std::size_t>(r * wk + j)];
    off += wk;
  }
  auto node = new_node(std::move(out_shape), std::move(value), std::move(parents));
  if (node->requires_grad) {
    node->backward = [widths = std::move(widths), total, rows](TensorNode& self) {
      std::int64_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::int64_t wk = widths[k];
        auto& p = self.parents[k];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < wk; ++j)
              p->grad[static_cast<std::size_t>(r * wk + j)] +=
                  self.grad[static_cast<std::size_t>(r * total + off + j)];
        }
        off += wk;
      }
    };
  }
  return Tensor(std::move(node));
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined tensor");
  const NodePtr root = loss.node_ptr();
  if (root->numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_to_string(root->shape));
  if (!root->requires_grad) return;

  // Post-order DFS; a node is finished only after every parent it reaches
  // has been scheduled, so the reversed finish order is root-first.
  std::vector<TensorNode*> order;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  std::vector<TensorNode*> visited;  // sorted raw pointers as a cheap set
  visited.reserve(64);
  auto was_visited = [&](TensorNode* n) {
    return std::binary_search(visited.begin(), visited.end(), n);
  };
  auto note_visited = [&](TensorNode* n) {
    visited.insert(std::upper_bound(visited.begin(), visited.end(), n), n);
  };

  stack.emplace_back(root.get(), 0);
  note_visited(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !was_visited(p)) {
        note_visited(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace msif
