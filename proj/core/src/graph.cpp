#include "msif/graph.hpp"

#include <cmath>

#include "msif/errors.hpp"

namespace msif {

Tensor kernel_adjacency(const Tensor& positions, double eps) {
  const Shape& s = positions.shape();
  if (s.size() != 3 || s[2] != 2)
    throw ShapeError("kernel_adjacency: expected positions [T,N,2], got " + shape_to_string(s));
  const std::int64_t t_len = s[0], n = s[1];
  const auto& p = positions.values();
  std::vector<double> out(static_cast<std::size_t>(t_len * n * n), 0.0);
  for (std::int64_t t = 0; t < t_len; ++t)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) {
        const std::size_t pi = static_cast<std::size_t>((t * n + i) * 2);
        const std::size_t pj = static_cast<std::size_t>((t * n + j) * 2);
        const double dx = p[pi] - p[pj];
        const double dy = p[pi + 1] - p[pj + 1];
        const double a = 1.0 / (std::sqrt(dx * dx + dy * dy) + eps);
        out[static_cast<std::size_t>((t * n + i) * n + j)] = a;
        out[static_cast<std::size_t>((t * n + j) * n + i)] = a;
      }
  return Tensor::from({t_len, n, n}, std::move(out));
}

Tensor normalize_adjacency(const Tensor& adj) {
  const Shape& s = adj.shape();
  if (s.size() != 3 || s[1] != s[2])
    throw ShapeError("normalize_adjacency: expected [T,N,N], got " + shape_to_string(s));
  const std::int64_t t_len = s[0], n = s[1];
  const auto& a = adj.values();
  for (std::int64_t t = 0; t < t_len; ++t)
    for (std::int64_t i = 0; i < n; ++i) {
      if (a[static_cast<std::size_t>((t * n + i) * n + i)] != 0.0)
        throw ValueError("normalize_adjacency: nonzero diagonal at t=" + std::to_string(t) +
                         ", i=" + std::to_string(i));
      for (std::int64_t j = 0; j < n; ++j) {
        const double aij = a[static_cast<std::size_t>((t * n + i) * n + j)];
        const double aji = a[static_cast<std::size_t>((t * n + j) * n + i)];
        if (aij < 0.0)
          throw ValueError("normalize_adjacency: negative entry at t=" + std::to_string(t));
        if (std::abs(aij - aji) > 1e-12)
          throw ValueError("normalize_adjacency: asymmetric input at t=" + std::to_string(t));
      }
    }

  std::vector<double> out(a.size(), 0.0);
  std::vector<double> inv_sqrt(static_cast<std::size_t>(n));
  for (std::int64_t t = 0; t < t_len; ++t) {
    const std::size_t base = static_cast<std::size_t>(t * n * n);
    for (std::int64_t i = 0; i < n; ++i) {
      double deg = 0.0;
      for (std::int64_t j = 0; j < n; ++j) {
        double ahat = a[base + static_cast<std::size_t>(i * n + j)];
        if (i == j) ahat += 1.0;
        deg += ahat;
      }
      inv_sqrt[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        double ahat = a[base + static_cast<std::size_t>(i * n + j)];
        if (i == j) ahat += 1.0;
        out[base + static_cast<std::size_t>(i * n + j)] =
            inv_sqrt[static_cast<std::size_t>(i)] * ahat * inv_sqrt[static_cast<std::size_t>(j)];
      }
  }
  return Tensor::from({t_len, n, n}, std::move(out));
}

SpatioTemporalGraph build_graph(const Tensor& attrs, const Tensor& positions, double eps) {
  const Shape& sa = attrs.shape();
  const Shape& sp = positions.shape();
  if (sa.size() != 3 || sp.size() != 3 || sa[0] != sp[0] || sa[1] != sp[1])
    throw ShapeError("build_graph: attrs " + shape_to_string(sa) + " and positions " +
                     shape_to_string(sp) + " disagree on [T,N]");
  SpatioTemporalGraph g;
  g.attrs = attrs;
  g.adj = kernel_adjacency(positions, eps);
  g.adj_norm = normalize_adjacency(g.adj);
  return g;
}

}  // namespace msif
