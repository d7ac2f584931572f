#include "msif/sampler.hpp"

#include <cmath>

#include "msif/errors.hpp"
#include "msif/rng.hpp"

namespace msif {

std::vector<double> sample_trajectories(const GaussianTrajectoryField& field, int k,
                                        std::uint64_t seed) {
  if (k < 1) throw ValueError("sample_trajectories: k must be >= 1, got " + std::to_string(k));
  const std::int64_t t_len = field.mu.dim(0);
  const std::int64_t n = field.mu.dim(1);
  const auto& mu = field.mu.values();
  const auto& sigma = field.sigma.values();
  const auto& rho = field.rho.values();

  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(k) * t_len * n * 2);
  // Correlated pair via the Cholesky factor of [[sx^2, r sx sy],[., sy^2]].
  for (int s = 0; s < k; ++s)
    for (std::int64_t t = 0; t < t_len; ++t)
      for (std::int64_t j = 0; j < n; ++j) {
        const std::size_t p = (t * n + j) * 2;
        const double r = rho[t * n + j];
        const double n1 = rng.normal();
        const double n2 = rng.normal();
        const std::size_t o = ((static_cast<std::size_t>(s) * t_len + t) * n + j) * 2;
        out[o + 0] = mu[p + 0] + sigma[p + 0] * n1;
        out[o + 1] = mu[p + 1] + sigma[p + 1] * (r * n1 + std::sqrt(1.0 - r * r) * n2);
      }
  return out;
}

std::vector<double> decode_positions(const double* disp, std::int64_t t_len, std::int64_t n,
                                     const std::vector<double>& last_observed_px, double img_w,
                                     double img_h) {
  if (static_cast<std::int64_t>(last_observed_px.size()) != n * 2)
    throw ShapeError("decode_positions: expected " + std::to_string(n * 2) +
                     " anchor coordinates, got " + std::to_string(last_observed_px.size()));
  std::vector<double> out(static_cast<std::size_t>(t_len) * n * 2);
  for (std::int64_t j = 0; j < n; ++j) {
    double x = last_observed_px[j * 2 + 0];
    double y = last_observed_px[j * 2 + 1];
    for (std::int64_t t = 0; t < t_len; ++t) {
      const std::size_t p = (t * n + j) * 2;
      x += disp[p + 0] * img_w;
      y += disp[p + 1] * img_h;
      out[p + 0] = x;
      out[p + 1] = y;
    }
  }
  return out;
}

}  // namespace msif
