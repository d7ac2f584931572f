#pragma once

#include <cstdint>
#include <vector>

#include "msif/fusion.hpp"

namespace msif {

// k independent draws from every per-point bivariate gaussian of the field,
// flat [k, T, N, 2]. Deterministic in the seed.
std::vector<double> sample_trajectories(const GaussianTrajectoryField& field, int k,
                                        std::uint64_t seed);

// Turns a [T,N,2] block of unit-square displacements into absolute pixel
// positions by accumulating from each node's last observed position.
// last_observed_px is flat [N,2]; the result is flat [T,N,2].
std::vector<double> decode_positions(const double* disp, std::int64_t t_len, std::int64_t n,
                                     const std::vector<double>& last_observed_px, double img_w,
                                     double img_h);

}  // namespace msif
