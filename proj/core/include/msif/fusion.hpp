#pragma once

#include <string>
#include <vector>

#include "msif/tensor.hpp"

namespace msif {

enum class FusionMethod { kMean, kWeightedMean, kConcat };

FusionMethod fusion_method_from_string(const std::string& name);
std::string to_string(FusionMethod method);

// 1x1 channel-reducing convolution applied after concatenation.
struct MfcParams {
  Tensor weight;  // [2, 2k, 1]
  Tensor bias;    // [2]
};

// mean: running/incremental mean (exact on identical inputs); weighted_mean:
// softmax-normalized learnable weights; concat: channel concat then the MFC.
Tensor fuse(const std::vector<Tensor>& features, FusionMethod method,
            const Tensor* weight_logits = nullptr, const MfcParams* mfc = nullptr);

// Time-extrapolating head: learned 8->12 map over the time axis, residual
// temporal convolutions, then a channel-widening stack to the 5 outputs.
struct TpcParams {
  Tensor expand_w;  // [T_pred, T_obs]
  Tensor expand_alpha;
  struct Res {
    Tensor w;  // [C, C, kt]
    Tensor b;  // [C]
    Tensor alpha;
  };
  std::vector<Res> residual;
  struct Head {
    Tensor w;  // [C_out, C_in, kt]
    Tensor b;  // [C_out]
    Tensor alpha;  // undefined on the last layer (no activation there)
  };
  std::vector<Head> head;
};

Tensor tpc_forward(const Tensor& fused, const TpcParams& tpc);

// (mu, sigma, rho) per node-step; sigma > 0 and |rho| < 1 by construction.
struct GaussianTrajectoryField {
  Tensor mu;     // [T_pred, N, 2]
  Tensor sigma;  // [T_pred, N, 2]
  Tensor rho;    // [T_pred, N]
};

GaussianTrajectoryField gaussian_head(const Tensor& raw);

}  // namespace msif
