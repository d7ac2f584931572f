#pragma once

#include <map>
#include <string>
#include <vector>

#include "msif/channels.hpp"
#include "msif/config.hpp"
#include "msif/fusion.hpp"
#include "msif/graph.hpp"
#include "msif/image.hpp"

namespace msif {

// One training/eval sample assembled from a scene window. Attribute tensors
// live in normalized-displacement space; positions stay in raw pixels for
// adjacency and decoding.
struct Sample {
  Tensor traj_attrs;    // [T_obs, N, 2] per-step displacements, row 0 zero
  Tensor positions;     // [T_obs, N, 2] pixel centers
  Tensor flow_pooled;   // [T_obs, N, 50] pooled flow / image dims; undefined when optical off
  std::vector<Image> frames;       // T_obs frames when the image channel is on
  std::vector<std::int64_t> node_ids;
  Tensor truth_disp;    // [T_pred, N, 2] normalized displacements
  std::vector<double> truth_px;    // T_pred*N*2 pixel positions
  int img_w = 0;
  int img_h = 0;

  std::int64_t nodes() const { return traj_attrs.dim(1); }
};

// The full predictor: per-channel extractors, fusion, TPC, gaussian head.
// Parameters are registered under stable names in a sorted map so that
// checkpoints, the optimizer, and gradient checks all agree on order.
class MsifModel {
 public:
  explicit MsifModel(const ExperimentConfig& cfg);

  const ExperimentConfig& config() const { return cfg_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }

  // enabled channel features in fixed order (trajectory, optical, image),
  // each [T_obs, N, 2]
  std::vector<Tensor> channel_features(const Sample& sample) const;

  GaussianTrajectoryField forward(const Sample& sample) const;

  void zero_grads();
  // overwrite parameter values from a checkpoint dump; names/shapes must match
  void load_values(const std::map<std::string, std::vector<double>>& values);
  std::int64_t parameter_count() const;

 private:
  Tensor& reg(const std::string& name, Tensor t);
  Tensor param(const std::string& name) const;

  ExperimentConfig cfg_;
  std::map<std::string, Tensor> params_;
};

}  // namespace msif
