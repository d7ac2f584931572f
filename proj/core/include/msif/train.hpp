#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msif/checkpoint.hpp"
#include "msif/config.hpp"
#include "msif/dataset.hpp"
#include "msif/model.hpp"

namespace msif {

// Negative log-likelihood of truth [T,N,2] under a per-point bivariate
// gaussian field, averaged over all T*N points. Differentiable.
Tensor nll_loss(const GaussianTrajectoryField& field, const Tensor& truth);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t step = 0;
};

// One bias-corrected update of every parameter that holds a gradient.
void adam_step(std::map<std::string, Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps);

// Stepped decay: base * decay^(epoch / every), integer division.
double lr_schedule(int epoch, double base, double decay = 0.1, int every = 50);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Deterministic 7:2:1 split over shuffled scene indices. Every part is kept
// non-empty, which needs at least 3 scenes.
SplitIndices split_scenes(std::size_t scene_count, std::uint64_t seed);

// Assembles model inputs for one window of one scene. Positions and
// displacements live in unit coordinates (pixel / frame extent); pooled flow
// components are scaled the same way. flows overrides scene.flows when the
// scene was stored without its flow cache.
Sample prepare_sample(const SceneSequence& scene, const SampleWindow& window,
                      const ExperimentConfig& cfg, const std::vector<FlowField>* flows = nullptr);

struct TrainOptions {
  std::string out_dir;
  std::string resume_path;  // last.ckpt from an earlier run
  bool quiet = false;
};

struct LossRow {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct TrainResult {
  std::vector<LossRow> curve;  // row 0 is the pre-training evaluation
  std::string best_path;
  std::string last_path;
  double best_val = 0.0;
  int best_epoch = 0;
};

// Full optimization loop: split, per-epoch shuffled minibatches, stepped lr,
// best-validation and last-epoch checkpoints, loss.csv in out_dir.
TrainResult train(MsifModel& model, const std::vector<SceneSequence>& scenes,
                  const TrainOptions& options);

// Checkpoint round-trip helpers shared by train and the tools.
Checkpoint snapshot_model(const MsifModel& model, const AdamState& adam,
                          const std::map<std::string, std::string>& extra_meta);
void restore_model(MsifModel& model, AdamState& adam, const Checkpoint& ckpt);

}  // namespace msif
