#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "msif/dataset.hpp"
#include "msif/model.hpp"

namespace msif {

// Best-of-k displacement errors in pixels. predictions is flat [k,T,N,2],
// truth flat [T,N,2]; for each node the best sample is chosen independently
// for the averaged and for the final-step error, then both are averaged over
// nodes. Returns {ade, fde}.
std::pair<double, double> ade_fde(const std::vector<double>& predictions, int k,
                                  std::int64_t t_len, std::int64_t n,
                                  const std::vector<double>& truth);

struct MetricsReport {
  double ade = 0.0;
  double fde = 0.0;
  std::vector<std::pair<double, double>> per_window;  // one {ade,fde} per evaluated window
  int window_count = 0;
  int sampling_k = 0;
};

// Runs the model over every window of the listed scenes, draws sampling_k
// futures per window, and scores them against the recorded tracks.
MetricsReport evaluate(const MsifModel& model, const std::vector<SceneSequence>& scenes,
                       const std::vector<std::size_t>& scene_indices, int sampling_k,
                       std::uint64_t seed);

// Freeze-in-place reference: every node keeps its last observed position for
// the whole horizon. The weakest predictor any model has to beat.
MetricsReport constant_position_baseline(const std::vector<SceneSequence>& scenes,
                                         const std::vector<std::size_t>& scene_indices,
                                         int obs_len, int pred_len);

}  // namespace msif
