#include "msif/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msif/errors.hpp"
#include "msif/parallel.hpp"
#include "msif/rng.hpp"
#include "msif/sampler.hpp"
#include "msif/train.hpp"

namespace msif {

std::pair<double, double> ade_fde(const std::vector<double>& predictions, int k,
                                  std::int64_t t_len, std::int64_t n,
                                  const std::vector<double>& truth) {
  const auto want_pred = static_cast<std::size_t>(k) * t_len * n * 2;
  const auto want_truth = static_cast<std::size_t>(t_len) * n * 2;
  if (predictions.size() != want_pred)
    throw ShapeError("ade_fde: expected " + std::to_string(want_pred) +
                     " prediction values, got " + std::to_string(predictions.size()));
  if (truth.size() != want_truth)
    throw ShapeError("ade_fde: expected " + std::to_string(want_truth) + " truth values, got " +
                     std::to_string(truth.size()));
  if (k < 1 || t_len < 1 || n < 1) throw ValueError("ade_fde: degenerate extent");

  double ade_total = 0.0;
  double fde_total = 0.0;
  for (std::int64_t j = 0; j < n; ++j) {
    double best_ade = std::numeric_limits<double>::infinity();
    double best_fde = std::numeric_limits<double>::infinity();
    for (int s = 0; s < k; ++s) {
      double acc = 0.0;
      double last = 0.0;
      for (std::int64_t t = 0; t < t_len; ++t) {
        const std::size_t p = ((static_cast<std::size_t>(s) * t_len + t) * n + j) * 2;
        const std::size_t q = (t * n + j) * 2;
        const double dx = predictions[p + 0] - truth[q + 0];
        const double dy = predictions[p + 1] - truth[q + 1];
        const double d = std::hypot(dx, dy);
        acc += d;
        last = d;
      }
      best_ade = std::min(best_ade, acc / static_cast<double>(t_len));
      best_fde = std::min(best_fde, last);
    }
    ade_total += best_ade;
    fde_total += best_fde;
  }
  return {ade_total / static_cast<double>(n), fde_total / static_cast<double>(n)};
}

MetricsReport evaluate(const MsifModel& model, const std::vector<SceneSequence>& scenes,
                       const std::vector<std::size_t>& scene_indices, int sampling_k,
                       std::uint64_t seed) {
  const ExperimentConfig& cfg = model.config();

  std::vector<std::vector<FlowField>> flow_cache(scenes.size());
  if (cfg.channel_optical)
    for (std::size_t si : scene_indices)
      if (scenes[si].flows.size() + 1 < scenes[si].frames.size())
        flow_cache[si] = scene_flows(scenes[si].frames, FlowParams{});

  struct Job {
    std::size_t scene;
    SampleWindow window;
  };
  std::vector<Job> jobs;
  for (std::size_t si : scene_indices)
    for (auto& w : window_samples(scenes[si], cfg.obs_len, cfg.pred_len))
      jobs.push_back({si, std::move(w)});

  MetricsReport report;
  report.sampling_k = sampling_k;
  report.window_count = static_cast<int>(jobs.size());
  if (jobs.empty()) return report;

  report.per_window.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    const std::vector<FlowField>* flows =
        flow_cache[job.scene].empty() ? nullptr : &flow_cache[job.scene];
    Sample s = prepare_sample(scenes[job.scene], job.window, cfg, flows);
    GaussianTrajectoryField field = model.forward(s);

    const std::int64_t t_len = cfg.pred_len;
    const std::int64_t n = s.nodes();
    std::vector<double> draws =
        sample_trajectories(field, sampling_k, Rng::mix(seed, static_cast<std::uint64_t>(i)));

    // Anchor every node at its final observed pixel position.
    const auto& pos = s.positions.values();
    std::vector<double> anchor(static_cast<std::size_t>(n) * 2);
    for (std::int64_t j = 0; j < n; ++j) {
      const std::size_t p = ((cfg.obs_len - 1) * n + j) * 2;
      anchor[j * 2 + 0] = pos[p + 0] * s.img_w;
      anchor[j * 2 + 1] = pos[p + 1] * s.img_h;
    }

    std::vector<double> decoded(draws.size());
    const std::size_t block = static_cast<std::size_t>(t_len) * n * 2;
    for (int d = 0; d < sampling_k; ++d) {
      std::vector<double> one =
          decode_positions(draws.data() + d * block, t_len, n, anchor, s.img_w, s.img_h);
      std::copy(one.begin(), one.end(), decoded.begin() + d * block);
    }
    report.per_window[i] = ade_fde(decoded, sampling_k, t_len, n, s.truth_px);
  });

  for (const auto& [a, f] : report.per_window) {
    report.ade += a;
    report.fde += f;
  }
  report.ade /= static_cast<double>(jobs.size());
  report.fde /= static_cast<double>(jobs.size());
  return report;
}

MetricsReport constant_position_baseline(const std::vector<SceneSequence>& scenes,
                                         const std::vector<std::size_t>& scene_indices,
                                         int obs_len, int pred_len) {
  MetricsReport report;
  report.sampling_k = 1;
  for (std::size_t si : scene_indices) {
    const SceneSequence& scene = scenes[si];
    for (const auto& window : window_samples(scene, obs_len, pred_len)) {
      const auto n = static_cast<std::int64_t>(window.node_ids.size());
      std::vector<double> pred(static_cast<std::size_t>(pred_len) * n * 2);
      std::vector<double> truth(pred.size());
      for (std::int64_t j = 0; j < n; ++j) {
        const ObjectTrack* track = nullptr;
        for (const auto& tr : scene.tracks)
          if (tr.object_id == window.node_ids[j]) track = &tr;
        const TrackState* last = track->state_at(window.start + obs_len - 1);
        for (std::int64_t t = 0; t < pred_len; ++t) {
          const TrackState* st = track->state_at(window.start + obs_len + t);
          const std::size_t p = (t * n + j) * 2;
          pred[p + 0] = last->center.x;
          pred[p + 1] = last->center.y;
          truth[p + 0] = st->center.x;
          truth[p + 1] = st->center.y;
        }
      }
      report.per_window.push_back(ade_fde(pred, 1, pred_len, n, truth));
    }
  }
  report.window_count = static_cast<int>(report.per_window.size());
  for (const auto& [a, f] : report.per_window) {
    report.ade += a;
    report.fde += f;
  }
  if (report.window_count > 0) {
    report.ade /= report.window_count;
    report.fde /= report.window_count;
  }
  return report;
}

}  // namespace msif
