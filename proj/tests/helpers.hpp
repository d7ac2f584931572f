#pragma once

// Shared fixtures and oracles for the test suites. Oracles are deliberately
// written as straight-line brute force, independent of the library's looping
// tricks, so agreement actually means something.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msif/config.hpp"
#include "msif/dataset.hpp"
#include "msif/image.hpp"
#include "msif/model.hpp"
#include "msif/rng.hpp"
#include "msif/tensor.hpp"
#include "msif/train.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Max relative error between analytic gradients and central differences over
// every element of every parameter. loss_fn must be a pure function of the
// parameter values.
template <typename LossFn>
double max_grad_rel_err(std::map<std::string, msif::Tensor>& params, LossFn&& loss_fn,
                        double h = 1e-5) {
  msif::Tensor loss = loss_fn();
  for (auto& [name, p] : params) p.zero_grad();
  msif::backward(loss);

  double worst = 0.0;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;  // parameter not reached by this loss
    const std::vector<double> analytic = p.grad();
    auto& vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double up = loss_fn().item();
      vals[i] = keep - h;
      const double down = loss_fn().item();
      vals[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[i], numeric));
    }
  }
  return worst;
}

// Band-limited random texture: uniform noise smoothed with a few passes of
// the 5-tap binomial kernel in both directions. Gives dense gradients the
// flow solver can actually use.
inline msif::Image textured_image(int w, int h, msif::Rng& rng, int blur_passes = 2) {
  msif::Image img = msif::Image::zeros(w, h);
  for (auto& p : img.pixels) p = rng.uniform();
  const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  for (int pass = 0; pass < blur_passes; ++pass) {
    msif::Image tmp = img;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t)
          acc += k[t + 2] * img.at(y, std::clamp(x + t, 0, w - 1));
        tmp.at(y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t)
          acc += k[t + 2] * tmp.at(std::clamp(y + t, 0, h - 1), x);
        img.at(y, x) = acc;
      }
  }
  // renormalize into a comfortable band
  double lo = 1.0, hi = 0.0;
  for (double p : img.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  for (auto& p : img.pixels) p = 0.2 + 0.6 * (p - lo) / std::max(1e-12, hi - lo);
  return img;
}

// Small self-contained sample for model-level tests: a couple of agents on a
// smooth random walk, matching flow-pooled stats and textured frames.
inline msif::Sample toy_sample(const msif::ExperimentConfig& cfg, std::int64_t n_nodes,
                               std::uint64_t seed, int img_w = 48, int img_h = 36) {
  msif::Rng rng(seed);
  const int obs = cfg.obs_len;
  const int pred = cfg.pred_len;

  std::vector<double> px((obs + pred) * n_nodes * 2);
  for (std::int64_t j = 0; j < n_nodes; ++j) {
    double x = rng.uniform(10.0, img_w - 10.0);
    double y = rng.uniform(10.0, img_h - 10.0);
    double vx = rng.uniform(-1.5, 1.5);
    double vy = rng.uniform(-1.5, 1.5);
    for (int t = 0; t < obs + pred; ++t) {
      px[(static_cast<std::size_t>(t) * n_nodes + j) * 2 + 0] = x;
      px[(static_cast<std::size_t>(t) * n_nodes + j) * 2 + 1] = y;
      x += vx + rng.uniform(-0.2, 0.2);
      y += vy + rng.uniform(-0.2, 0.2);
    }
  }

  msif::Sample s;
  s.img_w = img_w;
  s.img_h = img_h;
  for (std::int64_t j = 0; j < n_nodes; ++j) s.node_ids.push_back(j);

  std::vector<double> pos(obs * n_nodes * 2), disp(obs * n_nodes * 2, 0.0);
  for (int t = 0; t < obs; ++t)
    for (std::int64_t j = 0; j < n_nodes; ++j) {
      const std::size_t k = (static_cast<std::size_t>(t) * n_nodes + j) * 2;
      pos[k + 0] = px[k + 0] / img_w;
      pos[k + 1] = px[k + 1] / img_h;
      if (t > 0) {
        const std::size_t kp = (static_cast<std::size_t>(t - 1) * n_nodes + j) * 2;
        disp[k + 0] = pos[k + 0] - px[kp + 0] / img_w;
        disp[k + 1] = pos[k + 1] - px[kp + 1] / img_h;
      }
    }
  s.positions = msif::Tensor::from({obs, n_nodes, 2}, std::move(pos));
  s.traj_attrs = msif::Tensor::from({obs, n_nodes, 2}, std::move(disp));

  std::vector<double> tdisp(pred * n_nodes * 2);
  s.truth_px.resize(tdisp.size());
  for (int t = 0; t < pred; ++t)
    for (std::int64_t j = 0; j < n_nodes; ++j) {
      const std::size_t k = (static_cast<std::size_t>(t) * n_nodes + j) * 2;
      const std::size_t cur = (static_cast<std::size_t>(obs + t) * n_nodes + j) * 2;
      const std::size_t prev = (static_cast<std::size_t>(obs + t - 1) * n_nodes + j) * 2;
      tdisp[k + 0] = (px[cur + 0] - px[prev + 0]) / img_w;
      tdisp[k + 1] = (px[cur + 1] - px[prev + 1]) / img_h;
      s.truth_px[k + 0] = px[cur + 0];
      s.truth_px[k + 1] = px[cur + 1];
    }
  s.truth_disp = msif::Tensor::from({pred, n_nodes, 2}, std::move(tdisp));

  if (cfg.channel_optical) {
    std::vector<double> pooled(static_cast<std::size_t>(obs) * n_nodes * 50, 0.0);
    for (std::size_t i = static_cast<std::size_t>(n_nodes) * 50; i < pooled.size(); ++i)
      pooled[i] = rng.uniform(-0.02, 0.02);  // t=0 block stays zero
    s.flow_pooled = msif::Tensor::from({obs, n_nodes, 50}, std::move(pooled));
  }
  if (cfg.channel_image) {
    for (int t = 0; t < obs; ++t) {
      msif::Image f = textured_image(img_w, img_h, rng);
      s.frames.push_back(msif::resize_bilinear(f, cfg.image_input_w, cfg.image_input_h));
    }
  }
  return s;
}

// Brute-force best-of-k displacement errors, straight from the definition.
inline std::pair<double, double> brute_ade_fde(const std::vector<double>& pred, int k,
                                               std::int64_t t_len, std::int64_t n,
                                               const std::vector<double>& truth) {
  double ade_total = 0.0, fde_total = 0.0;
  for (std::int64_t j = 0; j < n; ++j) {
    double best_a = 1e300, best_f = 1e300;
    for (int s = 0; s < k; ++s) {
      double acc = 0.0, last = 0.0;
      for (std::int64_t t = 0; t < t_len; ++t) {
        const std::size_t p = ((static_cast<std::size_t>(s) * t_len + t) * n + j) * 2;
        const std::size_t q = (static_cast<std::size_t>(t) * n + j) * 2;
        const double d = std::hypot(pred[p] - truth[q], pred[p + 1] - truth[q + 1]);
        acc += d;
        last = d;
      }
      best_a = std::min(best_a, acc / static_cast<double>(t_len));
      best_f = std::min(best_f, last);
    }
    ade_total += best_a;
    fde_total += best_f;
  }
  return {ade_total / static_cast<double>(n), fde_total / static_cast<double>(n)};
}

// Scratch directory unique to the test process, cleaned lazily by the OS.
inline std::string scratch_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / ("msif_test_" + tag + "_" + std::to_string(getpid()));
  fs::create_directories(p);
  return p.string();
}

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

// Runs the installed CLI under the shell; MSIF_BIN is set by ctest.
inline CliResult run_cli(const std::string& args) {
  const char* bin = std::getenv("MSIF_BIN");
  if (!bin) return {-1, "MSIF_BIN not set"};
  std::string cmd = std::string(bin) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  CliResult r;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace testutil
