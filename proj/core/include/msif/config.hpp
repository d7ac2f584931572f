#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msif/dataset.hpp"

namespace msif {

// All run hyperparameters. Defaults follow the reference protocol; the
// bundled desk-scale config overrides the ones that matter for fast runs.
struct ExperimentConfig {
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 1024;
  int epochs = 250;
  int obs_len = 8;
  int pred_len = 12;
  int stgcn_layers = 1;
  int txpcnn_layers = 5;
  int output_dim = 5;
  double lr_decay = 0.1;
  int lr_decay_every = 50;
  bool channel_trajectory = true;
  bool channel_optical = true;
  bool channel_image = true;
  std::string fusion = "mean";
  int tpc_fusion_depth = 2;
  std::uint64_t seed = 42;
  int image_input_w = 40;
  int image_input_h = 30;
  int lstm_hidden = 16;
  int map_rows = 8;
  int map_cols = 5;
  int temporal_kernel = 3;
  int sampling_k = 20;

  std::string channels_string() const;
  int enabled_channels() const;
  void validate() const;
  // non-default values of the pinned protocol fields, for logging
  std::vector<std::string> override_notes() const;
};

// Flat key=value text files, '#' comments, unknown keys rejected.
std::map<std::string, std::string> read_kv_file(const std::string& path);

ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text, const std::string& origin);
std::string canonical_config(const ExperimentConfig& cfg);

GeneratorConfig parse_generator_config(const std::string& path);

std::uint64_t fnv1a64(const std::string& s);
// 16 hex digits of the canonical-form hash
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace msif
