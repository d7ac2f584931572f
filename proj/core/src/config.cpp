#include "msif/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "msif/errors.hpp"
#include "msif/fusion.hpp"

namespace msif {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value, got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key or value");
    if (kv.count(key))
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

double to_double(const std::string& v, const std::string& key, const std::string& origin) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin + ": key '" + key + "' has non-numeric value '" + v + "'");
  }
}

long to_long(const std::string& v, const std::string& key, const std::string& origin) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin + ": key '" + key + "' has non-integer value '" + v + "'");
  }
}

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFileError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_kv_text(ss.str(), path);
}

std::string ExperimentConfig::channels_string() const {
  std::string out;
  if (channel_trajectory) out += "trajectory";
  if (channel_optical) out += out.empty() ? "optical" : ",optical";
  if (channel_image) out += out.empty() ? "image" : ",image";
  return out;
}

int ExperimentConfig::enabled_channels() const {
  return (channel_trajectory ? 1 : 0) + (channel_optical ? 1 : 0) + (channel_image ? 1 : 0);
}

void ExperimentConfig::validate() const {
  if (!channel_trajectory)
    throw ConfigError("the trajectory channel is required; enable it in 'channels'");
  fusion_method_from_string(fusion);  // throws on bad name
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("adam betas must lie in [0,1)");
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (obs_len < 2) throw ConfigError("obs_len must be >= 2");
  if (pred_len < 1) throw ConfigError("pred_len must be >= 1");
  if (stgcn_layers < 1) throw ConfigError("stgcn_layers must be >= 1");
  if (txpcnn_layers < 1) throw ConfigError("txpcnn_layers must be >= 1");
  if (output_dim != 5)
    throw ConfigError("output_dim must be 5 (bivariate gaussian: mu x/y, sigma x/y, rho)");
  if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0,1]");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (tpc_fusion_depth < 1 || tpc_fusion_depth > 3)
    throw ConfigError("tpc_fusion_depth must be 1, 2, or 3");
  if (image_input_w < 8 || image_input_h < 8)
    throw ConfigError("image input size must be at least 8x8");
  if (lstm_hidden < 1) throw ConfigError("lstm_hidden must be >= 1");
  if (map_rows < 1 || map_cols < 1) throw ConfigError("feature map extents must be >= 1");
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0)
    throw ConfigError("temporal_kernel must be odd");
  if (sampling_k < 1) throw ConfigError("sampling_k must be >= 1");
}

std::vector<std::string> ExperimentConfig::override_notes() const {
  std::vector<std::string> notes;
  if (obs_len != 8) notes.push_back("obs_len overridden to " + std::to_string(obs_len));
  if (pred_len != 12) notes.push_back("pred_len overridden to " + std::to_string(pred_len));
  return notes;
}

ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin) {
  auto kv = parse_kv_text(text, origin);
  ExperimentConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "learning_rate") cfg.learning_rate = to_double(value, key, origin);
    else if (key == "beta1") cfg.beta1 = to_double(value, key, origin);
    else if (key == "beta2") cfg.beta2 = to_double(value, key, origin);
    else if (key == "adam_eps") cfg.adam_eps = to_double(value, key, origin);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_long(value, key, origin));
    else if (key == "epochs") cfg.epochs = static_cast<int>(to_long(value, key, origin));
    else if (key == "obs_len") cfg.obs_len = static_cast<int>(to_long(value, key, origin));
    else if (key == "pred_len") cfg.pred_len = static_cast<int>(to_long(value, key, origin));
    else if (key == "stgcn_layers")
      cfg.stgcn_layers = static_cast<int>(to_long(value, key, origin));
    else if (key == "txpcnn_layers")
      cfg.txpcnn_layers = static_cast<int>(to_long(value, key, origin));
    else if (key == "output_dim") cfg.output_dim = static_cast<int>(to_long(value, key, origin));
    else if (key == "lr_decay") cfg.lr_decay = to_double(value, key, origin);
    else if (key == "lr_decay_every")
      cfg.lr_decay_every = static_cast<int>(to_long(value, key, origin));
    else if (key == "channels") {
      cfg.channel_trajectory = cfg.channel_optical = cfg.channel_image = false;
      std::istringstream ss(value);
      std::string part;
      while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part == "trajectory") cfg.channel_trajectory = true;
        else if (part == "optical") cfg.channel_optical = true;
        else if (part == "image") cfg.channel_image = true;
        else
          throw ConfigError(origin + ": unknown channel '" + part +
                            "'; expected trajectory, optical, image");
      }
    } else if (key == "fusion") cfg.fusion = value;
    else if (key == "tpc_fusion_depth")
      cfg.tpc_fusion_depth = static_cast<int>(to_long(value, key, origin));
    else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(to_long(value, key, origin));
    else if (key == "image_input_w")
      cfg.image_input_w = static_cast<int>(to_long(value, key, origin));
    else if (key == "image_input_h")
      cfg.image_input_h = static_cast<int>(to_long(value, key, origin));
    else if (key == "lstm_hidden") cfg.lstm_hidden = static_cast<int>(to_long(value, key, origin));
    else if (key == "map_rows") cfg.map_rows = static_cast<int>(to_long(value, key, origin));
    else if (key == "map_cols") cfg.map_cols = static_cast<int>(to_long(value, key, origin));
    else if (key == "temporal_kernel")
      cfg.temporal_kernel = static_cast<int>(to_long(value, key, origin));
    else if (key == "sampling_k") cfg.sampling_k = static_cast<int>(to_long(value, key, origin));
    else
      throw ConfigError(origin + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFileError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config_text(ss.str(), path);
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "learning_rate = " << fmt_double(cfg.learning_rate) << "\n"
      << "beta1 = " << fmt_double(cfg.beta1) << "\n"
      << "beta2 = " << fmt_double(cfg.beta2) << "\n"
      << "adam_eps = " << fmt_double(cfg.adam_eps) << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "epochs = " << cfg.epochs << "\n"
      << "obs_len = " << cfg.obs_len << "\n"
      << "pred_len = " << cfg.pred_len << "\n"
      << "stgcn_layers = " << cfg.stgcn_layers << "\n"
      << "txpcnn_layers = " << cfg.txpcnn_layers << "\n"
      << "output_dim = " << cfg.output_dim << "\n"
      << "lr_decay = " << fmt_double(cfg.lr_decay) << "\n"
      << "lr_decay_every = " << cfg.lr_decay_every << "\n"
      << "channels = " << cfg.channels_string() << "\n"
      << "fusion = " << cfg.fusion << "\n"
      << "tpc_fusion_depth = " << cfg.tpc_fusion_depth << "\n"
      << "seed = " << cfg.seed << "\n"
      << "image_input_w = " << cfg.image_input_w << "\n"
      << "image_input_h = " << cfg.image_input_h << "\n"
      << "lstm_hidden = " << cfg.lstm_hidden << "\n"
      << "map_rows = " << cfg.map_rows << "\n"
      << "map_cols = " << cfg.map_cols << "\n"
      << "temporal_kernel = " << cfg.temporal_kernel << "\n"
      << "sampling_k = " << cfg.sampling_k << "\n";
  return out.str();
}

GeneratorConfig parse_generator_config(const std::string& path) {
  auto kv = read_kv_file(path);
  GeneratorConfig cfg;
  const std::string& origin = path;
  for (const auto& [key, value] : kv) {
    if (key == "width") cfg.width = static_cast<int>(to_long(value, key, origin));
    else if (key == "height") cfg.height = static_cast<int>(to_long(value, key, origin));
    else if (key == "frame_count") cfg.frame_count = static_cast<int>(to_long(value, key, origin));
    else if (key == "object_count")
      cfg.object_count = static_cast<int>(to_long(value, key, origin));
    else if (key == "scene_count") cfg.scene_count = static_cast<int>(to_long(value, key, origin));
    else if (key == "min_speed") cfg.min_speed = to_double(value, key, origin);
    else if (key == "max_speed") cfg.max_speed = to_double(value, key, origin);
    else if (key == "turner_fraction") cfg.turner_fraction = to_double(value, key, origin);
    else if (key == "max_turn_rate") cfg.max_turn_rate = to_double(value, key, origin);
    else if (key == "texture_amplitude") cfg.texture_amplitude = to_double(value, key, origin);
    else if (key == "min_box") cfg.min_box = to_double(value, key, origin);
    else if (key == "max_box") cfg.max_box = to_double(value, key, origin);
    else if (key == "frame_rate_hz") cfg.frame_rate_hz = to_double(value, key, origin);
    else
      throw ConfigError(origin + ": unknown key '" + key + "'");
  }
  if (cfg.scene_count < 1) throw ConfigError(origin + ": scene_count must be >= 1");
  if (cfg.min_speed < 0.0 || cfg.max_speed < cfg.min_speed)
    throw ConfigError(origin + ": need 0 <= min_speed <= max_speed");
  if (cfg.turner_fraction < 0.0 || cfg.turner_fraction > 1.0)
    throw ConfigError(origin + ": turner_fraction must be in [0,1]");
  if (cfg.texture_amplitude < 0.0 || cfg.texture_amplitude > 0.2)
    throw ConfigError(origin + ": texture_amplitude must be in [0, 0.2]");
  if (cfg.min_box < 2.0 || cfg.max_box < cfg.min_box)
    throw ConfigError(origin + ": need 2 <= min_box <= max_box");
  return cfg;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
  return buf;
}

}  // namespace msif
