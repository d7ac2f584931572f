#include "msif/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "msif/errors.hpp"
#include "msif/parallel.hpp"
#include "msif/rng.hpp"

namespace msif {

namespace {

constexpr std::uint64_t kSplitTag = 0x5917;
constexpr std::uint64_t kEpochTagBase = 0xE70C0000ULL;
constexpr double kLn2Pi = 1.8378770664093454836;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Tensor nll_loss(const GaussianTrajectoryField& field, const Tensor& truth) {
  if (!truth.defined() || truth.rank() != 3 || truth.dim(2) != 2)
    throw ShapeError("nll_loss: truth must be [T,N,2], got " +
                     (truth.defined() ? shape_to_string(truth.shape()) : std::string("undefined")));
  if (truth.dim(0) != field.mu.dim(0) || truth.dim(1) != field.mu.dim(1))
    throw ShapeError("nll_loss: truth " + shape_to_string(truth.shape()) +
                     " does not match field " + shape_to_string(field.mu.shape()));

  const std::int64_t t_len = truth.dim(0);
  const std::int64_t n = truth.dim(1);
  Tensor mux = slice_last(field.mu, 0, 1);
  Tensor muy = slice_last(field.mu, 1, 1);
  Tensor sx = slice_last(field.sigma, 0, 1);
  Tensor sy = slice_last(field.sigma, 1, 1);
  Tensor rho = reshape(field.rho, {t_len, n, 1});

  Tensor dx = div(sub(slice_last(truth, 0, 1), mux), sx);
  Tensor dy = div(sub(slice_last(truth, 1, 1), muy), sy);
  Tensor one_m_r2 = sub(1.0, mul(rho, rho));
  Tensor z = sub(add(mul(dx, dx), mul(dy, dy)), mul(mul(rho, mul(dx, dy)), 2.0));
  Tensor per_point = add(add(add(add(log(sx), log(sy)), mul(log(one_m_r2), 0.5)),
                             div(z, mul(one_m_r2, 2.0))),
                         kLn2Pi);
  return mean(per_point);
}

void adam_step(std::map<std::string, Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    auto& val = p.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double lr_schedule(int epoch, double base, double decay, int every) {
  if (epoch < 0) throw ValueError("lr_schedule: negative epoch");
  if (every < 1) throw ValueError("lr_schedule: decay interval must be >= 1");
  return base * std::pow(decay, static_cast<double>(epoch / every));
}

SplitIndices split_scenes(std::size_t scene_count, std::uint64_t seed) {
  if (scene_count < 3)
    throw ValueError("split_scenes: need at least 3 scenes for non-empty train/val/test, got " +
                     std::to_string(scene_count));
  std::vector<std::size_t> order(scene_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::mix(seed, kSplitTag));
  rng.shuffle(order);

  const auto n = static_cast<std::int64_t>(scene_count);
  std::int64_t n_train = std::clamp<std::int64_t>((7 * n) / 10, 1, n - 2);
  std::int64_t n_val = std::clamp<std::int64_t>((2 * n) / 10, 1, n - 1 - n_train);

  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

Sample prepare_sample(const SceneSequence& scene, const SampleWindow& window,
                      const ExperimentConfig& cfg, const std::vector<FlowField>* flows) {
  const int obs = window.obs_len;
  const int pred = window.pred_len;
  if (obs != cfg.obs_len || pred != cfg.pred_len)
    throw ValueError("prepare_sample: window is " + std::to_string(obs) + "+" +
                     std::to_string(pred) + " frames, config wants " + std::to_string(cfg.obs_len) +
                     "+" + std::to_string(cfg.pred_len));
  if (window.node_ids.empty()) throw ValueError("prepare_sample: window has no nodes");
  const std::int64_t span = window.start + obs + pred;
  if (span > static_cast<std::int64_t>(scene.frames.size()))
    throw ValueError("prepare_sample: window runs past frame " +
                     std::to_string(scene.frames.size() - 1));

  const auto n = static_cast<std::int64_t>(window.node_ids.size());
  const double w_px = scene.frames.front().width;
  const double h_px = scene.frames.front().height;

  // Unit-square positions per node per frame across the whole window.
  std::vector<double> px((obs + pred) * n * 2);
  std::vector<const ObjectTrack*> tracks(n, nullptr);
  for (std::int64_t j = 0; j < n; ++j) {
    for (const auto& tr : scene.tracks)
      if (tr.object_id == window.node_ids[j]) tracks[j] = &tr;
    if (!tracks[j])
      throw ValueError("prepare_sample: scene has no track for object " +
                       std::to_string(window.node_ids[j]));
  }
  for (std::int64_t t = 0; t < obs + pred; ++t) {
    for (std::int64_t j = 0; j < n; ++j) {
      const TrackState* st = tracks[j]->state_at(window.start + t);
      if (!st)
        throw ValueError("prepare_sample: object " + std::to_string(window.node_ids[j]) +
                         " missing at frame " + std::to_string(window.start + t));
      px[(t * n + j) * 2 + 0] = st->center.x;
      px[(t * n + j) * 2 + 1] = st->center.y;
    }
  }

  Sample s;
  s.img_w = static_cast<int>(w_px);
  s.img_h = static_cast<int>(h_px);
  s.node_ids = window.node_ids;

  std::vector<double> pos(obs * n * 2);
  std::vector<double> disp(obs * n * 2, 0.0);
  for (std::int64_t t = 0; t < obs; ++t)
    for (std::int64_t j = 0; j < n; ++j) {
      const std::size_t k = (t * n + j) * 2;
      pos[k + 0] = px[k + 0] / w_px;
      pos[k + 1] = px[k + 1] / h_px;
      if (t > 0) {
        const std::size_t kp = ((t - 1) * n + j) * 2;
        disp[k + 0] = pos[k + 0] - px[kp + 0] / w_px;
        disp[k + 1] = pos[k + 1] - px[kp + 1] / h_px;
      }
    }
  s.positions = Tensor::from({obs, n, 2}, std::move(pos));
  s.traj_attrs = Tensor::from({obs, n, 2}, std::move(disp));

  std::vector<double> tdisp(pred * n * 2);
  s.truth_px.resize(pred * n * 2);
  for (std::int64_t t = 0; t < pred; ++t)
    for (std::int64_t j = 0; j < n; ++j) {
      const std::size_t k = (t * n + j) * 2;
      const std::size_t cur = ((obs + t) * n + j) * 2;
      const std::size_t prev = ((obs + t - 1) * n + j) * 2;
      tdisp[k + 0] = (px[cur + 0] - px[prev + 0]) / w_px;
      tdisp[k + 1] = (px[cur + 1] - px[prev + 1]) / h_px;
      s.truth_px[k + 0] = px[cur + 0];
      s.truth_px[k + 1] = px[cur + 1];
    }
  s.truth_disp = Tensor::from({pred, n, 2}, std::move(tdisp));

  if (cfg.channel_optical) {
    const std::vector<FlowField>* ff = flows ? flows : &scene.flows;
    if (static_cast<std::int64_t>(ff->size()) + 1 <
        static_cast<std::int64_t>(scene.frames.size()))
      throw ValueError("prepare_sample: optical channel enabled but the scene has " +
                       std::to_string(ff->size()) + " flow fields for " +
                       std::to_string(scene.frames.size()) + " frames");
    std::vector<double> pooled(obs * n * 50, 0.0);
    for (std::int64_t t = 1; t < obs; ++t)
      for (std::int64_t j = 0; j < n; ++j) {
        const TrackState* st = tracks[j]->state_at(window.start + t);
        std::vector<double> p = roi_pool_flow((*ff)[window.start + t - 1], st->box);
        double* dst = pooled.data() + (t * n + j) * 50;
        for (int i = 0; i < 25; ++i) dst[i] = p[i] / w_px;
        for (int i = 25; i < 50; ++i) dst[i] = p[i] / h_px;
      }
    s.flow_pooled = Tensor::from({obs, n, 50}, std::move(pooled));
  }

  if (cfg.channel_image) {
    s.frames.reserve(obs);
    for (std::int64_t t = 0; t < obs; ++t)
      s.frames.push_back(
          resize_bilinear(scene.frames[window.start + t], cfg.image_input_w, cfg.image_input_h));
  }
  return s;
}

namespace {

struct IndexedSample {
  std::size_t scene = 0;
  Sample sample;
};

std::vector<IndexedSample> build_samples(const std::vector<SceneSequence>& scenes,
                                         const std::vector<std::size_t>& idx,
                                         const ExperimentConfig& cfg,
                                         const std::vector<std::vector<FlowField>>& flow_cache) {
  // Collect the windows first so preparation can fan out across workers.
  std::vector<std::pair<std::size_t, SampleWindow>> jobs;
  for (std::size_t si : idx) {
    for (auto& w : window_samples(scenes[si], cfg.obs_len, cfg.pred_len))
      jobs.emplace_back(si, std::move(w));
  }
  std::vector<IndexedSample> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& [si, window] = jobs[i];
    const std::vector<FlowField>* flows =
        flow_cache[si].empty() ? nullptr : &flow_cache[si];
    out[i] = {si, prepare_sample(scenes[si], window, cfg, flows)};
  });
  return out;
}

double mean_nll(const MsifModel& model, const std::vector<IndexedSample>& samples) {
  if (samples.empty()) return 0.0;
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    losses[i] = nll_loss(model.forward(samples[i].sample), samples[i].sample.truth_disp).item();
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(samples.size());
}

void write_loss_csv(const std::string& path, const std::vector<LossRow>& curve) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "epoch,train_nll,val_nll\n";
  for (const auto& row : curve)
    f << row.epoch << "," << fmt_g(row.train_nll) << "," << fmt_g(row.val_nll) << "\n";
  if (!f) throw IoError("short write to " + path);
}

}  // namespace

Checkpoint snapshot_model(const MsifModel& model, const AdamState& adam,
                          const std::map<std::string, std::string>& extra_meta) {
  Checkpoint ckpt;
  ckpt.meta["format"] = "msif-train";
  ckpt.meta["config"] = canonical_config(model.config());
  ckpt.meta["config_hash"] = config_hash(model.config());
  ckpt.meta["seed"] = std::to_string(model.config().seed);
  ckpt.meta["adam_step"] = std::to_string(adam.step);
  for (const auto& [k, v] : extra_meta) ckpt.meta[k] = v;

  for (const auto& [name, p] : model.params()) {
    ckpt.shapes[name] = p.shape();
    ckpt.tensors[name] = p.values();
  }
  for (const auto& [name, m] : adam.m) {
    ckpt.shapes["adam.m." + name] = {static_cast<std::int64_t>(m.size())};
    ckpt.tensors["adam.m." + name] = m;
  }
  for (const auto& [name, v] : adam.v) {
    ckpt.shapes["adam.v." + name] = {static_cast<std::int64_t>(v.size())};
    ckpt.tensors["adam.v." + name] = v;
  }
  return ckpt;
}

void restore_model(MsifModel& model, AdamState& adam, const Checkpoint& ckpt) {
  auto hash_it = ckpt.meta.find("config_hash");
  if (hash_it == ckpt.meta.end())
    throw IncompatibleCheckpointError("checkpoint carries no config hash");
  if (hash_it->second != config_hash(model.config()))
    throw IncompatibleCheckpointError(
        "checkpoint was trained under a different configuration (hash " + hash_it->second +
        ", current " + config_hash(model.config()) + ")");
  model.load_values(ckpt.tensors);
  adam = AdamState{};
  auto step_it = ckpt.meta.find("adam_step");
  if (step_it != ckpt.meta.end()) adam.step = std::stoll(step_it->second);
  for (const auto& [name, data] : ckpt.tensors) {
    if (name.rfind("adam.m.", 0) == 0)
      adam.m[name.substr(7)] = data;
    else if (name.rfind("adam.v.", 0) == 0)
      adam.v[name.substr(7)] = data;
  }
}

TrainResult train(MsifModel& model, const std::vector<SceneSequence>& scenes,
                  const TrainOptions& options) {
  const ExperimentConfig& cfg = model.config();
  namespace fs = std::filesystem;
  if (options.out_dir.empty()) throw ValueError("train: output directory not set");
  fs::create_directories(options.out_dir);

  SplitIndices split = split_scenes(scenes.size(), cfg.seed);

  // Flow fields are part of the input; compute any the dataset was stored
  // without, once, up front.
  std::vector<std::vector<FlowField>> flow_cache(scenes.size());
  if (cfg.channel_optical) {
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < scenes.size(); ++i)
      if (scenes[i].flows.size() + 1 < scenes[i].frames.size()) missing.push_back(i);
    for (std::size_t i : missing)
      flow_cache[i] = scene_flows(scenes[i].frames, FlowParams{});
  }

  std::vector<IndexedSample> train_samples = build_samples(scenes, split.train, cfg, flow_cache);
  std::vector<IndexedSample> val_samples = build_samples(scenes, split.val, cfg, flow_cache);
  if (train_samples.empty()) throw ValueError("train: no usable windows in the training scenes");
  if (val_samples.empty()) throw ValueError("train: no usable windows in the validation scenes");

  AdamState adam;
  TrainResult result;
  result.best_path = (fs::path(options.out_dir) / "best.ckpt").string();
  result.last_path = (fs::path(options.out_dir) / "last.ckpt").string();
  result.best_val = std::numeric_limits<double>::infinity();
  result.best_epoch = -1;
  int start_epoch = 1;

  if (!options.resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(options.resume_path);
    restore_model(model, adam, ckpt);
    auto it = ckpt.meta.find("epoch");
    if (it != ckpt.meta.end()) start_epoch = std::stoi(it->second) + 1;
    it = ckpt.meta.find("best_val");
    if (it != ckpt.meta.end()) result.best_val = std::stod(it->second);
    it = ckpt.meta.find("best_epoch");
    if (it != ckpt.meta.end()) result.best_epoch = std::stoi(it->second);
    // Keep the already-logged part of the curve so the csv stays contiguous.
    std::ifstream prev(fs::path(options.out_dir) / "loss.csv");
    std::string line;
    if (prev && std::getline(prev, line)) {
      while (std::getline(prev, line)) {
        LossRow row;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &row.epoch, &row.train_nll, &row.val_nll) == 3 &&
            row.epoch < start_epoch)
          result.curve.push_back(row);
      }
    }
  }

  auto log = [&](const std::string& s) {
    if (!options.quiet) std::fprintf(stderr, "%s\n", s.c_str());
  };

  if (result.curve.empty()) {
    LossRow row0{0, mean_nll(model, train_samples), mean_nll(model, val_samples)};
    result.curve.push_back(row0);
    log("epoch 0 (untrained)  train_nll " + fmt_g(row0.train_nll) + "  val_nll " +
        fmt_g(row0.val_nll));
  }

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch - 1, cfg.learning_rate, cfg.lr_decay, cfg.lr_decay_every);
    Rng shuffle_rng(Rng::mix(cfg.seed, kEpochTagBase + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_total = 0.0;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      model.zero_grads();
      // Per-sample losses are independent graphs; run the forwards in
      // parallel, then combine on the main thread so the backward sweep over
      // the shared parameters stays single-threaded.
      std::vector<Tensor> losses(b1 - b0);
      parallel_for(b1 - b0, [&](std::size_t i) {
        const Sample& s = train_samples[order[b0 + i]].sample;
        losses[i] = nll_loss(model.forward(s), s.truth_disp);
      });
      Tensor total = losses[0];
      for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      Tensor loss = div(total, static_cast<double>(losses.size()));
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b0 / batch) + " (lr " + fmt_g(lr) +
                              "): loss is not finite");
      backward(loss);
      adam_step(model.params(), adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
      epoch_total += loss_val * static_cast<double>(losses.size());
    }

    LossRow row;
    row.epoch = epoch;
    row.train_nll = epoch_total / static_cast<double>(train_samples.size());
    row.val_nll = mean_nll(model, val_samples);
    result.curve.push_back(row);
    log("epoch " + std::to_string(epoch) + "  lr " + fmt_g(lr) + "  train_nll " +
        fmt_g(row.train_nll) + "  val_nll " + fmt_g(row.val_nll));

    std::map<std::string, std::string> meta;
    meta["epoch"] = std::to_string(epoch);
    meta["train_nll"] = fmt_g(row.train_nll);
    meta["val_nll"] = fmt_g(row.val_nll);
    if (row.val_nll < result.best_val) {
      result.best_val = row.val_nll;
      result.best_epoch = epoch;
      meta["best_val"] = fmt_g(result.best_val);
      meta["best_epoch"] = std::to_string(result.best_epoch);
      save_checkpoint(result.best_path, snapshot_model(model, adam, meta));
    }
    meta["best_val"] = fmt_g(result.best_val);
    meta["best_epoch"] = std::to_string(result.best_epoch);
    save_checkpoint(result.last_path, snapshot_model(model, adam, meta));
    write_loss_csv((fs::path(options.out_dir) / "loss.csv").string(), result.curve);
  }

  // Untrained run (epochs < start): still leave valid artifacts behind.
  if (!fs::exists(result.last_path)) {
    std::map<std::string, std::string> meta;
    meta["epoch"] = std::to_string(start_epoch - 1);
    save_checkpoint(result.last_path, snapshot_model(model, adam, meta));
  }
  if (!fs::exists(result.best_path)) fs::copy_file(result.last_path, result.best_path);
  write_loss_csv((fs::path(options.out_dir) / "loss.csv").string(), result.curve);
  return result;
}

}  // namespace msif
