// Command line front end: dataset generation, training, evaluation, gamma
// sweeps and plotting, all on top of the msif core library.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msif/checkpoint.hpp"
#include "msif/config.hpp"
#include "msif/dataset.hpp"
#include "msif/errors.hpp"
#include "msif/flow.hpp"
#include "msif/metrics.hpp"
#include "msif/model.hpp"
#include "msif/rng.hpp"
#include "msif/svg.hpp"
#include "msif/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSceneTag = 0xDA7A0000ULL;
constexpr std::uint64_t kEvalTag = 0xE7A1;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// Directory suffix for a gamma value: 1 -> "1.0", 2.5 -> "2.5".
std::string gamma_tag(double g) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", g);
  std::string s = buf;
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos) s += ".0";
  return s;
}

struct GenerateArgs {
  std::string out_dir;
  std::string config_path;
  std::uint64_t seed = 42;
  double gamma = 1.0;
  int flow_window = 15;
  int flow_levels = 3;
  int flow_iters = 3;
  bool no_flow = false;
  bool quiet = false;
};

int run_generate(const GenerateArgs& a) {
  msif::GeneratorConfig gcfg;
  if (!a.config_path.empty()) gcfg = msif::parse_generator_config(a.config_path);
  if (a.gamma <= 0.0) throw msif::UsageError("--gamma must be positive");

  msif::FlowParams fp;
  fp.window = a.flow_window;
  fp.levels = a.flow_levels;
  fp.iters = a.flow_iters;

  std::vector<msif::SceneSequence> scenes;
  scenes.reserve(gcfg.scene_count);
  for (int k = 0; k < gcfg.scene_count; ++k) {
    msif::SceneSequence scene =
        msif::generate_scene(gcfg, msif::Rng::mix(a.seed, kSceneTag + static_cast<std::uint64_t>(k)));
    if (a.gamma != 1.0) scene = msif::darken_scene(scene, a.gamma);
    if (!a.no_flow) scene.flows = msif::scene_flows(scene.frames, fp);
    if (!a.quiet)
      std::fprintf(stderr, "scene %d/%d rendered%s\n", k + 1, gcfg.scene_count,
                   a.no_flow ? "" : " + flow");
    scenes.push_back(std::move(scene));
  }
  msif::save_dataset(a.out_dir, scenes);
  std::printf("wrote %d scenes to %s (seed %llu, gamma %s%s)\n", gcfg.scene_count,
              a.out_dir.c_str(), static_cast<unsigned long long>(a.seed),
              gamma_tag(a.gamma).c_str(), a.no_flow ? ", no flow cache" : "");
  return 0;
}

struct TrainArgs {
  std::string data_dir;
  std::string out_dir;
  std::string config_path;
  std::string resume_path;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  msif::ExperimentConfig cfg;
  if (!a.config_path.empty()) cfg = msif::parse_experiment_config(a.config_path);
  cfg.validate();
  for (const auto& note : cfg.override_notes()) std::fprintf(stderr, "note: %s\n", note.c_str());

  std::vector<msif::SceneSequence> scenes = msif::load_dataset(a.data_dir);
  msif::MsifModel model(cfg);
  std::fprintf(stderr, "model: %lld parameters, channels [%s], fusion %s\n",
               static_cast<long long>(model.parameter_count()), cfg.channels_string().c_str(),
               cfg.fusion.c_str());

  msif::TrainOptions opt;
  opt.out_dir = a.out_dir;
  opt.resume_path = a.resume_path;
  opt.quiet = a.quiet;
  msif::TrainResult result = msif::train(model, scenes, opt);

  const auto& last = result.curve.back();
  std::printf("trained %d epochs: train_nll %s  val_nll %s\n", last.epoch,
              fmt_short(last.train_nll).c_str(), fmt_short(last.val_nll).c_str());
  std::printf("best val_nll %s at epoch %d\n", fmt_short(result.best_val).c_str(),
              result.best_epoch);
  std::printf("checkpoints: %s, %s\n", result.best_path.c_str(), result.last_path.c_str());
  return 0;
}

struct EvalArgs {
  std::string data_dir;
  std::string checkpoint_path;
  std::string config_path;
  std::string out_dir;
  std::string split = "test";
  int k = 0;  // 0: take sampling_k from the checkpoint config
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool baseline = false;
};

std::vector<std::size_t> pick_split(const msif::SplitIndices& split, const std::string& name,
                                    std::size_t scene_count) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  std::vector<std::size_t> all(scene_count);
  for (std::size_t i = 0; i < scene_count; ++i) all[i] = i;
  return all;
}

int run_eval(const EvalArgs& a) {
  msif::Checkpoint ckpt = msif::load_checkpoint(a.checkpoint_path);
  auto cfg_it = ckpt.meta.find("config");
  if (cfg_it == ckpt.meta.end())
    throw msif::IncompatibleCheckpointError(a.checkpoint_path + " carries no embedded config");
  msif::ExperimentConfig cfg =
      msif::parse_experiment_config_text(cfg_it->second, a.checkpoint_path + ":config");
  if (!a.config_path.empty()) {
    msif::ExperimentConfig given = msif::parse_experiment_config(a.config_path);
    if (msif::config_hash(given) != msif::config_hash(cfg))
      throw msif::IncompatibleCheckpointError(
          a.config_path + " does not match the configuration inside " + a.checkpoint_path +
          " (hash " + msif::config_hash(given) + " vs " + msif::config_hash(cfg) + ")");
  }

  msif::MsifModel model(cfg);
  msif::AdamState adam;
  msif::restore_model(model, adam, ckpt);

  std::vector<msif::SceneSequence> scenes = msif::load_dataset(a.data_dir);
  msif::SplitIndices split = msif::split_scenes(scenes.size(), cfg.seed);
  std::vector<std::size_t> indices = pick_split(split, a.split, scenes.size());
  if (indices.empty()) throw msif::ValueError("eval: split '" + a.split + "' selects no scenes");

  const int k = a.k > 0 ? a.k : cfg.sampling_k;
  const std::uint64_t seed = a.seed_set ? a.seed : cfg.seed;
  msif::MetricsReport report =
      msif::evaluate(model, scenes, indices, k, msif::Rng::mix(seed, kEvalTag));

  std::printf("ADE %s  FDE %s  (%d windows, k=%d, split=%s)\n", fmt_short(report.ade).c_str(),
              fmt_short(report.fde).c_str(), report.window_count, k, a.split.c_str());

  msif::MetricsReport base;
  if (a.baseline) {
    base = msif::constant_position_baseline(scenes, indices, cfg.obs_len, cfg.pred_len);
    std::printf("constant-position baseline: ADE %s  FDE %s\n", fmt_short(base.ade).c_str(),
                fmt_short(base.fde).c_str());
  }

  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    json j;
    j["ade"] = report.ade;
    j["fde"] = report.fde;
    j["window_count"] = report.window_count;
    j["sampling_k"] = report.sampling_k;
    j["split"] = a.split;
    j["seed"] = seed;
    j["checkpoint"] = a.checkpoint_path;
    j["config_hash"] = msif::config_hash(cfg);
    if (a.baseline) {
      j["baseline_ade"] = base.ade;
      j["baseline_fde"] = base.fde;
    }
    json per = json::array();
    for (const auto& [ade, fde] : report.per_window) per.push_back({{"ade", ade}, {"fde", fde}});
    j["per_window"] = per;
    std::ofstream jf(fs::path(a.out_dir) / "metrics.json");
    if (!jf) throw msif::IoError("cannot write metrics.json under " + a.out_dir);
    jf << j.dump(2) << "\n";

    std::ofstream cf(fs::path(a.out_dir) / "per_window.csv");
    if (!cf) throw msif::IoError("cannot write per_window.csv under " + a.out_dir);
    cf << "window,ade,fde\n";
    for (std::size_t i = 0; i < report.per_window.size(); ++i)
      cf << i << "," << fmt_g(report.per_window[i].first) << ","
         << fmt_g(report.per_window[i].second) << "\n";
  }
  return 0;
}

struct SweepArgs {
  std::string data_root;
  std::string checkpoint_path;
  std::string out_dir;
  std::string split = "all";
  std::vector<double> gammas = {1.0, 1.4, 1.8, 2.0, 2.5};
  int k = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run_sweep(const SweepArgs& a) {
  msif::Checkpoint ckpt = msif::load_checkpoint(a.checkpoint_path);
  auto cfg_it = ckpt.meta.find("config");
  if (cfg_it == ckpt.meta.end())
    throw msif::IncompatibleCheckpointError(a.checkpoint_path + " carries no embedded config");
  msif::ExperimentConfig cfg =
      msif::parse_experiment_config_text(cfg_it->second, a.checkpoint_path + ":config");
  msif::MsifModel model(cfg);
  msif::AdamState adam;
  msif::restore_model(model, adam, ckpt);

  std::vector<double> gammas = a.gammas;
  if (gammas.empty()) throw msif::UsageError("--gammas lists no values");
  std::sort(gammas.begin(), gammas.end());

  const int k = a.k > 0 ? a.k : cfg.sampling_k;
  const std::uint64_t seed = a.seed_set ? a.seed : cfg.seed;

  fs::create_directories(a.out_dir);
  std::vector<double> ades, fdes;
  std::ofstream csv(fs::path(a.out_dir) / "sweep.csv");
  if (!csv) throw msif::IoError("cannot write sweep.csv under " + a.out_dir);
  csv << "gamma,ade,fde,window_count\n";

  for (double g : gammas) {
    const std::string dir = (fs::path(a.data_root) / ("gamma_" + gamma_tag(g))).string();
    if (!fs::exists(dir))
      throw msif::MissingFileError("sweep: no dataset for gamma " + gamma_tag(g) + " at " + dir);
    std::vector<msif::SceneSequence> scenes = msif::load_dataset(dir);
    msif::SplitIndices split = msif::split_scenes(scenes.size(), cfg.seed);
    std::vector<std::size_t> indices = pick_split(split, a.split, scenes.size());
    msif::MetricsReport report =
        msif::evaluate(model, scenes, indices, k, msif::Rng::mix(seed, kEvalTag));
    std::printf("gamma %s: ADE %s  FDE %s  (%d windows)\n", gamma_tag(g).c_str(),
                fmt_short(report.ade).c_str(), fmt_short(report.fde).c_str(),
                report.window_count);
    csv << gamma_tag(g) << "," << fmt_g(report.ade) << "," << fmt_g(report.fde) << ","
        << report.window_count << "\n";
    ades.push_back(report.ade);
    fdes.push_back(report.fde);
  }
  csv.flush();
  if (!csv) throw msif::IoError("short write to sweep.csv");

  msif::SvgSeries ade_s{"ADE", gammas, ades};
  msif::SvgSeries fde_s{"FDE", gammas, fdes};
  msif::write_text_file(
      (fs::path(a.out_dir) / "sweep.svg").string(),
      msif::svg_line_chart("error vs gamma darkening", "gamma", "pixels", {ade_s, fde_s}));
  std::printf("sweep artifacts in %s\n", a.out_dir.c_str());
  return 0;
}

struct PlotArgs {
  std::vector<std::string> metrics_paths;
  std::string loss_path;
  std::string out_dir;
};

int run_plot(const PlotArgs& a) {
  if (a.metrics_paths.empty() && a.loss_path.empty())
    throw msif::UsageError("plot: nothing to do, pass --metrics and/or --loss");
  fs::create_directories(a.out_dir);

  if (!a.metrics_paths.empty()) {
    std::vector<double> ades, fdes;
    for (const auto& path : a.metrics_paths) {
      std::ifstream f(path);
      if (!f) throw msif::MissingFileError("cannot open metrics file " + path);
      json j;
      try {
        f >> j;
      } catch (const json::exception& e) {
        throw msif::CorruptFileError(path + ": " + e.what());
      }
      if (!j.contains("per_window"))
        throw msif::CorruptFileError(path + ": no per_window array");
      for (const auto& row : j["per_window"]) {
        ades.push_back(row.at("ade").get<double>());
        fdes.push_back(row.at("fde").get<double>());
      }
    }
    if (ades.empty()) throw msif::ValueError("plot: metrics files hold no windows");
    msif::write_text_file((fs::path(a.out_dir) / "hist_ade.svg").string(),
                          msif::svg_histogram("per-window ADE", "pixels", ades));
    msif::write_text_file((fs::path(a.out_dir) / "hist_fde.svg").string(),
                          msif::svg_histogram("per-window FDE", "pixels", fdes));
    std::printf("wrote %s and %s\n", (fs::path(a.out_dir) / "hist_ade.svg").c_str(),
                (fs::path(a.out_dir) / "hist_fde.svg").c_str());
  }

  if (!a.loss_path.empty()) {
    std::ifstream f(a.loss_path);
    if (!f) throw msif::MissingFileError("cannot open loss curve " + a.loss_path);
    std::string line;
    if (!std::getline(f, line) || line != "epoch,train_nll,val_nll")
      throw msif::CorruptFileError(a.loss_path + ": expected header epoch,train_nll,val_nll");
    msif::SvgSeries train_s{"train", {}, {}};
    msif::SvgSeries val_s{"val", {}, {}};
    int lineno = 1;
    while (std::getline(f, line)) {
      ++lineno;
      int epoch;
      double tr, va;
      if (std::sscanf(line.c_str(), "%d,%lf,%lf", &epoch, &tr, &va) != 3)
        throw msif::CorruptFileError(a.loss_path + ":" + std::to_string(lineno) +
                                     ": bad loss row");
      train_s.x.push_back(epoch);
      train_s.y.push_back(tr);
      val_s.x.push_back(epoch);
      val_s.y.push_back(va);
    }
    if (train_s.x.empty()) throw msif::ValueError("plot: loss curve has no rows");
    msif::write_text_file(
        (fs::path(a.out_dir) / "loss.svg").string(),
        msif::svg_line_chart("negative log likelihood", "epoch", "nll", {train_s, val_s}));
    std::printf("wrote %s\n", (fs::path(a.out_dir) / "loss.svg").c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msif: multi-stream trajectory prediction on synthetic desk scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "msif 0.1.0");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "render a synthetic dataset with flow cache");
  gen_cmd->add_option("--out", gen.out_dir, "dataset output directory")->required();
  gen_cmd->add_option("--config", gen.config_path, "generator config file");
  gen_cmd->add_option("--seed", gen.seed, "master seed (default 42)");
  gen_cmd->add_option("--gamma", gen.gamma, "gamma darkening to apply (default 1.0)");
  gen_cmd->add_option("--flow-window", gen.flow_window, "flow window size, odd (default 15)");
  gen_cmd->add_option("--flow-levels", gen.flow_levels, "flow pyramid levels (default 3)");
  gen_cmd->add_option("--flow-iters", gen.flow_iters, "flow iterations per level (default 3)");
  gen_cmd->add_flag("--no-flow", gen.no_flow, "skip the flow cache (recomputed on demand)");
  gen_cmd->add_flag("--quiet", gen.quiet, "no per-scene progress");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "train a model on a generated dataset");
  tr_cmd->add_option("--data", tr.data_dir, "dataset directory")->required();
  tr_cmd->add_option("--out", tr.out_dir, "output directory for checkpoints and loss.csv")
      ->required();
  tr_cmd->add_option("--config", tr.config_path, "experiment config file");
  tr_cmd->add_option("--resume", tr.resume_path, "last.ckpt of the run to continue");
  tr_cmd->add_flag("--quiet", tr.quiet, "no per-epoch progress");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset split");
  ev_cmd->add_option("--data", ev.data_dir, "dataset directory")->required();
  ev_cmd->add_option("--checkpoint", ev.checkpoint_path, "checkpoint to evaluate")->required();
  ev_cmd->add_option("--config", ev.config_path, "config file that must match the checkpoint");
  ev_cmd->add_option("--out", ev.out_dir, "directory for metrics.json and per_window.csv");
  ev_cmd->add_option("--split", ev.split, "train|val|test|all (default test)")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  ev_cmd->add_option("--k", ev.k, "samples per window (default: config sampling_k)");
  auto* ev_seed = ev_cmd->add_option("--seed", ev.seed, "sampling seed (default: config seed)");
  ev_cmd->add_flag("--baseline", ev.baseline, "also report the constant-position baseline");

  SweepArgs sw;
  auto* sw_cmd = app.add_subcommand("sweep", "evaluate one checkpoint across gamma datasets");
  sw_cmd->add_option("--data-root", sw.data_root, "directory holding gamma_<g> datasets")
      ->required();
  sw_cmd->add_option("--checkpoint", sw.checkpoint_path, "checkpoint to evaluate")->required();
  sw_cmd->add_option("--out", sw.out_dir, "directory for sweep.csv and sweep.svg")->required();
  sw_cmd->add_option("--gammas", sw.gammas, "gamma values (default 1.0,1.4,1.8,2.0,2.5)")
      ->delimiter(',');
  sw_cmd->add_option("--split", sw.split, "train|val|test|all (default all)")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  sw_cmd->add_option("--k", sw.k, "samples per window (default: config sampling_k)");
  auto* sw_seed = sw_cmd->add_option("--seed", sw.seed, "sampling seed (default: config seed)");

  PlotArgs pl;
  auto* pl_cmd = app.add_subcommand("plot", "render svg charts from metrics and loss files");
  pl_cmd->add_option("--metrics", pl.metrics_paths, "metrics.json files to pool");
  pl_cmd->add_option("--loss", pl.loss_path, "loss.csv from a training run");
  pl_cmd->add_option("--out", pl.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  ev.seed_set = ev_seed->count() > 0;
  sw.seed_set = sw_seed->count() > 0;

  try {
    if (gen_cmd->parsed()) return run_generate(gen);
    if (tr_cmd->parsed()) return run_train(tr);
    if (ev_cmd->parsed()) return run_eval(ev);
    if (sw_cmd->parsed()) return run_sweep(sw);
    if (pl_cmd->parsed()) return run_plot(pl);
  } catch (const msif::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const msif::MissingFileError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const msif::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
