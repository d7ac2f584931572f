#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"
#include "msif/checkpoint.hpp"
#include "msif/config.hpp"
#include "msif/errors.hpp"
#include "msif/model.hpp"
#include "msif/train.hpp"

using namespace msif;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::path(testutil::scratch_dir("ckptcfg")) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// thrown message must mention the needle
template <typename Fn>
void expect_config_error(Fn&& fn, const std::string& needle) {
  try {
    fn();
    FAIL_CHECK("expected a ConfigError mentioning '" << needle << "'");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

ExperimentConfig tiny_model_cfg() {
  ExperimentConfig cfg;
  cfg.channel_optical = true;
  cfg.channel_image = false;
  cfg.txpcnn_layers = 2;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint_config");

TEST_CASE("checkpoint files round trip bit for bit") {
  Checkpoint ckpt;
  ckpt.meta["format"] = "msif-train";
  ckpt.meta["note"] = "unit test";
  ckpt.shapes["a"] = {2, 3};
  ckpt.tensors["a"] = {1.0, -2.5, 3.25, 1e-300, -0.0, 7.5};
  ckpt.shapes["scalar"] = {};
  ckpt.tensors["scalar"] = {3.14159};

  const std::string path = tmp_path("roundtrip.ckpt");
  save_checkpoint(path, ckpt);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.meta == ckpt.meta);
  CHECK(back.shapes == ckpt.shapes);
  CHECK(back.tensors == ckpt.tensors);

  // a second save of identical contents writes identical bytes
  const std::string path2 = tmp_path("roundtrip2.ckpt");
  save_checkpoint(path2, back);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("save refuses inconsistent tensor tables") {
  Checkpoint noshape;
  noshape.tensors["w"] = {1.0};
  CHECK_THROWS_AS(save_checkpoint(tmp_path("bad1.ckpt"), noshape), ValueError);

  Checkpoint mismatch;
  mismatch.shapes["w"] = {3};
  mismatch.tensors["w"] = {1.0, 2.0};
  CHECK_THROWS_AS(save_checkpoint(tmp_path("bad2.ckpt"), mismatch), ValueError);
}

TEST_CASE("load distinguishes missing, corrupt, and mismatched files") {
  CHECK_THROWS_AS(load_checkpoint(tmp_path("nope.ckpt")), MissingFileError);

  Checkpoint ckpt;
  ckpt.meta["k"] = "v";
  ckpt.shapes["w"] = {4};
  ckpt.tensors["w"] = {1.0, 2.0, 3.0, 4.0};
  const std::string good = tmp_path("good.ckpt");
  save_checkpoint(good, ckpt);
  const std::string bytes = read_bytes(good);

  const std::string truncated = tmp_path("truncated.ckpt");
  write_bytes(truncated, bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(truncated), CorruptFileError);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  const std::string badmagic = tmp_path("badmagic.ckpt");
  write_bytes(badmagic, wrong_magic);
  CHECK_THROWS_AS(load_checkpoint(badmagic), CorruptFileError);

  std::string future = bytes;
  future[4] = 2;  // version field, little endian
  const std::string vpath = tmp_path("future.ckpt");
  write_bytes(vpath, future);
  CHECK_THROWS_AS(load_checkpoint(vpath), VersionMismatchError);
}

TEST_CASE("a snapshot restores the exact model and optimizer state") {
  ExperimentConfig cfg = tiny_model_cfg();
  MsifModel model(cfg);
  AdamState adam;
  adam.step = 17;
  for (const auto& [name, p] : model.params()) {
    adam.m[name].assign(static_cast<std::size_t>(p.numel()), 0.25);
    adam.v[name].assign(static_cast<std::size_t>(p.numel()), 0.5);
  }

  Checkpoint snap = snapshot_model(model, adam, {{"epoch", "3"}});
  CHECK(snap.meta.at("format") == "msif-train");
  CHECK(snap.meta.at("config_hash") == config_hash(cfg));
  CHECK(snap.meta.at("epoch") == "3");

  const std::string path = tmp_path("model.ckpt");
  save_checkpoint(path, snap);

  MsifModel fresh(cfg);
  AdamState fresh_adam;
  restore_model(fresh, fresh_adam, load_checkpoint(path));
  CHECK(fresh_adam.step == 17);
  for (const auto& [name, p] : model.params()) {
    CHECK(fresh.params().at(name).values() == p.values());  // bitwise
    CHECK(fresh_adam.m.at(name) == adam.m.at(name));
    CHECK(fresh_adam.v.at(name) == adam.v.at(name));
  }

  // a different configuration refuses the same checkpoint
  ExperimentConfig other = cfg;
  other.learning_rate = 2e-3;
  MsifModel wrong(other);
  AdamState wa;
  CHECK_THROWS_AS(restore_model(wrong, wa, load_checkpoint(path)), IncompatibleCheckpointError);

  Checkpoint no_hash = snap;
  no_hash.meta.erase("config_hash");
  CHECK_THROWS_AS(restore_model(fresh, fresh_adam, no_hash), IncompatibleCheckpointError);
}

TEST_CASE("defaults pin the reference protocol") {
  ExperimentConfig cfg;
  CHECK(cfg.learning_rate == 1e-6);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.adam_eps == 1e-8);
  CHECK(cfg.batch_size == 1024);
  CHECK(cfg.epochs == 250);
  CHECK(cfg.obs_len == 8);
  CHECK(cfg.pred_len == 12);
  CHECK(cfg.stgcn_layers == 1);
  CHECK(cfg.txpcnn_layers == 5);
  CHECK(cfg.output_dim == 5);
  CHECK(cfg.lr_decay == 0.1);
  CHECK(cfg.lr_decay_every == 50);
  CHECK(cfg.channel_trajectory);
  CHECK(cfg.channel_optical);
  CHECK(cfg.channel_image);
  CHECK(cfg.fusion == "mean");
  CHECK(cfg.sampling_k == 20);
  CHECK(cfg.temporal_kernel == 3);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.override_notes().empty());
}

TEST_CASE("config text parsing reports where it gave up") {
  expect_config_error([] { parse_experiment_config_text("nonsense = 1\n", "cfg"); },
                      "unknown key 'nonsense'");
  expect_config_error([] { parse_experiment_config_text("epochs = 5\nepochs = 6\n", "cfg"); },
                      "cfg:2");
  expect_config_error([] { parse_experiment_config_text("epochs = soon\n", "cfg"); },
                      "non-integer");
  expect_config_error([] { parse_experiment_config_text("learning_rate = fast\n", "cfg"); },
                      "non-numeric");
  expect_config_error([] { parse_experiment_config_text("epochs\n", "cfg"); }, "cfg:1");
  expect_config_error([] { parse_experiment_config_text("epochs =\n", "cfg"); }, "empty");
  expect_config_error([] { parse_experiment_config_text("channels = telepathy\n", "cfg"); },
                      "unknown channel");
}

TEST_CASE("channel lists toggle exactly the named extractors") {
  ExperimentConfig all = parse_experiment_config_text("channels = trajectory,optical,image\n", "t");
  CHECK(all.enabled_channels() == 3);

  ExperimentConfig flow = parse_experiment_config_text("channels = trajectory, optical\n", "t");
  CHECK(flow.channel_trajectory);
  CHECK(flow.channel_optical);
  CHECK(!flow.channel_image);
  CHECK(flow.channels_string() == "trajectory,optical");

  ExperimentConfig img = parse_experiment_config_text("channels = trajectory,image\n", "t");
  CHECK(!img.channel_optical);
  CHECK(img.channel_image);

  expect_config_error([] { parse_experiment_config_text("channels = optical\n", "t"); },
                      "trajectory channel is required");
}

TEST_CASE("validation rejects protocol violations") {
  expect_config_error([] { parse_experiment_config_text("output_dim = 4\n", "t"); },
                      "output_dim must be 5");
  expect_config_error([] { parse_experiment_config_text("temporal_kernel = 2\n", "t"); },
                      "must be odd");
  expect_config_error([] { parse_experiment_config_text("fusion = median\n", "t"); },
                      "unknown fusion method");
  expect_config_error([] { parse_experiment_config_text("learning_rate = 0\n", "t"); },
                      "learning_rate");
  expect_config_error([] { parse_experiment_config_text("tpc_fusion_depth = 9\n", "t"); },
                      "tpc_fusion_depth");
  expect_config_error([] { parse_experiment_config_text("obs_len = 1\n", "t"); }, "obs_len");
}

TEST_CASE("the canonical form is a fixed point of the parser") {
  ExperimentConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.channel_image = false;
  cfg.fusion = "concat";
  cfg.seed = 77;
  const std::string canon = canonical_config(cfg);
  ExperimentConfig back = parse_experiment_config_text(canon, "canon");
  CHECK(canonical_config(back) == canon);
  CHECK(config_hash(back) == config_hash(cfg));

  ExperimentConfig other = cfg;
  other.seed = 78;
  CHECK(config_hash(other) != config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);
}

TEST_CASE("override notes flag departures from the pinned horizon") {
  ExperimentConfig cfg;
  cfg.obs_len = 9;
  cfg.pred_len = 10;
  auto notes = cfg.override_notes();
  REQUIRE(notes.size() == 2);
  CHECK(notes[0].find("obs_len") != std::string::npos);
  CHECK(notes[1].find("pred_len") != std::string::npos);
}

TEST_CASE("key value files skip comments and insist on existing") {
  const std::string path = tmp_path("kv.cfg");
  write_text(path, "# leading comment\n\n a = 1 # trailing\nb=two\n");
  auto kv = read_kv_file(path);
  CHECK(kv.size() == 2);
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "two");
  CHECK_THROWS_AS(read_kv_file(tmp_path("absent.cfg")), MissingFileError);
}

TEST_CASE("generator configs are range checked") {
  const std::string good = tmp_path("gen.cfg");
  write_text(good,
             "width = 96\nheight = 72\nframe_count = 24\nobject_count = 2\nscene_count = 4\n"
             "min_speed = 1.0\nmax_speed = 2.0\n");
  GeneratorConfig gen = parse_generator_config(good);
  CHECK(gen.width == 96);
  CHECK(gen.height == 72);
  CHECK(gen.scene_count == 4);
  CHECK(gen.max_speed == 2.0);

  const std::string bad1 = tmp_path("gen_bad1.cfg");
  write_text(bad1, "scene_count = 0\n");
  expect_config_error([&] { parse_generator_config(bad1); }, "scene_count");

  const std::string bad2 = tmp_path("gen_bad2.cfg");
  write_text(bad2, "texture_amplitude = 0.5\n");
  expect_config_error([&] { parse_generator_config(bad2); }, "texture_amplitude");

  const std::string bad3 = tmp_path("gen_bad3.cfg");
  write_text(bad3, "min_speed = 3\nmax_speed = 1\n");
  expect_config_error([&] { parse_generator_config(bad3); }, "min_speed");

  const std::string bad4 = tmp_path("gen_bad4.cfg");
  write_text(bad4, "speed = 3\n");
  expect_config_error([&] { parse_generator_config(bad4); }, "unknown key");
}

TEST_SUITE_END();
