#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"

using testutil::run_cli;
using testutil::scratch_dir;
namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

const char* kGenCfg =
    "width = 96\nheight = 72\nframe_count = 22\nobject_count = 2\nscene_count = 4\n";
const char* kTrainCfg =
    "channels = trajectory\nlearning_rate = 5e-3\nbatch_size = 8\nepochs = 2\n"
    "txpcnn_layers = 2\nseed = 11\n";

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("help and version exit cleanly") {
  auto help = run_cli("--help");
  REQUIRE(help.exit_code != -1);  // MSIF_BIN must be wired up by ctest
  CHECK(help.exit_code == 0);
  CHECK(help.output.find("generate") != std::string::npos);
  CHECK(help.output.find("sweep") != std::string::npos);

  auto version = run_cli("--version");
  CHECK(version.exit_code == 0);
  CHECK(version.output.find("msif") != std::string::npos);
}

TEST_CASE("bad invocations exit with the usage code") {
  CHECK(run_cli("generate").exit_code == 1);                  // missing --out
  CHECK(run_cli("frobnicate").exit_code == 1);                // no such subcommand
  CHECK(run_cli("eval --data x --checkpoint y --split bogus").exit_code == 1);
  CHECK(run_cli("plot --out /tmp/msif_plot_unused").exit_code == 1);  // nothing to plot
}

TEST_CASE("a missing dataset is a usage-level failure") {
  const std::string root = scratch_dir("cli_missing");
  auto r = run_cli("train --data " + root + "/not_there --out " + root + "/run");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("error:") != std::string::npos);
}

TEST_CASE("generate, train, eval, and plot chain end to end") {
  const std::string root = scratch_dir("cli_chain");
  write_text(root + "/gen.cfg", kGenCfg);
  write_text(root + "/train.cfg", kTrainCfg);

  auto gen = run_cli("generate --out " + root + "/data --config " + root +
                     "/gen.cfg --seed 9 --no-flow --quiet");
  REQUIRE(gen.exit_code == 0);
  CHECK(gen.output.find("wrote 4 scenes") != std::string::npos);
  CHECK(fs::exists(root + "/data/scene_0/meta"));
  CHECK(fs::exists(root + "/data/scene_3/meta"));

  auto train = run_cli("train --data " + root + "/data --out " + root + "/run --config " + root +
                       "/train.cfg --quiet");
  REQUIRE(train.exit_code == 0);
  CHECK(train.output.find("trained 2 epochs") != std::string::npos);
  CHECK(fs::exists(root + "/run/loss.csv"));
  CHECK(fs::exists(root + "/run/best.ckpt"));
  CHECK(fs::exists(root + "/run/last.ckpt"));

  auto eval = run_cli("eval --data " + root + "/data --checkpoint " + root +
                      "/run/best.ckpt --config " + root + "/train.cfg --out " + root +
                      "/metrics --baseline --k 3");
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.output.find("ADE") != std::string::npos);
  CHECK(eval.output.find("baseline") != std::string::npos);
  const std::string metrics = slurp(root + "/metrics/metrics.json");
  CHECK(metrics.find("\"ade\"") != std::string::npos);
  CHECK(metrics.find("\"baseline_ade\"") != std::string::npos);
  CHECK(metrics.find("\"per_window\"") != std::string::npos);
  const std::string per_window = slurp(root + "/metrics/per_window.csv");
  CHECK(per_window.rfind("window,ade,fde\n", 0) == 0);

  auto plot = run_cli("plot --metrics " + root + "/metrics/metrics.json --loss " + root +
                      "/run/loss.csv --out " + root + "/plots");
  REQUIRE(plot.exit_code == 0);
  for (const char* name : {"hist_ade.svg", "hist_fde.svg", "loss.svg"}) {
    const std::string svg = slurp(root + "/plots/" + name);
    CHECK(svg.find("<svg") != std::string::npos);
  }

  // identical eval invocations agree number for number
  auto again = run_cli("eval --data " + root + "/data --checkpoint " + root +
                       "/run/best.ckpt --k 3");
  auto again2 = run_cli("eval --data " + root + "/data --checkpoint " + root +
                        "/run/best.ckpt --k 3");
  CHECK(again.exit_code == 0);
  CHECK(again.output == again2.output);

  // a config that differs from the one inside the checkpoint is refused
  write_text(root + "/other.cfg",
             "channels = trajectory\nlearning_rate = 5e-3\nbatch_size = 8\nepochs = 2\n"
             "txpcnn_layers = 2\nseed = 12\n");
  auto mismatch = run_cli("eval --data " + root + "/data --checkpoint " + root +
                          "/run/best.ckpt --config " + root + "/other.cfg");
  CHECK(mismatch.exit_code == 2);
  CHECK(mismatch.output.find("does not match") != std::string::npos);

  // resuming a finished run is a no-op that still succeeds
  auto resume = run_cli("train --data " + root + "/data --out " + root + "/run --config " + root +
                        "/train.cfg --resume " + root + "/run/last.ckpt --quiet");
  CHECK(resume.exit_code == 0);

  // sweep needs gamma_<g> datasets under the root it was pointed at
  auto sweep = run_cli("sweep --data-root " + root + "/nowhere --checkpoint " + root +
                       "/run/best.ckpt --out " + root + "/sweep --gammas 1.0");
  CHECK(sweep.exit_code == 1);
  CHECK(sweep.output.find("gamma 1.0") != std::string::npos);
}

TEST_CASE("corrupt checkpoints are an operational error") {
  const std::string root = scratch_dir("cli_corrupt");
  write_text(root + "/junk.ckpt", "XXXX not a checkpoint");
  fs::create_directories(root + "/data");
  auto r = run_cli("eval --data " + root + "/data --checkpoint " + root + "/junk.ckpt");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("magic") != std::string::npos);
}

TEST_CASE("gamma and flow options reach the generator") {
  const std::string root = scratch_dir("cli_gamma");
  write_text(root + "/gen1.cfg",
             "width = 64\nheight = 48\nframe_count = 21\nobject_count = 1\nscene_count = 1\n");
  auto dark = run_cli("generate --out " + root + "/dark --config " + root +
                      "/gen1.cfg --seed 3 --gamma 2.5 --flow-window 9 --flow-levels 2 "
                      "--flow-iters 2 --quiet");
  REQUIRE(dark.exit_code == 0);
  CHECK(dark.output.find("gamma 2.5") != std::string::npos);
  const std::string meta = slurp(root + "/dark/scene_0/meta");
  CHECK(meta.find("2.5") != std::string::npos);
  CHECK(fs::exists(root + "/dark/scene_0/flow/0.flo"));

  CHECK(run_cli("generate --out " + root + "/bad --config " + root +
                "/gen1.cfg --gamma 0")
            .exit_code == 1);
}

TEST_SUITE_END();
