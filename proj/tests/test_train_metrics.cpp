#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "msif/errors.hpp"
#include "msif/metrics.hpp"
#include "msif/model.hpp"
#include "msif/rng.hpp"
#include "msif/sampler.hpp"
#include "msif/train.hpp"

using namespace msif;

namespace {

constexpr double kLn2Pi = 1.8378770664093454836;

GaussianTrajectoryField unit_field(const Tensor& mu) {
  GaussianTrajectoryField f;
  f.mu = mu;
  const Shape& s = mu.shape();
  f.sigma = Tensor::from(s, std::vector<double>(static_cast<std::size_t>(mu.numel()), 1.0));
  f.rho = Tensor::from({s[0], s[1]},
                       std::vector<double>(static_cast<std::size_t>(s[0] * s[1]), 0.0));
  return f;
}

// linear mover: one object crossing the frame at a constant velocity
SceneSequence linear_scene(int frame_count, double vx, double vy) {
  SceneSequence scene;
  scene.frame_rate_hz = 10.0;
  for (int t = 0; t < frame_count; ++t) scene.frames.push_back(Image::zeros(160, 120));
  ObjectTrack track;
  track.object_id = 0;
  for (int t = 0; t < frame_count; ++t) {
    TrackState st;
    st.frame = t;
    st.center = {20.0 + vx * t, 30.0 + vy * t};
    st.box = {st.center.x - 5, st.center.y - 5, st.center.x + 5, st.center.y + 5};
    track.states.push_back(st);
  }
  scene.tracks.push_back(track);
  return scene;
}

ExperimentConfig traj_only_cfg() {
  ExperimentConfig cfg;
  cfg.channel_optical = false;
  cfg.channel_image = false;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.txpcnn_layers = 2;
  cfg.seed = 11;
  return cfg;
}

std::vector<SceneSequence> tiny_scene_set(int count, std::uint64_t seed) {
  GeneratorConfig gen;
  gen.width = 96;
  gen.height = 72;
  gen.frame_count = 22;
  gen.object_count = 2;
  std::vector<SceneSequence> scenes;
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_scene(gen, Rng::mix(seed, static_cast<std::uint64_t>(i))));
  return scenes;
}

}  // namespace

TEST_SUITE_BEGIN("train_metrics");

TEST_CASE("nll at the truth with unit isotropic variance is ln(2 pi)") {
  Rng rng(71);
  Tensor mu = Tensor::param_uniform({2, 2, 2}, 1.0, rng);
  Tensor truth = Tensor::from({2, 2, 2}, mu.values());
  Tensor loss = nll_loss(unit_field(mu), truth);
  CHECK(loss.item() == doctest::Approx(kLn2Pi).epsilon(1e-12));
}

TEST_CASE("nll closed form at a unit offset") {
  Tensor mu = Tensor::from({1, 1, 2}, {0.0, 0.0});
  Tensor truth = Tensor::from({1, 1, 2}, {1.0, 0.0});
  Tensor loss = nll_loss(unit_field(mu), truth);
  CHECK(loss.item() == doctest::Approx(kLn2Pi + 0.5).epsilon(1e-12));
}

TEST_CASE("nll gradients through the gaussian head match finite differences") {
  Rng rng(72);
  Tensor raw = Tensor::param_uniform({2, 1, 5}, 0.8, rng);
  Tensor truth = Tensor::from({1, 1, 2}, {0.3, -0.2});
  Tensor truth2 = Tensor::from({2, 1, 2}, {0.3, -0.2, 0.1, 0.4});
  std::map<std::string, Tensor> params{{"raw", raw}};
  auto loss = [&] { return nll_loss(gaussian_head(raw), truth2); };
  CHECK(testutil::max_grad_rel_err(params, loss) < 1e-5);
}

TEST_CASE("the first adam step with unit gradient moves by lr over one plus eps") {
  Tensor p = Tensor::param({2}, {0.5, -1.25});
  std::map<std::string, Tensor> params{{"p", p}};
  Tensor loss = sum(p);
  p.zero_grad();
  backward(loss);

  AdamState state;
  adam_step(params, state, 0.1, 0.9, 0.999, 1e-8);
  const double delta = 0.1 / (1.0 + 1e-8);
  CHECK(p.values()[0] == doctest::Approx(0.5 - delta).epsilon(1e-12));
  CHECK(p.values()[1] == doctest::Approx(-1.25 - delta).epsilon(1e-12));
  CHECK(state.step == 1);
  CHECK(state.m.count("p") == 1);
}

TEST_CASE("lr schedule steps down by the decay factor") {
  CHECK(lr_schedule(0, 1e-6) == doctest::Approx(1e-6).epsilon(1e-15));
  CHECK(lr_schedule(49, 1e-6) == doctest::Approx(1e-6).epsilon(1e-15));
  CHECK(lr_schedule(50, 1e-6) == doctest::Approx(1e-7).epsilon(1e-12));
  CHECK(lr_schedule(100, 1e-6) == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(lr_schedule(30, 2e-3, 0.5, 10) == doctest::Approx(2e-3 * 0.125).epsilon(1e-12));
  CHECK_THROWS_AS(lr_schedule(-1, 1e-6), ValueError);
  CHECK_THROWS_AS(lr_schedule(10, 1e-6, 0.1, 0), ValueError);
}

TEST_CASE("scene splits cover everything once at the documented ratio") {
  SplitIndices s10 = split_scenes(10, 99);
  CHECK(s10.train.size() == 7);
  CHECK(s10.val.size() == 2);
  CHECK(s10.test.size() == 1);

  SplitIndices s40 = split_scenes(40, 99);
  CHECK(s40.train.size() == 28);
  CHECK(s40.val.size() == 8);
  CHECK(s40.test.size() == 4);

  std::set<std::size_t> seen;
  for (auto i : s40.train) seen.insert(i);
  for (auto i : s40.val) seen.insert(i);
  for (auto i : s40.test) seen.insert(i);
  CHECK(seen.size() == 40);
  CHECK(*seen.rbegin() == 39);

  SplitIndices again = split_scenes(40, 99);
  CHECK(again.train == s40.train);
  CHECK(again.val == s40.val);
  CHECK(again.test == s40.test);

  CHECK_THROWS_AS(split_scenes(2, 1), ValueError);
}

TEST_CASE("prepare_sample normalizes positions and zeroes the first displacement") {
  SceneSequence scene = linear_scene(22, 2.0, 1.0);
  ExperimentConfig cfg = traj_only_cfg();
  auto windows = window_samples(scene, cfg.obs_len, cfg.pred_len);
  REQUIRE(windows.size() == 3);  // 22 frames, 20-frame windows
  Sample s = prepare_sample(scene, windows[0], cfg);

  CHECK(s.img_w == 160);
  CHECK(s.img_h == 120);
  REQUIRE(s.traj_attrs.shape() == Shape{8, 1, 2});
  const auto& pos = s.positions.values();
  CHECK(pos[0] == doctest::Approx(20.0 / 160.0).epsilon(1e-12));
  CHECK(pos[1] == doctest::Approx(30.0 / 120.0).epsilon(1e-12));
  const auto& disp = s.traj_attrs.values();
  CHECK(disp[0] == 0.0);
  CHECK(disp[1] == 0.0);
  CHECK(disp[2] == doctest::Approx(2.0 / 160.0).epsilon(1e-12));
  CHECK(disp[3] == doctest::Approx(1.0 / 120.0).epsilon(1e-12));

  // truth in pixels continues the track past the observation span
  CHECK(s.truth_px[0] == doctest::Approx(20.0 + 2.0 * 8).epsilon(1e-12));
  CHECK(s.truth_px[1] == doctest::Approx(30.0 + 1.0 * 8).epsilon(1e-12));

  // the second window starts one frame later
  Sample s1 = prepare_sample(scene, windows[1], cfg);
  CHECK(s1.positions.values()[0] == doctest::Approx(22.0 / 160.0).epsilon(1e-12));
}

TEST_CASE("prepare_sample zeroes the pooled flow at the first observed step") {
  SceneSequence scene = linear_scene(20, 1.5, 0.5);
  Rng rng(73);
  for (auto& frame : scene.frames) frame = testutil::textured_image(160, 120, rng);
  scene.flows = scene_flows(scene.frames, FlowParams{});

  ExperimentConfig cfg = traj_only_cfg();
  cfg.channel_optical = true;
  auto windows = window_samples(scene, cfg.obs_len, cfg.pred_len);
  REQUIRE(!windows.empty());
  Sample s = prepare_sample(scene, windows[0], cfg);
  REQUIRE(s.flow_pooled.shape() == Shape{8, 1, 50});
  const auto& fp = s.flow_pooled.values();
  for (int c = 0; c < 50; ++c) CHECK(fp[c] == 0.0);
  bool later_nonzero = false;
  for (std::size_t i = 50; i < fp.size(); ++i)
    if (fp[i] != 0.0) later_nonzero = true;
  CHECK(later_nonzero);

  // flows are required when the channel is on
  SceneSequence bare = linear_scene(20, 1.5, 0.5);
  CHECK_THROWS_AS(prepare_sample(bare, windows[0], cfg), ValueError);
}

TEST_CASE("a constant planar offset gives equal average and final errors") {
  // one node, two steps, prediction shifted by (3,4) everywhere
  std::vector<double> truth{10.0, 20.0, 11.0, 21.0};
  std::vector<double> pred{13.0, 24.0, 14.0, 25.0};
  auto [ade, fde] = ade_fde(pred, 1, 2, 1, truth);
  CHECK(ade == 5.0);
  CHECK(fde == 5.0);
}

TEST_CASE("ade_fde agrees with the brute-force definition on random cases") {
  Rng rng(74);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform(0.0, 5.0));
    const std::int64_t t_len = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 4.0));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform(0.0, 4.0));
    std::vector<double> pred(static_cast<std::size_t>(k) * t_len * n * 2);
    std::vector<double> truth(static_cast<std::size_t>(t_len) * n * 2);
    for (auto& v : pred) v = rng.uniform(-50.0, 50.0);
    for (auto& v : truth) v = rng.uniform(-50.0, 50.0);
    auto got = ade_fde(pred, k, t_len, n, truth);
    auto want = testutil::brute_ade_fde(pred, k, t_len, n, truth);
    CHECK(got.first == want.first);    // same op order, bitwise
    CHECK(got.second == want.second);
  }
}

TEST_CASE("widening the sample pool never hurts the best-of-k error") {
  Rng rng(75);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t t_len = 3, n = 2;
    std::vector<double> pool(static_cast<std::size_t>(20) * t_len * n * 2);
    std::vector<double> truth(static_cast<std::size_t>(t_len) * n * 2);
    for (auto& v : pool) v = rng.uniform(-10.0, 10.0);
    for (auto& v : truth) v = rng.uniform(-10.0, 10.0);
    std::vector<double> first(pool.begin(), pool.begin() + t_len * n * 2);
    auto one = ade_fde(first, 1, t_len, n, truth);
    auto twenty = ade_fde(pool, 20, t_len, n, truth);
    CHECK(twenty.first <= one.first);
    CHECK(twenty.second <= one.second);
  }
}

TEST_CASE("sampled futures reproduce the requested correlation") {
  GaussianTrajectoryField f;
  f.mu = Tensor::from({1, 1, 2}, {0.0, 0.0});
  f.sigma = Tensor::from({1, 1, 2}, {1.0, 1.0});
  f.rho = Tensor::from({1, 1}, {0.8});
  const int k = 100000;
  std::vector<double> draws = sample_trajectories(f, k, 2024);
  REQUIRE(draws.size() == static_cast<std::size_t>(k) * 2);

  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < k; ++i) {
    const double x = draws[i * 2 + 0], y = draws[i * 2 + 1];
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double mx = sx / k, my = sy / k;
  const double vx = sxx / k - mx * mx, vy = syy / k - my * my;
  const double corr = (sxy / k - mx * my) / std::sqrt(vx * vy);
  CHECK(corr > 0.79);
  CHECK(corr < 0.81);
  CHECK(std::abs(mx) < 0.02);
  CHECK(std::abs(my) < 0.02);
  CHECK(std::sqrt(vx) > 0.98);
  CHECK(std::sqrt(vx) < 1.02);

  // deterministic in the seed
  std::vector<double> again = sample_trajectories(f, 64, 7);
  CHECK(again == sample_trajectories(f, 64, 7));
  CHECK(again != sample_trajectories(f, 64, 8));

  CHECK_THROWS_AS(sample_trajectories(f, 0, 1), ValueError);
}

TEST_CASE("decode_positions accumulates unit displacements from the anchor") {
  std::vector<double> disp{0.1, 0.2, 0.3, -0.1};  // [2,1,2]
  std::vector<double> anchor{50.0, 60.0};
  std::vector<double> px = decode_positions(disp.data(), 2, 1, anchor, 100.0, 200.0);
  REQUIRE(px.size() == 4);
  CHECK(px[0] == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(px[1] == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(px[2] == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(px[3] == doctest::Approx(80.0).epsilon(1e-12));
}

TEST_CASE("the frozen baseline accumulates exactly the skipped motion") {
  SceneSequence scene = linear_scene(20, 2.0, 0.0);
  MetricsReport r = constant_position_baseline({scene}, {0}, 8, 12);
  REQUIRE(r.window_count == 1);
  // distance at horizon t is 2(t+1); mean over 12 steps is 13, final is 24
  CHECK(r.ade == doctest::Approx(13.0).epsilon(1e-12));
  CHECK(r.fde == doctest::Approx(24.0).epsilon(1e-12));
}

TEST_CASE("a short training run optimizes and leaves its artifacts behind") {
  ExperimentConfig cfg = traj_only_cfg();
  MsifModel model(cfg);
  auto scenes = tiny_scene_set(4, 500);

  TrainOptions opts;
  opts.out_dir = testutil::scratch_dir("train_smoke");
  opts.quiet = true;
  TrainResult r = train(model, scenes, opts);

  REQUIRE(r.curve.size() == 3);  // pre-training row plus two epochs
  CHECK(r.curve[0].epoch == 0);
  CHECK(r.curve[2].epoch == 2);
  for (const auto& row : r.curve) {
    CHECK(std::isfinite(row.train_nll));
    CHECK(std::isfinite(row.val_nll));
  }
  CHECK(std::filesystem::exists(r.best_path));
  CHECK(std::filesystem::exists(r.last_path));
  CHECK(std::filesystem::exists(std::filesystem::path(opts.out_dir) / "loss.csv"));
  double min_val = r.curve[1].val_nll;
  for (std::size_t i = 2; i < r.curve.size(); ++i) min_val = std::min(min_val, r.curve[i].val_nll);
  CHECK(r.best_val == min_val);
  CHECK(r.best_epoch >= 1);

  MetricsReport m = evaluate(model, scenes, {3}, 5, 123);
  CHECK(m.window_count > 0);
  CHECK(std::isfinite(m.ade));
  CHECK(m.per_window.size() == static_cast<std::size_t>(m.window_count));
}

TEST_CASE("an exploding learning rate is reported, not silently propagated") {
  ExperimentConfig cfg = traj_only_cfg();
  cfg.learning_rate = 1e6;
  cfg.epochs = 4;
  MsifModel model(cfg);
  auto scenes = tiny_scene_set(3, 501);

  TrainOptions opts;
  opts.out_dir = testutil::scratch_dir("train_diverge");
  opts.quiet = true;
  CHECK_THROWS_AS(train(model, scenes, opts), DivergenceError);
}

TEST_CASE("two identical runs produce identical loss curves") {
  auto scenes = tiny_scene_set(4, 502);
  ExperimentConfig cfg = traj_only_cfg();

  auto run = [&](const std::string& tag) {
    MsifModel model(cfg);
    TrainOptions opts;
    opts.out_dir = testutil::scratch_dir(tag);
    opts.quiet = true;
    return train(model, scenes, opts);
  };
  TrainResult a = run("repro_a");
  TrainResult b = run("repro_b");
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].train_nll == b.curve[i].train_nll);  // bitwise
    CHECK(a.curve[i].val_nll == b.curve[i].val_nll);
  }
}

TEST_SUITE_END();
