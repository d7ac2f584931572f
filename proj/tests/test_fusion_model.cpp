#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "msif/errors.hpp"
#include "msif/fusion.hpp"
#include "msif/model.hpp"

using namespace msif;
using testutil::max_grad_rel_err;
using testutil::toy_sample;

namespace {

ExperimentConfig small_cfg(const std::string& fusion, bool opt, bool img) {
  ExperimentConfig cfg;
  cfg.channel_optical = opt;
  cfg.channel_image = img;
  cfg.fusion = fusion;
  cfg.image_input_w = 16;
  cfg.image_input_h = 12;
  cfg.map_rows = 4;
  cfg.map_cols = 3;
  cfg.lstm_hidden = 4;
  cfg.txpcnn_layers = 2;
  cfg.tpc_fusion_depth = 2;
  cfg.seed = 7;
  return cfg;
}

// swap the two node slices of a [T,2,C] tensor
Tensor swap_nodes(const Tensor& t) {
  const Shape& s = t.shape();
  std::vector<double> v = t.values();
  const std::int64_t t_len = s[0], c = s[2];
  for (std::int64_t tt = 0; tt < t_len; ++tt)
    for (std::int64_t ch = 0; ch < c; ++ch)
      std::swap(v[(tt * 2 + 0) * c + ch], v[(tt * 2 + 1) * c + ch]);
  return Tensor::from(s, std::move(v));
}

TpcParams tiny_tpc(Rng& rng) {
  TpcParams tpc;
  tpc.expand_w = Tensor::param_uniform({6, 4}, 0.5, rng);
  tpc.expand_alpha = Tensor::param({}, {0.25});
  TpcParams::Res res;
  res.w = Tensor::param_uniform({2, 2, 3}, 0.4, rng);
  res.b = Tensor::param({2}, {0.0, 0.0});
  res.alpha = Tensor::param({}, {0.25});
  tpc.residual.push_back(res);
  TpcParams::Head h0;
  h0.w = Tensor::param_uniform({5, 2, 3}, 0.4, rng);
  h0.b = Tensor::param({5}, std::vector<double>(5, 0.0));
  h0.alpha = Tensor::param({}, {0.25});
  tpc.head.push_back(h0);
  TpcParams::Head h1;
  h1.w = Tensor::param_uniform({5, 5, 3}, 0.25, rng);
  h1.b = Tensor::param({5}, std::vector<double>(5, 0.0));
  tpc.head.push_back(h1);
  return tpc;
}

}  // namespace

TEST_SUITE_BEGIN("fusion_model");

TEST_CASE("incremental mean is exact on coinciding and cancelling inputs") {
  Rng rng(61);
  Tensor f = Tensor::param_uniform({3, 2, 2}, 1.0, rng);
  Tensor m = fuse({f, f, f}, FusionMethod::kMean);
  CHECK(m.values() == f.values());  // bitwise

  std::vector<double> neg = f.values();
  for (auto& v : neg) v = -v;
  Tensor nf = Tensor::from({3, 2, 2}, std::move(neg));
  Tensor z = fuse({f, nf}, FusionMethod::kMean);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("weighted mean with zero logits matches the plain mean") {
  Rng rng(62);
  std::vector<Tensor> feats;
  for (int i = 0; i < 3; ++i) feats.push_back(Tensor::param_uniform({4, 2, 2}, 1.0, rng));
  Tensor logits = Tensor::param({3}, {0.0, 0.0, 0.0});
  Tensor w = fuse(feats, FusionMethod::kWeightedMean, &logits);
  Tensor m = fuse(feats, FusionMethod::kMean);
  for (std::size_t i = 0; i < w.values().size(); ++i)
    CHECK(std::abs(w.values()[i] - m.values()[i]) < 1e-12);
}

TEST_CASE("fuse validates its inputs") {
  Rng rng(63);
  Tensor a = Tensor::param_uniform({3, 2, 2}, 1.0, rng);
  Tensor b = Tensor::param_uniform({3, 2, 2}, 1.0, rng);
  CHECK_THROWS_AS(fuse({}, FusionMethod::kMean), ValueError);
  Tensor odd = Tensor::param_uniform({3, 2, 3}, 1.0, rng);
  CHECK_THROWS_AS(fuse({a, odd}, FusionMethod::kMean), ShapeError);
  CHECK_THROWS_AS(fuse({a, b}, FusionMethod::kWeightedMean), ValueError);
  Tensor wrong = Tensor::param({3}, {0.0, 0.0, 0.0});
  CHECK_THROWS_AS(fuse({a, b}, FusionMethod::kWeightedMean, &wrong), ShapeError);
  CHECK_THROWS_AS(fuse({a, b}, FusionMethod::kConcat), ValueError);
  MfcParams mfc;
  mfc.weight = Tensor::param_uniform({2, 6, 1}, 0.4, rng);  // expects 3 features
  mfc.bias = Tensor::param({2}, {0.0, 0.0});
  CHECK_THROWS_AS(fuse({a, b}, FusionMethod::kConcat, nullptr, &mfc), ShapeError);
}

TEST_CASE("concat fusion reduces back to two channels") {
  Rng rng(64);
  std::vector<Tensor> feats;
  for (int i = 0; i < 3; ++i) feats.push_back(Tensor::param_uniform({8, 2, 2}, 1.0, rng));
  MfcParams mfc;
  mfc.weight = Tensor::param_uniform({2, 6, 1}, 0.4, rng);
  mfc.bias = Tensor::param({2}, {0.1, -0.1});
  Tensor out = fuse(feats, FusionMethod::kConcat, nullptr, &mfc);
  CHECK(out.shape() == Shape{8, 2, 2});
  CHECK(out.all_finite());
}

TEST_CASE("fusion method names round trip") {
  for (auto m : {FusionMethod::kMean, FusionMethod::kWeightedMean, FusionMethod::kConcat})
    CHECK(fusion_method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(fusion_method_from_string("median"), ConfigError);
}

TEST_CASE("tpc head maps the observed span onto the prediction span") {
  Rng rng(65);
  TpcParams tpc = tiny_tpc(rng);
  Tensor fused = Tensor::param_uniform({4, 2, 2}, 0.8, rng);
  Tensor out = tpc_forward(fused, tpc);
  CHECK(out.shape() == Shape{6, 2, 5});

  Tensor short_in = Tensor::param_uniform({3, 2, 2}, 0.8, rng);
  CHECK_THROWS_AS(tpc_forward(short_in, tpc), ValueError);
  Tensor flat = Tensor::param_uniform({4, 2}, 0.8, rng);
  CHECK_THROWS_AS(tpc_forward(flat, tpc), ShapeError);
}

TEST_CASE("tpc gradients match finite differences") {
  Rng rng(66);
  TpcParams tpc = tiny_tpc(rng);
  Tensor fused = Tensor::param_uniform({4, 2, 2}, 0.8, rng);
  std::map<std::string, Tensor> params{
      {"fused", fused},       {"ew", tpc.expand_w},      {"ea", tpc.expand_alpha},
      {"rw", tpc.residual[0].w}, {"rb", tpc.residual[0].b}, {"ra", tpc.residual[0].alpha},
      {"h0w", tpc.head[0].w}, {"h0b", tpc.head[0].b},    {"h0a", tpc.head[0].alpha},
      {"h1w", tpc.head[1].w}, {"h1b", tpc.head[1].b}};
  auto loss = [&] {
    Tensor o = tpc_forward(fused, tpc);
    return mean(mul(o, o));
  };
  CHECK(max_grad_rel_err(params, loss) < 1e-5);
}

TEST_CASE("gaussian head keeps sigma positive and rho inside the open interval") {
  Rng rng(67);
  Tensor raw = Tensor::param_uniform({12, 2, 5}, 3.0, rng);
  GaussianTrajectoryField g = gaussian_head(raw);
  CHECK(g.mu.shape() == Shape{12, 2, 2});
  CHECK(g.sigma.shape() == Shape{12, 2, 2});
  CHECK(g.rho.shape() == Shape{12, 2});
  for (double v : g.sigma.values()) CHECK(v > 0.0);
  for (double v : g.rho.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  // mu passes straight through
  const auto& rv = raw.values();
  const auto& mv = g.mu.values();
  for (std::int64_t i = 0; i < 24; ++i) {
    CHECK(mv[i * 2 + 0] == rv[i * 5 + 0]);
    CHECK(mv[i * 2 + 1] == rv[i * 5 + 1]);
  }

  // an extreme correlation logit saturates toward but never onto +-1
  std::vector<double> vals(2 * 1 * 5, 0.0);
  vals[4] = 15.0;
  vals[9] = -15.0;
  GaussianTrajectoryField ext = gaussian_head(Tensor::from({2, 1, 5}, std::move(vals)));
  CHECK(ext.rho.values()[0] > 0.999999);
  CHECK(ext.rho.values()[0] < 1.0);
  CHECK(ext.rho.values()[1] < -0.999999);
  CHECK(ext.rho.values()[1] > -1.0);

  CHECK_THROWS_AS(gaussian_head(Tensor::param_uniform({2, 2, 4}, 1.0, rng)), ShapeError);
}

TEST_CASE("channel feature lists follow the enabled channels") {
  auto check_variant = [](bool opt, bool img, std::size_t expect) {
    ExperimentConfig cfg = small_cfg("mean", opt, img);
    MsifModel model(cfg);
    Sample s = toy_sample(cfg, 3, 101);
    auto feats = model.channel_features(s);
    REQUIRE(feats.size() == expect);
    for (const auto& f : feats) CHECK(f.shape() == Shape{8, 3, 2});
  };
  check_variant(true, false, 2);   // trajectory + optical flow
  check_variant(false, true, 2);   // trajectory + image
  check_variant(true, true, 3);    // everything
}

TEST_CASE("the frame-level image feature is tiled across nodes") {
  ExperimentConfig cfg = small_cfg("mean", false, true);
  MsifModel model(cfg);
  Sample s = toy_sample(cfg, 3, 102);
  auto feats = model.channel_features(s);
  const auto& v = feats.back().values();  // [8,3,2]
  for (int t = 0; t < 8; ++t)
    for (int c = 0; c < 2; ++c) {
      CHECK(v[(t * 3 + 0) * 2 + c] == v[(t * 3 + 1) * 2 + c]);
      CHECK(v[(t * 3 + 1) * 2 + c] == v[(t * 3 + 2) * 2 + c]);
    }
}

TEST_CASE("parameter registry matches the enabled pieces") {
  ExperimentConfig cfg1 = small_cfg("mean", true, false);
  MsifModel m1(cfg1);
  for (const auto& [name, p] : m1.params()) {
    CHECK(name.rfind("img.", 0) != 0);
    CHECK(name.rfind("fuse.", 0) != 0);  // plain mean has nothing to learn
  }

  ExperimentConfig cfg2 = small_cfg("weighted_mean", true, true);
  MsifModel m2(cfg2);
  CHECK(m2.params().count("fuse.logits") == 1);
  CHECK(m2.params().at("fuse.logits").numel() == 3);

  ExperimentConfig cfg3 = small_cfg("concat", true, true);
  MsifModel m3(cfg3);
  CHECK(m3.params().count("fuse.mfc.w") == 1);
  CHECK(m3.params().at("fuse.mfc.w").shape() == Shape{2, 6, 1});

  std::int64_t total = 0;
  for (const auto& [name, p] : m3.params()) total += p.numel();
  CHECK(m3.parameter_count() == total);
  CHECK(total > 0);
}

TEST_CASE("forward produces a full gaussian field for every variant") {
  for (const char* fusion : {"mean", "weighted_mean", "concat"}) {
    ExperimentConfig cfg = small_cfg(fusion, true, true);
    MsifModel model(cfg);
    Sample s = toy_sample(cfg, 2, 103);
    GaussianTrajectoryField g = model.forward(s);
    CHECK(g.mu.shape() == Shape{12, 2, 2});
    CHECK(g.sigma.shape() == Shape{12, 2, 2});
    CHECK(g.rho.shape() == Shape{12, 2});
    CHECK(g.mu.all_finite());
    for (double v : g.sigma.values()) CHECK(v > 0.0);
  }
}

TEST_CASE("swapping the two agents swaps the prediction") {
  ExperimentConfig cfg = small_cfg("concat", true, true);
  MsifModel model(cfg);
  Sample s = toy_sample(cfg, 2, 104);

  Sample swapped = s;
  swapped.traj_attrs = swap_nodes(s.traj_attrs);
  swapped.positions = swap_nodes(s.positions);
  swapped.flow_pooled = swap_nodes(s.flow_pooled);
  std::swap(swapped.node_ids[0], swapped.node_ids[1]);

  Tensor mu_a = model.forward(s).mu;
  Tensor mu_b = swap_nodes(model.forward(swapped).mu);
  for (std::size_t i = 0; i < mu_a.values().size(); ++i)
    CHECK(std::abs(mu_a.values()[i] - mu_b.values()[i]) < 1e-9);
}

TEST_CASE("load_values insists on a complete compatible dump") {
  ExperimentConfig cfg = small_cfg("mean", true, false);
  MsifModel model(cfg);
  std::map<std::string, std::vector<double>> dump;
  for (const auto& [name, p] : model.params()) dump[name] = p.values();

  dump["adam.m.traj.stgcn0.weight"] = {0.0, 0.0, 0.0, 0.0};  // optimizer state rides along
  CHECK_NOTHROW(model.load_values(dump));

  auto missing = dump;
  missing.erase("traj.stgcn0.weight");
  CHECK_THROWS_AS(model.load_values(missing), IncompatibleCheckpointError);

  auto extra = dump;
  extra["mystery.w"] = {1.0};
  CHECK_THROWS_AS(model.load_values(extra), IncompatibleCheckpointError);

  auto resized = dump;
  resized["traj.stgcn0.weight"].push_back(0.0);
  CHECK_THROWS_AS(model.load_values(resized), IncompatibleCheckpointError);
}

TEST_SUITE_END();
