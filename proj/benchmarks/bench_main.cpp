// Microbenchmarks for the hot paths: dense tensor kernels, the pyramidal
// flow solver, the graph channel, and a whole forward/backward/update step.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "msif/channels.hpp"
#include "msif/config.hpp"
#include "msif/flow.hpp"
#include "msif/graph.hpp"
#include "msif/image.hpp"
#include "msif/model.hpp"
#include "msif/rng.hpp"
#include "msif/tensor.hpp"
#include "msif/train.hpp"

using namespace msif;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

Image noise_image(int w, int h, Rng& rng) {
  Image img = Image::zeros(w, h);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

ExperimentConfig bench_cfg() {
  ExperimentConfig cfg = parse_experiment_config_text(
      "channels = trajectory,optical,image\nfusion = concat\n", "bench");
  cfg.validate();
  return cfg;
}

// Self-contained three-channel sample, shaped like one training window.
Sample bench_sample(const ExperimentConfig& cfg, std::int64_t n, Rng& rng) {
  const std::int64_t obs = cfg.obs_len;
  Sample s;
  s.img_w = 96;
  s.img_h = 72;
  for (std::int64_t j = 0; j < n; ++j) s.node_ids.push_back(j);
  s.positions = random_tensor({obs, n, 2}, rng);
  s.traj_attrs = random_tensor({obs, n, 2}, rng);
  s.truth_disp = random_tensor({cfg.pred_len, n, 2}, rng);
  if (cfg.channel_optical) s.flow_pooled = random_tensor({obs, n, 50}, rng);
  if (cfg.channel_image)
    for (std::int64_t t = 0; t < obs; ++t)
      s.frames.push_back(noise_image(cfg.image_input_w, cfg.image_input_h, rng));
  return s;
}

void BM_Matmul64(benchmark::State& state) {
  Rng rng(1);
  Tensor a = random_tensor({64, 64}, rng);
  Tensor b = random_tensor({64, 64}, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
}
BENCHMARK(BM_Matmul64);

void BM_Conv2dStride2(benchmark::State& state) {
  Rng rng(2);
  Tensor in = random_tensor({1, 48, 64}, rng);
  Tensor k = random_tensor({8, 1, 3, 3}, rng);
  for (auto _ : state) {
    Tensor out = conv2d(in, k, 2, 1);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_Conv2dStride2);

void BM_DenseFlow96x72(benchmark::State& state) {
  Rng rng(3);
  Image a = noise_image(96, 72, rng);
  Image b = noise_image(96, 72, rng);
  for (auto _ : state) {
    FlowField f = dense_flow(a, b, FlowParams{});
    benchmark::DoNotOptimize(f.u.data());
  }
}
BENCHMARK(BM_DenseFlow96x72);

void BM_GraphChannel(benchmark::State& state) {
  Rng rng(4);
  Tensor attrs = random_tensor({8, 6, 2}, rng);
  Tensor positions = random_tensor({8, 6, 2}, rng);
  StgcnLayer layer{random_tensor({2, 2}, rng), random_tensor({2, 2, 3}, rng),
                   Tensor::from({}, {0.25})};
  for (auto _ : state) {
    SpatioTemporalGraph g = build_graph(attrs, positions);
    Tensor out = stgcn_forward(g, layer);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_GraphChannel);

void BM_ModelForward(benchmark::State& state) {
  ExperimentConfig cfg = bench_cfg();
  MsifModel model(cfg);
  Rng rng(5);
  Sample s = bench_sample(cfg, 4, rng);
  for (auto _ : state) {
    GaussianTrajectoryField f = model.forward(s);
    benchmark::DoNotOptimize(f.mu.values().data());
  }
}
BENCHMARK(BM_ModelForward);

void BM_TrainStep(benchmark::State& state) {
  ExperimentConfig cfg = bench_cfg();
  MsifModel model(cfg);
  Rng rng(6);
  Sample s = bench_sample(cfg, 4, rng);
  AdamState adam;
  for (auto _ : state) {
    model.zero_grads();
    Tensor loss = nll_loss(model.forward(s), s.truth_disp);
    backward(loss);
    adam_step(model.params(), adam, 1e-4, cfg.beta1, cfg.beta2, cfg.adam_eps);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
