#include "msif/model.hpp"

#include <cmath>

#include "msif/errors.hpp"
#include "msif/rng.hpp"

namespace msif {

namespace {

constexpr std::uint64_t kInitTag = 0xA11C0DE;

Tensor uniform_param(Shape shape, double fan_in, Rng& rng) {
  return Tensor::param_uniform(std::move(shape), 1.0 / std::sqrt(fan_in), rng);
}

}  // namespace

Tensor& MsifModel::reg(const std::string& name, Tensor t) {
  auto [it, fresh] = params_.emplace(name, std::move(t));
  if (!fresh) throw ValueError("duplicate parameter name " + name);
  return it->second;
}

Tensor MsifModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValueError("unknown parameter " + name);
  return it->second;
}

MsifModel::MsifModel(const ExperimentConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(cfg_.seed, kInitTag));
  const std::int64_t kt = cfg_.temporal_kernel;

  auto make_stgcn_stack = [&](const std::string& prefix) {
    for (int l = 0; l < cfg_.stgcn_layers; ++l) {
      const std::string base = prefix + ".stgcn" + std::to_string(l) + ".";
      reg(base + "weight", uniform_param({2, 2}, 2.0, rng));
      reg(base + "tkernel", uniform_param({2, 2, kt}, 2.0 * static_cast<double>(kt), rng));
      reg(base + "alpha", Tensor::param({}, {0.25}));
    }
  };

  make_stgcn_stack("traj");

  if (cfg_.channel_optical) {
    reg("opt.proj", uniform_param({50, 2}, 50.0, rng));
    make_stgcn_stack("opt");
  }

  if (cfg_.channel_image) {
    reg("img.conv1.w", uniform_param({8, 1, 3, 3}, 9.0, rng));
    reg("img.conv1.b", Tensor::param({8, 1, 1}, std::vector<double>(8, 0.0)));
    reg("img.conv1.alpha", Tensor::param({}, {0.25}));
    reg("img.conv2.w", uniform_param({16, 8, 3, 3}, 72.0, rng));
    reg("img.conv2.b", Tensor::param({16, 1, 1}, std::vector<double>(16, 0.0)));
    reg("img.conv2.alpha", Tensor::param({}, {0.25}));
    reg("img.conv3.w", uniform_param({1, 16, 3, 3}, 144.0, rng));
    reg("img.conv3.b", Tensor::param({1, 1, 1}, {0.0}));
    const std::int64_t in = cfg_.map_cols;
    const std::int64_t hid = cfg_.lstm_hidden;
    for (const char* g : {"f", "i", "o", "c"}) {
      reg(std::string("img.lstm.wx") + g,
          uniform_param({in, hid}, static_cast<double>(in), rng));
      reg(std::string("img.lstm.wh") + g,
          uniform_param({hid, hid}, static_cast<double>(hid), rng));
      reg(std::string("img.lstm.b") + g,
          Tensor::param({hid}, std::vector<double>(static_cast<std::size_t>(hid), 0.0)));
    }
    reg("img.proj.w", uniform_param({hid, 2}, static_cast<double>(hid), rng));
    reg("img.proj.b", Tensor::param({2}, {0.0, 0.0}));
  }

  const int k = cfg_.enabled_channels();
  const auto method = fusion_method_from_string(cfg_.fusion);
  if (method == FusionMethod::kWeightedMean && k > 1) {
    reg("fuse.logits",
        Tensor::param({k}, std::vector<double>(static_cast<std::size_t>(k), 0.0)));
  } else if (method == FusionMethod::kConcat) {
    reg("fuse.mfc.w", uniform_param({2, 2 * k, 1}, 2.0 * k, rng));
    reg("fuse.mfc.b", Tensor::param({2}, {0.0, 0.0}));
  }

  reg("tpc.expand.w",
      uniform_param({cfg_.pred_len, cfg_.obs_len}, static_cast<double>(cfg_.obs_len), rng));
  reg("tpc.expand.alpha", Tensor::param({}, {0.25}));
  for (int i = 0; i + 1 < cfg_.txpcnn_layers; ++i) {
    const std::string base = "tpc.res" + std::to_string(i) + ".";
    reg(base + "w", uniform_param({2, 2, kt}, 2.0 * static_cast<double>(kt), rng));
    reg(base + "b", Tensor::param({2}, {0.0, 0.0}));
    reg(base + "alpha", Tensor::param({}, {0.25}));
  }
  for (int i = 0; i < cfg_.tpc_fusion_depth; ++i) {
    const std::string base = "tpc.head" + std::to_string(i) + ".";
    const std::int64_t cin = i == 0 ? 2 : 5;
    reg(base + "w", uniform_param({5, cin, kt}, static_cast<double>(cin * kt), rng));
    reg(base + "b", Tensor::param({5}, std::vector<double>(5, 0.0)));
    if (i + 1 < cfg_.tpc_fusion_depth) reg(base + "alpha", Tensor::param({}, {0.25}));
  }
}

std::vector<Tensor> MsifModel::channel_features(const Sample& sample) const {
  if (!sample.traj_attrs.defined() || sample.traj_attrs.rank() != 3)
    throw ShapeError("channel_features: sample lacks [T,N,2] trajectory attributes");
  if (sample.traj_attrs.dim(0) != cfg_.obs_len)
    throw ShapeError("channel_features: sample has " + std::to_string(sample.traj_attrs.dim(0)) +
                     " observed steps, config says " + std::to_string(cfg_.obs_len));

  auto run_stack = [&](const std::string& prefix, const Tensor& attrs) {
    Tensor h = attrs;
    for (int l = 0; l < cfg_.stgcn_layers; ++l) {
      const std::string base = prefix + ".stgcn" + std::to_string(l) + ".";
      StgcnLayer layer{param(base + "weight"), param(base + "tkernel"), param(base + "alpha")};
      SpatioTemporalGraph g = build_graph(h, sample.positions);
      h = stgcn_forward(g, layer);
    }
    return h;
  };

  std::vector<Tensor> feats;
  feats.push_back(run_stack("traj", sample.traj_attrs));

  if (cfg_.channel_optical) {
    if (!sample.flow_pooled.defined())
      throw ValueError("channel_features: optical channel enabled but sample has no pooled flow");
    const std::int64_t t_len = sample.flow_pooled.dim(0);
    const std::int64_t n = sample.flow_pooled.dim(1);
    Tensor flat = reshape(sample.flow_pooled, {t_len * n, 50});
    Tensor attrs = reshape(matmul(flat, param("opt.proj")), {t_len, n, 2});
    feats.push_back(run_stack("opt", attrs));
  }

  if (cfg_.channel_image) {
    ImageChannel ch;
    ch.input_w = cfg_.image_input_w;
    ch.input_h = cfg_.image_input_h;
    ch.map_rows = cfg_.map_rows;
    ch.map_cols = cfg_.map_cols;
    ch.conv1_w = param("img.conv1.w");
    ch.conv1_b = param("img.conv1.b");
    ch.conv1_alpha = param("img.conv1.alpha");
    ch.conv2_w = param("img.conv2.w");
    ch.conv2_b = param("img.conv2.b");
    ch.conv2_alpha = param("img.conv2.alpha");
    ch.conv3_w = param("img.conv3.w");
    ch.conv3_b = param("img.conv3.b");
    ch.lstm = LstmCell{param("img.lstm.wxf"), param("img.lstm.whf"), param("img.lstm.wxi"),
                       param("img.lstm.whi"), param("img.lstm.wxo"), param("img.lstm.who"),
                       param("img.lstm.wxc"), param("img.lstm.whc"), param("img.lstm.bf"),
                       param("img.lstm.bi"),  param("img.lstm.bo"),  param("img.lstm.bc")};
    ch.proj_w = param("img.proj.w");
    ch.proj_b = param("img.proj.b");
    Tensor per_frame = image_channel_forward(sample.frames, ch, cfg_.obs_len);  // [T,2]
    const std::int64_t n = sample.traj_attrs.dim(1);
    Tensor tiled = broadcast_to(reshape(per_frame, {cfg_.obs_len, 1, 2}),
                                {cfg_.obs_len, n, 2});
    feats.push_back(tiled);
  }
  return feats;
}

GaussianTrajectoryField MsifModel::forward(const Sample& sample) const {
  std::vector<Tensor> feats = channel_features(sample);

  const auto method = fusion_method_from_string(cfg_.fusion);
  Tensor fused;
  if (method == FusionMethod::kWeightedMean && feats.size() > 1) {
    Tensor logits = param("fuse.logits");
    fused = fuse(feats, method, &logits, nullptr);
  } else if (method == FusionMethod::kConcat) {
    MfcParams mfc{param("fuse.mfc.w"), param("fuse.mfc.b")};
    fused = fuse(feats, method, nullptr, &mfc);
  } else {
    fused = fuse(feats, FusionMethod::kMean);
  }

  TpcParams tpc;
  tpc.expand_w = param("tpc.expand.w");
  tpc.expand_alpha = param("tpc.expand.alpha");
  for (int i = 0; i + 1 < cfg_.txpcnn_layers; ++i) {
    const std::string base = "tpc.res" + std::to_string(i) + ".";
    tpc.residual.push_back({param(base + "w"), param(base + "b"), param(base + "alpha")});
  }
  for (int i = 0; i < cfg_.tpc_fusion_depth; ++i) {
    const std::string base = "tpc.head" + std::to_string(i) + ".";
    TpcParams::Head head;
    head.w = param(base + "w");
    head.b = param(base + "b");
    if (i + 1 < cfg_.tpc_fusion_depth) head.alpha = param(base + "alpha");
    tpc.head.push_back(std::move(head));
  }
  return gaussian_head(tpc_forward(fused, tpc));
}

void MsifModel::zero_grads() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void MsifModel::load_values(const std::map<std::string, std::vector<double>>& values) {
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end())
      throw IncompatibleCheckpointError("checkpoint lacks parameter " + name);
    if (it->second.size() != p.values().size())
      throw IncompatibleCheckpointError("checkpoint parameter " + name + " has " +
                                        std::to_string(it->second.size()) + " values, model has " +
                                        std::to_string(p.values().size()));
    p.mutable_values() = it->second;
  }
  for (const auto& [name, data] : values)
    if (!params_.count(name) && name.rfind("adam.", 0) != 0)
      throw IncompatibleCheckpointError("checkpoint carries unknown parameter " + name);
}

std::int64_t MsifModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.numel();
  return n;
}

}  // namespace msif
