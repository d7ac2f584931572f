#include "msif/fusion.hpp"

#include "msif/errors.hpp"

namespace msif {

FusionMethod fusion_method_from_string(const std::string& name) {
  if (name == "mean") return FusionMethod::kMean;
  if (name == "weighted_mean") return FusionMethod::kWeightedMean;
  if (name == "concat") return FusionMethod::kConcat;
  throw ConfigError("unknown fusion method '" + name +
                    "'; expected mean, weighted_mean, or concat");
}

std::string to_string(FusionMethod method) {
  switch (method) {
    case FusionMethod::kMean: return "mean";
    case FusionMethod::kWeightedMean: return "weighted_mean";
    case FusionMethod::kConcat: return "concat";
  }
  return "?";
}

Tensor fuse(const std::vector<Tensor>& features, FusionMethod method,
            const Tensor* weight_logits, const MfcParams* mfc) {
  if (features.empty()) throw ValueError("fuse: no features");
  const Shape& s0 = features[0].shape();
  for (const auto& f : features)
    if (f.shape() != s0)
      throw ShapeError("fuse: feature shapes differ, " + shape_to_string(s0) + " vs " +
                       shape_to_string(f.shape()));

  switch (method) {
    case FusionMethod::kMean: {
      // incremental mean: m += (f - m)/i, exact when all inputs coincide
      Tensor m = features[0];
      for (std::size_t i = 1; i < features.size(); ++i)
        m = add(m, div(sub(features[i], m), static_cast<double>(i + 1)));
      return m;
    }
    case FusionMethod::kWeightedMean: {
      if (!weight_logits || !weight_logits->defined())
        throw ValueError("fuse: weighted_mean needs the weight logits");
      if (weight_logits->numel() != static_cast<std::int64_t>(features.size()))
        throw ShapeError("fuse: " + std::to_string(features.size()) + " features but logits " +
                         shape_to_string(weight_logits->shape()));
      Tensor e = exp(*weight_logits);
      Tensor w = div(e, sum(e));  // non-negative, sums to 1
      Tensor acc = mul(features[0], select0(w, 0));
      for (std::size_t i = 1; i < features.size(); ++i)
        acc = add(acc, mul(features[i], select0(w, static_cast<std::int64_t>(i))));
      return acc;
    }
    case FusionMethod::kConcat: {
      if (!mfc || !mfc->weight.defined())
        throw ValueError("fuse: concat fusion needs the channel-reducing MFC convolution");
      Tensor cat = concat_last(features);
      const Shape& sw = mfc->weight.shape();
      if (sw.size() != 3 || sw[1] != cat.shape().back() || sw[2] != 1)
        throw ShapeError("fuse: MFC weight " + shape_to_string(sw) +
                         " does not match concatenated width " +
                         std::to_string(cat.shape().back()));
      return add(temporal_conv(cat, mfc->weight, 0), mfc->bias);
    }
  }
  throw ValueError("fuse: unreachable");
}

Tensor tpc_forward(const Tensor& fused, const TpcParams& tpc) {
  const Shape& s = fused.shape();
  const Shape& se = tpc.expand_w.shape();
  if (s.size() != 3)
    throw ShapeError("tpc_forward: expected fused [T,N,C], got " + shape_to_string(s));
  if (se.size() != 2)
    throw ShapeError("tpc_forward: expansion weight must be [T_pred,T_obs], got " +
                     shape_to_string(se));
  if (s[0] != se[1])
    throw ValueError("tpc_forward: time extent " + std::to_string(s[0]) + ", this head expects " +
                     std::to_string(se[1]));
  Tensor x = prelu(time_linear(fused, tpc.expand_w), tpc.expand_alpha);  // [T_pred,N,C]
  for (const auto& res : tpc.residual) {
    const int pad = static_cast<int>((res.w.shape()[2] - 1) / 2);
    x = add(x, prelu(add(temporal_conv(x, res.w, pad), res.b), res.alpha));
  }
  for (std::size_t i = 0; i < tpc.head.size(); ++i) {
    const auto& layer = tpc.head[i];
    const int pad = static_cast<int>((layer.w.shape()[2] - 1) / 2);
    x = add(temporal_conv(x, layer.w, pad), layer.b);
    if (i + 1 < tpc.head.size()) x = prelu(x, layer.alpha);
  }
  return x;
}

GaussianTrajectoryField gaussian_head(const Tensor& raw) {
  const Shape& s = raw.shape();
  if (s.size() != 3 || s[2] != 5)
    throw ShapeError("gaussian_head: expected [T,N,5], got " + shape_to_string(s));
  GaussianTrajectoryField out;
  out.mu = slice_last(raw, 0, 2);
  out.sigma = exp(slice_last(raw, 2, 2));
  out.rho = reshape(tanh(slice_last(raw, 4, 1)), {s[0], s[1]});
  return out;
}

}  // namespace msif
