#include "tdcount/counting_net.hpp"

#include <cmath>

#include "tdcount/errors.hpp"

namespace tdc::net {
namespace {

Rng module_rng(std::uint64_t seed, const char* name) { return Rng(derive_seed(seed, fnv1a64(name))); }

}  // namespace

std::string to_string(DepthSource s) {
  switch (s) {
    case DepthSource::kNone:
      return "none";
    case DepthSource::kRaw:
      return "raw";
    case DepthSource::kExtractor:
      return "extractor";
  }
  return "unknown";
}

DepthSource parse_depth_source(const std::string& name) {
  if (name == "none") return DepthSource::kNone;
  if (name == "raw") return DepthSource::kRaw;
  if (name == "extractor") return DepthSource::kExtractor;
  throw InvalidConfiguration("unknown depth source '" + name + "' (expected none, raw or extractor)");
}

void NetConfig::validate() const {
  for (int w : {enc_width1, enc_width2, thermal_channels, attn_width, attn_heads, head_width1,
                head_width2, head_width3})
    if (w < 1) throw InvalidConfiguration("network widths must be positive");
  if (attn_width % attn_heads)
    throw InvalidConfiguration("attention width must be divisible by the number of heads");
  if (!std::isfinite(head_bias)) throw InvalidConfiguration("head bias must be finite");
}

// ---------------------------------------------------------------- encoder

ThermalEncoder::ThermalEncoder(const NetConfig& cfg, Rng& rng)
    : c1_(1, cfg.enc_width1, 3, 2, 1, rng),
      c2_(cfg.enc_width1, cfg.enc_width2, 3, 2, 1, rng),
      c3_(cfg.enc_width2, cfg.thermal_channels, 3, 1, 1, rng),
      c4_(cfg.thermal_channels, cfg.thermal_channels, 3, 1, 1, rng),
      out_channels_(cfg.thermal_channels) {}

ag::Var ThermalEncoder::operator()(const ag::Var& x) const {
  const Tensor& v = x->value;
  if (v.rank() != 3 || v.dim(0) != 1) throw InvalidInput("encoder input must be (1, H, W)");
  if (v.dim(1) % kFeatureStride || v.dim(2) % kFeatureStride)
    throw InvalidInput("encoder input " + v.shape_string() + " is not divisible by the stride " +
                       std::to_string(kFeatureStride));
  ag::Var h = ag::relu(c1_(x));
  h = ag::relu(c2_(h));
  h = ag::relu(c3_(h));
  return ag::relu(c4_(h));
}

Tensor ThermalEncoder::encode(const Tensor& thermal) const { return (*this)(ag::constant(thermal))->value; }

void ThermalEncoder::collect(nn::ParamSet& ps, const std::string& prefix) const {
  c1_.collect(ps, prefix + ".conv1");
  c2_.collect(ps, prefix + ".conv2");
  c3_.collect(ps, prefix + ".conv3");
  c4_.collect(ps, prefix + ".conv4");
}

// ---------------------------------------------------------------- attention

AttentionBlock::AttentionBlock(int query_dim, int kv_dim, int width, int heads, Rng& rng)
    : q_proj(query_dim, width, rng),
      k_proj(kv_dim, width, rng),
      v_proj(kv_dim, width, rng),
      out_proj(width, query_dim, rng, nn::Init::kZero),
      kv_dim_(kv_dim),
      width_(width),
      heads_(heads) {
  if (width % heads) throw InvalidConfiguration("attention width must be divisible by heads");
}

AttentionBlock::Output AttentionBlock::operator()(const ag::Var& query_tokens,
                                                  const ag::Var& kv_tokens) const {
  if (kv_tokens->value.rank() != 2 || kv_tokens->value.dim(1) != kv_dim_)
    throw InvalidConfiguration("attention expects key/value width " + std::to_string(kv_dim_) +
                               ", got " + kv_tokens->value.shape_string());
  const ag::Var q = q_proj(query_tokens);
  const ag::Var k = k_proj(kv_tokens);
  const ag::Var v = v_proj(kv_tokens);
  const int d = width_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Output out;
  std::vector<ag::Var> parts;
  for (int h = 0; h < heads_; ++h) {
    const ag::Var qh = ag::slice_cols(q, h * d, (h + 1) * d);
    const ag::Var kh = ag::slice_cols(k, h * d, (h + 1) * d);
    const ag::Var vh = ag::slice_cols(v, h * d, (h + 1) * d);
    ag::Var a = ag::softmax_rows(ag::scale(ag::matmul_bt(qh, kh), scale));
    parts.push_back(ag::matmul(a, vh));
    out.attention.push_back(std::move(a));
  }
  const ag::Var mixed = heads_ == 1 ? parts[0] : ag::concat_cols(parts);
  out.tokens = ag::add(query_tokens, out_proj(mixed));
  return out;
}

void AttentionBlock::collect(nn::ParamSet& ps, const std::string& prefix) const {
  q_proj.collect(ps, prefix + ".q");
  k_proj.collect(ps, prefix + ".k");
  v_proj.collect(ps, prefix + ".v");
  out_proj.collect(ps, prefix + ".out");
}

FeatureEnhancer::FeatureEnhancer(int thermal_channels, int depth_channels, const NetConfig& cfg,
                                 Rng& rng)
    : block1(thermal_channels, depth_channels, cfg.attn_width, cfg.attn_heads, rng),
      block2(thermal_channels, thermal_channels, cfg.attn_width, cfg.attn_heads, rng) {}

FeatureEnhancer::Output FeatureEnhancer::operator()(const ag::Var& f_t, const ag::Var& f_td) const {
  const int h = f_t->value.dim(1), w = f_t->value.dim(2);
  ag::Var td = f_td;
  if (td->value.dim(1) != h || td->value.dim(2) != w) td = ag::resize_bilinear(td, h, w);
  const ag::Var t_tokens = ag::to_tokens(f_t);
  auto b1 = block1(t_tokens, ag::to_tokens(td));
  auto b2 = block2(b1.tokens, t_tokens);
  Output out;
  out.block1 = ag::from_tokens(b1.tokens, h, w);
  out.features = ag::from_tokens(b2.tokens, h, w);
  out.attention1 = std::move(b1.attention);
  out.attention2 = std::move(b2.attention);
  return out;
}

void FeatureEnhancer::collect(nn::ParamSet& ps, const std::string& prefix) const {
  block1.collect(ps, prefix + ".block1");
  block2.collect(ps, prefix + ".block2");
}

// ---------------------------------------------------------------- head

RegressionHead::RegressionHead(int in_channels, const NetConfig& cfg, Rng& rng)
    : c1_(in_channels, cfg.head_width1, 3, 1, 1, rng),
      c2_(cfg.head_width1, cfg.head_width2, 3, 1, 1, rng),
      c3_(cfg.head_width2, cfg.head_width3, 3, 1, 1, rng),
      c4_(cfg.head_width3, 1, 3, 1, 1, rng, nn::Init::kHeNormal, cfg.head_bias) {}

ag::Var RegressionHead::operator()(const ag::Var& x) const {
  ag::Var h = ag::relu(c1_(x));
  h = ag::relu(c2_(h));
  h = ag::relu(c3_(h));
  return ag::relu(c4_(h));
}

void RegressionHead::collect(nn::ParamSet& ps, const std::string& prefix) const {
  c1_.collect(ps, prefix + ".conv1");
  c2_.collect(ps, prefix + ".conv2");
  c3_.collect(ps, prefix + ".conv3");
  c4_.collect(ps, prefix + ".conv4");
}

// ---------------------------------------------------------------- model

CountingModel::CountingModel(const NetConfig& cfg, std::uint64_t init_seed,
                             std::shared_ptr<extractor::ExtractorBundle> extractor,
                             bool joint_extractor)
    : cfg_(cfg), extractor_(std::move(extractor)), joint_(joint_extractor) {
  cfg.validate();
  if (cfg.depth == DepthSource::kExtractor && !(extractor_ && extractor_->model))
    throw InvalidConfiguration("extractor depth source requires an extractor bundle");

  Rng enc_rng = module_rng(init_seed, "encoder");
  encoder = ThermalEncoder(cfg, enc_rng);
  encoder.collect(net_params_, "encoder");

  int depth_channels = 0;
  if (cfg.depth == DepthSource::kRaw) {
    Rng rng = module_rng(init_seed, "depth_encoder");
    depth_encoder = ThermalEncoder(cfg, rng);
    depth_encoder.collect(net_params_, "depth_encoder");
    depth_channels = depth_encoder.out_channels();
  } else if (cfg.depth == DepthSource::kExtractor) {
    depth_channels = extractor_->model->config().feature_channels;
  }
  if (cfg.depth != DepthSource::kNone) {
    Rng rng = module_rng(init_seed, "enhancer");
    enhancer = FeatureEnhancer(cfg.thermal_channels, depth_channels, cfg, rng);
    enhancer.collect(net_params_, "enhancer");
  }
  Rng head_rng = module_rng(init_seed, "head");
  head = RegressionHead(cfg.thermal_channels, cfg, head_rng);
  head.collect(net_params_, "head");

  params_.append(net_params_);
  if (cfg.depth == DepthSource::kExtractor) {
    auto& ps = const_cast<nn::ParamSet&>(extractor_->model->params());
    ps.set_trainable(joint_);
    if (joint_) params_.append(ps, "extractor.");
  }
}

ag::Var CountingModel::depth_features(const Tensor& depth_est, const ExtractionContext& ctx) const {
  switch (cfg_.depth) {
    case DepthSource::kNone:
      return nullptr;
    case DepthSource::kRaw:
      return depth_encoder(ag::constant(depth_est));
    case DepthSource::kExtractor: {
      const auto& b = *extractor_;
      const Tensor& z = ctx.latent ? *ctx.latent : b.latent.z;
      if (joint_)
        return extractor::extract_features_graph(*b.model, b.schedule, z, ag::constant(depth_est),
                                                 ctx.n_steps, ctx.rng_seed);
      extractor::FixedLatent latent{z, b.latent.seed};
      return ag::constant(
          extractor::extract_features(*b.model, b.schedule, latent, depth_est, ctx.n_steps, ctx.rng_seed)
              .values);
    }
  }
  return nullptr;
}

CountingModel::Forward CountingModel::forward(const Tensor& thermal, const ag::Var& f_td) const {
  Forward out;
  out.f_t = encoder(ag::constant(thermal));
  out.f_td = f_td;
  if (cfg_.depth == DepthSource::kNone) {
    out.f_e = out.f_t;
  } else {
    if (!f_td) throw InvalidInput("depth features required for this model");
    out.f_e = enhancer(out.f_t, f_td).features;
  }
  out.cells = head(out.f_e);
  return out;
}

CountingModel::Forward CountingModel::forward(const Tensor& thermal, const Tensor& depth_est,
                                              const ExtractionContext& ctx) const {
  if (depth_est.shape() != thermal.shape())
    throw InvalidInput("thermal " + thermal.shape_string() + " and depth " + depth_est.shape_string() +
                       " differ in shape");
  return forward(thermal, depth_features(depth_est, ctx));
}

metrics::DensityMap CountingModel::predict_density(const Tensor& thermal, const Tensor& depth_est,
                                                   const ExtractionContext& ctx) const {
  const Tensor cells = forward(thermal, depth_est, ctx).cells->value;
  return metrics::DensityMap::from_values(cells.dim(1), cells.dim(2), cells.storage());
}

}  // namespace tdc::net
