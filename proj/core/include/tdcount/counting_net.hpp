#pragma once

// Thermal encoder, cross-attention feature enhancer and density head.
//
// The head predicts one count per feature cell (stride 4). A cell grid sums
// to the predicted person count; spread_cells() lifts it to pixel resolution
// for region metrics.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tdcount/autograd.hpp"
#include "tdcount/extractor.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/nn.hpp"
#include "tdcount/tensor.hpp"

namespace tdc::net {

inline constexpr int kFeatureStride = 4;

// What the enhancer attends to.
enum class DepthSource {
  kNone,       // thermal only, enhancer bypassed
  kRaw,        // depth_est through a separate copy of the thermal encoder
  kExtractor,  // depth-conditioned denoiser features
};

std::string to_string(DepthSource s);
DepthSource parse_depth_source(const std::string& name);

struct NetConfig {
  int enc_width1 = 8;
  int enc_width2 = 16;
  int thermal_channels = 16;
  int attn_width = 16;
  int attn_heads = 2;
  int head_width1 = 16;
  int head_width2 = 8;
  int head_width3 = 8;
  double head_bias = 0.01;
  DepthSource depth = DepthSource::kExtractor;

  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Four 3x3 conv blocks with ReLU; two of them stride 2.
class ThermalEncoder {
 public:
  ThermalEncoder() = default;
  ThermalEncoder(const NetConfig& cfg, Rng& rng);

  // x: (1, H, W), H and W divisible by 4. Returns (C_T, H/4, W/4).
  ag::Var operator()(const ag::Var& x) const;
  Tensor encode(const Tensor& thermal) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
  int out_channels() const { return out_channels_; }

 private:
  nn::Conv2d c1_, c2_, c3_, c4_;
  int out_channels_ = 0;
};

// Residual multi-head cross-attention over flattened cells, no positional
// encoding: out = q + Proj(MHA(q Wq, kv Wk, kv Wv)). The output projection
// starts at zero so the block starts as the identity.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(int query_dim, int kv_dim, int width, int heads, Rng& rng);

  struct Output {
    ag::Var tokens;                  // (N_q, query_dim)
    std::vector<ag::Var> attention;  // per head, (N_q, N_kv)
  };
  Output operator()(const ag::Var& query_tokens, const ag::Var& kv_tokens) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
  int kv_dim() const { return kv_dim_; }

  nn::Linear q_proj, k_proj, v_proj, out_proj;

 private:
  int kv_dim_ = 0;
  int width_ = 0;
  int heads_ = 1;
};

// Block 1: thermal queries over depth keys/values. Block 2: block-1 output
// queries over thermal keys/values.
class FeatureEnhancer {
 public:
  FeatureEnhancer() = default;
  FeatureEnhancer(int thermal_channels, int depth_channels, const NetConfig& cfg, Rng& rng);

  struct Output {
    ag::Var features;  // (C_T, h, w)
    ag::Var block1;    // (C_T, h, w)
    std::vector<ag::Var> attention1, attention2;
  };
  // f_td is resampled bilinearly to f_t's grid when the grids differ.
  Output operator()(const ag::Var& f_t, const ag::Var& f_td) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;

  AttentionBlock block1, block2;
};

// Four 3x3 convs, each followed by ReLU; the last has one output channel.
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(int in_channels, const NetConfig& cfg, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;

 private:
  nn::Conv2d c1_, c2_, c3_, c4_;
};

// Where to draw re-injection noise for a multi-step extraction and which
// initial latent to start from.
struct ExtractionContext {
  int n_steps = 1;
  std::uint64_t rng_seed = 0;
  const Tensor* latent = nullptr;  // defaults to the bundle's fixed latent
};

class CountingModel {
 public:
  // `extractor` is required when cfg.depth == kExtractor.
  CountingModel(const NetConfig& cfg, std::uint64_t init_seed,
                std::shared_ptr<extractor::ExtractorBundle> extractor = nullptr,
                bool joint_extractor = false);

  struct Forward {
    ag::Var f_t;    // thermal features (C_T, h, w)
    ag::Var f_td;   // depth features, null when thermal-only
    ag::Var f_e;    // enhanced features (or f_t when thermal-only)
    ag::Var cells;  // (1, h, w) nonnegative counts per cell
  };

  // Depth features for one scene; null for thermal-only. In frozen extractor
  // mode the result is a constant.
  ag::Var depth_features(const Tensor& depth_est, const ExtractionContext& ctx) const;
  Forward forward(const Tensor& thermal, const ag::Var& f_td) const;
  Forward forward(const Tensor& thermal, const Tensor& depth_est, const ExtractionContext& ctx) const;

  // Cell-resolution density; mass() is the predicted count.
  metrics::DensityMap predict_density(const Tensor& thermal, const Tensor& depth_est,
                                      const ExtractionContext& ctx = {}) const;

  const NetConfig& config() const { return cfg_; }
  bool joint_extractor() const { return joint_; }
  const std::shared_ptr<extractor::ExtractorBundle>& extractor() const { return extractor_; }
  // Trainable parameters: encoder, depth encoder, enhancer, head and, in
  // joint mode, the denoiser.
  const nn::ParamSet& params() const { return params_; }
  nn::ParamSet& params() { return params_; }
  // Counting-network parameters only.
  const nn::ParamSet& net_params() const { return net_params_; }

  ThermalEncoder encoder;
  ThermalEncoder depth_encoder;
  FeatureEnhancer enhancer;
  RegressionHead head;

 private:
  NetConfig cfg_;
  std::shared_ptr<extractor::ExtractorBundle> extractor_;
  bool joint_ = false;
  nn::ParamSet params_, net_params_;
};

}  // namespace tdc::net
