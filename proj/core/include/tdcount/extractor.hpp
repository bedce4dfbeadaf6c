#pragma once

// Depth-conditioned toy consistency model used as a feature extractor.
//
// The denoiser is trained with x0-prediction so a single forward pass from
// any noise level returns a clean estimate. Features are tapped from the last
// layer before the latent-space output. The initial latent z_T is sampled
// once and stored with the model; with it fixed, single-step features are a
// deterministic function of the depth condition.
//
// Determinism guarantee: all kernels run single-threaded in a fixed order, so
// repeated extraction with the same parameters, latent and seed is bit-equal
// (tolerance 0) on a given build. See README for the numeric profile.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tdcount/autograd.hpp"
#include "tdcount/nn.hpp"
#include "tdcount/rng.hpp"
#include "tdcount/scenes.hpp"
#include "tdcount/tensor.hpp"

namespace tdc::extractor {

enum class ScheduleKind { kCosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

// Variance-preserving schedule tabulated on tau = 0..T:
// alpha(0) = 1, sigma(0) = 0, alpha^2 + sigma^2 = 1, alpha decreasing.
class NoiseSchedule {
 public:
  static NoiseSchedule build(int steps, ScheduleKind kind = ScheduleKind::kCosine);

  int steps() const { return steps_; }
  ScheduleKind kind() const { return kind_; }
  double alpha(int tau) const;
  double sigma(int tau) const;

  friend bool operator==(const NoiseSchedule& a, const NoiseSchedule& b) {
    return a.steps_ == b.steps_ && a.kind_ == b.kind_;
  }

 private:
  int steps_ = 0;
  ScheduleKind kind_ = ScheduleKind::kCosine;
  std::vector<double> alpha_;
  std::vector<double> sigma_;
};

// The once-sampled initial latent z_T.
struct FixedLatent {
  Tensor z;
  std::uint64_t seed = 0;

  // Standard normal draws from Rng(seed); identical on every platform.
  static FixedLatent sample(std::vector<int> shape, std::uint64_t seed);
  const std::vector<int>& shape() const { return z.shape(); }
};

struct DenoiserConfig {
  int latent_channels = 4;
  int cond_width1 = 8;
  int cond_width2 = 16;
  int hidden = 32;
  int feature_channels = 16;
  int time_dim = 16;

  static constexpr int kDownsample = 4;
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// Small conditional encoder-decoder f(z_tau, tau, D) -> (z0_hat, features).
// The latent and the feature map live at 1/4 of the condition resolution.
class ConditionalDenoiser {
 public:
  ConditionalDenoiser(const DenoiserConfig& cfg, int schedule_steps, std::uint64_t init_seed);

  struct Output {
    ag::Var z0;
    ag::Var features;
  };
  // z: (C_lat, H/4, W/4); cond: (1, H, W) with H, W divisible by 8.
  Output forward(const ag::Var& z, int tau, const ag::Var& cond) const;

  const DenoiserConfig& config() const { return cfg_; }
  int schedule_steps() const { return schedule_steps_; }
  std::vector<int> latent_shape(int cond_h, int cond_w) const;
  const nn::ParamSet& params() const { return params_; }

 private:
  Tensor time_embedding(int tau) const;

  DenoiserConfig cfg_;
  int schedule_steps_;
  nn::Conv2d cond1_, cond2_, in_conv_, down_, mid_, feat_, out_;
  nn::Linear time_fc_;
  nn::ParamSet params_;
};

// One forward pass; returns (z0_hat, features) values.
struct StepResult {
  Tensor z0;
  Tensor features;
};
StepResult denoise_step(const ConditionalDenoiser& model, const Tensor& z, int tau,
                        const Tensor& cond);

// z = alpha(tau) * z0 + sigma(tau) * eps, eps drawn from `rng`.
Tensor reinject_noise(const Tensor& z0, int tau, const NoiseSchedule& schedule, Rng& rng);
// Same with caller-provided eps.
Tensor reinject_noise(const Tensor& z0, int tau, const NoiseSchedule& schedule, const Tensor& eps);

// Descending timesteps T = tau_0 > tau_1 > ... > tau_{n-1}, uniform in index space.
std::vector<int> timestep_subsequence(int schedule_steps, int n_steps);

struct FeatureProvenance {
  int n_steps = 0;
  std::uint64_t latent_seed = 0;
  std::uint64_t rng_seed = 0;
};

struct FeatureTensor {
  Tensor values;  // (C_feat, h, w)
  FeatureProvenance provenance;
};

FeatureTensor extract_features(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                               const FixedLatent& latent, const Tensor& cond, int n_steps,
                               std::uint64_t rng_seed);

// Differentiable variant used when the extractor is trained jointly.
ag::Var extract_features_graph(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                               const Tensor& initial_latent, const ag::Var& cond, int n_steps,
                               std::uint64_t rng_seed);

// mean(c^2 (sqrt(1 + (e/c)^2) - 1))
double pseudo_huber(const Tensor& e, double c);

// Person-silhouette rendering at latent resolution: the generation target the
// denoiser learns to produce from depth. Four channels in [-1, 1].
Tensor render_target(const scenes::Scene& scene, int latent_channels);

struct PretrainConfig {
  int steps = 2000;
  int batch_size = 4;
  double lr = 2e-3;
  double weight_decay = 1e-4;
  double cond_dropout = 0.5;
  double huber_c = 0.1;
  std::uint64_t seed = 11;

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct PretrainLog {
  std::vector<double> losses;  // one per optimizer step
  long conditions_seen = 0;
  long conditions_dropped = 0;
};

// One x0-prediction training example's loss graph.
ag::Var pretrain_loss(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                      const Tensor& target, const Tensor& cond, int tau, const Tensor& eps,
                      double huber_c);

PretrainLog pretrain_extractor(ConditionalDenoiser& model, const NoiseSchedule& schedule,
                               std::span<const scenes::Scene> dataset, const PretrainConfig& cfg,
                               const std::function<void(int, double)>& on_step = {});

// sum_n sqrt(tau_n) over a strictly decreasing subsequence within [0, T].
double schedule_error_surrogate(const NoiseSchedule& schedule, std::span<const int> taus);

// Everything needed to reproduce extraction: schedule, latent, parameters.
struct ExtractorBundle {
  NoiseSchedule schedule;
  FixedLatent latent;
  std::shared_ptr<ConditionalDenoiser> model;
  long steps_trained = 0;

  static ExtractorBundle create(int schedule_steps, const DenoiserConfig& cfg, int cond_h,
                                int cond_w, std::uint64_t latent_seed, std::uint64_t init_seed);

  void write(binio::Writer& w) const;
  static ExtractorBundle read(binio::Reader& r);
  void save(const std::filesystem::path& path) const;
  static ExtractorBundle load(const std::filesystem::path& path);
};

inline constexpr std::uint32_t kExtractorVersion = 1;

}  // namespace tdc::extractor
