#include "tdcount/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tdcount/errors.hpp"
#include "tdcount/metrics.hpp"

namespace tdc::extractor {
namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'X'};
constexpr double kCosineOffset = 0.008;

void check_tau(int tau, int steps) {
  if (tau < 0 || tau > steps)
    throw InvalidInput("timestep " + std::to_string(tau) + " outside [0, " + std::to_string(steps) + "]");
}

}  // namespace

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kCosine:
      return "cosine";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "cosine") return ScheduleKind::kCosine;
  throw InvalidConfiguration("unknown schedule kind '" + name + "'");
}

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::build(int steps, ScheduleKind kind) {
  if (steps < 2) throw InvalidParameter("schedule needs T >= 2, got " + std::to_string(steps));
  NoiseSchedule s;
  s.steps_ = steps;
  s.kind_ = kind;
  s.alpha_.resize(static_cast<std::size_t>(steps) + 1);
  s.sigma_.resize(static_cast<std::size_t>(steps) + 1);
  const double half_pi = std::numbers::pi / 2.0;
  const double f0 = std::cos(half_pi * kCosineOffset / (1.0 + kCosineOffset));
  for (int t = 0; t <= steps; ++t) {
    double a = 1.0;
    if (t > 0) {
      const double u = (static_cast<double>(t) / steps + kCosineOffset) / (1.0 + kCosineOffset);
      a = std::max(0.0, std::cos(half_pi * u) / f0);
    }
    s.alpha_[static_cast<std::size_t>(t)] = a;
    s.sigma_[static_cast<std::size_t>(t)] = t == 0 ? 0.0 : std::sqrt(std::max(0.0, 1.0 - a * a));
  }
  return s;
}

double NoiseSchedule::alpha(int tau) const {
  check_tau(tau, steps_);
  return alpha_[static_cast<std::size_t>(tau)];
}

double NoiseSchedule::sigma(int tau) const {
  check_tau(tau, steps_);
  return sigma_[static_cast<std::size_t>(tau)];
}

// ---------------------------------------------------------------- latent

FixedLatent FixedLatent::sample(std::vector<int> shape, std::uint64_t seed) {
  for (int d : shape)
    if (d <= 0) throw InvalidParameter("latent dimensions must be positive");
  Rng rng(seed);
  return FixedLatent{rng.normal_tensor(std::move(shape)), seed};
}

// ---------------------------------------------------------------- denoiser

ConditionalDenoiser::ConditionalDenoiser(const DenoiserConfig& cfg, int schedule_steps,
                                         std::uint64_t init_seed)
    : cfg_(cfg), schedule_steps_(schedule_steps) {
  if (cfg.latent_channels < 1 || cfg.cond_width1 < 1 || cfg.cond_width2 < 1 || cfg.hidden < 1 ||
      cfg.feature_channels < 1 || cfg.time_dim < 2 || cfg.time_dim % 2)
    throw InvalidParameter("invalid denoiser configuration");
  if (schedule_steps < 2) throw InvalidParameter("denoiser needs a schedule with T >= 2");
  Rng rng(derive_seed(init_seed, fnv1a64("denoiser")));
  cond1_ = nn::Conv2d(1, cfg.cond_width1, 3, 2, 1, rng);
  cond2_ = nn::Conv2d(cfg.cond_width1, cfg.cond_width2, 3, 2, 1, rng);
  in_conv_ = nn::Conv2d(cfg.latent_channels + cfg.cond_width2, cfg.hidden, 3, 1, 1, rng);
  down_ = nn::Conv2d(cfg.hidden, cfg.hidden, 3, 2, 1, rng);
  mid_ = nn::Conv2d(cfg.hidden, cfg.hidden, 3, 1, 1, rng);
  feat_ = nn::Conv2d(2 * cfg.hidden, cfg.feature_channels, 3, 1, 1, rng);
  // Zero output head: an untrained model predicts z0 = 0.
  out_ = nn::Conv2d(cfg.feature_channels, cfg.latent_channels, 1, 1, 0, rng, nn::Init::kZero);
  time_fc_ = nn::Linear(cfg.time_dim, cfg.hidden, rng);

  cond1_.collect(params_, "cond1");
  cond2_.collect(params_, "cond2");
  in_conv_.collect(params_, "in");
  down_.collect(params_, "down");
  mid_.collect(params_, "mid");
  feat_.collect(params_, "feat");
  out_.collect(params_, "out");
  time_fc_.collect(params_, "time");
}

std::vector<int> ConditionalDenoiser::latent_shape(int cond_h, int cond_w) const {
  if (cond_h % 8 || cond_w % 8 || cond_h <= 0 || cond_w <= 0)
    throw InvalidInput("condition size must be a positive multiple of 8");
  return {cfg_.latent_channels, cond_h / DenoiserConfig::kDownsample,
          cond_w / DenoiserConfig::kDownsample};
}

Tensor ConditionalDenoiser::time_embedding(int tau) const {
  check_tau(tau, schedule_steps_);
  const double u = static_cast<double>(tau) / schedule_steps_;
  const int half = cfg_.time_dim / 2;
  Tensor e({1, cfg_.time_dim});
  for (int k = 0; k < half; ++k) {
    const double freq = std::numbers::pi * std::pow(2.0, k) / 2.0;
    e.at(0, k) = std::sin(freq * u);
    e.at(0, half + k) = std::cos(freq * u);
  }
  return e;
}

ConditionalDenoiser::Output ConditionalDenoiser::forward(const ag::Var& z, int tau,
                                                         const ag::Var& cond) const {
  if (cond->value.rank() != 3 || cond->value.dim(0) != 1)
    throw InvalidInput("condition must be (1, H, W), got " + cond->value.shape_string());
  const auto expect = latent_shape(cond->value.dim(1), cond->value.dim(2));
  if (z->value.shape() != expect)
    throw InvalidInput("latent shape " + z->value.shape_string() + " does not match model latent " +
                       Tensor(expect).shape_string());
  using namespace ag;
  Var c = relu(cond1_(cond));
  c = relu(cond2_(c));
  Var temb = relu(time_fc_(constant(time_embedding(tau))));
  Var h1 = relu(add_channel_bias(in_conv_(concat_channels(z, c)), temb));
  Var h2 = relu(down_(h1));
  h2 = relu(mid_(h2));
  Var feats = relu(feat_(concat_channels(upsample_nearest2(h2), h1)));
  return {out_(feats), feats};
}

StepResult denoise_step(const ConditionalDenoiser& model, const Tensor& z, int tau,
                        const Tensor& cond) {
  if (!z.all_finite()) throw InvalidInput("denoise_step: latent has non-finite entries");
  auto out = model.forward(ag::constant(z), tau, ag::constant(cond));
  return {out.z0->value, out.features->value};
}

Tensor reinject_noise(const Tensor& z0, int tau, const NoiseSchedule& schedule, const Tensor& eps) {
  if (eps.shape() != z0.shape()) throw InvalidInput("reinject_noise: eps shape mismatch");
  const double a = schedule.alpha(tau), s = schedule.sigma(tau);
  Tensor z(z0.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * z0[i] + s * eps[i];
  return z;
}

Tensor reinject_noise(const Tensor& z0, int tau, const NoiseSchedule& schedule, Rng& rng) {
  return reinject_noise(z0, tau, schedule, rng.normal_tensor(z0.shape()));
}

std::vector<int> timestep_subsequence(int schedule_steps, int n_steps) {
  if (n_steps < 1) throw InvalidParameter("n_steps must be >= 1");
  if (n_steps > schedule_steps) throw InvalidParameter("n_steps exceeds schedule length");
  std::vector<int> taus;
  for (int k = 0; k < n_steps; ++k)
    taus.push_back(static_cast<int>(std::lround(static_cast<double>(schedule_steps) * (n_steps - k) / n_steps)));
  return taus;
}

ag::Var extract_features_graph(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                               const Tensor& initial_latent, const ag::Var& cond, int n_steps,
                               std::uint64_t rng_seed) {
  const auto taus = timestep_subsequence(schedule.steps(), n_steps);
  auto out = model.forward(ag::constant(initial_latent), taus[0], cond);
  if (n_steps == 1) return out.features;
  Rng rng(rng_seed);
  for (int k = 1; k < n_steps; ++k) {
    const int tau = taus[static_cast<std::size_t>(k)];
    const Tensor eps = rng.normal_tensor(out.z0->value.shape());
    Tensor noise = eps;
    for (double& v : noise.values()) v *= schedule.sigma(tau);
    ag::Var z = ag::add(ag::scale(out.z0, schedule.alpha(tau)), ag::constant(std::move(noise)));
    out = model.forward(z, tau, cond);
  }
  return out.features;
}

FeatureTensor extract_features(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                               const FixedLatent& latent, const Tensor& cond, int n_steps,
                               std::uint64_t rng_seed) {
  if (n_steps < 1) throw InvalidParameter("n_steps must be >= 1");
  if (model.schedule_steps() != schedule.steps())
    throw InvalidConfiguration("model and schedule disagree on T");
  const auto taus = timestep_subsequence(schedule.steps(), n_steps);
  StepResult step = denoise_step(model, latent.z, taus[0], cond);
  Rng rng(rng_seed);
  for (int k = 1; k < n_steps; ++k) {
    const int tau = taus[static_cast<std::size_t>(k)];
    // Same arithmetic as the graph variant: alpha * z0 + (sigma * eps).
    const Tensor eps = rng.normal_tensor(step.z0.shape());
    Tensor z(step.z0.shape());
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] = schedule.alpha(tau) * step.z0[i] + schedule.sigma(tau) * eps[i];
    step = denoise_step(model, z, tau, cond);
  }
  return {std::move(step.features), {n_steps, latent.seed, rng_seed}};
}

// ---------------------------------------------------------------- training

double pseudo_huber(const Tensor& e, double c) {
  return ag::pseudo_huber(ag::constant(e), c)->value[0];
}

Tensor render_target(const scenes::Scene& scene, int latent_channels) {
  const int h = scene.height(), w = scene.width();
  const int s = DenoiserConfig::kDownsample;
  if (h % s || w % s) throw InvalidInput("scene size not divisible by the latent stride");
  const int lh = h / s, lw = w / s;

  // Silhouette occupancy: disks whose radius grows with nearness.
  Tensor occ({1, h, w});
  for (const auto& p : scene.points.points()) {
    const int pr = static_cast<int>(p.y), pc = static_cast<int>(p.x);
    const double radius = 1.5 + 2.0 * scene.depth_gt.at(0, pr, pc);
    const int r0 = std::max(0, static_cast<int>(p.y - radius - 1)), r1 = std::min(h - 1, static_cast<int>(p.y + radius + 1));
    const int c0 = std::max(0, static_cast<int>(p.x - radius - 1)), c1 = std::min(w - 1, static_cast<int>(p.x + radius + 1));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double dy = r + 0.5 - p.y, dx = c + 0.5 - p.x;
        if (dx * dx + dy * dy <= radius * radius) occ.at(0, r, c) = 1.0;
      }
  }
  const metrics::DensityMap dens = metrics::rasterize_density(scene.points, 2.0);
  const double area = static_cast<double>(s) * s;

  Tensor t({latent_channels, lh, lw});
  for (int r = 0; r < lh; ++r)
    for (int c = 0; c < lw; ++c) {
      double o = 0.0, d = 0.0, m = 0.0, od = 0.0;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          const int rr = r * s + dy, cc = c * s + dx;
          const double occ_v = occ.at(0, rr, cc);
          const double dep = scene.depth_gt.at(0, rr, cc);
          o += occ_v;
          d += dep;
          m += dens.at(rr, cc);
          od += occ_v * dep;
        }
      const double chans[4] = {2.0 * o / area - 1.0, 2.0 * std::min(1.0, 2.0 * m) - 1.0,
                               2.0 * d / area - 1.0, 2.0 * od / area - 1.0};
      for (int ch = 0; ch < latent_channels; ++ch) t.at(ch, r, c) = chans[ch % 4];
    }
  return t;
}

ag::Var pretrain_loss(const ConditionalDenoiser& model, const NoiseSchedule& schedule,
                      const Tensor& target, const Tensor& cond, int tau, const Tensor& eps,
                      double huber_c) {
  const Tensor z = reinject_noise(target, tau, schedule, eps);
  auto out = model.forward(ag::constant(z), tau, ag::constant(cond));
  return ag::pseudo_huber(ag::sub(out.z0, ag::constant(target)), huber_c);
}

PretrainLog pretrain_extractor(ConditionalDenoiser& model, const NoiseSchedule& schedule,
                               std::span<const scenes::Scene> dataset, const PretrainConfig& cfg,
                               const std::function<void(int, double)>& on_step) {
  if (dataset.empty()) throw InvalidInput("pretrain_extractor: empty dataset");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw InvalidParameter("invalid pretraining schedule");
  if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout <= 1.0))
    throw InvalidParameter("cond_dropout must be in [0, 1]");

  std::vector<Tensor> targets;
  targets.reserve(dataset.size());
  for (const auto& s : dataset) targets.push_back(render_target(s, model.config().latent_channels));

  nn::AdamW opt(model.params(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng(cfg.seed);
  PretrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1));
      const int tau = static_cast<int>(rng.uniform_int(1, schedule.steps()));
      const Tensor eps = rng.normal_tensor(targets[idx].shape());
      const bool drop = rng.bernoulli(cfg.cond_dropout);
      ++log.conditions_seen;
      if (drop) ++log.conditions_dropped;
      const Tensor& depth = dataset[idx].depth_est;
      const Tensor cond = drop ? Tensor(depth.shape()) : depth;
      ag::Var loss = pretrain_loss(model, schedule, targets[idx], cond, tau, eps, cfg.huber_c);
      if (!std::isfinite(loss->value[0]))
        throw NumericFailure("non-finite pretraining loss at step " + std::to_string(step));
      ag::backward(loss);
      batch_loss += loss->value[0];
    }
    opt.step(1.0 / cfg.batch_size);
    const double mean = batch_loss / cfg.batch_size;
    log.losses.push_back(mean);
    if (on_step) on_step(step, mean);
  }
  return log;
}

double schedule_error_surrogate(const NoiseSchedule& schedule, std::span<const int> taus) {
  double total = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (taus[i] < 0 || taus[i] > schedule.steps())
      throw InvalidInput("surrogate: timestep outside [0, T]");
    if (i > 0 && taus[i] >= taus[i - 1])
      throw InvalidInput("surrogate: timesteps must be strictly decreasing");
    total += std::sqrt(static_cast<double>(taus[i]));
  }
  return total;
}

// ---------------------------------------------------------------- bundle

ExtractorBundle ExtractorBundle::create(int schedule_steps, const DenoiserConfig& cfg, int cond_h,
                                        int cond_w, std::uint64_t latent_seed,
                                        std::uint64_t init_seed) {
  ExtractorBundle b;
  b.schedule = NoiseSchedule::build(schedule_steps);
  b.model = std::make_shared<ConditionalDenoiser>(cfg, schedule_steps, init_seed);
  b.latent = FixedLatent::sample(b.model->latent_shape(cond_h, cond_w), latent_seed);
  return b;
}

void ExtractorBundle::write(binio::Writer& w) const {
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kExtractorVersion);
  w.str(to_string(schedule.kind()));
  w.u32(static_cast<std::uint32_t>(schedule.steps()));
  w.u64(latent.seed);
  w.tensor(latent.z);
  const DenoiserConfig& c = model->config();
  for (int v : {c.latent_channels, c.cond_width1, c.cond_width2, c.hidden, c.feature_channels, c.time_dim})
    w.u32(static_cast<std::uint32_t>(v));
  model->params().write(w);
  w.i64(steps_trained);
}

ExtractorBundle ExtractorBundle::read(binio::Reader& r) {
  if (r.bytes(4) != std::string_view(kMagic, 4)) r.fail("not an extractor checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kExtractorVersion)
    r.fail("extractor checkpoint version " + std::to_string(version) + " is not supported (expected " +
           std::to_string(kExtractorVersion) + ")");
  ExtractorBundle b;
  const std::string kind = r.str();
  const int steps = static_cast<int>(r.u32());
  try {
    b.schedule = NoiseSchedule::build(steps, parse_schedule_kind(kind));
  } catch (const Error& e) {
    r.fail(e.what());
  }
  b.latent.seed = r.u64();
  b.latent.z = r.tensor();
  DenoiserConfig c;
  c.latent_channels = static_cast<int>(r.u32());
  c.cond_width1 = static_cast<int>(r.u32());
  c.cond_width2 = static_cast<int>(r.u32());
  c.hidden = static_cast<int>(r.u32());
  c.feature_channels = static_cast<int>(r.u32());
  c.time_dim = static_cast<int>(r.u32());
  try {
    b.model = std::make_shared<ConditionalDenoiser>(c, steps, 0);
  } catch (const Error& e) {
    r.fail(e.what());
  }
  const_cast<nn::ParamSet&>(b.model->params()).read(r);
  b.steps_trained = r.i64();
  return b;
}

void ExtractorBundle::save(const std::filesystem::path& path) const {
  binio::Writer w;
  write(w);
  w.save(path);
}

ExtractorBundle ExtractorBundle::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("no extractor checkpoint at " + path.string());
  auto r = binio::Reader::open(path);
  ExtractorBundle b = read(r);
  if (!r.at_end()) r.fail("trailing bytes after extractor checkpoint");
  return b;
}

}  // namespace tdc::extractor
