#include "tdcount/config.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>

#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/rng.hpp"

namespace tdc {
namespace {

using Getter = std::function<std::string(const ExperimentConfig&)>;
using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string&)>;

struct Field {
  std::string key;
  Getter get;
  Setter set;
};

Field int_field(std::string key, int ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return std::to_string(c.*m); },
          [m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*m = static_cast<int>(kv::to_int(k, v));
          }};
}

template <class Sub>
Field sub_int(std::string key, Sub ExperimentConfig::*s, int Sub::*m) {
  return {std::move(key), [s, m](const ExperimentConfig& c) { return std::to_string(c.*s.*m); },
          [s, m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*s.*m = static_cast<int>(kv::to_int(k, v));
          }};
}

template <class Sub>
Field sub_double(std::string key, Sub ExperimentConfig::*s, double Sub::*m) {
  return {std::move(key), [s, m](const ExperimentConfig& c) { return kv::format_double(c.*s.*m); },
          [s, m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*s.*m = kv::to_double(k, v);
          }};
}

template <class Sub>
Field sub_u64(std::string key, Sub ExperimentConfig::*s, std::uint64_t Sub::*m) {
  return {std::move(key), [s, m](const ExperimentConfig& c) { return std::to_string(c.*s.*m); },
          [s, m](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*s.*m = kv::to_u64(k, v);
          }};
}

Field double_field(std::string key, double ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return kv::format_double(c.*m); },
          [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = kv::to_double(k, v); }};
}

Field u64_field(std::string key, std::uint64_t ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return std::to_string(c.*m); },
          [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = kv::to_u64(k, v); }};
}

Field string_field(std::string key, std::string ExperimentConfig::*m) {
  return {std::move(key), [m](const ExperimentConfig& c) { return c.*m; },
          [m](ExperimentConfig& c, const std::string&, const std::string& v) { c.*m = v; }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using scenes::SceneGenConfig;
  using extractor::DenoiserConfig;
  using extractor::PretrainConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("dataset.path", &C::dataset_path));
    f.push_back(int_field("dataset.n_train", &C::n_train));
    f.push_back(int_field("dataset.n_test", &C::n_test));

    f.push_back(sub_int("scene.height", &C::scene, &SceneGenConfig::height));
    f.push_back(sub_int("scene.width", &C::scene, &SceneGenConfig::width));
    f.push_back(sub_int("scene.count_min", &C::scene, &SceneGenConfig::count_min));
    f.push_back(sub_int("scene.count_max", &C::scene, &SceneGenConfig::count_max));
    f.push_back(sub_double("scene.person_intensity", &C::scene, &SceneGenConfig::person_intensity));
    f.push_back(sub_double("scene.distractor_rate", &C::scene, &SceneGenConfig::distractor_rate));
    f.push_back(sub_double("scene.ambient_noise_std", &C::scene, &SceneGenConfig::ambient_noise_std));
    f.push_back(sub_double("scene.perspective_strength", &C::scene, &SceneGenConfig::perspective_strength));
    f.push_back(sub_double("scene.base_radius", &C::scene, &SceneGenConfig::base_radius));
    f.push_back(sub_u64("scene.seed", &C::scene, &SceneGenConfig::seed));
    f.push_back({"scene.depth_bias.gain", [](const C& c) { return kv::format_double(c.scene.depth_bias.gain); },
                 [](C& c, const std::string& k, const std::string& v) { c.scene.depth_bias.gain = kv::to_double(k, v); }});
    f.push_back({"scene.depth_bias.offset", [](const C& c) { return kv::format_double(c.scene.depth_bias.offset); },
                 [](C& c, const std::string& k, const std::string& v) { c.scene.depth_bias.offset = kv::to_double(k, v); }});
    f.push_back({"scene.depth_bias.warp_amp", [](const C& c) { return kv::format_double(c.scene.depth_bias.warp_amp); },
                 [](C& c, const std::string& k, const std::string& v) { c.scene.depth_bias.warp_amp = kv::to_double(k, v); }});
    f.push_back({"scene.depth_bias.seed", [](const C& c) { return std::to_string(c.scene.depth_bias.seed); },
                 [](C& c, const std::string& k, const std::string& v) { c.scene.depth_bias.seed = kv::to_u64(k, v); }});

    f.push_back(int_field("extractor.schedule_steps", &C::schedule_steps));
    f.push_back(sub_int("extractor.latent_channels", &C::denoiser, &DenoiserConfig::latent_channels));
    f.push_back(sub_int("extractor.cond_width1", &C::denoiser, &DenoiserConfig::cond_width1));
    f.push_back(sub_int("extractor.cond_width2", &C::denoiser, &DenoiserConfig::cond_width2));
    f.push_back(sub_int("extractor.hidden", &C::denoiser, &DenoiserConfig::hidden));
    f.push_back(sub_int("extractor.feature_channels", &C::denoiser, &DenoiserConfig::feature_channels));
    f.push_back(sub_int("extractor.time_dim", &C::denoiser, &DenoiserConfig::time_dim));
    f.push_back(u64_field("extractor.latent_seed", &C::latent_seed));
    f.push_back(u64_field("extractor.init_seed", &C::extractor_init_seed));
    f.push_back(int_field("extractor.n_steps", &C::n_steps));
    f.push_back({"extractor.mode", [](const C& c) { return std::string(c.joint_extractor ? "joint" : "frozen"); },
                 [](C& c, const std::string& k, const std::string& v) {
                   if (v == "joint") c.joint_extractor = true;
                   else if (v == "frozen") c.joint_extractor = false;
                   else throw InvalidConfiguration(k + ": expected frozen or joint, got '" + v + "'");
                 }});
    f.push_back({"extractor.latent", [](const C& c) { return to_string(c.latent_mode); },
                 [](C& c, const std::string& k, const std::string& v) {
                   if (v == "fixed") c.latent_mode = LatentMode::kFixed;
                   else if (v == "resampled") c.latent_mode = LatentMode::kResampled;
                   else throw InvalidConfiguration(k + ": expected fixed or resampled, got '" + v + "'");
                 }});
    f.push_back(string_field("extractor.checkpoint", &C::extractor_checkpoint));

    f.push_back(sub_int("pretrain.steps", &C::pretrain, &PretrainConfig::steps));
    f.push_back(sub_int("pretrain.batch_size", &C::pretrain, &PretrainConfig::batch_size));
    f.push_back(sub_double("pretrain.lr", &C::pretrain, &PretrainConfig::lr));
    f.push_back(sub_double("pretrain.weight_decay", &C::pretrain, &PretrainConfig::weight_decay));
    f.push_back(sub_double("pretrain.cond_dropout", &C::pretrain, &PretrainConfig::cond_dropout));
    f.push_back(sub_double("pretrain.huber_c", &C::pretrain, &PretrainConfig::huber_c));
    f.push_back(sub_u64("pretrain.seed", &C::pretrain, &PretrainConfig::seed));

    f.push_back(sub_int("model.enc_width1", &C::net, &net::NetConfig::enc_width1));
    f.push_back(sub_int("model.enc_width2", &C::net, &net::NetConfig::enc_width2));
    f.push_back(sub_int("model.thermal_channels", &C::net, &net::NetConfig::thermal_channels));
    f.push_back(sub_int("model.attn_width", &C::net, &net::NetConfig::attn_width));
    f.push_back(sub_int("model.attn_heads", &C::net, &net::NetConfig::attn_heads));
    f.push_back(sub_int("model.head_width1", &C::net, &net::NetConfig::head_width1));
    f.push_back(sub_int("model.head_width2", &C::net, &net::NetConfig::head_width2));
    f.push_back(sub_int("model.head_width3", &C::net, &net::NetConfig::head_width3));
    f.push_back(sub_double("model.head_bias", &C::net, &net::NetConfig::head_bias));
    f.push_back({"model.depth", [](const C& c) { return net::to_string(c.net.depth); },
                 [](C& c, const std::string&, const std::string& v) { c.net.depth = net::parse_depth_source(v); }});

    f.push_back({"objective.aux", [](const C& c) { return to_string(c.aux_loss); },
                 [](C& c, const std::string& k, const std::string& v) {
                   if (v == "none") c.aux_loss = AuxLoss::kNone;
                   else if (v == "ce") c.aux_loss = AuxLoss::kCrossEntropy;
                   else if (v == "pa") c.aux_loss = AuxLoss::kPrototype;
                   else throw InvalidConfiguration(k + ": expected none, ce or pa, got '" + v + "'");
                 }});
    f.push_back(sub_double("objective.kappa", &C::pa, &objectives::PAConfig::kappa));
    f.push_back(sub_int("objective.n", &C::pa, &objectives::PAConfig::n));
    f.push_back(sub_int("objective.samples_per_image", &C::pa, &objectives::PAConfig::samples_per_image));
    f.push_back(sub_double("objective.lambda", &C::pa, &objectives::PAConfig::lambda));
    f.push_back(int_field("objective.prototype_dim", &C::prototype_dim));
    f.push_back(string_field("objective.prototype_file", &C::prototype_file));
    f.push_back(u64_field("objective.prototype_seed", &C::prototype_seed));
    f.push_back(double_field("objective.count_weight", &C::count_weight));
    f.push_back(double_field("objective.density_sigma", &C::density_sigma));

    f.push_back(double_field("train.lr", &C::lr));
    f.push_back(double_field("train.weight_decay", &C::weight_decay));
    f.push_back(int_field("train.epochs", &C::epochs));
    f.push_back(int_field("train.batch_size", &C::batch_size));
    f.push_back(u64_field("train.seed", &C::seed));
    f.push_back(int_field("train.eval_interval", &C::eval_interval));

    f.push_back(string_field("output.dir", &C::out_dir));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string to_string(AuxLoss a) {
  switch (a) {
    case AuxLoss::kNone:
      return "none";
    case AuxLoss::kCrossEntropy:
      return "ce";
    case AuxLoss::kPrototype:
      return "pa";
  }
  return "unknown";
}

std::string to_string(LatentMode m) { return m == LatentMode::kFixed ? "fixed" : "resampled"; }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

kv::Pairs ExperimentConfig::to_pairs() const {
  kv::Pairs out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::string ExperimentConfig::render() const {
  return "# tdcount experiment config\n" + kv::render(to_pairs());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw InvalidConfiguration("unknown config key '" + key + "'");
  f->set(*this, key, value);
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source) {
  return parse(text, source, ExperimentConfig{});
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return load(path, ExperimentConfig{}); }

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source,
                                         ExperimentConfig base) {
  ExperimentConfig c = std::move(base);
  for (const auto& [k, v] : kv::parse(text, source)) {
    try {
      c.set(k, v);
    } catch (const InvalidConfiguration& e) {
      throw InvalidConfiguration(source + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path, ExperimentConfig base) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("config file not found: " + path);
  try {
    return parse(binio::read_file(path), path, std::move(base));
  } catch (const ParseError& e) {
    throw InvalidConfiguration(e.what());
  }
}

void ExperimentConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw InvalidConfiguration("override '" + assignment + "' is not of the form key=value");
  set(kv::trim(assignment.substr(0, eq)), kv::trim(assignment.substr(eq + 1)));
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidConfiguration(m); };
  if (dataset_path.empty()) fail("dataset.path must not be empty");
  if (n_train < 0 || n_test < 0) fail("dataset split sizes must be >= 0");
  try {
    scene.validate();
  } catch (const Error& e) {
    fail(e.what());
  }
  if (scene.height % 8 || scene.width % 8) fail("scene height and width must be multiples of 8");
  if (schedule_steps < 2) fail("extractor.schedule_steps must be >= 2");
  if (n_steps < 1 || n_steps > schedule_steps) fail("extractor.n_steps must be in [1, schedule_steps]");
  if (pretrain.steps < 0 || pretrain.batch_size < 1) fail("invalid pretraining schedule");
  if (!(pretrain.cond_dropout >= 0.0 && pretrain.cond_dropout <= 1.0)) fail("pretrain.cond_dropout must be in [0, 1]");
  if (!(pretrain.huber_c > 0.0)) fail("pretrain.huber_c must be > 0");
  if (!(pretrain.lr > 0.0)) fail("pretrain.lr must be > 0");
  net.validate();
  pa.validate();
  if (prototype_dim < pa.n && prototype_file.empty())
    fail("objective.prototype_dim must be >= objective.n for an orthogonal bank");
  if (!(count_weight >= 0.0)) fail("objective.count_weight must be >= 0");
  if (!(density_sigma > 0.0)) fail("objective.density_sigma must be > 0");
  const int cells = (scene.height / net::kFeatureStride) * (scene.width / net::kFeatureStride);
  if (pa.samples_per_image > cells) fail("objective.samples_per_image exceeds the number of cells");
  if (!(lr > 0.0)) fail("train.lr must be > 0");
  if (!(weight_decay >= 0.0)) fail("train.weight_decay must be >= 0");
  if (epochs < 0) fail("train.epochs must be >= 0");
  if (batch_size < 1) fail("train.batch_size must be >= 1");
  if (eval_interval < 1) fail("train.eval_interval must be >= 1");
  if (out_dir.empty()) fail("output.dir must not be empty");
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(render())); }

std::string ExperimentConfig::model_hash() const {
  std::string text;
  for (const auto& [k, v] : to_pairs())
    if (k.starts_with("scene.") || k.starts_with("extractor.") || k.starts_with("model.") ||
        k.starts_with("objective."))
      if (k != "extractor.checkpoint" && k != "objective.prototype_file") text += k + "=" + v + "\n";
  return hex64(fnv1a64(text));
}

std::string ExperimentConfig::resolved_extractor_checkpoint() const {
  if (!extractor_checkpoint.empty()) return extractor_checkpoint;
  return (std::filesystem::path(dataset_path) / "extractor.tdcx").string();
}

ExperimentConfig ExperimentConfig::paper_scale() {
  ExperimentConfig c;
  c.scene.height = 384;
  c.scene.width = 384;
  c.lr = 1e-4;
  c.weight_decay = 1e-4;
  c.epochs = 500;
  c.batch_size = 1;
  c.pa.lambda = 1.0;
  c.pa.n = 6;
  c.pretrain.steps = 20000;
  c.pretrain.batch_size = 8;
  c.pretrain.cond_dropout = 0.5;
  c.out_dir = "runs/paper_scale";
  return c;
}

}  // namespace tdc
