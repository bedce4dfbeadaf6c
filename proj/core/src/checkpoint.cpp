#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/pipeline.hpp"
#include "tdcount/rng.hpp"

// Pipeline checkpoint layout (little-endian):
//   "TDCP" u32 version
//   str model hash, str config text, i64 global step
//   u32 has_extractor [extractor bundle]
//   str bank source, tensor bank vectors
//   model parameters            <- load_model() stops here
//   trainable parameters, optimizer state
//   partial-epoch loss lists, report json, best parameter values

namespace tdc::pipeline {
namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'P'};

void write_doubles(binio::Writer& w, const std::vector<double>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.f64(x);
}

std::vector<double> read_doubles(binio::Reader& r) {
  const std::uint32_t n = r.u32();
  std::vector<double> v;
  for (std::uint32_t i = 0; i < n; ++i) v.push_back(r.f64());
  return v;
}

struct Header {
  std::string model_hash;
  std::string config_text;
  long global_step = 0;
};

Header read_header(binio::Reader& r) {
  if (r.bytes(4) != std::string_view(kMagic, 4)) r.fail("not a tdcount checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    r.fail("checkpoint version " + std::to_string(version) + " is not supported (expected " +
           std::to_string(kCheckpointVersion) + ")");
  Header h;
  h.model_hash = r.str();
  h.config_text = r.str();
  h.global_step = static_cast<long>(r.i64());
  return h;
}

binio::Reader open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("no checkpoint at " + path.string());
  return binio::Reader::open(path);
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(cfg_.model_hash());
  w.str(cfg_.render());
  w.i64(global_step_);
  w.u32(bundle_ ? 1 : 0);
  if (bundle_) bundle_->write(w);
  w.str(bank_.source);
  w.tensor(bank_.vectors);
  model_->params().write(w);
  trainable_.write(w);
  opt_.write(w);
  write_doubles(w, epoch_total_);
  write_doubles(w, epoch_reg_);
  write_doubles(w, epoch_aux_);
  w.str(report::to_json(report_));
  w.u32(static_cast<std::uint32_t>(best_params_.size()));
  for (const auto& t : best_params_) w.tensor(t);
  w.save(path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  auto r = open_checkpoint(path);
  const Header h = read_header(r);
  if (h.model_hash != cfg_.model_hash())
    throw InvalidConfiguration("checkpoint " + path.string() + " was written for model hash " + h.model_hash +
                               ", the current config has " + cfg_.model_hash() + "; refusing to resume");
  const bool has_bundle = r.u32() != 0;
  if (has_bundle != static_cast<bool>(bundle_)) r.fail("extractor presence does not match the config");
  if (has_bundle) {
    auto stored = extractor::ExtractorBundle::read(r);
    const auto& src = stored.model->params().items();
    const auto& dst = bundle_->model->params().items();
    if (src.size() != dst.size()) r.fail("extractor parameter count mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].var->value = src[i].var->value;
    bundle_->latent = stored.latent;
    bundle_->steps_trained = stored.steps_trained;
  }
  bank_.source = r.str();
  Tensor bank = r.tensor();
  if (bank.shape() != bank_.vectors.shape()) r.fail("prototype bank shape mismatch");
  bank_.vectors = std::move(bank);
  model_->params().read(r);
  trainable_.read(r);
  opt_.read(r);
  epoch_total_ = read_doubles(r);
  epoch_reg_ = read_doubles(r);
  epoch_aux_ = read_doubles(r);
  report_ = report::from_json(r.str(), path.string());
  const std::uint32_t nbest = r.u32();
  best_params_.clear();
  for (std::uint32_t i = 0; i < nbest; ++i) best_params_.push_back(r.tensor());
  if (!r.at_end()) r.fail("trailing bytes after checkpoint");
  global_step_ = h.global_step;
  feature_cache_.clear();
  eval_cache_.clear();
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  auto r = open_checkpoint(checkpoint);
  const Header h = read_header(r);
  LoadedModel lm;
  lm.config = ExperimentConfig::parse(h.config_text, checkpoint.string() + " (embedded config)");
  if (r.u32() != 0) lm.bundle = std::make_shared<extractor::ExtractorBundle>(extractor::ExtractorBundle::read(r));
  r.str();
  r.tensor();
  lm.model = std::make_unique<net::CountingModel>(lm.config.net, derive_seed(lm.config.seed, fnv1a64("init")),
                                                  lm.bundle, lm.config.joint_extractor);
  lm.model->params().read(r);
  return lm;
}

}  // namespace tdc::pipeline
