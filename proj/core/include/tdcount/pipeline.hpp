#pragma once

// Training loop, evaluation, checkpoints, ablation suites and the command
// entry points behind the tdcount tool.
//
// Every random draw during training comes from a stream derived from
// (train.seed, purpose, step or epoch, scene), never from carried state, so a
// run resumed from a checkpoint replays the same draws as an uninterrupted one.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdcount/config.hpp"
#include "tdcount/counting_net.hpp"
#include "tdcount/extractor.hpp"
#include "tdcount/objectives.hpp"
#include "tdcount/report.hpp"
#include "tdcount/scenes.hpp"

namespace tdc::pipeline {

struct Dataset {
  std::vector<scenes::Scene> train;
  std::vector<scenes::Scene> test;
};

// Reads <dataset.path>/manifest.txt and both splits.
Dataset load_dataset(const ExperimentConfig& cfg);
// Generates the same scenes in memory without touching disk.
Dataset make_dataset(const ExperimentConfig& cfg);

// Ground-truth per-cell counts (1, H/4, W/4) from the rasterised points.
Tensor target_cells(const scenes::Scene& scene, double sigma);

// Pretrains a fresh extractor on the training split.
extractor::ExtractorBundle pretrain_bundle(const ExperimentConfig& cfg, std::span<const scenes::Scene> train,
                                           extractor::PretrainLog* log = nullptr);

struct EvalOptions {
  int n_steps = 1;
  std::uint64_t seed = 0;
  LatentMode latent_mode = LatentMode::kFixed;
};

// Per-image predictions, then dataset GAME(0..3), RMSE and MAE.
report::EvalMetrics evaluate(const net::CountingModel& model, std::span<const scenes::Scene> scenes,
                             const EvalOptions& opts, std::vector<double>* pred_counts = nullptr);

class Trainer {
 public:
  // `bundle` is required when the config uses extractor features; the trainer
  // takes a private copy of the denoiser parameters.
  Trainer(const ExperimentConfig& cfg, const extractor::ExtractorBundle* bundle, const Dataset& data);

  // One optimizer step on the next mini-batch; returns its mean total loss.
  double step();
  // Runs steps to the end of the current epoch, then evaluates when due.
  report::EpochRecord run_epoch();
  // Runs the remaining epochs. Writes checkpoints and reports to output.dir
  // when `write_outputs` is set.
  report::MetricsReport train(bool write_outputs,
                              const std::function<void(const report::EpochRecord&)>& on_epoch = {});

  report::EvalMetrics evaluate_test() const;

  long global_step() const { return global_step_; }
  int epoch() const { return static_cast<int>(global_step_ / steps_per_epoch_); }
  int steps_per_epoch() const { return steps_per_epoch_; }
  const net::CountingModel& model() const { return *model_; }
  const ExperimentConfig& config() const { return cfg_; }
  const report::MetricsReport& report() const { return report_; }
  // All parameters the optimizer updates, in checkpoint order.
  const nn::ParamSet& trainable() const { return trainable_; }
  std::vector<Tensor> parameter_values() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  // Restores parameters, optimizer state, step counter and history. The
  // checkpoint must come from a config with the same model hash.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  ag::Var depth_var(const scenes::Scene& scene, bool training) const;

  ExperimentConfig cfg_;
  const Dataset* data_;
  std::shared_ptr<extractor::ExtractorBundle> bundle_;
  std::unique_ptr<net::CountingModel> model_;
  objectives::PrototypeBank bank_;
  objectives::PAProjection projection_;
  nn::Linear classifier_;
  nn::ParamSet trainable_;
  nn::AdamW opt_;
  std::vector<Tensor> train_targets_;
  std::vector<objectives::CellLabels> train_labels_;
  mutable std::map<std::int64_t, Tensor> feature_cache_;
  mutable std::map<std::int64_t, Tensor> eval_cache_;
  int steps_per_epoch_ = 1;
  long global_step_ = 0;
  std::vector<double> epoch_total_, epoch_reg_, epoch_aux_;
  report::MetricsReport report_;
  std::vector<Tensor> best_params_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Builds a model from a checkpoint for evaluation only.
struct LoadedModel {
  ExperimentConfig config;
  std::shared_ptr<extractor::ExtractorBundle> bundle;
  std::unique_ptr<net::CountingModel> model;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

// ---------------------------------------------------------------- ablations

struct Variant {
  std::string name;
  std::vector<std::string> overrides;  // key=value applied to the base config
};

// Known suites: steps, depth, loss, prototypes, latent, extractor.
std::vector<Variant> suite_variants(const std::string& suite);
std::vector<std::string> suite_names();

struct VariantResult {
  Variant variant;
  std::vector<std::uint64_t> seeds;
  std::vector<report::MetricsReport> runs;
  report::EvalMetrics median;       // per-field median over seeds
  double median_final_loss = 0.0;
};

struct AblationResult {
  std::string suite;
  std::vector<VariantResult> variants;
  std::string table() const;
  std::string csv() const;
};

// Runs one (config, seed) training; memoised by config hash when `cache` is
// given so suites sharing a configuration train it once.
using RunCache = std::map<std::string, report::MetricsReport>;
report::MetricsReport run_once(const ExperimentConfig& cfg, const extractor::ExtractorBundle* bundle,
                               const Dataset& data, RunCache* cache = nullptr);

AblationResult run_ablation(const std::string& suite, const ExperimentConfig& base,
                            const extractor::ExtractorBundle* bundle, const Dataset& data, int n_seeds = 3,
                            RunCache* cache = nullptr, std::ostream* log = nullptr);

void write_ablation(const AblationResult& result, const std::filesystem::path& dir);

double median(std::vector<double> v);

// ---------------------------------------------------------------- commands

// Each returns normally on success and throws tdc::Error subclasses
// otherwise; the tool maps them to exit codes.
void cmd_generate(const ExperimentConfig& cfg, std::ostream& out);
void cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out);
void cmd_train(const ExperimentConfig& cfg, std::ostream& out, const std::string& resume_from = "");
void cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& split,
                  std::ostream& out);
void cmd_ablate(const ExperimentConfig& cfg, const std::string& suite, int n_seeds, std::ostream& out);
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir, std::ostream& out);

}  // namespace tdc::pipeline
