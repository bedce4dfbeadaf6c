#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tdcount/errors.hpp"
#include "tdcount/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kInvalidConfig = 2, kMissingArtifact = 3, kNumericFailure = 4 };

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool paper_scale = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "experiment config file (key = value)");
  cmd->add_option("--out", o.out_dir, "output directory (output.dir)");
  cmd->add_option("--seed", o.seed, "training seed (train.seed)");
  cmd->add_option("--override", o.overrides, "key=value, applied after the config file")->take_all();
  cmd->add_flag("--paper-scale", o.paper_scale, "start from the full-scale preset");
}

tdc::ExperimentConfig build_config(const CommonOptions& o) {
  tdc::ExperimentConfig cfg = o.paper_scale ? tdc::ExperimentConfig::paper_scale() : tdc::ExperimentConfig{};
  if (!o.config_path.empty()) cfg = tdc::ExperimentConfig::load(o.config_path, cfg);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.seed) cfg.seed = *o.seed;
  for (const auto& a : o.overrides) cfg.apply_override(a);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thermal crowd counting with depth-conditioned features"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* generate = app.add_subcommand("generate", "write the synthetic dataset to dataset.path");
  auto* pretrain = app.add_subcommand("pretrain", "pretrain the depth-conditioned feature extractor");
  auto* train = app.add_subcommand("train", "train the counting network");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint; results go to <out>/eval-<split>");
  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  auto* report = app.add_subcommand("report", "summarise finished runs");
  for (auto* cmd : {generate, pretrain, train, evaluate, ablate, report}) add_common(cmd, common);

  std::string resume;
  train->add_option("--resume", resume, "checkpoint to resume from");

  std::string checkpoint;
  std::string split = "test";
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  std::string suite;
  int n_seeds = 3;
  ablate->add_option("--suite", suite, "steps, depth, loss, prototypes, latent or extractor")->required();
  ablate->add_option("--seeds", n_seeds, "seeds per variant")->check(CLI::PositiveNumber);

  std::vector<std::string> run_dirs;
  report->add_option("runs", run_dirs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }

  try {
    if (*report) {
      const std::string out = common.out_dir.empty() ? "report" : common.out_dir;
      tdc::pipeline::cmd_report(run_dirs, out, std::cout);
      return kOk;
    }
    const tdc::ExperimentConfig cfg = build_config(common);
    if (*generate) tdc::pipeline::cmd_generate(cfg, std::cout);
    else if (*pretrain) tdc::pipeline::cmd_pretrain(cfg, std::cout);
    else if (*train) tdc::pipeline::cmd_train(cfg, std::cout, resume);
    else if (*evaluate) tdc::pipeline::cmd_evaluate(cfg, checkpoint, split, std::cout);
    else if (*ablate) tdc::pipeline::cmd_ablate(cfg, suite, n_seeds, std::cout);
    return kOk;
  } catch (const tdc::InvalidConfiguration& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const tdc::InvalidParameter& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const tdc::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const tdc::ParseError& e) {
    std::cerr << "unreadable artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const tdc::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
