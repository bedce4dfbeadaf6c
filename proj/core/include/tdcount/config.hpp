#pragma once

// Experiment configuration: one flat `key = value` file with dotted keys.
// Keys absent from a file keep their defaults; unknown keys are an error.

#include <cstdint>
#include <string>
#include <vector>

#include "tdcount/counting_net.hpp"
#include "tdcount/extractor.hpp"
#include "tdcount/kv.hpp"
#include "tdcount/objectives.hpp"
#include "tdcount/scenes.hpp"

namespace tdc {

enum class AuxLoss { kNone, kCrossEntropy, kPrototype };
enum class LatentMode { kFixed, kResampled };

std::string to_string(AuxLoss a);
std::string to_string(LatentMode m);

struct ExperimentConfig {
  // dataset.*
  std::string dataset_path = "data";
  int n_train = 200;
  int n_test = 50;
  // scene.*
  scenes::SceneGenConfig scene;
  // extractor.*
  int schedule_steps = 1000;
  extractor::DenoiserConfig denoiser;
  std::uint64_t latent_seed = 5;
  std::uint64_t extractor_init_seed = 9;
  int n_steps = 1;
  bool joint_extractor = false;
  LatentMode latent_mode = LatentMode::kFixed;
  std::string extractor_checkpoint;  // empty: <dataset>/extractor.tdcx
  // pretrain.*
  extractor::PretrainConfig pretrain;
  // model.*
  net::NetConfig net;
  // objective.*
  AuxLoss aux_loss = AuxLoss::kPrototype;
  objectives::PAConfig pa;
  int prototype_dim = 16;
  std::string prototype_file;
  std::uint64_t prototype_seed = 3;
  double count_weight = 0.01;
  double density_sigma = 4.0;
  // train.*
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 1;
  int eval_interval = 1;
  // output.*
  std::string out_dir = "runs/default";

  kv::Pairs to_pairs() const;
  std::string render() const;
  static ExperimentConfig parse(const std::string& text, const std::string& source);
  static ExperimentConfig load(const std::string& path);
  // Apply the file's keys on top of `base`.
  static ExperimentConfig parse(const std::string& text, const std::string& source, ExperimentConfig base);
  static ExperimentConfig load(const std::string& path, ExperimentConfig base);
  // "key=value"; throws InvalidConfiguration for unknown keys or bad values.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  void validate() const;
  // FNV-1a of the rendered text, as 16 hex digits.
  std::string hash() const;
  // Hash of the fields that determine model shapes and training data.
  std::string model_hash() const;
  std::string resolved_extractor_checkpoint() const;

  // Full-scale values from the original protocol (crop 384, lr 1e-4,
  // 500 epochs, batch 1, lambda 1, n 6, 20k extractor steps).
  static ExperimentConfig paper_scale();

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::vector<std::string> config_keys();

}  // namespace tdc
