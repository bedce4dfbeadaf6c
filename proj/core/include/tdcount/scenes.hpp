#pragma once

// Deterministic toy thermal/depth scenes and their on-disk layout.
//
// A scene directory holds thermal.pgm, depth_gt.pgm, depth_est.pgm (16-bit
// binary PGM), points.csv and a key=value `meta` file. A dataset directory
// holds manifest.txt and scenes/<id>/.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tdcount/metrics.hpp"
#include "tdcount/tensor.hpp"

namespace tdc::scenes {

// Dataset-global depth-estimation bias: the same gain, offset and warp field
// apply to every scene.
struct DepthBias {
  double gain = 0.8;
  double offset = 0.1;
  double warp_amp = 1.5;  // pixels, maximum displacement
  std::uint64_t seed = 7;

  friend bool operator==(const DepthBias&, const DepthBias&) = default;
};

struct SceneGenConfig {
  int height = 64;
  int width = 64;
  int count_min = 4;
  int count_max = 24;
  double person_intensity = 0.8;
  double distractor_rate = 5.0;
  double ambient_noise_std = 0.03;
  double perspective_strength = 0.8;
  double base_radius = 2.0;
  std::uint64_t seed = 1;
  DepthBias depth_bias;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static SceneGenConfig from_kv(const std::map<std::string, std::string>& kv);

  friend bool operator==(const SceneGenConfig&, const SceneGenConfig&) = default;
};

// Grids are (1, H, W) tensors with values in [0, 1]. There is no RGB field.
struct Scene {
  Tensor thermal;
  Tensor depth_gt;   // 0 = far, 1 = near
  Tensor depth_est;  // depth_gt after the systematic bias
  metrics::PointSet points;
  std::vector<metrics::Point> distractors;
  std::uint64_t seed = 0;
  std::int64_t index = 0;

  int height() const { return thermal.dim(1); }
  int width() const { return thermal.dim(2); }
};

// Ambient background temperature; what an empty noiseless scene renders to.
Tensor ambient_pattern(int height, int width);

Scene generate_scene(const SceneGenConfig& config, std::int64_t index);

// Per-pixel displacement (dx, dy) of the smooth bias warp; |d| <= amp.
struct WarpField {
  Tensor dx;
  Tensor dy;
};
WarpField make_warp(int height, int width, double amp, std::uint64_t seed);

// clip(gain * warp(depth) + offset, 0, 1). Accepts (H, W) or (1, H, W).
Tensor degrade_depth(const Tensor& depth_gt, double gain, double offset, double warp_amp,
                     std::uint64_t seed);

void save_scene(const Scene& scene, const std::filesystem::path& dir);
Scene load_scene(const std::filesystem::path& dir);

// 16-bit binary PGM of a (1, H, W) grid in [0, 1].
void write_pgm16(const std::filesystem::path& path, const Tensor& grid);
Tensor read_pgm16(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string split;  // "train" or "test"
  std::size_t count = 0;
  std::int64_t index = 0;
};

struct Manifest {
  SceneGenConfig config;
  std::vector<ManifestEntry> entries;

  std::string render() const;
  static Manifest parse(const std::string& text, const std::string& source);
  std::size_t count_split(const std::string& split) const;
};

// Writes n_train + n_test scenes and manifest.txt under out_dir. Scene
// indices are 0..n-1 with the test split last; output is idempotent.
Manifest generate_dataset(const SceneGenConfig& config, int n_train, int n_test,
                          const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& dataset_dir);
std::vector<Scene> load_split(const std::filesystem::path& dataset_dir, const std::string& split);

}  // namespace tdc::scenes
