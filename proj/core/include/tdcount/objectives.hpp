#pragma once

// Training losses: prototype alignment over feature cells, density
// regression, their weighted sum, and a plain cross-entropy baseline.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tdcount/autograd.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/nn.hpp"
#include "tdcount/rng.hpp"
#include "tdcount/tensor.hpp"

namespace tdc::objectives {

// n unit-norm anchor vectors, one per count class.
struct PrototypeBank {
  int n = 0;
  int dim = 0;
  Tensor vectors;  // (n, dim)
  std::string source;

  // Gram-Schmidt on Gaussian draws; requires n <= dim.
  static PrototypeBank random_orthogonal(int n, int dim, std::uint64_t seed);
  // Rows are renormalised on load; a warning goes to stderr when a row norm
  // is more than 1% off.
  static PrototypeBank load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

inline constexpr std::uint32_t kBankVersion = 1;

struct PAConfig {
  double kappa = 0.07;
  int n = 6;
  int samples_per_image = 0;  // 0 means all cells
  double lambda = 1.0;

  void validate() const;
  friend bool operator==(const PAConfig&, const PAConfig&) = default;
};

struct CellLabels {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major

  int at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
  int max_label() const;
};

// Per stride x stride block: floor(mass + 0.5) clipped to [0, n-1].
CellLabels local_counts(const metrics::DensityMap& gt_density, int stride, int n);
// Same on an already pooled (1, h, w) cell grid.
CellLabels labels_from_cells(const Tensor& cell_mass, int n);

// Bias-free linear map from thermal channels to the prototype width.
struct PAProjection {
  PAProjection() = default;
  PAProjection(int in_channels, int dim, Rng& rng);
  nn::Linear linear;
  void collect(nn::ParamSet& ps, const std::string& prefix) const;
};

// Cell indices used by one loss evaluation: all cells when
// samples_per_image is 0, otherwise a uniform sample without replacement.
std::vector<int> sample_cells(int total, int samples_per_image, Rng& rng);

// Mean over `rows` of cross-entropy of softmax(cos(e_i, p_c) / kappa).
// `embeddings` are (N, dim) rows before normalisation.
ag::Var pa_loss_embedded(const ag::Var& embeddings, std::span<const int> labels,
                         const PrototypeBank& bank, double kappa);

// f_t: (C, h, w). Projects every sampled cell, then pa_loss_embedded.
ag::Var pa_loss(const ag::Var& f_t, const CellLabels& labels, const PrototypeBank& bank,
                const PAProjection& proj, const PAConfig& cfg, Rng& rng);

// mean((pred - gt)^2) + count_weight * |sum(pred) - sum(gt)|
ag::Var reg_loss(const ag::Var& pred, const Tensor& gt, double count_weight = 0.01);

// reg + lambda * pa. With lambda == 0 the PA graph is not attached.
ag::Var total_loss(const ag::Var& reg, const ag::Var& pa, double lambda);

// Per-cell cross-entropy of a linear classifier over thermal channels.
ag::Var ce_loss_variant(const ag::Var& f_t, const CellLabels& labels, const nn::Linear& classifier,
                        std::span<const int> cells);

}  // namespace tdc::objectives
