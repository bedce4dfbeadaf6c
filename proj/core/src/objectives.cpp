#include "tdcount/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"

namespace tdc::objectives {
namespace {

constexpr char kBankMagic[4] = {'T', 'D', 'C', 'B'};

}  // namespace

// ---------------------------------------------------------------- bank

PrototypeBank PrototypeBank::random_orthogonal(int n, int dim, std::uint64_t seed) {
  if (n < 1 || dim < 1) throw InvalidParameter("prototype bank needs n >= 1 and dim >= 1");
  if (n > dim) throw InvalidParameter("cannot fit " + std::to_string(n) + " orthogonal prototypes in " +
                                      std::to_string(dim) + " dimensions");
  Rng rng(seed);
  PrototypeBank b{n, dim, Tensor({n, dim}), "random-orthogonal(" + std::to_string(seed) + ")"};
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    // A fresh draw that is numerically inside the span of the previous rows
    // is redrawn.
    while (norm < 1e-6) {
      for (int d = 0; d < dim; ++d) b.vectors.at(i, d) = rng.normal();
      for (int j = 0; j < i; ++j) {
        double dot = 0.0;
        for (int d = 0; d < dim; ++d) dot += b.vectors.at(i, d) * b.vectors.at(j, d);
        for (int d = 0; d < dim; ++d) b.vectors.at(i, d) -= dot * b.vectors.at(j, d);
      }
      norm = 0.0;
      for (int d = 0; d < dim; ++d) norm += b.vectors.at(i, d) * b.vectors.at(i, d);
      norm = std::sqrt(norm);
    }
    for (int d = 0; d < dim; ++d) b.vectors.at(i, d) /= norm;
  }
  return b;
}

PrototypeBank PrototypeBank::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("no prototype bank at " + path.string());
  auto r = binio::Reader::open(path);
  if (r.bytes(4) != std::string_view(kBankMagic, 4)) r.fail("not a prototype bank (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kBankVersion) r.fail("unsupported prototype bank version " + std::to_string(version));
  const std::uint32_t n = r.u32(), dim = r.u32();
  if (n < 1 || dim < 1 || n > 4096 || dim > 65536) r.fail("implausible bank size");
  PrototypeBank b{static_cast<int>(n), static_cast<int>(dim), Tensor({static_cast<int>(n), static_cast<int>(dim)}),
                  "file:" + path.string()};
  for (std::size_t i = 0; i < b.vectors.size(); ++i) b.vectors[i] = static_cast<double>(r.f32());
  if (!r.at_end()) r.fail("trailing bytes after prototype bank");
  for (int i = 0; i < b.n; ++i) {
    double norm = 0.0;
    for (int d = 0; d < b.dim; ++d) norm += b.vectors.at(i, d) * b.vectors.at(i, d);
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) r.fail("prototype row " + std::to_string(i) + " has zero or non-finite norm");
    if (std::abs(norm - 1.0) > 0.01)
      std::cerr << "warning: " << path.string() << ": prototype row " << i << " has norm " << norm
                << ", renormalising\n";
    for (int d = 0; d < b.dim; ++d) b.vectors.at(i, d) /= norm;
  }
  return b;
}

void PrototypeBank::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.bytes(std::string_view(kBankMagic, 4));
  w.u32(kBankVersion);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(dim));
  for (double v : vectors.values()) w.f32(static_cast<float>(v));
  w.save(path);
}

void PAConfig::validate() const {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InvalidConfiguration("kappa must be > 0");
  if (n < 1) throw InvalidConfiguration("prototype count n must be >= 1");
  if (samples_per_image < 0) throw InvalidConfiguration("samples_per_image must be >= 0 (0 = all)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfiguration("lambda must be >= 0");
}

// ---------------------------------------------------------------- labels

int CellLabels::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

CellLabels labels_from_cells(const Tensor& cell_mass, int n) {
  if (n < 1) throw InvalidParameter("n must be >= 1");
  if (cell_mass.rank() != 3 || cell_mass.dim(0) != 1) throw InvalidInput("cell grid must be (1, h, w)");
  CellLabels out{cell_mass.dim(1), cell_mass.dim(2), {}};
  out.labels.reserve(cell_mass.size());
  for (double m : cell_mass.values()) {
    const double rounded = std::floor(m + 0.5);
    out.labels.push_back(static_cast<int>(std::clamp(rounded, 0.0, static_cast<double>(n - 1))));
  }
  return out;
}

CellLabels local_counts(const metrics::DensityMap& gt_density, int stride, int n) {
  if (stride < 1) throw InvalidParameter("stride must be >= 1");
  if (gt_density.height() % stride || gt_density.width() % stride)
    throw InvalidInput("density " + std::to_string(gt_density.height()) + "x" +
                       std::to_string(gt_density.width()) + " is not divisible by stride " +
                       std::to_string(stride));
  return labels_from_cells(metrics::pool_cells(gt_density, stride), n);
}

// ---------------------------------------------------------------- losses

PAProjection::PAProjection(int in_channels, int dim, Rng& rng)
    : linear(in_channels, dim, rng, nn::Init::kXavierNormal, false) {}

void PAProjection::collect(nn::ParamSet& ps, const std::string& prefix) const {
  linear.collect(ps, prefix);
}

std::vector<int> sample_cells(int total, int samples_per_image, Rng& rng) {
  if (samples_per_image > total)
    throw InvalidConfiguration("cannot sample " + std::to_string(samples_per_image) + " of " +
                               std::to_string(total) + " cells");
  std::vector<int> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), 0);
  if (samples_per_image == 0 || samples_per_image == total) return idx;
  // Partial Fisher-Yates, then sorted so the loss sums in a fixed order.
  for (int i = 0; i < samples_per_image; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, total - 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(samples_per_image));
  std::sort(idx.begin(), idx.end());
  return idx;
}

ag::Var pa_loss_embedded(const ag::Var& embeddings, std::span<const int> labels,
                         const PrototypeBank& bank, double kappa) {
  if (!(kappa > 0.0)) throw InvalidParameter("kappa must be > 0");
  if (embeddings->value.rank() != 2 || embeddings->value.dim(1) != bank.dim)
    throw InvalidConfiguration("embedding width " + embeddings->value.shape_string() +
                               " does not match prototype dim " + std::to_string(bank.dim));
  for (int y : labels)
    if (y < 0 || y >= bank.n)
      throw InvalidConfiguration("label " + std::to_string(y) + " outside the " + std::to_string(bank.n) +
                                 "-class prototype bank");
  const ag::Var sims = ag::matmul_bt(ag::l2_normalize_rows(embeddings), ag::constant(bank.vectors));
  return ag::cross_entropy_rows(ag::scale(sims, 1.0 / kappa), labels);
}

ag::Var pa_loss(const ag::Var& f_t, const CellLabels& labels, const PrototypeBank& bank,
                const PAProjection& proj, const PAConfig& cfg, Rng& rng) {
  if (cfg.n != bank.n)
    throw InvalidConfiguration("PA config expects " + std::to_string(cfg.n) + " classes, bank has " +
                               std::to_string(bank.n));
  const Tensor& v = f_t->value;
  if (v.rank() != 3 || v.dim(1) != labels.height || v.dim(2) != labels.width)
    throw InvalidInput("label grid does not match the feature grid " + v.shape_string());
  const auto cells = sample_cells(labels.height * labels.width, cfg.samples_per_image, rng);
  std::vector<int> y;
  y.reserve(cells.size());
  for (int c : cells) y.push_back(labels.labels[static_cast<std::size_t>(c)]);
  ag::Var tokens = ag::to_tokens(f_t);
  if (cells.size() != static_cast<std::size_t>(v.dim(1) * v.dim(2))) tokens = ag::select_rows(tokens, cells);
  return pa_loss_embedded(proj.linear(tokens), y, bank, cfg.kappa);
}

ag::Var reg_loss(const ag::Var& pred, const Tensor& gt, double count_weight) {
  if (pred->value.shape() != gt.shape())
    throw InvalidInput("reg_loss: prediction " + pred->value.shape_string() + " vs target " +
                       gt.shape_string());
  const ag::Var target = ag::constant(gt);
  const ag::Var count_err = ag::abs(ag::sub(ag::sum(pred), ag::sum(target)));
  return ag::add(ag::mse(pred, target), ag::scale(count_err, count_weight));
}

ag::Var total_loss(const ag::Var& reg, const ag::Var& pa, double lambda) {
  if (!pa || lambda == 0.0) return reg;
  return ag::add(reg, ag::scale(pa, lambda));
}

ag::Var ce_loss_variant(const ag::Var& f_t, const CellLabels& labels, const nn::Linear& classifier,
                        std::span<const int> cells) {
  const Tensor& v = f_t->value;
  if (v.rank() != 3 || v.dim(1) != labels.height || v.dim(2) != labels.width)
    throw InvalidInput("label grid does not match the feature grid " + v.shape_string());
  const int n = classifier.weight->value.dim(1);
  std::vector<int> y;
  y.reserve(cells.size());
  for (int c : cells) {
    const int label = labels.labels.at(static_cast<std::size_t>(c));
    if (label >= n)
      throw InvalidConfiguration("label " + std::to_string(label) + " outside the " + std::to_string(n) +
                                 "-class classifier");
    y.push_back(label);
  }
  ag::Var tokens = ag::to_tokens(f_t);
  if (cells.size() != labels.labels.size()) tokens = ag::select_rows(tokens, cells);
  return ag::cross_entropy_rows(classifier(tokens), y);
}

}  // namespace tdc::objectives
