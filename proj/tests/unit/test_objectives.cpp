#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "gradcheck.hpp"
#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/objectives.hpp"

using namespace tdc;
using namespace tdc::objectives;
namespace fs = std::filesystem;

namespace {

PrototypeBank basis_bank(int n, int dim) {
  PrototypeBank b{n, dim, Tensor({n, dim}), "basis"};
  for (int c = 0; c < n; ++c) b.vectors.at(c, c) = 1.0;
  return b;
}

CellLabels random_labels(int h, int w, int n, std::uint64_t seed) {
  Rng rng(seed);
  CellLabels l{h, w, {}};
  for (int i = 0; i < h * w; ++i) l.labels.push_back(static_cast<int>(rng.uniform_int(0, n - 1)));
  return l;
}

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_tensor(std::move(shape));
}

double pa_value(const Tensor& f_t, const CellLabels& labels, const PrototypeBank& bank, const PAProjection& proj,
                const PAConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return pa_loss(ag::constant(f_t), labels, bank, proj, cfg, rng)->value[0];
}

}  // namespace

TEST(Bank, RandomOrthogonalIsOrthonormal) {
  const auto b = PrototypeBank::random_orthogonal(7, 16, 3);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      double dot = 0.0;
      for (int d = 0; d < 16; ++d) dot += b.vectors.at(i, d) * b.vectors.at(j, d);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
    }
  EXPECT_EQ(PrototypeBank::random_orthogonal(7, 16, 3).vectors, b.vectors);
  EXPECT_THROW(PrototypeBank::random_orthogonal(17, 16, 3), InvalidParameter);
}

TEST(Bank, FileRoundTripRenormalises) {
  const fs::path path = fs::temp_directory_path() / "tdcount_test_bank.tdcb";
  auto b = PrototypeBank::random_orthogonal(4, 8, 1);
  b.save(path);
  const auto loaded = PrototypeBank::load(path);
  EXPECT_EQ(loaded.n, 4);
  EXPECT_EQ(loaded.dim, 8);
  for (std::size_t i = 0; i < b.vectors.size(); ++i) EXPECT_NEAR(loaded.vectors[i], b.vectors[i], 1e-6);

  for (double& v : b.vectors.storage()) v *= 2.0;
  b.save(path);
  ::testing::internal::CaptureStderr();
  const auto scaled = PrototypeBank::load(path);
  const std::string warning = ::testing::internal::GetCapturedStderr();
  EXPECT_NE(warning.find("renormalising"), std::string::npos);
  for (int i = 0; i < 4; ++i) {
    double norm = 0.0;
    for (int d = 0; d < 8; ++d) norm += scaled.vectors.at(i, d) * scaled.vectors.at(i, d);
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }

  binio::write_file(path, "TDCB");
  EXPECT_THROW(PrototypeBank::load(path), ParseError);
  fs::remove(path);
  EXPECT_THROW(PrototypeBank::load(path), MissingArtifact);
}

TEST(PAConfigTest, Validation) {
  PAConfig c;
  EXPECT_NO_THROW(c.validate());
  c.kappa = 0.0;
  EXPECT_THROW(c.validate(), InvalidConfiguration);
  c = PAConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), InvalidConfiguration);
  EXPECT_EQ(PAConfig{}.lambda, 1.0);
}

TEST(LocalCounts, Examples) {
  const auto zero = local_counts(metrics::DensityMap(16, 16), 4, 6);
  for (int v : zero.labels) EXPECT_EQ(v, 0);

  metrics::DensityMap one(16, 16);
  for (int r = 4; r < 8; ++r)
    for (int c = 8; c < 12; ++c) one.at(r, c) = 1.0 / 16.0;
  const auto l = local_counts(one, 4, 6);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(l.at(r, c), (r == 1 && c == 2) ? 1 : 0);

  metrics::DensityMap crowded(4, 4, 7.4 / 16.0);
  EXPECT_EQ(local_counts(crowded, 4, 6).at(0, 0), 5);
  metrics::DensityMap half(4, 4, 0.5 / 16.0);
  EXPECT_EQ(local_counts(half, 4, 6).at(0, 0), 1);

  EXPECT_THROW(local_counts(metrics::DensityMap(10, 16), 4, 6), InvalidInput);
}

TEST(LocalCounts, LabelsStayBelowBankSize) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    metrics::PointSet ps(32, 32);
    const auto count = rng.uniform_int(0, 60);
    for (int i = 0; i < count; ++i) ps.add({rng.uniform(0, 32), rng.uniform(0, 32)});
    const int n = static_cast<int>(rng.uniform_int(1, 8));
    ASSERT_LT(local_counts(metrics::rasterize_density(ps, 4.0), 4, n).max_label(), n);
  }
}

TEST(PALoss, SingleClassIsZero) {
  const auto bank = basis_bank(1, 4);
  const ag::Var e = ag::constant(random_tensor({10, 4}, 1));
  const std::vector<int> y(10, 0);
  EXPECT_EQ(pa_loss_embedded(e, y, bank, 0.07)->value[0], 0.0);
}

TEST(PALoss, UniformSimilarityIsLogN) {
  const auto bank = basis_bank(6, 8);
  Tensor e({3, 8});
  for (int r = 0; r < 3; ++r) e.at(r, 7) = 1.0 + r;
  const std::vector<int> y{0, 3, 5};
  EXPECT_NEAR(pa_loss_embedded(ag::constant(e), y, bank, 0.07)->value[0], std::log(6.0), 1e-12);
  EXPECT_NEAR(pa_loss_embedded(ag::constant(e), y, bank, 0.07)->value[0], 1.791759, 1e-6);
}

TEST(PALoss, OrthogonalPrototypeClosedForm) {
  const auto bank = basis_bank(2, 2);
  const Tensor e = Tensor::from({1, 2}, {1.0, 0.0});
  const std::vector<int> y{0};
  const double expected = std::log1p(std::exp(-1.0 / 0.07));
  EXPECT_NEAR(pa_loss_embedded(ag::constant(e), y, bank, 0.07)->value[0], expected, 1e-9);
  EXPECT_NEAR(expected, 6.2e-7, 1e-8);
}

TEST(PALoss, PositiveForSeveralClasses) {
  const auto bank = PrototypeBank::random_orthogonal(5, 16, 2);
  Rng prng(1);
  const PAProjection proj(8, 16, prng);
  PAConfig cfg;
  cfg.n = 5;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double v = pa_value(random_tensor({8, 4, 4}, s), random_labels(4, 4, 5, s), bank, proj, cfg, s);
    ASSERT_GT(v, 0.0);
  }
}

TEST(PALoss, InvariantToPerCellPositiveRescaling) {
  const auto bank = PrototypeBank::random_orthogonal(6, 16, 2);
  Rng prng(1);
  const PAProjection proj(8, 16, prng);
  const Tensor f = random_tensor({8, 4, 4}, 3);
  Tensor scaled = f;
  Rng rng(4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double k = rng.uniform(0.1, 10.0);
      for (int c = 0; c < 8; ++c) scaled.at(c, y, x) *= k;
    }
  const auto labels = random_labels(4, 4, 6, 5);
  EXPECT_NEAR(pa_value(f, labels, bank, proj, PAConfig{}, 1), pa_value(scaled, labels, bank, proj, PAConfig{}, 1),
              1e-12);
}

TEST(PALoss, AllCellsIgnoresSeed) {
  const auto bank = PrototypeBank::random_orthogonal(6, 16, 2);
  Rng prng(1);
  const PAProjection proj(8, 16, prng);
  const Tensor f = random_tensor({8, 4, 4}, 3);
  const auto labels = random_labels(4, 4, 6, 5);
  EXPECT_EQ(pa_value(f, labels, bank, proj, PAConfig{}, 1), pa_value(f, labels, bank, proj, PAConfig{}, 2));

  PAConfig sub;
  sub.samples_per_image = 5;
  EXPECT_NE(pa_value(f, labels, bank, proj, sub, 1), pa_value(f, labels, bank, proj, sub, 2));
}

TEST(PALoss, MismatchesAreRejected) {
  const auto bank = PrototypeBank::random_orthogonal(4, 16, 2);
  Rng prng(1);
  const PAProjection proj(8, 16, prng);
  const Tensor f = random_tensor({8, 4, 4}, 3);
  EXPECT_THROW(pa_value(f, random_labels(4, 4, 4, 1), bank, proj, PAConfig{}, 1), InvalidConfiguration);
  PAConfig cfg;
  cfg.n = 4;
  EXPECT_THROW(pa_value(f, random_labels(4, 4, 6, 1), bank, proj, cfg, 1), InvalidConfiguration);
}

TEST(SampleCells, WithoutReplacement) {
  Rng rng(1);
  const auto all = sample_cells(16, 0, rng);
  EXPECT_EQ(all.size(), 16u);
  const auto some = sample_cells(256, 40, rng);
  ASSERT_EQ(some.size(), 40u);
  for (std::size_t i = 1; i < some.size(); ++i) EXPECT_LT(some[i - 1], some[i]);
  EXPECT_THROW(sample_cells(16, 17, rng), InvalidConfiguration);
}

TEST(PALoss, GradientMatchesFiniteDifferences) {
  const auto bank = PrototypeBank::random_orthogonal(6, 16, 2);
  Rng prng(1);
  const PAProjection proj(8, 16, prng);
  const ag::Var f = ag::parameter(random_tensor({8, 4, 4}, 3));
  const auto labels = random_labels(4, 4, 6, 5);
  auto loss = [&] {
    Rng rng(1);
    return pa_loss(f, labels, bank, proj, PAConfig{}, rng);
  };
  const auto r = tdc::testing::check_gradients(loss, {f, proj.linear.weight}, 64, 7);
  EXPECT_GE(r.checked, 32);
  EXPECT_LE(r.max_rel_error, 1e-5);
}

TEST(RegLoss, ClosedForms) {
  const Tensor gt = random_tensor({1, 16, 16}, 1);
  EXPECT_EQ(reg_loss(ag::constant(gt), gt)->value[0], 0.0);

  Tensor pred = gt;
  for (double& v : pred.storage()) v += 0.1;
  const auto parts = reg_loss(ag::constant(pred), gt, 0.0)->value[0];
  EXPECT_NEAR(parts, 0.01, 1e-12);
  EXPECT_NEAR(reg_loss(ag::constant(pred), gt)->value[0], 0.01 + 0.01 * 25.6, 1e-12);
  EXPECT_THROW(reg_loss(ag::constant(Tensor({1, 4, 4})), gt), InvalidInput);
}

TEST(RegLoss, MatchesScriptedOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor a = random_tensor({1, 8, 12}, 2 * s);
    const Tensor b = random_tensor({1, 8, 12}, 2 * s + 1);
    double sq = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sq += (a[i] - b[i]) * (a[i] - b[i]);
      sa += a[i];
      sb += b[i];
    }
    const double oracle = sq / static_cast<double>(a.size()) + 0.01 * std::abs(sa - sb);
    EXPECT_NEAR(reg_loss(ag::constant(a), b)->value[0], oracle, 1e-9);
  }
}

TEST(RegLoss, GradientMatchesFiniteDifferences) {
  const ag::Var pred = ag::parameter(random_tensor({1, 8, 8}, 4));
  const Tensor gt = random_tensor({1, 8, 8}, 5);
  const auto r = tdc::testing::check_gradients([&] { return reg_loss(pred, gt); }, {pred}, 64, 2);
  EXPECT_GE(r.checked, 32);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(TotalLoss, Combination) {
  const ag::Var reg = ag::constant(Tensor({1}, 2.5));
  const ag::Var pa = ag::constant(Tensor({1}, 0.5));
  EXPECT_EQ(total_loss(reg, pa, 1.0)->value[0], 3.0);
  EXPECT_EQ(total_loss(reg, pa, 0.0)->value[0], 2.5);
  EXPECT_EQ(total_loss(reg, pa, 0.0), reg);
  EXPECT_EQ(total_loss(reg, nullptr, 1.0), reg);
}

TEST(CrossEntropyVariant, ClosedForms) {
  Rng rng(1);
  const CellLabels one{1, 1, {0}};
  const std::vector<int> cells{0};

  nn::Linear ident(2, 2, rng);
  ident.weight->value = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto ce = [&](double a, double b) {
    return ce_loss_variant(ag::constant(Tensor::from({2, 1, 1}, {a, b})), one, ident, cells)->value[0];
  };
  EXPECT_NEAR(ce(1.0, 0.0), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(ce(1.0, 0.0), 0.3133, 1e-4);
  EXPECT_LT(ce(20.0, 0.0), 1e-8);

  nn::Linear flat(3, 6, rng);
  flat.weight->value.fill(0.0);
  const CellLabels labels{2, 2, {0, 1, 4, 5}};
  const std::vector<int> all{0, 1, 2, 3};
  EXPECT_NEAR(ce_loss_variant(ag::constant(random_tensor({3, 2, 2}, 1)), labels, flat, all)->value[0],
              std::log(6.0), 1e-12);
}
