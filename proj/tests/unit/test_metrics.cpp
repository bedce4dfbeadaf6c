#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "tdcount/errors.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/rng.hpp"

using namespace tdc;
using namespace tdc::metrics;

namespace {

PointSet random_points(Rng& rng, int h, int w, int n, bool border) {
  PointSet ps(h, w);
  for (int i = 0; i < n; ++i) {
    if (border && rng.bernoulli(0.3)) {
      const double along = rng.uniform(0.0, 1.0);
      switch (rng.uniform_int(0, 3)) {
        case 0: ps.add({0.0, along * h}); break;
        case 1: ps.add({std::nextafter(double(w), 0.0), along * h}); break;
        case 2: ps.add({along * w, 0.0}); break;
        default: ps.add({along * w, std::nextafter(double(h), 0.0)}); break;
      }
    } else {
      ps.add({rng.uniform(0.0, w), rng.uniform(0.0, h)});
    }
  }
  return ps;
}

DensityMap random_density(Rng& rng, int h, int w, double scale) {
  DensityMap d(h, w);
  for (double& v : d.values()) v = scale * rng.uniform();
  return d;
}

// Direct 2-D sum of the truncated kernel over pixel centers inside the window.
double truncated_kernel_mass(double px, double py, int h, int w, double sigma) {
  double total = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double dx = c + 0.5 - px;
      const double dy = r + 0.5 - py;
      if (std::abs(dx) <= 4 * sigma && std::abs(dy) <= 4 * sigma)
        total += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
  return total;
}

}  // namespace

TEST(Rasterize, EmptyPointSetIsZero) {
  const DensityMap d = rasterize_density(PointSet(64, 64), 4.0);
  EXPECT_EQ(d.mass(), 0.0);
  EXPECT_EQ(d.min_value(), 0.0);
}

TEST(Rasterize, SingleInteriorPointHasUnitMass) {
  const DensityMap d = rasterize_density(PointSet(64, 64, {{32, 32}}), 4.0);
  EXPECT_NEAR(d.mass(), 1.0, 1e-6);
}

TEST(Rasterize, CornerPointIsRenormalised) {
  const double sigma = 4.0;
  const DensityMap d = rasterize_density(PointSet(64, 64, {{0, 0}}), sigma);
  EXPECT_NEAR(d.mass(), 1.0, 1e-6);

  const double corner = truncated_kernel_mass(0, 0, 64, 64, sigma);
  const double interior = truncated_kernel_mass(32, 32, 64, 64, sigma);
  EXPECT_NEAR(corner / interior, 0.25, 1e-3);

  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 20; ++c) {
      const double dx = c + 0.5, dy = r + 0.5;
      const double expected = (dx <= 4 * sigma && dy <= 4 * sigma)
                                  ? std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / corner
                                  : 0.0;
      EXPECT_NEAR(d.at(r, c), expected, 1e-12) << r << "," << c;
    }
}

TEST(Rasterize, RejectsBadInput) {
  EXPECT_THROW(rasterize_density(PointSet(8, 8, {{1, 1}}), 0.0), InvalidParameter);
  EXPECT_THROW(rasterize_density(PointSet(8, 8, {{1, 1}}), -1.0), InvalidParameter);
  EXPECT_THROW(PointSet(8, 8, {{8.0, 1.0}}), InvalidInput);
  EXPECT_THROW(PointSet(8, 8, {{1.0, -0.1}}), InvalidInput);
}

TEST(Rasterize, MassConservationProperty) {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(8, 80));
    const int w = static_cast<int>(rng.uniform_int(8, 80));
    const PointSet ps = random_points(rng, h, w, static_cast<int>(rng.uniform_int(0, 30)), true);
    const double sigma = rng.uniform(1.0, 8.0);
    const DensityMap d = rasterize_density(ps, sigma);
    ASSERT_NEAR(d.mass(), static_cast<double>(ps.count()), 1e-6);
    ASSERT_GE(d.min_value(), 0.0);
  }
}

TEST(Partition, LevelZeroCoversImage) {
  const auto p = partition_regions(64, 64, 0);
  ASSERT_EQ(p.regions.size(), 1u);
  EXPECT_EQ(p.regions[0], (Region{0, 64, 0, 64}));
}

TEST(Partition, LevelOneQuadrants) {
  const auto p = partition_regions(64, 64, 1);
  ASSERT_EQ(p.regions.size(), 4u);
  for (const auto& r : p.regions) {
    EXPECT_EQ(r.row1 - r.row0, 32);
    EXPECT_EQ(r.col1 - r.col0, 32);
  }
}

TEST(Partition, OddSideGivesExtraToFirstHalf) {
  const auto p = partition_regions(5, 5, 1);
  ASSERT_EQ(p.regions.size(), 4u);
  std::vector<std::pair<int, int>> sizes;
  for (const auto& r : p.regions) sizes.emplace_back(r.row1 - r.row0, r.col1 - r.col0);
  EXPECT_EQ(sizes, (std::vector<std::pair<int, int>>{{3, 3}, {3, 2}, {2, 3}, {2, 2}}));
}

TEST(Partition, TooFineIsRejected) {
  EXPECT_THROW(partition_regions(3, 64, 2), InvalidParameter);
  EXPECT_THROW(partition_regions(64, 64, -1), InvalidParameter);
}

TEST(Partition, TilesImageExactlyProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(1, 97));
    const int w = static_cast<int>(rng.uniform_int(1, 53));
    int max_level = 0;
    while ((2 << max_level) <= std::min(h, w)) ++max_level;
    const int level = static_cast<int>(rng.uniform_int(0, std::min(max_level, 4)));
    const auto p = partition_regions(h, w, level);
    ASSERT_EQ(p.regions.size(), static_cast<std::size_t>(1) << (2 * level));
    std::vector<int> owner(static_cast<std::size_t>(h * w), 0);
    for (const auto& r : p.regions) {
      ASSERT_LT(r.row0, r.row1);
      ASSERT_LT(r.col0, r.col1);
      for (int y = r.row0; y < r.row1; ++y)
        for (int x = r.col0; x < r.col1; ++x) ++owner[static_cast<std::size_t>(y * w + x)];
    }
    for (int o : owner) ASSERT_EQ(o, 1);
  }
}

TEST(Game, HandExampleLevelOne) {
  const PointSet gt(8, 8, {{1, 1}, {6, 6}});
  const DensityMap pred(8, 8, 2.0 / 64.0);
  EXPECT_NEAR(game(pred, gt, 1), 2.0, 1e-9);
}

TEST(Game, RasterizedTruthScoresZeroAtLevelZero) {
  Rng rng(3);
  const PointSet gt = random_points(rng, 64, 64, 17, true);
  EXPECT_LE(game(rasterize_density(gt, 4.0), gt, 0), 1e-6);
}

TEST(Game, BoundaryPointUsesFloorCell) {
  // x = 4 lies on the boundary between the left and right halves; it belongs right.
  const PointSet gt(8, 8, {{4.0, 1.0}});
  DensityMap pred(8, 8);
  pred.at(1, 4) = 1.0;
  EXPECT_EQ(game(pred, gt, 1), 0.0);
}

TEST(Game, SizeMismatchIsRejected) {
  EXPECT_THROW(game(DensityMap(8, 8), PointSet(8, 9), 0), InvalidInput);
}

TEST(Game, MonotoneInLevelAndEqualsMaeProperty) {
  Rng rng(11);
  std::vector<double> pred_totals, gt_totals, game0;
  for (int i = 0; i < 100; ++i) {
    const int h = static_cast<int>(rng.uniform_int(16, 64));
    const int w = static_cast<int>(rng.uniform_int(16, 64));
    const PointSet gt = random_points(rng, h, w, static_cast<int>(rng.uniform_int(0, 40)), true);
    const DensityMap pred = random_density(rng, h, w, rng.uniform(0.0, 0.02));
    double prev = -1.0;
    for (int l = 0; l <= 3; ++l) {
      const double g = game(pred, gt, l);
      ASSERT_GE(g, prev - 1e-9);
      prev = g;
    }
    pred_totals.push_back(pred.mass());
    gt_totals.push_back(static_cast<double>(gt.count()));
    game0.push_back(game(pred, gt, 0));
  }
  double mean_game0 = 0.0;
  for (double g : game0) mean_game0 += g;
  mean_game0 /= static_cast<double>(game0.size());
  EXPECT_EQ(mae(pred_totals, gt_totals), mean_game0);
}

TEST(CountErrors, ClosedForms) {
  const std::vector<double> a{1, 2, 3}, b{2, 4, 0};
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(mae(a, a), 0.0);
  EXPECT_DOUBLE_EQ(rmse(std::vector<double>{5.0}, std::vector<double>{3.0}), 2.0);
  EXPECT_DOUBLE_EQ(mae(std::vector<double>{5.0}, std::vector<double>{3.0}), 2.0);
  EXPECT_NEAR(rmse(a, b), std::sqrt(14.0 / 3.0), 1e-12);
  EXPECT_NEAR(rmse(a, b), 2.1602, 1e-4);
}

TEST(CountErrors, EmptyOrMismatchedListsAreRejected) {
  const std::vector<double> none, one{1.0}, two{1.0, 2.0};
  EXPECT_THROW(rmse(none, none), InvalidInput);
  EXPECT_THROW(mae(none, none), InvalidInput);
  EXPECT_THROW(mae(one, two), InvalidInput);
}

TEST(CountErrors, RmseDominatesMaeProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 20));
    std::vector<double> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0, 50);
      g[i] = rng.uniform(0, 50);
    }
    ASSERT_GE(rmse(p, g) + 1e-12, mae(p, g));
  }
}

TEST(CellGrids, SpreadAndPoolPreserveMass) {
  Rng rng(9);
  Tensor cells({1, 4, 5});
  for (double& v : cells.storage()) v = rng.uniform();
  const DensityMap d = spread_cells(cells, 4);
  EXPECT_EQ(d.height(), 16);
  EXPECT_EQ(d.width(), 20);
  const Tensor pooled = pool_cells(d, 4);
  for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_NEAR(pooled[i], cells[i], 1e-12);
}

TEST(MetricsIo, PointsCsvRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "tdcount_test_points";
  std::filesystem::create_directories(dir);
  const PointSet ps(32, 40, {{0.5, 1.25}, {39.999, 31.5}, {1.0 / 3.0, 2.0 / 7.0}});
  write_points_csv(dir / "points.csv", ps);
  EXPECT_EQ(read_points_csv(dir / "points.csv", 32, 40), ps);

  std::ofstream(dir / "bad.csv") << "x,y\n1.0,abc\n";
  EXPECT_THROW(read_points_csv(dir / "bad.csv", 32, 40), ParseError);
  std::filesystem::remove_all(dir);
}

TEST(MetricsIo, DensityFileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "tdcount_test_density.bin";
  const DensityMap d = rasterize_density(PointSet(12, 10, {{3, 4}}), 2.0);
  write_density(path, d);
  const DensityMap back = read_density(path);
  ASSERT_EQ(back.height(), 12);
  ASSERT_EQ(back.width(), 10);
  for (std::size_t i = 0; i < d.values().size(); ++i)
    EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(d.values()[i])));
  std::filesystem::remove(path);
}
