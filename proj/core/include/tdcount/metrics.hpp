#pragma once

// Ground-truth density rasterization and the GAME / RMSE / MAE metric suite.
//
// Pixel (row i, col j) covers [j, j+1) x [i, i+1); its center sits at
// (j + 0.5, i + 0.5). A point at (x, y) belongs to pixel (floor(y), floor(x)).

#include <filesystem>
#include <span>
#include <vector>

#include "tdcount/tensor.hpp"

namespace tdc::metrics {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

// Annotated head positions for one image. Construction validates bounds.
class PointSet {
 public:
  PointSet() = default;
  PointSet(int height, int width, std::vector<Point> points = {});

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t count() const { return points_.size(); }
  const std::vector<Point>& points() const { return points_; }
  void add(Point p);

  friend bool operator==(const PointSet&, const PointSet&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Point> points_;
};

// Nonnegative H x W grid; values are persons per pixel.
class DensityMap {
 public:
  DensityMap() = default;
  DensityMap(int height, int width, double fill = 0.0);
  static DensityMap from_values(int height, int width, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  double& at(int row, int col) { return values_[static_cast<std::size_t>(row) * width_ + col]; }
  double at(int row, int col) const {
    return values_[static_cast<std::size_t>(row) * width_ + col];
  }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  // Row-major sum; the same order game() uses, so mass() == region sum at L = 0.
  double mass() const;
  double min_value() const;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

// Half-open box [row0, row1) x [col0, col1).
struct Region {
  int row0, row1, col0, col1;
  friend bool operator==(const Region&, const Region&) = default;
};

struct GridPartition {
  int level = 0;
  std::vector<Region> regions;
};

// One truncated (4 sigma window) isotropic Gaussian per point, renormalized so
// that every point contributes exactly unit mass even at the border.
DensityMap rasterize_density(const PointSet& points, double sigma);

// Recursive quadrant split; when a side is odd the first half takes ceil.
GridPartition partition_regions(int height, int width, int level);

// Single-image GAME term: sum over 4^L regions of |pred mass - gt points|.
double game(const DensityMap& pred, const PointSet& gt, int level);

double rmse(std::span<const double> pred_counts, std::span<const double> gt_counts);
double mae(std::span<const double> pred_counts, std::span<const double> gt_counts);

// Expands a (1, h, w) or (h, w) per-cell count grid to pixel resolution by
// spreading each cell's mass uniformly over its stride x stride block.
DensityMap spread_cells(const Tensor& cells, int stride);

// Sums pixel mass over stride x stride blocks; returns shape (1, H/s, W/s).
Tensor pool_cells(const DensityMap& density, int stride);

// `x,y` CSV, one row per person.
PointSet read_points_csv(const std::filesystem::path& path, int height, int width);
void write_points_csv(const std::filesystem::path& path, const PointSet& points);

// uint32 H, uint32 W (little-endian) followed by H*W float32 values.
DensityMap read_density(const std::filesystem::path& path);
void write_density(const std::filesystem::path& path, const DensityMap& density);

}  // namespace tdc::metrics
