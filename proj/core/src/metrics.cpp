#include "tdcount/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"

namespace tdc::metrics {
namespace {

void check_point(const Point& p, int height, int width) {
  if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height))
    throw InvalidInput("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                       ") outside " + std::to_string(height) + "x" + std::to_string(width) +
                       " image");
}

void check_counts(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidInput("count lists must be nonempty");
  if (a.size() != b.size()) throw InvalidInput("count lists differ in length");
}

// Truncated 1-D Gaussian taps evaluated at pixel centers of [lo, hi].
struct Taps {
  int lo = 0;
  std::vector<double> w;
  double total = 0.0;
};

Taps axis_taps(double center, double sigma, int extent) {
  const double radius = 4.0 * sigma;
  Taps t;
  // Pixel k is inside the window when |k + 0.5 - center| <= radius.
  t.lo = std::max(0, static_cast<int>(std::ceil(center - radius - 0.5)));
  const int hi = std::min(extent - 1, static_cast<int>(std::floor(center + radius - 0.5)));
  for (int k = t.lo; k <= hi; ++k) {
    const double d = k + 0.5 - center;
    const double v = std::exp(-d * d / (2.0 * sigma * sigma));
    t.w.push_back(v);
    t.total += v;
  }
  return t;
}

double parse_double(std::string_view s, const std::filesystem::path& path, int line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw ParseError(path.string() + ":" + std::to_string(line) + ": bad number '" +
                     std::string(s) + "'");
  return v;
}

}  // namespace

PointSet::PointSet(int height, int width, std::vector<Point> points)
    : height_(height), width_(width), points_(std::move(points)) {
  if (height <= 0 || width <= 0) throw InvalidParameter("PointSet: image size must be positive");
  for (const auto& p : points_) check_point(p, height_, width_);
}

void PointSet::add(Point p) {
  check_point(p, height_, width_);
  points_.push_back(p);
}

DensityMap::DensityMap(int height, int width, double fill)
    : height_(height), width_(width),
      values_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {
  if (height <= 0 || width <= 0) throw InvalidParameter("DensityMap: size must be positive");
}

DensityMap DensityMap::from_values(int height, int width, std::vector<double> values) {
  DensityMap d(height, width);
  if (values.size() != d.values_.size()) throw InvalidInput("DensityMap: value count mismatch");
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("DensityMap: negative or non-finite value");
  d.values_ = std::move(values);
  return d;
}

double DensityMap::mass() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s;
}

double DensityMap::min_value() const {
  return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end());
}

DensityMap rasterize_density(const PointSet& points, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidParameter("rasterize_density: sigma must be > 0");
  DensityMap out(points.height(), points.width());
  for (const Point& p : points.points()) {
    check_point(p, points.height(), points.width());
    const Taps ty = axis_taps(p.y, sigma, points.height());
    const Taps tx = axis_taps(p.x, sigma, points.width());
    const double norm = ty.total * tx.total;
    for (std::size_t i = 0; i < ty.w.size(); ++i) {
      const int row = ty.lo + static_cast<int>(i);
      const double wy = ty.w[i] / norm;
      for (std::size_t j = 0; j < tx.w.size(); ++j)
        out.at(row, tx.lo + static_cast<int>(j)) += wy * tx.w[j];
    }
  }
  return out;
}

GridPartition partition_regions(int height, int width, int level) {
  if (level < 0) throw InvalidParameter("partition_regions: level must be >= 0");
  if (level > 30 || height < (1 << level) || width < (1 << level))
    throw InvalidParameter("partition_regions: level " + std::to_string(level) +
                           " too fine for " + std::to_string(height) + "x" +
                           std::to_string(width));
  GridPartition part;
  part.level = level;
  part.regions.push_back({0, height, 0, width});
  for (int l = 0; l < level; ++l) {
    std::vector<Region> next;
    next.reserve(part.regions.size() * 4);
    for (const Region& r : part.regions) {
      const int rm = r.row0 + (r.row1 - r.row0 + 1) / 2;
      const int cm = r.col0 + (r.col1 - r.col0 + 1) / 2;
      next.push_back({r.row0, rm, r.col0, cm});
      next.push_back({r.row0, rm, cm, r.col1});
      next.push_back({rm, r.row1, r.col0, cm});
      next.push_back({rm, r.row1, cm, r.col1});
    }
    part.regions = std::move(next);
  }
  return part;
}

double game(const DensityMap& pred, const PointSet& gt, int level) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw InvalidInput("game: prediction is " + std::to_string(pred.height()) + "x" +
                       std::to_string(pred.width()) + " but annotations are " +
                       std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
  const GridPartition part = partition_regions(pred.height(), pred.width(), level);
  double total = 0.0;
  for (const Region& r : part.regions) {
    double p = 0.0;
    for (int row = r.row0; row < r.row1; ++row)
      for (int col = r.col0; col < r.col1; ++col) p += pred.at(row, col);
    std::size_t g = 0;
    for (const Point& pt : gt.points()) {
      const int row = static_cast<int>(std::floor(pt.y));
      const int col = static_cast<int>(std::floor(pt.x));
      if (row >= r.row0 && row < r.row1 && col >= r.col0 && col < r.col1) ++g;
    }
    total += std::abs(p - static_cast<double>(g));
  }
  return total;
}

double rmse(std::span<const double> pred_counts, std::span<const double> gt_counts) {
  check_counts(pred_counts, gt_counts);
  double s = 0.0;
  for (std::size_t i = 0; i < pred_counts.size(); ++i) {
    const double d = pred_counts[i] - gt_counts[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred_counts.size()));
}

double mae(std::span<const double> pred_counts, std::span<const double> gt_counts) {
  check_counts(pred_counts, gt_counts);
  double s = 0.0;
  for (std::size_t i = 0; i < pred_counts.size(); ++i) s += std::abs(pred_counts[i] - gt_counts[i]);
  return s / static_cast<double>(pred_counts.size());
}

DensityMap spread_cells(const Tensor& cells, int stride) {
  if (stride < 1) throw InvalidParameter("spread_cells: stride must be >= 1");
  int h = 0, w = 0;
  if (cells.rank() == 3 && cells.dim(0) == 1) {
    h = cells.dim(1);
    w = cells.dim(2);
  } else if (cells.rank() == 2) {
    h = cells.dim(0);
    w = cells.dim(1);
  } else {
    throw InvalidInput("spread_cells: expected (1,h,w) or (h,w), got " + cells.shape_string());
  }
  DensityMap out(h * stride, w * stride);
  const double area = static_cast<double>(stride) * stride;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double v = cells[static_cast<std::size_t>(r) * w + c];
      if (v < 0.0) throw InvalidInput("spread_cells: negative cell mass");
      for (int dy = 0; dy < stride; ++dy)
        for (int dx = 0; dx < stride; ++dx) out.at(r * stride + dy, c * stride + dx) = v / area;
    }
  return out;
}

Tensor pool_cells(const DensityMap& density, int stride) {
  if (stride < 1 || density.height() % stride || density.width() % stride)
    throw InvalidInput("pool_cells: " + std::to_string(density.height()) + "x" +
                       std::to_string(density.width()) + " not divisible by stride " +
                       std::to_string(stride));
  const int h = density.height() / stride, w = density.width() / stride;
  Tensor out({1, h, w});
  for (int r = 0; r < density.height(); ++r)
    for (int c = 0; c < density.width(); ++c) out.at(0, r / stride, c / stride) += density.at(r, c);
  return out;
}

PointSet read_points_csv(const std::filesystem::path& path, int height, int width) {
  const std::string text = binio::read_file(path);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file (missing x,y header)");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y") throw ParseError(path.string() + ": expected header 'x,y', got '" + line + "'");
  PointSet ps(height, width);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected two columns");
    const std::string_view sv(line);
    Point p{parse_double(sv.substr(0, comma), path, lineno),
            parse_double(sv.substr(comma + 1), path, lineno)};
    try {
      ps.add(p);
    } catch (const InvalidInput& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ps;
}

void write_points_csv(const std::filesystem::path& path, const PointSet& points) {
  std::string out = "x,y\n";
  char buf[64];
  for (const Point& p : points.points()) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.x, p.y);
    out += buf;
  }
  binio::write_file(path, out);
}

DensityMap read_density(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  if (h == 0 || w == 0 || h > 65536 || w > 65536) r.fail("implausible density map size");
  std::vector<double> vals(static_cast<std::size_t>(h) * w);
  for (double& v : vals) v = r.f32();
  if (!r.at_end()) r.fail("trailing bytes after density grid");
  return DensityMap::from_values(static_cast<int>(h), static_cast<int>(w), std::move(vals));
}

void write_density(const std::filesystem::path& path, const DensityMap& density) {
  binio::Writer w;
  w.u32(static_cast<std::uint32_t>(density.height()));
  w.u32(static_cast<std::uint32_t>(density.width()));
  for (double v : density.values()) w.f32(static_cast<float>(v));
  w.save(path);
}

}  // namespace tdc::metrics
