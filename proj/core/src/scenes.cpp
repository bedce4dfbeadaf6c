#include "tdcount/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/kv.hpp"
#include "tdcount/rng.hpp"

namespace tdc::scenes {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSilhouetteLift = 0.25;
constexpr double kEdgeSoftness = 0.15;

// Background depth along the vertical far-to-near gradient.
double background_depth(double y, int height, double perspective) {
  return 0.4 + perspective * 0.6 * ((y / height) - 0.5);
}

// Soft-edged ellipse occupancy in [0, 1] at offset (u, v) from its center.
double ellipse_occupancy(double u, double v, double semi_a, double semi_b, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double ru = (c * u + s * v) / semi_a;
  const double rv = (-s * u + c * v) / semi_b;
  const double rho = std::sqrt(ru * ru + rv * rv);
  return 1.0 / (1.0 + std::exp((rho - 1.0) / kEdgeSoftness));
}

struct Blob {
  double x, y, semi_a, semi_b, angle, intensity;
};

void stamp_thermal(Tensor& thermal, const Blob& b) {
  const int h = thermal.dim(1), w = thermal.dim(2);
  const double reach = 2.0 * std::max(b.semi_a, b.semi_b) + 1.0;
  const int r0 = std::max(0, static_cast<int>(b.y - reach)), r1 = std::min(h - 1, static_cast<int>(b.y + reach));
  const int c0 = std::max(0, static_cast<int>(b.x - reach)), c1 = std::min(w - 1, static_cast<int>(b.x + reach));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      thermal.at(0, r, c) += b.intensity * ellipse_occupancy(c + 0.5 - b.x, r + 0.5 - b.y,
                                                             b.semi_a, b.semi_b, b.angle);
}

// Upright body silhouette raised toward the camera, head at (x, y).
void stamp_silhouette(Tensor& depth, double x, double y, double radius, double person_depth) {
  const int h = depth.dim(1), w = depth.dim(2);
  const double cy = y + 0.8 * radius;
  const double sa = 1.1 * radius, sb = 1.9 * radius;
  const double reach = 2.0 * sb + 1.0;
  const int r0 = std::max(0, static_cast<int>(cy - reach)), r1 = std::min(h - 1, static_cast<int>(cy + reach));
  const int c0 = std::max(0, static_cast<int>(x - reach)), c1 = std::min(w - 1, static_cast<int>(x + reach));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double occ = ellipse_occupancy(c + 0.5 - x, r + 0.5 - cy, sa, sb, 0.0);
      const double lifted = person_depth + kSilhouetteLift * occ;
      depth.at(0, r, c) = std::max(depth.at(0, r, c), lifted);
    }
}

void clip01(Tensor& t) {
  for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
}

double sample_bilinear(const Tensor& g, double x, double y) {
  const int h = g.dim(1), w = g.dim(2);
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1.0 - fx) * g.at(0, y0, x0) + fx * g.at(0, y0, x1);
  const double bot = (1.0 - fx) * g.at(0, y1, x0) + fx * g.at(0, y1, x1);
  return (1.0 - fy) * top + fy * bot;
}

Tensor as_chw(const Tensor& t) {
  if (t.rank() == 3 && t.dim(0) == 1) return t;
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  throw InvalidInput("expected an (H, W) or (1, H, W) grid, got " + t.shape_string());
}

std::string scene_id(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05lld", static_cast<long long>(index));
  return buf;
}

const std::map<std::string, std::string>::const_iterator require(
    const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw InvalidConfiguration("missing key '" + key + "'");
  return it;
}

}  // namespace

void SceneGenConfig::validate() const {
  if (height < 32 || width < 32) throw InvalidParameter("scene size must be at least 32x32");
  if (count_min < 0 || count_max < count_min) throw InvalidParameter("invalid count range");
  if (!(person_intensity > 0.0 && person_intensity <= 1.0))
    throw InvalidParameter("person_intensity must be in (0, 1]");
  if (!(distractor_rate >= 0.0) || !std::isfinite(distractor_rate))
    throw InvalidParameter("distractor_rate must be >= 0");
  if (!(ambient_noise_std >= 0.0) || !std::isfinite(ambient_noise_std))
    throw InvalidParameter("ambient_noise_std must be >= 0");
  if (!(perspective_strength >= 0.0 && perspective_strength <= 1.0))
    throw InvalidParameter("perspective_strength must be in [0, 1]");
  if (!(base_radius > 0.0) || !std::isfinite(base_radius))
    throw InvalidParameter("base_radius must be > 0");
  if (!std::isfinite(depth_bias.gain) || !std::isfinite(depth_bias.offset) ||
      !(depth_bias.warp_amp >= 0.0) || !std::isfinite(depth_bias.warp_amp))
    throw InvalidParameter("invalid depth bias parameters");
}

std::map<std::string, std::string> SceneGenConfig::to_kv() const {
  using kv::format_double;
  return {
      {"height", std::to_string(height)},
      {"width", std::to_string(width)},
      {"count_min", std::to_string(count_min)},
      {"count_max", std::to_string(count_max)},
      {"person_intensity", format_double(person_intensity)},
      {"distractor_rate", format_double(distractor_rate)},
      {"ambient_noise_std", format_double(ambient_noise_std)},
      {"perspective_strength", format_double(perspective_strength)},
      {"base_radius", format_double(base_radius)},
      {"seed", std::to_string(seed)},
      {"depth_bias.gain", format_double(depth_bias.gain)},
      {"depth_bias.offset", format_double(depth_bias.offset)},
      {"depth_bias.warp_amp", format_double(depth_bias.warp_amp)},
      {"depth_bias.seed", std::to_string(depth_bias.seed)},
  };
}

SceneGenConfig SceneGenConfig::from_kv(const std::map<std::string, std::string>& kv) {
  SceneGenConfig c;
  auto get = [&](const std::string& k) { return require(kv, k)->second; };
  c.height = static_cast<int>(kv::to_int("height", get("height")));
  c.width = static_cast<int>(kv::to_int("width", get("width")));
  c.count_min = static_cast<int>(kv::to_int("count_min", get("count_min")));
  c.count_max = static_cast<int>(kv::to_int("count_max", get("count_max")));
  c.person_intensity = kv::to_double("person_intensity", get("person_intensity"));
  c.distractor_rate = kv::to_double("distractor_rate", get("distractor_rate"));
  c.ambient_noise_std = kv::to_double("ambient_noise_std", get("ambient_noise_std"));
  c.perspective_strength = kv::to_double("perspective_strength", get("perspective_strength"));
  c.base_radius = kv::to_double("base_radius", get("base_radius"));
  c.seed = kv::to_u64("seed", get("seed"));
  c.depth_bias.gain = kv::to_double("depth_bias.gain", get("depth_bias.gain"));
  c.depth_bias.offset = kv::to_double("depth_bias.offset", get("depth_bias.offset"));
  c.depth_bias.warp_amp = kv::to_double("depth_bias.warp_amp", get("depth_bias.warp_amp"));
  c.depth_bias.seed = kv::to_u64("depth_bias.seed", get("depth_bias.seed"));
  if (kv.size() != 14) throw InvalidConfiguration("unexpected keys in scene config block");
  return c;
}

Tensor ambient_pattern(int height, int width) {
  Tensor t({1, height, width});
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      t.at(0, r, c) = 0.15 + 0.05 * std::sin(2.0 * kPi * (c + 0.5) / width) *
                                 std::cos(kPi * (r + 0.5) / height);
  return t;
}

Scene generate_scene(const SceneGenConfig& config, std::int64_t index) {
  config.validate();
  const int h = config.height, w = config.width;
  Rng rng(derive_seed(config.seed, 0x5ce7e, index));

  Scene s;
  s.seed = config.seed;
  s.index = index;
  s.thermal = ambient_pattern(h, w);
  s.depth_gt = Tensor({1, h, w});
  for (int r = 0; r < h; ++r) {
    const double d = background_depth(r + 0.5, h, config.perspective_strength);
    for (int c = 0; c < w; ++c) s.depth_gt.at(0, r, c) = d;
  }
  s.points = metrics::PointSet(h, w);

  const auto n_people = rng.uniform_int(config.count_min, config.count_max);
  for (std::int64_t i = 0; i < n_people; ++i) {
    const double x = rng.uniform(1.0, w - 1.0);
    const double y = rng.uniform(1.0, h - 1.0);
    const double depth = background_depth(y, h, config.perspective_strength);
    const double radius = config.base_radius * (0.5 + depth);
    const double aspect = rng.uniform(1.0, 1.25);
    const double angle = rng.uniform(0.0, kPi);
    const double intensity = config.person_intensity * rng.uniform(0.85, 1.0);
    stamp_thermal(s.thermal, {x, y, radius * std::sqrt(aspect), radius / std::sqrt(aspect), angle,
                              intensity});
    stamp_silhouette(s.depth_gt, x, y, radius, depth);
    s.points.add({x, y});
  }

  const auto n_distractors = rng.poisson(config.distractor_rate);
  for (std::int64_t i = 0; i < n_distractors; ++i) {
    const double x = rng.uniform(1.0, w - 1.0);
    const double y = rng.uniform(1.0, h - 1.0);
    const double depth = background_depth(y, h, config.perspective_strength);
    const double radius = config.base_radius * (0.5 + depth);
    const double aspect = rng.uniform(1.35, 1.9);
    const double angle = rng.uniform(0.0, kPi);
    const double intensity = config.person_intensity * rng.uniform(0.85, 1.0);
    stamp_thermal(s.thermal, {x, y, radius * std::sqrt(aspect), radius / std::sqrt(aspect), angle,
                              intensity});
    s.distractors.push_back({x, y});
  }

  if (config.ambient_noise_std > 0.0)
    for (double& v : s.thermal.values()) v += config.ambient_noise_std * rng.normal();
  clip01(s.thermal);
  clip01(s.depth_gt);

  const DepthBias& b = config.depth_bias;
  s.depth_est = degrade_depth(s.depth_gt, b.gain, b.offset, b.warp_amp, b.seed);
  return s;
}

WarpField make_warp(int height, int width, double amp, std::uint64_t seed) {
  if (!(amp >= 0.0)) throw InvalidParameter("warp amplitude must be >= 0");
  Rng rng(derive_seed(seed, 0x3a4b));
  auto wave = [&rng] {
    const double kx = rng.uniform(0.04, 0.15) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    const double ky = rng.uniform(0.04, 0.15) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    return std::array<double, 3>{kx, ky, phase};
  };
  const auto mag = wave();
  const auto ang1 = wave();
  const auto ang2 = wave();
  WarpField f{Tensor({1, height, width}), Tensor({1, height, width})};
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double s = 0.5 + 0.5 * std::sin(mag[0] * c + mag[1] * r + mag[2]);
      const double theta = kPi * (std::sin(ang1[0] * c + ang1[1] * r + ang1[2]) +
                                  std::sin(ang2[0] * c + ang2[1] * r + ang2[2]));
      f.dx.at(0, r, c) = amp * s * std::cos(theta);
      f.dy.at(0, r, c) = amp * s * std::sin(theta);
    }
  return f;
}

Tensor degrade_depth(const Tensor& depth_gt, double gain, double offset, double warp_amp,
                     std::uint64_t seed) {
  const Tensor src = as_chw(depth_gt);
  const int h = src.dim(1), w = src.dim(2);
  Tensor out({1, h, w});
  if (warp_amp == 0.0) {
    out = src;
  } else {
    const WarpField f = make_warp(h, w, warp_amp, seed);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        out.at(0, r, c) = sample_bilinear(src, c + f.dx.at(0, r, c), r + f.dy.at(0, r, c));
  }
  for (double& v : out.values()) v = std::clamp(gain * v + offset, 0.0, 1.0);
  return depth_gt.rank() == 2 ? out.reshaped({h, w}) : out;
}

// ---------------------------------------------------------------- files

void write_pgm16(const std::filesystem::path& path, const Tensor& grid) {
  const Tensor g = as_chw(grid);
  const int h = g.dim(1), w = g.dim(2);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  out.reserve(out.size() + static_cast<std::size_t>(h) * w * 2);
  for (double v : g.values()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  binio::write_file(path, out);
}

Tensor read_pgm16(const std::filesystem::path& path) {
  const std::string data = binio::read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError(path.string() + ": " + what);
  };
  // Header tokens separated by whitespace; comments are not produced by us
  // but are skipped for robustness.
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  if (token() != "P5") fail("not a binary PGM (missing P5 magic)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    fail("malformed PGM header");
  }
  if (w <= 0 || h <= 0 || w > 65536 || h > 65536) fail("implausible PGM size");
  if (maxval != 65535) fail("expected 16-bit PGM (maxval 65535)");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 2;
  if (data.size() < pos + need) fail("truncated PGM raster");
  if (data.size() > pos + need) fail("trailing bytes after PGM raster");
  Tensor t({1, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto hi = static_cast<unsigned char>(data[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(data[pos + 2 * i + 1]);
    t[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return t;
}

void save_scene(const Scene& scene, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_pgm16(dir / "thermal.pgm", scene.thermal);
  write_pgm16(dir / "depth_gt.pgm", scene.depth_gt);
  write_pgm16(dir / "depth_est.pgm", scene.depth_est);
  metrics::write_points_csv(dir / "points.csv", scene.points);
  std::string distractors;
  for (const auto& p : scene.distractors) {
    if (!distractors.empty()) distractors += ' ';
    distractors += kv::format_double(p.x) + ' ' + kv::format_double(p.y);
  }
  const kv::Pairs meta{
      {"format", "tdcount-scene-v1"},
      {"height", std::to_string(scene.height())},
      {"width", std::to_string(scene.width())},
      {"seed", std::to_string(scene.seed)},
      {"index", std::to_string(scene.index)},
      {"count", std::to_string(scene.points.count())},
      {"distractors", distractors},
  };
  binio::write_file(dir / "meta", kv::render(meta));
}

Scene load_scene(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingArtifact("no scene directory at " + dir.string());
  const auto meta_path = dir / "meta";
  std::map<std::string, std::string> meta;
  for (auto& [k, v] : kv::parse(binio::read_file(meta_path), meta_path.string())) meta[k] = v;
  auto field = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw ParseError(meta_path.string() + ": missing key '" + k + "'");
    return it->second;
  };
  if (field("format") != "tdcount-scene-v1")
    throw ParseError(meta_path.string() + ": unsupported format '" + field("format") + "'");
  Scene s;
  int h = 0, w = 0;
  std::size_t count = 0;
  try {
    h = static_cast<int>(kv::to_int("height", field("height")));
    w = static_cast<int>(kv::to_int("width", field("width")));
    s.seed = kv::to_u64("seed", field("seed"));
    s.index = kv::to_int("index", field("index"));
    count = static_cast<std::size_t>(kv::to_int("count", field("count")));
    std::istringstream ds(field("distractors"));
    std::string xs, ys;
    while (ds >> xs) {
      if (!(ds >> ys)) throw ParseError("odd distractor coordinate list");
      s.distractors.push_back({kv::to_double("distractors", xs), kv::to_double("distractors", ys)});
    }
  } catch (const InvalidConfiguration& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  s.thermal = read_pgm16(dir / "thermal.pgm");
  s.depth_gt = read_pgm16(dir / "depth_gt.pgm");
  s.depth_est = read_pgm16(dir / "depth_est.pgm");
  for (const auto* g : {&s.thermal, &s.depth_gt, &s.depth_est})
    if (g->dim(1) != h || g->dim(2) != w)
      throw ParseError(dir.string() + ": grid size disagrees with meta");
  s.points = metrics::read_points_csv(dir / "points.csv", h, w);
  if (s.points.count() != count)
    throw ParseError((dir / "points.csv").string() + ": " + std::to_string(s.points.count()) +
                     " points but meta says " + std::to_string(count));
  return s;
}

// ---------------------------------------------------------------- manifest

std::string Manifest::render() const {
  std::string out = "# tdcount dataset manifest v1\n[config]\n";
  for (const auto& [k, v] : config.to_kv()) out += k + " = " + v + "\n";
  out += "[scenes]\n";
  for (const auto& e : entries)
    out += e.id + " " + e.split + " " + std::to_string(e.count) + " " + std::to_string(e.index) + "\n";
  return out;
}

Manifest Manifest::parse(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  enum { kNone, kConfig, kScenes } section = kNone;
  std::string config_block;
  Manifest m;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = kv::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "[config]") {
      section = kConfig;
      continue;
    }
    if (t == "[scenes]") {
      section = kScenes;
      continue;
    }
    if (section == kConfig) {
      config_block += t + "\n";
    } else if (section == kScenes) {
      std::istringstream ls(t);
      ManifestEntry e;
      long long idx = 0;
      if (!(ls >> e.id >> e.split >> e.count >> idx) || (e.split != "train" && e.split != "test"))
        throw ParseError(source + ":" + std::to_string(lineno) + ": malformed scene entry");
      e.index = idx;
      m.entries.push_back(std::move(e));
    } else {
      throw ParseError(source + ":" + std::to_string(lineno) + ": content outside a section");
    }
  }
  std::map<std::string, std::string> kvmap;
  for (auto& [k, v] : kv::parse(config_block, source)) kvmap[k] = v;
  try {
    m.config = SceneGenConfig::from_kv(kvmap);
  } catch (const InvalidConfiguration& e) {
    throw ParseError(source + ": " + e.what());
  }
  return m;
}

std::size_t Manifest::count_split(const std::string& split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

Manifest generate_dataset(const SceneGenConfig& config, int n_train, int n_test,
                          const std::filesystem::path& out_dir) {
  config.validate();
  if (n_train < 0 || n_test < 0) throw InvalidParameter("scene counts must be >= 0");
  Manifest m;
  m.config = config;
  const int n = n_train + n_test;
  for (int i = 0; i < n; ++i) {
    const Scene s = generate_scene(config, i);
    const std::string id = scene_id(i);
    save_scene(s, out_dir / "scenes" / id);
    m.entries.push_back({id, i < n_train ? "train" : "test", s.points.count(), i});
  }
  binio::write_file(out_dir / "manifest.txt", m.render());
  return m;
}

Manifest load_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.txt";
  if (!std::filesystem::exists(path)) throw MissingArtifact("no dataset manifest at " + path.string());
  return Manifest::parse(binio::read_file(path), path.string());
}

std::vector<Scene> load_split(const std::filesystem::path& dataset_dir, const std::string& split) {
  const Manifest m = load_manifest(dataset_dir);
  std::vector<Scene> out;
  for (const auto& e : m.entries)
    if (e.split == split) out.push_back(load_scene(dataset_dir / "scenes" / e.id));
  return out;
}

}  // namespace tdc::scenes
