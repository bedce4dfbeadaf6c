// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,4,7] [--seeds 3] [--cache DIR] [--clean-cache]
//
// Criteria 7-9 share one dataset, one pretrained extractor and a run cache in
// --cache, so a run trained for one criterion is reused by the others.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "tdcount/binio.hpp"
#include "tdcount/config.hpp"
#include "tdcount/counting_net.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/extractor.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/objectives.hpp"
#include "tdcount/pipeline.hpp"
#include "tdcount/report.hpp"
#include "tdcount/scenes.hpp"

using namespace tdc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> failures;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures.push_back(what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

struct Context {
  fs::path self;
  fs::path cache;
  int seeds = 3;
};

std::string num(double v, int digits = 6) { return report::fmt(v, digits); }

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const Context& ctx, const std::string& name) {
  const fs::path dir = ctx.cache / "scratch" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

metrics::PointSet random_points(Rng& rng, int h, int w, int n) {
  metrics::PointSet ps(h, w);
  for (int i = 0; i < n; ++i) {
    if (rng.bernoulli(0.3)) {
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

// ------------------------------------------------------------------ 1

Outcome metric_oracles(Context&) {
  Outcome o;
  Rng rng(101);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const int images = static_cast<int>(rng.uniform_int(1, 6));
    std::vector<double> pred_totals, gt_totals;
    double game0 = 0.0;
    for (int k = 0; k < images; ++k) {
      const int h = static_cast<int>(rng.uniform_int(16, 80));
      const int w = static_cast<int>(rng.uniform_int(16, 80));
      const auto gt = random_points(rng, h, w, static_cast<int>(rng.uniform_int(0, 40)));
      metrics::DensityMap pred(h, w);
      const double scale = rng.uniform(0.0, 0.03);
      for (double& v : pred.values()) v = scale * rng.uniform();
      double prev = 0.0;
      for (int l = 0; l <= 3; ++l) {
        const double g = metrics::game(pred, gt, l);
        if (l > 0)
          o.require(g >= prev * (1.0 - 1e-12) - 1e-12,
                    "instance " + std::to_string(i) + ": GAME(" + std::to_string(l) + ") < GAME(" +
                        std::to_string(l - 1) + ")");
        prev = g;
      }
      game0 += metrics::game(pred, gt, 0);
      pred_totals.push_back(pred.mass());
      gt_totals.push_back(static_cast<double>(gt.count()));
    }
    game0 /= images;
    const double mae = metrics::mae(pred_totals, gt_totals);
    if (game0 == mae) ++exact;
    else o.require(false, "instance " + std::to_string(i) + ": GAME(0) " + num(game0, 17) + " != MAE " + num(mae, 17));
  }
  const metrics::PointSet hand(8, 8, {{1, 1}, {6, 6}});
  const double g = metrics::game(metrics::DensityMap(8, 8, 2.0 / 64.0), hand, 1);
  o.require(std::abs(g - 2.0) <= 1e-9, "8x8 example gives " + num(g, 17));
  o.note(std::to_string(exact) + "/100 exact GAME(0) == MAE, 8x8 example " + num(g, 12));
  return o;
}

// ------------------------------------------------------------------ 2

Outcome mass_conservation(Context&) {
  Outcome o;
  Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int h = static_cast<int>(rng.uniform_int(8, 96));
    const int w = static_cast<int>(rng.uniform_int(8, 96));
    const auto ps = random_points(rng, h, w, static_cast<int>(rng.uniform_int(0, 30)));
    for (double sigma : {2.0, 4.0, 8.0}) {
      const double err = std::abs(metrics::rasterize_density(ps, sigma).mass() - static_cast<double>(ps.count()));
      worst = std::max(worst, err);
      if (err > 1e-6) o.require(false, "set " + std::to_string(i) + " sigma " + num(sigma) + ": error " + num(err));
    }
  }
  o.note("3000 rasterisations, worst |mass - count| " + num(worst, 3));
  return o;
}

// ------------------------------------------------------------------ 3

Outcome schedule_and_reinjection(Context&) {
  Outcome o;
  const auto s = extractor::NoiseSchedule::build(1000);
  o.require(s.alpha(0) == 1.0 && s.sigma(0) == 0.0, "boundary values");
  double worst = 0.0;
  for (int t = 0; t <= s.steps(); ++t)
    worst = std::max(worst, std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
  o.require(worst <= 1e-12, "VP identity error " + num(worst));

  Rng rng(303);
  const Tensor z0 = rng.normal_tensor({4, 8, 8});
  Rng stream(1);
  o.require(extractor::reinject_noise(z0, 0, s, stream) == z0, "tau = 0 does not return z0");

  const int tau = 500;
  const Tensor zero({1, 2, 2});
  double sum = 0.0, sq = 0.0;
  const int draws = 10000;
  Rng mc(304);
  for (int i = 0; i < draws; ++i) {
    const double v = extractor::reinject_noise(zero, tau, s, mc)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / draws;
  const double var = (sq - draws * mean * mean) / (draws - 1);
  const double expected = s.sigma(tau) * s.sigma(tau);
  const double rel = std::abs(var / expected - 1.0);
  o.require(rel <= 0.05, "Monte Carlo variance off by " + num(100 * rel, 3) + "%");

  std::vector<int> taus;
  double prev = 0.0;
  for (int n = 1; n <= 8; ++n) {
    const auto sub = extractor::timestep_subsequence(s.steps(), n);
    const double v = extractor::schedule_error_surrogate(s, sub);
    o.require(v > prev, "surrogate not increasing at N = " + std::to_string(n));
    prev = v;
  }
  o.note("VP error " + num(worst, 3) + ", variance " + num(var, 5) + " vs " + num(expected, 5) + " (" +
         num(100 * rel, 2) + "%), surrogate increasing over N = 1..8");
  return o;
}

// ------------------------------------------------------------------ 4

constexpr std::uint64_t kChildLatentSeed = 5;

void write_child_output(const fs::path& bundle_path, const fs::path& out) {
  const auto bundle = extractor::ExtractorBundle::load(bundle_path);
  scenes::SceneGenConfig sc;
  const Tensor cond = scenes::generate_scene(sc, 3).depth_est;
  binio::Writer w;
  w.tensor(extractor::extract_features(*bundle.model, bundle.schedule, bundle.latent, cond, 1, 0).values);
  w.tensor(extractor::FixedLatent::sample(bundle.latent.shape(), kChildLatentSeed).z);
  w.save(out);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome determinism(Context& ctx) {
  Outcome o;
  const fs::path dir = scratch(ctx, "determinism");
  ExperimentConfig cfg;
  cfg.n_train = 8;
  cfg.n_test = 1;
  cfg.pretrain.steps = 20;
  const auto data = pipeline::make_dataset(cfg);
  const auto bundle = pipeline::pretrain_bundle(cfg, data.train);
  bundle.save(dir / "extractor.tdcx");

  for (const char* name : {"a.bin", "b.bin"}) {
    const std::string cmd = "'" + ctx.self.string() + "' --emit-features '" + (dir / "extractor.tdcx").string() +
                            "' '" + (dir / name).string() + "'";
    o.require(run_command(cmd) == 0, std::string("child process for ") + name + " failed");
  }
  if (!o.pass) return o;
  o.require(read_bytes(dir / "a.bin") == read_bytes(dir / "b.bin"), "features differ between processes");
  auto r = binio::Reader::open(dir / "a.bin");
  const Tensor child_features = r.tensor();
  const Tensor child_latent = r.tensor();

  const auto loaded = extractor::ExtractorBundle::load(dir / "extractor.tdcx");
  const Tensor cond = scenes::generate_scene(cfg.scene, 3).depth_est;
  const auto here = extractor::extract_features(*loaded.model, loaded.schedule, loaded.latent, cond, 1, 0);
  o.require(here.values == child_features, "in-process features differ from the child's");
  const auto other_seed = extractor::extract_features(*loaded.model, loaded.schedule, loaded.latent, cond, 1, 99);
  o.require(other_seed.values == here.values, "n = 1 features depend on the re-injection seed");
  const auto fresh = extractor::extract_features(*bundle.model, bundle.schedule, bundle.latent, cond, 1, 0);
  o.require(fresh.values == here.values, "persisted bundle extracts differently from the in-memory one");

  const auto shape = loaded.latent.shape();
  o.require(extractor::FixedLatent::sample(shape, kChildLatentSeed).z == child_latent,
            "same latent seed differs across processes");
  o.require(extractor::FixedLatent::sample(shape, kChildLatentSeed + 1).z != child_latent,
            "different latent seeds give the same latent");
  o.require(loaded.latent.z == bundle.latent.z && loaded.latent.seed == bundle.latent.seed,
            "latent not persisted with the bundle");
  auto other_latent = loaded;
  other_latent.latent = extractor::FixedLatent::sample(shape, loaded.latent.seed + 1);
  const auto shifted = extractor::extract_features(*loaded.model, loaded.schedule, other_latent.latent, cond, 1, 0);
  o.require(shifted.values != here.values, "features ignore the latent");
  o.note("two processes bit-identical over " + std::to_string(here.values.size()) + " feature values");
  fs::remove_all(dir);
  return o;
}

// ------------------------------------------------------------------ 5

void randomise(const nn::ParamSet& ps, const std::string& prefix, Rng& rng, double scale) {
  for (const auto& p : ps.items())
    if (p.name.rfind(prefix, 0) == 0)
      for (double& v : p.var->value.storage()) v = scale * rng.normal();
}

void grad_gate(Outcome& o, const std::string& what, const testing::GradCheckResult& r) {
  o.require(r.checked >= 32, what + ": only " + std::to_string(r.checked) + " entries checked");
  o.require(r.max_rel_error <= 1e-4, what + ": relative error " + num(r.max_rel_error));
  o.note(what + " " + std::to_string(r.checked) + " entries, max rel " + num(r.max_rel_error, 2));
}

Outcome gradients(Context&) {
  Outcome o;
  scenes::SceneGenConfig sc;
  sc.height = sc.width = 32;
  const auto scene = scenes::generate_scene(sc, 4);
  const Tensor target = metrics::pool_cells(metrics::rasterize_density(scene.points, 4.0), net::kFeatureStride);
  const auto labels = objectives::labels_from_cells(target, 6);
  const auto bank = objectives::PrototypeBank::random_orthogonal(6, 16, 1);
  const objectives::PAConfig pa;

  {
    Rng rng(1);
    const ag::Var f = ag::parameter(rng.normal_tensor({16, 8, 8}));
    Rng prng(2);
    const objectives::PAProjection proj(16, 16, prng);
    grad_gate(o, "pa_loss", testing::check_gradients(
                                [&] {
                                  Rng s(3);
                                  return objectives::pa_loss(f, labels, bank, proj, pa, s);
                                },
                                {f, proj.linear.weight}, 64, 4));
  }
  {
    Rng rng(5);
    const ag::Var pred = ag::parameter(rng.normal_tensor({1, 8, 8}));
    grad_gate(o, "reg_loss",
              testing::check_gradients([&] { return objectives::reg_loss(pred, target); }, {pred}, 64, 6));
  }
  {
    const auto b = extractor::ExtractorBundle::create(100, extractor::DenoiserConfig{}, 32, 32, 1, 2);
    Rng rng(7);
    randomise(b.model->params(), "out.", rng, 0.1);
    const Tensor x0 = extractor::render_target(scene, 4);
    const Tensor eps = rng.normal_tensor(x0.shape());
    std::vector<ag::Var> params;
    for (const auto& p : b.model->params().items()) params.push_back(p.var);
    grad_gate(o, "pretrain_loss", testing::check_gradients(
                                      [&] {
                                        return extractor::pretrain_loss(*b.model, b.schedule, x0, scene.depth_est, 37,
                                                                        eps, 0.1);
                                      },
                                      params, 48, 8));
  }
  {
    auto b = std::make_shared<extractor::ExtractorBundle>(
        extractor::ExtractorBundle::create(100, extractor::DenoiserConfig{}, 32, 32, 1, 2));
    Rng rng(9);
    randomise(b->model->params(), "out.", rng, 0.1);
    const net::CountingModel model(net::NetConfig{}, 7, b);
    for (const auto* l : {&model.enhancer.block1.out_proj, &model.enhancer.block2.out_proj})
      for (double& v : l->weight->value.storage()) v = 0.3 * rng.normal();
    Rng prng(2);
    const objectives::PAProjection proj(net::NetConfig{}.thermal_channels, 16, prng);
    std::vector<ag::Var> params;
    for (const auto& p : model.params().items()) params.push_back(p.var);
    params.push_back(proj.linear.weight);
    grad_gate(o, "total_loss", testing::check_gradients(
                                   [&] {
                                     const auto f = model.forward(scene.thermal, scene.depth_est, {});
                                     Rng s(3);
                                     return objectives::total_loss(
                                         objectives::reg_loss(f.cells, target),
                                         objectives::pa_loss(f.f_t, labels, bank, proj, pa, s), pa.lambda);
                                   },
                                   params, 64, 10));
  }
  return o;
}

// ------------------------------------------------------------------ 6

objectives::PrototypeBank basis_bank(int n, int dim) {
  objectives::PrototypeBank b{n, dim, Tensor({n, dim}), "basis"};
  for (int c = 0; c < n; ++c) b.vectors.at(c, c) = 1.0;
  return b;
}

Outcome pa_closed_forms(Context&) {
  Outcome o;
  Rng rng(606);
  const ag::Var e = ag::constant(rng.normal_tensor({10, 4}));
  const double single = objectives::pa_loss_embedded(e, std::vector<int>(10, 0), basis_bank(1, 4), 0.07)->value[0];
  o.require(single == 0.0, "n = 1 gives " + num(single, 17));

  double worst = 0.0;
  for (int n = 2; n <= 8; ++n) {
    Tensor u({3, n + 1});
    for (int r = 0; r < 3; ++r) u.at(r, n) = 1.0 + r;
    const std::vector<int> y{0, n / 2, n - 1};
    const double v = objectives::pa_loss_embedded(ag::constant(u), y, basis_bank(n, n + 1), 0.07)->value[0];
    worst = std::max(worst, std::abs(v - std::log(static_cast<double>(n))));
  }
  o.require(worst <= 1e-6, "uniform similarity error " + num(worst));

  const Tensor x = Tensor::from({1, 2}, {1.0, 0.0});
  const double v = objectives::pa_loss_embedded(ag::constant(x), std::vector<int>{0}, basis_bank(2, 2), 0.07)->value[0];
  const double expected = std::log1p(std::exp(-1.0 / 0.07));
  o.require(std::abs(v - expected) <= 1e-9, "orthogonal example " + num(v, 17) + " vs " + num(expected, 17));
  o.note("ln n error " + num(worst, 3) + ", orthogonal example " + num(v, 8));
  return o;
}

// ------------------------------------------------------------------ 7-9

struct Shared {
  ExperimentConfig base;
  pipeline::Dataset data;
  extractor::ExtractorBundle bundle;
  pipeline::RunCache cache;
};

fs::path runs_dir(const Context& ctx) { return ctx.cache / "runs"; }

Shared& shared(Context& ctx) {
  static std::optional<Shared> s;
  if (s) return *s;
  s.emplace();
  s->data = pipeline::make_dataset(s->base);
  const fs::path bundle_path = ctx.cache / ("extractor-" + s->base.model_hash() + ".tdcx");
  if (fs::exists(bundle_path)) {
    s->bundle = extractor::ExtractorBundle::load(bundle_path);
  } else {
    s->bundle = pipeline::pretrain_bundle(s->base, s->data.train);
    fs::create_directories(ctx.cache);
    s->bundle.save(bundle_path);
  }
  if (fs::exists(runs_dir(ctx)))
    for (const auto& e : fs::directory_iterator(runs_dir(ctx)))
      s->cache.emplace(e.path().stem().string(),
                       report::from_json(read_bytes(e.path()), e.path().string()));
  return *s;
}

pipeline::AblationResult suite(Context& ctx, const std::string& name) {
  Shared& s = shared(ctx);
  auto result = pipeline::run_ablation(name, s.base, &s.bundle, s.data, ctx.seeds, &s.cache, &std::cout);
  fs::create_directories(runs_dir(ctx));
  for (const auto& [key, r] : s.cache) {
    const fs::path p = runs_dir(ctx) / (key + ".json");
    if (!fs::exists(p)) binio::write_file(p, report::to_json(r));
  }
  std::cout << result.table();
  return result;
}

const pipeline::VariantResult& variant(const pipeline::AblationResult& r, const std::string& name) {
  for (const auto& v : r.variants)
    if (v.variant.name == name) return v;
  throw InvalidInput("suite " + r.suite + " has no variant " + name);
}

Outcome depth_ordering(Context& ctx) {
  Outcome o;
  const auto r = suite(ctx, "depth");
  const double thermal = variant(r, "thermal-only").median.game[0];
  const double raw = variant(r, "thermal+raw-depth").median.game[0];
  const double ext = variant(r, "thermal+extractor").median.game[0];
  o.require(thermal > raw, "thermal-only " + num(thermal, 4) + " not worse than raw depth " + num(raw, 4));
  o.require(raw > ext, "raw depth " + num(raw, 4) + " not worse than extractor " + num(ext, 4));
  const double gain = 1.0 - ext / thermal;
  o.require(gain >= 0.10, "extractor only " + num(100 * gain, 3) + "% better than thermal-only");
  o.note("median GAME(0) thermal-only " + num(thermal, 4) + " > raw " + num(raw, 4) + " > extractor " + num(ext, 4) +
         " (" + num(100 * gain, 3) + "% better)");
  return o;
}

Outcome latent_ablation(Context& ctx) {
  Outcome o;
  const auto r = suite(ctx, "latent");
  const auto& fixed = variant(r, "fixed");
  const auto& resampled = variant(r, "resampled");
  o.require(resampled.median_final_loss > fixed.median_final_loss,
            "final loss resampled " + num(resampled.median_final_loss, 4) + " <= fixed " +
                num(fixed.median_final_loss, 4));
  o.require(resampled.median.game[0] > fixed.median.game[0],
            "GAME(0) resampled " + num(resampled.median.game[0], 4) + " <= fixed " + num(fixed.median.game[0], 4));
  o.note("final loss fixed " + num(fixed.median_final_loss, 4) + " vs resampled " +
         num(resampled.median_final_loss, 4) + ", GAME(0) fixed " + num(fixed.median.game[0], 4) + " vs resampled " +
         num(resampled.median.game[0], 4));
  return o;
}

Outcome steps_ablation(Context& ctx) {
  Outcome o;
  const auto r = suite(ctx, "steps");
  std::vector<double> g;
  for (int n = 1; n <= 4; ++n) g.push_back(variant(r, "n=" + std::to_string(n)).median.game[0]);
  o.require(g[0] <= g[3], "n=1 GAME(0) " + num(g[0], 4) + " > n=4 " + num(g[3], 4));
  const bool blocking = g[0] > *std::min_element(g.begin() + 1, g.end()) &&
                        g[0] > *std::max_element(g.begin() + 1, g.end());
  std::string row = "median GAME(0) by n:";
  for (int n = 0; n < 4; ++n) row += " " + num(g[static_cast<std::size_t>(n)], 4);
  o.note(row);
  if (!o.pass) o.note(blocking ? "soft gate: blocking (n=1 worse than every n>1)" : "soft gate: not blocking");
  return o;
}

// ------------------------------------------------------------------ 10

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.scene.height = c.scene.width = 32;
  c.scene.count_max = 10;
  c.n_train = 12;
  c.n_test = 4;
  c.epochs = 4;
  c.batch_size = 4;
  c.schedule_steps = 100;
  c.pretrain.steps = 20;
  c.pretrain.batch_size = 2;
  return c;
}

Outcome infrastructure(Context& ctx) {
  Outcome o;
  ExperimentConfig custom;
  for (const char* s : {"train.lr=0.30000000000000004", "model.depth=raw", "objective.aux=ce",
                        "extractor.latent=resampled", "train.seed=18446744073709551615", "objective.kappa=1e-300"})
    custom.apply_override(s);
  for (const auto& c : {ExperimentConfig{}, ExperimentConfig::paper_scale(), tiny(), custom})
    o.require(ExperimentConfig::parse(c.render(), "rendered") == c, "config round trip failed");

  const auto cfg = tiny();
  const auto data = pipeline::make_dataset(cfg);
  const auto bundle = pipeline::pretrain_bundle(cfg, data.train);
  const fs::path dir = scratch(ctx, "infrastructure");
  double worst = 0.0;
  for (const char* depth : {"extractor", "raw"}) {
    auto c = cfg;
    c.apply_override(std::string("model.depth=") + depth);
    pipeline::Trainer straight(c, &bundle, data);
    std::vector<double> expected;
    for (int i = 0; i < 10; ++i) expected.push_back(straight.step());
    pipeline::Trainer first(c, &bundle, data);
    std::vector<double> got;
    for (int i = 0; i < 4; ++i) got.push_back(first.step());
    first.save_checkpoint(dir / "mid.tdcp");
    pipeline::Trainer second(c, &bundle, data);
    second.load_checkpoint(dir / "mid.tdcp");
    for (int i = 0; i < 6; ++i) got.push_back(second.step());
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - expected[i]));
  }
  o.require(worst <= 1e-6, "resume trajectory deviates by " + num(worst));

  const auto scene = scenes::generate_scene(scenes::SceneGenConfig{}, 21);
  scenes::save_scene(scene, dir / "scene");
  const auto back = scenes::load_scene(dir / "scene");
  const double tol = 1.0 / 65535.0 + 1e-9;
  double qerr = 0.0;
  for (auto [a, b] : {std::pair{&scene.thermal, &back.thermal}, std::pair{&scene.depth_gt, &back.depth_gt},
                      std::pair{&scene.depth_est, &back.depth_est}})
    for (std::size_t i = 0; i < a->size(); ++i) qerr = std::max(qerr, std::abs((*a)[i] - (*b)[i]));
  o.require(qerr <= tol, "scene round trip error " + num(qerr));
  o.require(back.points == scene.points, "scene points changed on round trip");

  const std::string cli = TDCOUNT_CLI;
  const fs::path log = dir / "cli.log";
  auto run = [&](const std::string& args) { return run_command("'" + cli + "' " + args + " >> '" + log.string() + "' 2>&1"); };
  binio::write_file(dir / "tiny.cfg", "dataset.path = " + (dir / "data").string() +
                                          "\ndataset.n_train = 8\ndataset.n_test = 4\nscene.height = 32\n"
                                          "scene.width = 32\nextractor.schedule_steps = 100\npretrain.steps = 5\n"
                                          "pretrain.batch_size = 2\ntrain.epochs = 1\ntrain.batch_size = 4\n");
  const std::string common = "--config '" + (dir / "tiny.cfg").string() + "' --out '" + (dir / "run").string() + "'";
  const std::vector<std::pair<std::string, int>> contract = {
      {"--help", 0},
      {"train --no-such-flag", 2},
      {"generate " + common + " --override train.bogus=1", 2},
      {"generate " + common + " --override train.lr=-1", 2},
      {"generate --config '" + (dir / "absent.cfg").string() + "'", 3},
      {"train " + common, 3},
      {"generate " + common, 0},
      {"train " + common, 3},
      {"pretrain " + common, 0},
      {"train " + common, 0},
      {"evaluate " + common + " --checkpoint '" + (dir / "run" / "best.tdcp").string() + "'", 0},
      {"evaluate " + common + " --checkpoint '" + (dir / "missing.tdcp").string() + "'", 3},
      {"train " + common + " --override train.lr=1e300", 4},
  };
  int matched = 0;
  for (const auto& [args, code] : contract) {
    const int got = run(args);
    if (got == code) ++matched;
    else o.require(false, "`tdcount " + args.substr(0, args.find(' ')) + "` exited " + std::to_string(got) +
                              ", expected " + std::to_string(code));
  }
  o.note("resume deviation " + num(worst, 3) + ", scene round trip " + num(qerr, 3) + ", CLI " +
         std::to_string(matched) + "/" + std::to_string(contract.size()) + " exit codes");
  if (o.pass) fs::remove_all(dir);
  return o;
}

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Outcome(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for tdcount"};
  std::vector<int> only;
  Context ctx;
  ctx.cache = fs::temp_directory_path() / "tdcount_acceptance";
  std::string cache;
  bool clean = false;
  std::vector<std::string> emit;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--seeds", ctx.seeds, "Seeds for the directional criteria")->check(CLI::PositiveNumber);
  app.add_option("--cache", cache, "Directory for the shared extractor and run cache");
  app.add_flag("--clean-cache", clean, "Delete the cache directory and exit");
  app.add_option("--emit-features", emit)->expected(2)->group("");
  CLI11_PARSE(app, argc, argv);
  if (!cache.empty()) ctx.cache = cache;
  ctx.self = fs::read_symlink("/proc/self/exe");

  try {
    if (!emit.empty()) {
      write_child_output(emit[0], emit[1]);
      return 0;
    }
    if (clean) {
      fs::remove_all(ctx.cache);
      std::cout << "removed " << ctx.cache.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  const std::vector<Criterion> criteria = {
      {1, "metric oracles", 10, metric_oracles},
      {2, "mass conservation", 30, mass_conservation},
      {3, "schedule and re-injection", 30, schedule_and_reinjection},
      {4, "cross-process determinism", 30, determinism},
      {5, "gradients", 120, gradients},
      {6, "prototype alignment closed forms", 5, pa_closed_forms},
      {7, "depth source ordering", 1200, depth_ordering},
      {8, "latent ablation", 1200, latent_ablation},
      {9, "steps ablation", 2400, steps_ablation},
      {10, "infrastructure", 120, infrastructure},
  };
  std::vector<std::string> lines;
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs <= c.limit_s, "runtime " + num(secs, 4) + " s over the " + num(c.limit_s) + " s limit");
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << ", " << num(secs, 3) << " s of "
         << num(c.limit_s) << " s): ";
    std::vector<std::string> parts = o.failures;
    parts.insert(parts.end(), o.notes.begin(), o.notes.end());
    for (std::size_t i = 0; i < parts.size(); ++i) line << (i ? "; " : "") << parts[i];
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
    if (!o.pass) ++failed;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << lines.size() - static_cast<std::size_t>(failed) << "/" << lines.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
