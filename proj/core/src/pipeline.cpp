#include "tdcount/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/rng.hpp"

namespace tdc::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t tag(const char* s) { return fnv1a64(s); }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

extractor::ExtractorBundle copy_bundle(const extractor::ExtractorBundle& b) {
  binio::Writer w;
  b.write(w);
  binio::Reader r(w.buffer(), "bundle copy");
  return extractor::ExtractorBundle::read(r);
}

void check_bundle(const ExperimentConfig& cfg, const extractor::ExtractorBundle& b) {
  if (b.schedule.steps() != cfg.schedule_steps)
    throw InvalidConfiguration("extractor checkpoint has T = " + std::to_string(b.schedule.steps()) +
                               " but the config asks for " + std::to_string(cfg.schedule_steps));
  if (!(b.model->config() == cfg.denoiser))
    throw InvalidConfiguration("extractor checkpoint architecture does not match the config");
  const auto shape = b.model->latent_shape(cfg.scene.height, cfg.scene.width);
  if (b.latent.z.shape() != shape)
    throw InvalidConfiguration("extractor latent " + b.latent.z.shape_string() + " does not fit " +
                               std::to_string(cfg.scene.height) + "x" + std::to_string(cfg.scene.width) +
                               " scenes");
}

void check_scenes(const ExperimentConfig& cfg, std::span<const scenes::Scene> s, const std::string& what) {
  for (const auto& sc : s)
    if (sc.height() != cfg.scene.height || sc.width() != cfg.scene.width)
      throw InvalidConfiguration(what + " scene " + std::to_string(sc.index) + " is " +
                                 std::to_string(sc.height()) + "x" + std::to_string(sc.width()) +
                                 ", config expects " + std::to_string(cfg.scene.height) + "x" +
                                 std::to_string(cfg.scene.width));
}

report::EvalMetrics evaluate_with(const net::CountingModel& model, std::span<const scenes::Scene> scenes,
                                  const std::function<ag::Var(const scenes::Scene&)>& depth,
                                  std::vector<double>* pred_counts) {
  if (scenes.empty()) throw InvalidInput("evaluation split is empty");
  report::EvalMetrics m;
  std::vector<double> pred, gt;
  for (const auto& s : scenes) {
    const Tensor cells = model.forward(s.thermal, depth(s)).cells->value;
    if (!cells.all_finite()) throw NumericFailure("non-finite prediction on scene " + std::to_string(s.index));
    const metrics::DensityMap density = metrics::spread_cells(cells, net::kFeatureStride);
    for (int l = 0; l < report::kGameLevels; ++l)
      m.game[static_cast<std::size_t>(l)] += metrics::game(density, s.points, l);
    pred.push_back(density.mass());
    gt.push_back(static_cast<double>(s.points.count()));
  }
  const double n = static_cast<double>(scenes.size());
  for (double& g : m.game) g /= n;
  m.rmse = metrics::rmse(pred, gt);
  m.mae = metrics::mae(pred, gt);
  m.images = static_cast<int>(scenes.size());
  if (pred_counts) *pred_counts = std::move(pred);
  return m;
}

}  // namespace

// ---------------------------------------------------------------- data

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  d.train = scenes::load_split(cfg.dataset_path, "train");
  d.test = scenes::load_split(cfg.dataset_path, "test");
  check_scenes(cfg, d.train, "training");
  check_scenes(cfg, d.test, "test");
  return d;
}

Dataset make_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  for (int i = 0; i < cfg.n_train + cfg.n_test; ++i)
    (i < cfg.n_train ? d.train : d.test).push_back(scenes::generate_scene(cfg.scene, i));
  return d;
}

Tensor target_cells(const scenes::Scene& scene, double sigma) {
  return metrics::pool_cells(metrics::rasterize_density(scene.points, sigma), net::kFeatureStride);
}

extractor::ExtractorBundle pretrain_bundle(const ExperimentConfig& cfg, std::span<const scenes::Scene> train,
                                           extractor::PretrainLog* log) {
  auto b = extractor::ExtractorBundle::create(cfg.schedule_steps, cfg.denoiser, cfg.scene.height,
                                              cfg.scene.width, cfg.latent_seed, cfg.extractor_init_seed);
  auto l = extractor::pretrain_extractor(*b.model, b.schedule, train, cfg.pretrain);
  b.steps_trained = cfg.pretrain.steps;
  if (log) *log = std::move(l);
  return b;
}

report::EvalMetrics evaluate(const net::CountingModel& model, std::span<const scenes::Scene> scenes,
                             const EvalOptions& opts, std::vector<double>* pred_counts) {
  return evaluate_with(
      model, scenes,
      [&](const scenes::Scene& s) -> ag::Var {
        net::ExtractionContext ctx{opts.n_steps, derive_seed(opts.seed, tag("eval-reinject"), s.index), nullptr};
        Tensor z;
        if (opts.latent_mode == LatentMode::kResampled && model.extractor()) {
          Rng rng(derive_seed(opts.seed, tag("eval-latent"), s.index));
          z = rng.normal_tensor(model.extractor()->latent.z.shape());
          ctx.latent = &z;
        }
        return model.depth_features(s.depth_est, ctx);
      },
      pred_counts);
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const ExperimentConfig& cfg, const extractor::ExtractorBundle* bundle, const Dataset& data)
    : cfg_(cfg), data_(&data) {
  cfg_.validate();
  if (data.train.empty()) throw InvalidInput("training split is empty");
  check_scenes(cfg_, data.train, "training");
  check_scenes(cfg_, data.test, "test");
  if (cfg_.net.depth == net::DepthSource::kExtractor) {
    if (bundle) {
      bundle_ = std::make_shared<extractor::ExtractorBundle>(copy_bundle(*bundle));
    } else if (cfg_.joint_extractor) {
      bundle_ = std::make_shared<extractor::ExtractorBundle>(extractor::ExtractorBundle::create(
          cfg_.schedule_steps, cfg_.denoiser, cfg_.scene.height, cfg_.scene.width, cfg_.latent_seed,
          cfg_.extractor_init_seed));
    } else {
      throw MissingArtifact("extractor features requested but no pretrained extractor is available");
    }
    check_bundle(cfg_, *bundle_);
  }
  model_ = std::make_unique<net::CountingModel>(cfg_.net, derive_seed(cfg_.seed, tag("init")), bundle_,
                                                cfg_.joint_extractor);

  bank_ = cfg_.prototype_file.empty()
              ? objectives::PrototypeBank::random_orthogonal(cfg_.pa.n, cfg_.prototype_dim, cfg_.prototype_seed)
              : objectives::PrototypeBank::load(cfg_.prototype_file);
  if (bank_.n != cfg_.pa.n)
    throw InvalidConfiguration("prototype bank has " + std::to_string(bank_.n) + " classes, config expects " +
                               std::to_string(cfg_.pa.n));
  Rng proj_rng(derive_seed(cfg_.seed, tag("projection")));
  projection_ = objectives::PAProjection(cfg_.net.thermal_channels, bank_.dim, proj_rng);
  Rng cls_rng(derive_seed(cfg_.seed, tag("classifier")));
  classifier_ = nn::Linear(cfg_.net.thermal_channels, cfg_.pa.n, cls_rng);

  trainable_.append(model_->params());
  if (cfg_.aux_loss == AuxLoss::kPrototype) projection_.collect(trainable_, "pa.projection");
  if (cfg_.aux_loss == AuxLoss::kCrossEntropy) classifier_.collect(trainable_, "ce.classifier");
  opt_ = nn::AdamW(trainable_, {.lr = cfg_.lr, .weight_decay = cfg_.weight_decay});

  for (const auto& s : data.train) {
    train_targets_.push_back(target_cells(s, cfg_.density_sigma));
    train_labels_.push_back(objectives::labels_from_cells(train_targets_.back(), cfg_.pa.n));
  }
  const int n = static_cast<int>(data.train.size());
  steps_per_epoch_ = (n + cfg_.batch_size - 1) / cfg_.batch_size;
  report_.config_hash = cfg_.hash();
  report_.run_id = cfg_.hash().substr(0, 8) + "-s" + std::to_string(cfg_.seed);
}

ag::Var Trainer::depth_var(const scenes::Scene& scene, bool training) const {
  switch (cfg_.net.depth) {
    case net::DepthSource::kNone:
      return nullptr;
    case net::DepthSource::kRaw:
      return model_->depth_features(scene.depth_est, {});
    case net::DepthSource::kExtractor:
      break;
  }
  const std::uint64_t reinject_seed = training
                                          ? derive_seed(cfg_.seed, tag("reinject"), scene.index, epoch())
                                          : derive_seed(cfg_.seed, tag("eval-reinject"), scene.index);
  net::ExtractionContext ctx{cfg_.n_steps, reinject_seed, nullptr};
  Tensor z;
  if (cfg_.latent_mode == LatentMode::kResampled) {
    Rng rng(training ? derive_seed(cfg_.seed, tag("latent"), global_step_, scene.index)
                     : derive_seed(cfg_.seed, tag("eval-latent"), scene.index));
    z = rng.normal_tensor(bundle_->latent.z.shape());
    ctx.latent = &z;
  }
  if (cfg_.joint_extractor) return model_->depth_features(scene.depth_est, ctx);

  // Frozen features are cached when they do not change between epochs.
  const bool stable = cfg_.latent_mode == LatentMode::kFixed && (cfg_.n_steps == 1 || !training);
  auto& cache = training ? feature_cache_ : eval_cache_;
  if (stable) {
    auto it = cache.find(scene.index);
    if (it != cache.end()) return ag::constant(it->second);
  }
  ag::Var f = model_->depth_features(scene.depth_est, ctx);
  if (stable) cache.emplace(scene.index, f->value);
  return f;
}

double Trainer::step() {
  const int e = epoch();
  const int k = static_cast<int>(global_step_ % steps_per_epoch_);
  const int n = static_cast<int>(data_->train.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg_.seed, tag("shuffle"), e));
  for (int i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(shuffle.uniform_int(0, i))]);

  const int begin = k * cfg_.batch_size, end = std::min(n, begin + cfg_.batch_size);
  double total = 0.0, reg_sum = 0.0, aux_sum = 0.0;
  for (int b = begin; b < end; ++b) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(b)]);
    const scenes::Scene& s = data_->train[idx];
    const auto fwd = model_->forward(s.thermal, depth_var(s, true));
    const ag::Var reg = objectives::reg_loss(fwd.cells, train_targets_[idx], cfg_.count_weight);
    ag::Var aux;
    Rng aux_rng(derive_seed(cfg_.seed, tag("aux-cells"), global_step_, s.index));
    if (cfg_.aux_loss == AuxLoss::kPrototype) {
      aux = objectives::pa_loss(fwd.f_t, train_labels_[idx], bank_, projection_, cfg_.pa, aux_rng);
    } else if (cfg_.aux_loss == AuxLoss::kCrossEntropy) {
      const auto& lab = train_labels_[idx];
      const auto cells = objectives::sample_cells(lab.height * lab.width, cfg_.pa.samples_per_image, aux_rng);
      aux = objectives::ce_loss_variant(fwd.f_t, lab, classifier_, cells);
    }
    const ag::Var loss = objectives::total_loss(reg, aux, cfg_.pa.lambda);
    const double aux_v = aux ? aux->value[0] : 0.0;
    const double value = reg->value[0] + cfg_.pa.lambda * aux_v;
    if (!std::isfinite(value) || !std::isfinite(loss->value[0]))
      throw NumericFailure("non-finite training loss at step " + std::to_string(global_step_) + " (scene " +
                           std::to_string(s.index) + ")");
    ag::backward(loss);
    total += value;
    reg_sum += reg->value[0];
    aux_sum += aux_v;
  }
  const double count = end - begin;
  opt_.step(1.0 / count);
  ++global_step_;
  epoch_total_.push_back(total / count);
  epoch_reg_.push_back(reg_sum / count);
  epoch_aux_.push_back(aux_sum / count);
  report_.step_losses.push_back(total / count);
  return total / count;
}

report::EvalMetrics Trainer::evaluate_test() const {
  return evaluate_with(*model_, data_->test,
                       [&](const scenes::Scene& s) { return depth_var(s, false); }, nullptr);
}

std::vector<Tensor> Trainer::parameter_values() const {
  std::vector<Tensor> out;
  for (const auto& p : trainable_.items()) out.push_back(p.var->value);
  return out;
}

report::EpochRecord Trainer::run_epoch() {
  const auto t0 = Clock::now();
  do {
    step();
  } while (global_step_ % steps_per_epoch_ != 0);
  report::EpochRecord rec;
  rec.epoch = epoch() - 1;
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  rec.train_loss = mean(epoch_total_);
  rec.reg_loss = mean(epoch_reg_);
  rec.aux_loss = mean(epoch_aux_);
  epoch_total_.clear();
  epoch_reg_.clear();
  epoch_aux_.clear();
  const bool last = epoch() >= cfg_.epochs;
  if (!data_->test.empty() && ((rec.epoch + 1) % cfg_.eval_interval == 0 || last)) {
    rec.evaluated = true;
    rec.test = evaluate_test();
    if (report_.best_epoch < 0 || rec.test.game[0] < report_.best.game[0]) {
      report_.best_epoch = rec.epoch;
      report_.best = rec.test;
      best_params_ = parameter_values();
    }
  }
  rec.seconds = seconds_since(t0);
  report_.epochs.push_back(rec);
  report_.final_train_loss = rec.train_loss;
  return rec;
}

report::MetricsReport Trainer::train(bool write_outputs,
                                     const std::function<void(const report::EpochRecord&)>& on_epoch) {
  const auto t0 = Clock::now();
  const std::filesystem::path out = cfg_.out_dir;
  if (write_outputs) binio::write_file(out / "config.txt", cfg_.render());
  while (epoch() < cfg_.epochs) {
    const int before = report_.best_epoch;
    const auto rec = run_epoch();
    if (write_outputs && report_.best_epoch != before) save_checkpoint(out / "best.tdcp");
    if (on_epoch) on_epoch(rec);
  }
  report_.wall_seconds += seconds_since(t0);
  if (write_outputs) {
    save_checkpoint(out / "last.tdcp");
    const auto problem = report_.integrity_error();
    if (!problem.empty()) throw NumericFailure("metrics report failed its integrity check: " + problem);
    report::write_run(report_, "tdcount run " + report_.run_id, out);
  }
  return report_;
}

// ---------------------------------------------------------------- ablations

std::vector<std::string> suite_names() { return {"steps", "depth", "loss", "prototypes", "latent", "extractor"}; }

std::vector<Variant> suite_variants(const std::string& suite) {
  if (suite == "steps")
    return {{"n=1", {"extractor.n_steps=1"}},
            {"n=2", {"extractor.n_steps=2"}},
            {"n=3", {"extractor.n_steps=3"}},
            {"n=4", {"extractor.n_steps=4"}}};
  if (suite == "depth")
    return {{"thermal-only", {"model.depth=none"}},
            {"thermal+raw-depth", {"model.depth=raw"}},
            {"thermal+extractor", {"model.depth=extractor"}}};
  if (suite == "loss")
    return {{"reg", {"objective.aux=none"}}, {"reg+CE", {"objective.aux=ce"}}, {"reg+PA", {"objective.aux=pa"}}};
  if (suite == "prototypes")
    return {{"n=4", {"objective.n=4"}}, {"n=5", {"objective.n=5"}}, {"n=6", {"objective.n=6"}}, {"n=7", {"objective.n=7"}}};
  if (suite == "latent")
    return {{"fixed", {"extractor.latent=fixed"}}, {"resampled", {"extractor.latent=resampled"}}};
  if (suite == "extractor")
    return {{"frozen", {"extractor.mode=frozen"}}, {"joint", {"extractor.mode=joint"}}};
  std::string known;
  for (const auto& s : suite_names()) known += (known.empty() ? "" : ", ") + s;
  throw InvalidConfiguration("unknown ablation suite '" + suite + "' (known: " + known + ")");
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

report::MetricsReport run_once(const ExperimentConfig& cfg, const extractor::ExtractorBundle* bundle,
                               const Dataset& data, RunCache* cache) {
  ExperimentConfig key_cfg = cfg;
  key_cfg.out_dir = "-";
  const std::string key = key_cfg.hash();
  if (cache) {
    auto it = cache->find(key);
    if (it != cache->end()) return it->second;
  }
  const bool needs_bundle = cfg.net.depth == net::DepthSource::kExtractor;
  Trainer t(cfg, needs_bundle ? bundle : nullptr, data);
  auto r = t.train(false);
  if (cache) cache->emplace(key, r);
  return r;
}

AblationResult run_ablation(const std::string& suite, const ExperimentConfig& base,
                            const extractor::ExtractorBundle* bundle, const Dataset& data, int n_seeds,
                            RunCache* cache, std::ostream* log) {
  if (n_seeds < 1) throw InvalidConfiguration("ablation needs at least one seed");
  AblationResult res;
  res.suite = suite;
  for (const auto& v : suite_variants(suite)) {
    VariantResult vr;
    vr.variant = v;
    for (int k = 0; k < n_seeds; ++k) {
      ExperimentConfig c = base;
      for (const auto& o : v.overrides) c.apply_override(o);
      c.seed = base.seed + static_cast<std::uint64_t>(k);
      const auto t0 = Clock::now();
      vr.runs.push_back(run_once(c, bundle, data, cache));
      vr.seeds.push_back(c.seed);
      if (log)
        *log << "  [" << suite << "] " << v.name << " seed " << c.seed << ": GAME(0) "
             << report::fmt(vr.runs.back().best.game[0]) << ", final loss "
             << report::fmt(vr.runs.back().final_train_loss) << " (" << report::fmt(seconds_since(t0), 3)
             << " s)\n"
             << std::flush;
    }
    auto med = [&](auto get) {
      std::vector<double> xs;
      for (const auto& r : vr.runs) xs.push_back(get(r));
      return median(xs);
    };
    for (int l = 0; l < report::kGameLevels; ++l)
      vr.median.game[static_cast<std::size_t>(l)] =
          med([l](const report::MetricsReport& r) { return r.best.game[static_cast<std::size_t>(l)]; });
    vr.median.rmse = med([](const report::MetricsReport& r) { return r.best.rmse; });
    vr.median.mae = med([](const report::MetricsReport& r) { return r.best.mae; });
    vr.median.images = vr.runs.front().best.images;
    vr.median_final_loss = med([](const report::MetricsReport& r) { return r.final_train_loss; });
    res.variants.push_back(std::move(vr));
  }
  return res;
}

namespace {

std::vector<std::string> ablation_header() {
  return {"variant", "GAME(0)", "GAME(1)", "GAME(2)", "GAME(3)", "RMSE", "MAE", "final_loss"};
}

std::vector<std::vector<std::string>> ablation_rows(const AblationResult& r, int precision) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& v : r.variants)
    rows.push_back({v.variant.name, report::fmt(v.median.game[0], precision), report::fmt(v.median.game[1], precision),
                    report::fmt(v.median.game[2], precision), report::fmt(v.median.game[3], precision),
                    report::fmt(v.median.rmse, precision), report::fmt(v.median.mae, precision),
                    report::fmt(v.median_final_loss, precision)});
  return rows;
}

}  // namespace

std::string AblationResult::table() const {
  std::string seeds;
  if (!variants.empty())
    for (auto s : variants.front().seeds) seeds += (seeds.empty() ? "" : ", ") + std::to_string(s);
  return "ablation suite '" + suite + "': median over seeds {" + seeds + "}\n" +
         report::text_table(ablation_header(), ablation_rows(*this, 4));
}

std::string AblationResult::csv() const { return report::csv_table(ablation_header(), ablation_rows(*this, 10)); }

void write_ablation(const AblationResult& result, const std::filesystem::path& dir) {
  const std::string stem = "ablation_" + result.suite;
  binio::write_file(dir / (stem + ".txt"), result.table());
  binio::write_file(dir / (stem + ".csv"), result.csv());
  std::vector<report::Series> curves;
  std::vector<std::string> labels;
  std::vector<double> game0;
  for (const auto& v : result.variants) {
    std::vector<double> loss;
    for (const auto& e : v.runs.front().epochs) loss.push_back(e.train_loss);
    curves.push_back({v.variant.name, loss});
    labels.push_back(v.variant.name);
    game0.push_back(v.median.game[0]);
  }
  binio::write_file(dir / (stem + "_loss.svg"),
                    report::line_plot_svg(result.suite + ": training loss (first seed)", "epoch", "loss", curves));
  binio::write_file(dir / (stem + "_game0.svg"),
                    report::bar_plot_svg(result.suite + ": median test GAME(0)", "GAME(0)", labels, game0));
}

// ---------------------------------------------------------------- commands

void cmd_generate(const ExperimentConfig& cfg, std::ostream& out) {
  cfg.validate();
  if (cfg.n_train + cfg.n_test == 0) throw InvalidConfiguration("refusing to write an empty manifest (n = 0)");
  const auto m = scenes::generate_dataset(cfg.scene, cfg.n_train, cfg.n_test, cfg.dataset_path);
  const std::string text = binio::read_file(std::filesystem::path(cfg.dataset_path) / "manifest.txt");
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  std::size_t people = 0;
  for (const auto& e : m.entries) people += e.count;
  out << "wrote " << m.entries.size() << " scenes to " << cfg.dataset_path << " (" << m.count_split("train")
      << " train, " << m.count_split("test") << " test, " << people << " persons)\n"
      << "manifest hash " << hash << "\n";
}

void cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto train = scenes::load_split(cfg.dataset_path, "train");
  check_scenes(cfg, train, "training");
  if (train.empty()) throw InvalidInput("training split is empty");
  extractor::PretrainLog log;
  const auto t0 = Clock::now();
  const auto bundle = pretrain_bundle(cfg, train, &log);
  const std::string path = cfg.resolved_extractor_checkpoint();
  bundle.save(path);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < log.losses.size(); ++i)
    rows.push_back({std::to_string(i), report::fmt(log.losses[i], 10)});
  const std::filesystem::path dir = cfg.out_dir;
  binio::write_file(dir / "pretrain_loss.csv", report::csv_table({"step", "loss"}, rows));
  binio::write_file(dir / "pretrain_loss.svg",
                    report::line_plot_svg("extractor pretraining", "step", "pseudo-Huber loss", {{"loss", log.losses}}));
  const double first = log.losses.empty() ? 0.0 : log.losses.front();
  const double last = log.losses.empty() ? 0.0 : log.losses.back();
  out << "pretrained extractor for " << cfg.pretrain.steps << " steps in " << report::fmt(seconds_since(t0), 4)
      << " s (loss " << report::fmt(first) << " -> " << report::fmt(last) << ", " << log.conditions_dropped << "/"
      << log.conditions_seen << " conditions dropped)\n"
      << "checkpoint " << path << "\n";
}

namespace {

std::unique_ptr<extractor::ExtractorBundle> maybe_load_bundle(const ExperimentConfig& cfg) {
  if (cfg.net.depth != net::DepthSource::kExtractor) return nullptr;
  const std::string path = cfg.resolved_extractor_checkpoint();
  if (!std::filesystem::exists(path)) {
    if (cfg.joint_extractor) return nullptr;
    throw MissingArtifact("no pretrained extractor at " + path + " (run `tdcount pretrain` first)");
  }
  return std::make_unique<extractor::ExtractorBundle>(extractor::ExtractorBundle::load(path));
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg, std::ostream& out, const std::string& resume_from) {
  cfg.validate();
  const Dataset data = load_dataset(cfg);
  const auto bundle = maybe_load_bundle(cfg);
  Trainer t(cfg, bundle.get(), data);
  if (!resume_from.empty()) {
    t.load_checkpoint(resume_from);
    out << "resumed from " << resume_from << " at step " << t.global_step() << "\n";
  }
  const auto r = t.train(true, [&](const report::EpochRecord& e) {
    out << "epoch " << e.epoch << ": loss " << report::fmt(e.train_loss) << " (reg " << report::fmt(e.reg_loss)
        << ", aux " << report::fmt(e.aux_loss) << ")";
    if (e.evaluated) out << ", test GAME(0) " << report::fmt(e.test.game[0]) << " RMSE " << report::fmt(e.test.rmse);
    out << "\n" << std::flush;
  });
  out << report::report_text(r, "tdcount run " + r.run_id) << "outputs in " << cfg.out_dir << "\n";
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& split,
                  std::ostream& out) {
  if (split != "train" && split != "test") throw InvalidConfiguration("split must be train or test");
  LoadedModel lm = load_model(checkpoint);
  const auto scenes = scenes::load_split(cfg.dataset_path, split);
  check_scenes(lm.config, scenes, split);
  const auto t0 = Clock::now();
  EvalOptions opts{lm.config.n_steps, lm.config.seed, lm.config.latent_mode};
  std::vector<double> preds;
  report::MetricsReport r;
  r.best = evaluate(*lm.model, scenes, opts, &preds);
  r.run_id = lm.config.hash().substr(0, 8) + "-s" + std::to_string(lm.config.seed) + "-eval";
  r.config_hash = lm.config.hash();
  r.split = split;
  r.best_epoch = 0;
  r.wall_seconds = seconds_since(t0);
  if (auto problem = r.integrity_error(); !problem.empty())
    throw NumericFailure("metrics report failed its integrity check: " + problem);
  const std::filesystem::path dir = std::filesystem::path(cfg.out_dir) / ("eval-" + split);
  binio::write_file(dir / "report.txt", report::report_text(r, "evaluation of " + checkpoint));
  binio::write_file(dir / "report.json", report::to_json(r));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    rows.push_back({std::to_string(scenes[i].index), std::to_string(scenes[i].points.count()),
                    report::fmt(preds[i], 10)});
  binio::write_file(dir / "predictions.csv", report::csv_table({"index", "count", "predicted"}, rows));
  binio::write_file(dir / "metrics.csv",
                    report::csv_table({"split", "game0", "game1", "game2", "game3", "rmse", "mae"},
                                      {{split, report::fmt(r.best.game[0], 10), report::fmt(r.best.game[1], 10),
                                        report::fmt(r.best.game[2], 10), report::fmt(r.best.game[3], 10),
                                        report::fmt(r.best.rmse, 10), report::fmt(r.best.mae, 10)}}));
  out << report::report_text(r, "evaluation of " + checkpoint);
}

void cmd_ablate(const ExperimentConfig& cfg, const std::string& suite, int n_seeds, std::ostream& out) {
  cfg.validate();
  suite_variants(suite);
  const Dataset data = load_dataset(cfg);
  std::unique_ptr<extractor::ExtractorBundle> bundle;
  if (suite == "depth" || cfg.net.depth == net::DepthSource::kExtractor) {
    ExperimentConfig probe = cfg;
    probe.net.depth = net::DepthSource::kExtractor;
    bundle = maybe_load_bundle(probe);
  }
  const auto res = run_ablation(suite, cfg, bundle.get(), data, n_seeds, nullptr, &out);
  write_ablation(res, cfg.out_dir);
  out << res.table();
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir, std::ostream& out) {
  if (run_dirs.empty()) throw InvalidConfiguration("report needs at least one run directory");
  std::vector<std::vector<std::string>> rows;
  std::vector<report::Series> curves;
  std::vector<std::string> labels;
  std::vector<double> game0;
  for (const auto& d : run_dirs) {
    const auto r = report::read_run(d);
    rows.push_back({d, r.run_id, r.split, report::fmt(r.best.game[0]), report::fmt(r.best.game[1]),
                    report::fmt(r.best.game[2]), report::fmt(r.best.game[3]), report::fmt(r.best.rmse),
                    report::fmt(r.best.mae), report::fmt(r.final_train_loss)});
    std::vector<double> loss;
    for (const auto& e : r.epochs) loss.push_back(e.train_loss);
    curves.push_back({std::filesystem::path(d).filename().string(), loss});
    labels.push_back(std::filesystem::path(d).filename().string());
    game0.push_back(r.best.game[0]);
  }
  const std::vector<std::string> header = {"dir",     "run_id",  "split", "GAME(0)", "GAME(1)",
                                           "GAME(2)", "GAME(3)", "RMSE",  "MAE",     "final_loss"};
  const std::filesystem::path dir = out_dir;
  const std::string table = report::text_table(header, rows);
  binio::write_file(dir / "summary.txt", table);
  binio::write_file(dir / "summary.csv", report::csv_table(header, rows));
  binio::write_file(dir / "summary_loss.svg", report::line_plot_svg("training loss", "epoch", "loss", curves));
  binio::write_file(dir / "summary_game0.svg", report::bar_plot_svg("test GAME(0)", "GAME(0)", labels, game0));
  out << table;
}

}  // namespace tdc::pipeline
