#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "tdcount/binio.hpp"
#include "tdcount/config.hpp"
#include "tdcount/errors.hpp"
#include "tdcount/pipeline.hpp"
#include "tdcount/report.hpp"

using namespace tdc;
using namespace tdc::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tdcount_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.scene.height = c.scene.width = 32;
  c.scene.count_max = 10;
  c.n_train = 12;
  c.n_test = 4;
  c.epochs = 2;
  c.batch_size = 4;
  c.schedule_steps = 100;
  c.pretrain.steps = 20;
  c.pretrain.batch_size = 2;
  return c;
}

const extractor::ExtractorBundle& tiny_bundle() {
  static const extractor::ExtractorBundle b = [] {
    const auto cfg = tiny();
    return pretrain_bundle(cfg, make_dataset(cfg).train);
  }();
  return b;
}

}  // namespace

TEST(ConfigTest, RoundTripThroughText) {
  for (const auto& c : {ExperimentConfig{}, ExperimentConfig::paper_scale(), tiny()}) {
    EXPECT_EQ(ExperimentConfig::parse(c.render(), "rendered"), c);
  }
  ExperimentConfig c;
  for (const char* o : {"train.lr=0.30000000000000004", "scene.depth_bias.gain=0.123456789012345", "model.depth=raw",
                        "objective.aux=ce", "extractor.latent=resampled", "extractor.mode=joint",
                        "train.seed=18446744073709551615", "dataset.path=some dir/with spaces",
                        "objective.kappa=1e-300"})
    c.apply_override(o);
  EXPECT_EQ(ExperimentConfig::parse(c.render(), "rendered"), c);
  EXPECT_EQ(c.seed, 18446744073709551615ull);
}

TEST(ConfigTest, EveryKeyIsRendered) {
  const auto pairs = ExperimentConfig{}.to_pairs();
  const auto keys = config_keys();
  ASSERT_EQ(pairs.size(), keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) EXPECT_EQ(pairs[i].first, keys[i]);
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  ExperimentConfig c;
  EXPECT_THROW(c.apply_override("train.learning_rate=1"), InvalidConfiguration);
  EXPECT_THROW(c.apply_override("train.lr=fast"), InvalidConfiguration);
  EXPECT_THROW(c.apply_override("train.lr"), InvalidConfiguration);
  EXPECT_THROW(c.apply_override("model.depth=rgb"), InvalidConfiguration);
  EXPECT_THROW(ExperimentConfig::parse("train.lr = 1\nbogus = 2\n", "x"), InvalidConfiguration);
  c.pa.kappa = 0.0;
  EXPECT_THROW(c.validate(), InvalidConfiguration);
}

TEST(ConfigTest, FileLoading) {
  const fs::path dir = fresh_dir("config_file");
  fs::create_directories(dir);
  binio::write_file(dir / "a.cfg", "# comment\ntrain.epochs = 7\n\nobjective.n = 5\n");
  const auto c = ExperimentConfig::load((dir / "a.cfg").string());
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.pa.n, 5);
  EXPECT_EQ(c.lr, ExperimentConfig{}.lr);
  const auto on_preset = ExperimentConfig::load((dir / "a.cfg").string(), ExperimentConfig::paper_scale());
  EXPECT_EQ(on_preset.epochs, 7);
  EXPECT_EQ(on_preset.scene.height, 384);

  binio::write_file(dir / "b.cfg", "train.epochs 7\n");
  EXPECT_THROW(ExperimentConfig::load((dir / "b.cfg").string()), InvalidConfiguration);
  EXPECT_THROW(ExperimentConfig::load((dir / "missing.cfg").string()), MissingArtifact);
  fs::remove_all(dir);
}

TEST(ConfigTest, FullScalePreset) {
  const auto c = ExperimentConfig::paper_scale();
  EXPECT_EQ(c.scene.height, 384);
  EXPECT_EQ(c.scene.width, 384);
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.epochs, 500);
  EXPECT_EQ(c.pa.lambda, 1.0);
  EXPECT_EQ(c.pa.n, 6);
  EXPECT_EQ(c.pretrain.steps, 20000);
  EXPECT_EQ(c.pretrain.cond_dropout, 0.5);
  EXPECT_NO_THROW(c.validate());
}

TEST(ConfigTest, ModelHashTracksArchitectureOnly) {
  ExperimentConfig a, b;
  b.lr = 0.5;
  b.epochs = 3;
  b.out_dir = "elsewhere";
  EXPECT_EQ(a.model_hash(), b.model_hash());
  EXPECT_NE(a.hash(), b.hash());
  b.net.attn_width = 32;
  EXPECT_NE(a.model_hash(), b.model_hash());
}

TEST(TrainerTest, SmokeRunWritesCompleteReport) {
  auto cfg = tiny();
  cfg.n_train = 16;
  cfg.n_test = 4;
  cfg.epochs = 3;
  cfg.out_dir = fresh_dir("smoke").string();
  const Dataset data = make_dataset(cfg);
  Trainer t(cfg, &tiny_bundle(), data);
  const auto r = t.train(true);
  EXPECT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(r.step_losses.size(), 12u);
  EXPECT_GE(r.best_epoch, 0);
  EXPECT_EQ(r.best.images, 4);
  EXPECT_GT(r.best.rmse, 0.0);
  EXPECT_GT(r.final_train_loss, 0.0);
  EXPECT_GT(r.wall_seconds, 0.0);
  EXPECT_FALSE(r.run_id.empty());
  EXPECT_EQ(r.config_hash, cfg.hash());
  EXPECT_EQ(r.integrity_error(), "");
  for (const auto& e : r.epochs) {
    EXPECT_TRUE(e.evaluated);
    EXPECT_GT(e.aux_loss, 0.0);
  }
  for (const char* f : {"config.txt", "metrics.csv", "report.txt", "report.json", "loss.svg", "game0.svg", "best.tdcp",
                        "last.tdcp"})
    EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / f)) << f;

  const auto back = report::read_run(cfg.out_dir);
  EXPECT_EQ(back.best, r.best);
  EXPECT_EQ(back.step_losses, r.step_losses);

  const LoadedModel lm = load_model(fs::path(cfg.out_dir) / "best.tdcp");
  EXPECT_EQ(lm.config, cfg);
  const auto m = evaluate(*lm.model, data.test, {cfg.n_steps, cfg.seed, cfg.latent_mode});
  EXPECT_EQ(m, r.best);
  fs::remove_all(cfg.out_dir);
}

TEST(TrainerTest, IdenticalConfigsGiveIdenticalRuns) {
  const auto cfg = tiny();
  const Dataset data = make_dataset(cfg);
  const auto a = Trainer(cfg, &tiny_bundle(), data).train(false);
  const auto b = Trainer(cfg, &tiny_bundle(), data).train(false);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.best.game[0], b.best.game[0]);
}

TEST(TrainerTest, ZeroLambdaMatchesNoAuxiliaryLoss) {
  auto with_pa = tiny();
  with_pa.pa.lambda = 0.0;
  auto without = with_pa;
  without.aux_loss = AuxLoss::kNone;
  const Dataset data = make_dataset(with_pa);
  Trainer a(with_pa, &tiny_bundle(), data), b(without, &tiny_bundle(), data);
  for (int i = 0; i < 6; ++i) {
    a.step();
    b.step();
  }
  const auto& pa = a.model().params().items();
  const auto& pb = b.model().params().items();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var->value, pb[i].var->value) << pa[i].name;
  const auto rec = a.run_epoch();
  EXPECT_GT(rec.aux_loss, 0.0);
  EXPECT_EQ(b.run_epoch().aux_loss, 0.0);
}

TEST(TrainerTest, ResumeReplaysTheSameTrajectory) {
  struct Case {
    const char* name;
    std::vector<std::string> overrides;
  };
  const std::vector<Case> cases = {
      {"frozen-multistep", {"extractor.n_steps=2", "objective.samples_per_image=10"}},
      {"joint-resampled", {"extractor.mode=joint", "extractor.latent=resampled", "objective.aux=ce"}},
      {"raw-depth", {"model.depth=raw"}},
  };
  const fs::path dir = fresh_dir("resume");
  fs::create_directories(dir);
  for (const auto& c : cases) {
    auto cfg = tiny();
    cfg.epochs = 4;
    for (const auto& o : c.overrides) cfg.apply_override(o);
    const Dataset data = make_dataset(cfg);

    Trainer straight(cfg, &tiny_bundle(), data);
    std::vector<double> expected;
    for (int i = 0; i < 10; ++i) expected.push_back(straight.step());

    Trainer first(cfg, &tiny_bundle(), data);
    std::vector<double> got;
    for (int i = 0; i < 4; ++i) got.push_back(first.step());
    first.save_checkpoint(dir / "mid.tdcp");
    Trainer second(cfg, &tiny_bundle(), data);
    second.load_checkpoint(dir / "mid.tdcp");
    EXPECT_EQ(second.global_step(), 4);
    for (int i = 0; i < 6; ++i) got.push_back(second.step());

    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-6) << c.name << " step " << i;
    EXPECT_EQ(straight.parameter_values(), second.parameter_values()) << c.name;
  }
  fs::remove_all(dir);
}

TEST(TrainerTest, ResumeRefusesDifferentModel) {
  const fs::path dir = fresh_dir("resume_mismatch");
  fs::create_directories(dir);
  auto cfg = tiny();
  const Dataset data = make_dataset(cfg);
  Trainer t(cfg, &tiny_bundle(), data);
  t.step();
  t.save_checkpoint(dir / "a.tdcp");
  cfg.net.attn_width = 8;
  Trainer other(cfg, &tiny_bundle(), data);
  EXPECT_THROW(other.load_checkpoint(dir / "a.tdcp"), InvalidConfiguration);
  EXPECT_THROW(other.load_checkpoint(dir / "absent.tdcp"), MissingArtifact);
  fs::remove_all(dir);
}

TEST(TrainerTest, ExtractorFeaturesNeedABundle) {
  const auto cfg = tiny();
  const Dataset data = make_dataset(cfg);
  EXPECT_THROW(Trainer(cfg, nullptr, data), MissingArtifact);
  auto joint = cfg;
  joint.joint_extractor = true;
  EXPECT_NO_THROW(Trainer(joint, nullptr, data));
  auto mismatched = cfg;
  mismatched.schedule_steps = 50;
  EXPECT_THROW(Trainer(mismatched, &tiny_bundle(), data), InvalidConfiguration);
}

TEST(TrainerTest, NonFiniteLossAborts) {
  auto cfg = tiny();
  cfg.lr = 1e300;
  cfg.net.depth = net::DepthSource::kNone;
  const Dataset data = make_dataset(cfg);
  Trainer t(cfg, nullptr, data);
  EXPECT_THROW(
      {
        for (int i = 0; i < 5; ++i) t.step();
      },
      NumericFailure);
}

TEST(ReportTest, IntegrityAndJsonRoundTrip) {
  report::MetricsReport r;
  r.run_id = "abc";
  r.best = {{1.5, 2.0, 2.5, 3.0}, 1.7, 1.5, 10};
  r.best_epoch = 0;
  r.epochs.push_back({0, 0.5, 0.4, 0.1, true, r.best, 1.0});
  r.step_losses = {0.6, 0.4};
  EXPECT_EQ(r.integrity_error(), "");
  const auto back = report::from_json(report::to_json(r), "mem");
  EXPECT_EQ(back.best, r.best);
  EXPECT_EQ(back.step_losses, r.step_losses);
  EXPECT_EQ(back.epochs.size(), 1u);

  auto broken = r;
  broken.best.mae = 1.4;
  EXPECT_NE(broken.integrity_error(), "");
  broken = r;
  broken.epochs[0].test.game[2] = 1.0;
  EXPECT_NE(broken.integrity_error(), "");
  EXPECT_THROW(report::from_json("{not json", "mem"), ParseError);
}

TEST(AblationTest, SuiteShapes) {
  EXPECT_EQ(suite_variants("steps").size(), 4u);
  EXPECT_EQ(suite_variants("depth").size(), 3u);
  EXPECT_EQ(suite_variants("loss").size(), 3u);
  EXPECT_EQ(suite_variants("prototypes").size(), 4u);
  EXPECT_EQ(suite_variants("latent").size(), 2u);
  EXPECT_EQ(suite_variants("extractor").size(), 2u);
  EXPECT_THROW(suite_variants("colour"), InvalidConfiguration);
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0}), 2.5);
}

TEST(AblationTest, StepsTableAndCache) {
  auto cfg = tiny();
  cfg.epochs = 1;
  const Dataset data = make_dataset(cfg);
  RunCache cache;
  const auto res = run_ablation("steps", cfg, &tiny_bundle(), data, 1, &cache);
  ASSERT_EQ(res.variants.size(), 4u);
  EXPECT_EQ(cache.size(), 4u);
  const std::string table = res.table();
  for (const char* col : {"GAME(0)", "GAME(1)", "GAME(2)", "GAME(3)", "RMSE"})
    EXPECT_NE(table.find(col), std::string::npos) << col;
  for (const char* row : {"n=1", "n=2", "n=3", "n=4"}) EXPECT_NE(table.find(row), std::string::npos) << row;

  const auto again = run_ablation("steps", cfg, &tiny_bundle(), data, 1, &cache);
  EXPECT_EQ(cache.size(), 4u);
  EXPECT_EQ(again.variants[2].median, res.variants[2].median);

  const fs::path dir = fresh_dir("ablation");
  fs::create_directories(dir);
  write_ablation(res, dir);
  for (const char* f : {"ablation_steps.txt", "ablation_steps.csv", "ablation_steps_loss.svg", "ablation_steps_game0.svg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  fs::remove_all(dir);
}

TEST(CommandsTest, GenerateIsDeterministicAndRejectsEmpty) {
  auto cfg = tiny();
  cfg.dataset_path = fresh_dir("generate").string();
  std::ostringstream a, b;
  cmd_generate(cfg, a);
  cmd_generate(cfg, b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("manifest hash"), std::string::npos);
  EXPECT_EQ(scenes::load_manifest(cfg.dataset_path).entries.size(), 16u);
  cfg.n_train = cfg.n_test = 0;
  std::ostringstream c;
  EXPECT_THROW(cmd_generate(cfg, c), InvalidConfiguration);
  fs::remove_all(fresh_dir("generate"));
}
