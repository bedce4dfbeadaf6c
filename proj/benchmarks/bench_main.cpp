#include <benchmark/benchmark.h>

#include <memory>

#include "tdcount/autograd.hpp"
#include "tdcount/counting_net.hpp"
#include "tdcount/extractor.hpp"
#include "tdcount/metrics.hpp"
#include "tdcount/nn.hpp"
#include "tdcount/scenes.hpp"

using namespace tdc;

namespace {

metrics::PointSet random_points(Rng& rng, int h, int w, int n) {
  metrics::PointSet ps(h, w);
  for (int i = 0; i < n; ++i) ps.add({rng.uniform(0.0, w), rng.uniform(0.0, h)});
  return ps;
}

void BM_Rasterize(benchmark::State& state) {
  Rng rng(1);
  const auto ps = random_points(rng, 64, 64, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::rasterize_density(ps, 4.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Rasterize)->Arg(8)->Arg(64)->Arg(512);

void BM_Game(benchmark::State& state) {
  Rng rng(2);
  const auto gt = random_points(rng, 64, 64, 20);
  const metrics::DensityMap pred(64, 64, 20.0 / 4096.0);
  const int level = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::game(pred, gt, level));
}
BENCHMARK(BM_Game)->DenseRange(0, 3);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const int ch = static_cast<int>(state.range(0));
  const nn::Conv2d conv(ch, ch, 3, 1, 1, rng);
  const ag::Var x = ag::parameter(rng.normal_tensor({ch, 32, 32}));
  for (auto _ : state) {
    ag::backward(ag::sum(conv(x)));
    x->zero_grad();
    conv.weight->zero_grad();
    conv.bias->zero_grad();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Arg(32);

void BM_FeatureEnhancer(benchmark::State& state) {
  Rng rng(4);
  const net::NetConfig cfg;
  const net::FeatureEnhancer enhancer(cfg.thermal_channels, 16, cfg, rng);
  const ag::Var f_t = ag::constant(rng.normal_tensor({cfg.thermal_channels, 16, 16}));
  const ag::Var f_td = ag::constant(rng.normal_tensor({16, 16, 16}));
  for (auto _ : state) benchmark::DoNotOptimize(enhancer(f_t, f_td).features->value);
}
BENCHMARK(BM_FeatureEnhancer);

void BM_ExtractFeatures(benchmark::State& state) {
  const auto bundle = extractor::ExtractorBundle::create(1000, extractor::DenoiserConfig{}, 64, 64, 5, 9);
  const Tensor cond = scenes::generate_scene(scenes::SceneGenConfig{}, 1).depth_est;
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        extractor::extract_features(*bundle.model, bundle.schedule, bundle.latent, cond, n, 7).values);
}
BENCHMARK(BM_ExtractFeatures)->DenseRange(1, 4);

void BM_GenerateScene(benchmark::State& state) {
  const scenes::SceneGenConfig cfg;
  int i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(scenes::generate_scene(cfg, i++));
}
BENCHMARK(BM_GenerateScene);

}  // namespace

BENCHMARK_MAIN();
