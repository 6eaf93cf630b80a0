#include <benchmark/benchmark.h>

#include <random>

#include "canids/features.hpp"
#include "canids/gen_classifier.hpp"
#include "canids/traffic_synth.hpp"

using namespace canids;

namespace {

std::vector<double> random_input(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = u(rng);
  return x;
}

void BM_DecoderForwardBackward(benchmark::State& state) {
  const auto model = GenClassifier::initialize(ModelConfig{}, 1);
  const auto& net = model.dec();
  const auto x = random_input(net.input_dim(), 2);
  const std::vector<double> g(net.output_dim(), 1.0);
  DenseGrad grad(net);
  Tape tape;
  for (auto _ : state) {
    net.forward(x, tape);
    benchmark::DoNotOptimize(net.backward(tape, g, grad));
  }
}
BENCHMARK(BM_DecoderForwardBackward);

void BM_ElboGradient(benchmark::State& state) {
  ModelConfig cfg;
  cfg.mode = static_cast<Mode>(state.range(0));
  const auto model = GenClassifier::initialize(cfg, 3);
  const auto x = random_input(cfg.x_dim, 4);
  const auto ez = random_input(cfg.z_dim, 5);
  const auto em = random_input(cfg.m_dim, 6);
  ModelGrad grad(model);
  for (auto _ : state) benchmark::DoNotOptimize(elbo_sample_grad(model, x, ClassLabel::Fuzzy, ez, em, grad));
}
BENCHMARK(BM_ElboGradient)->Arg(static_cast<int>(Mode::FullElbo))->Arg(static_cast<int>(Mode::PaperLiteral));

void BM_PredictFrame(benchmark::State& state) {
  ModelConfig cfg;
  cfg.samples = static_cast<std::size_t>(state.range(0));
  const auto model = GenClassifier::initialize(cfg, 7);
  const auto x = random_input(cfg.x_dim, 8);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(predict(model, x, seed++));
}
BENCHMARK(BM_PredictFrame)->Arg(1)->Arg(16);

void BM_ExtractStream(benchmark::State& state) {
  const auto frames = generate(BusProfile::default_profile(), default_scenarios(10.0), 10.0, 9);
  for (auto _ : state) benchmark::DoNotOptimize(extract_stream(frames, FeatureConfig{}));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * frames.size()));
}
BENCHMARK(BM_ExtractStream);

}  // namespace
BENCHMARK_MAIN();
