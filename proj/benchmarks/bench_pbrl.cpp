#include "pbrl/harness.hpp"
#include "pbrl/linear_algos.hpp"

#include <benchmark/benchmark.h>

using namespace pbrl;

static void BM_MlpForwardBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const std::vector<std::size_t> sizes{6, width, width, 1};
  SeededRng rng(0);
  const MlpParams net = make_mlp(sizes, rng);
  Mat x(6, 64);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Mat up = Mat::Ones(1, 64);
  MlpParams grad = net.zeros_like();
  ForwardCache cache;
  for (auto _ : state) {
    const Mat y = forward(net, x, &cache);
    backward(net, cache, up, grad);
    benchmark::DoNotOptimize(grad.layers[0].weight.data());
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(32)->Arg(64)->Arg(256);

static void BM_TrainSteps(benchmark::State& state) {
  const auto env = make_env("point-mass");
  const auto ds = desk_dataset("point-mass", "medium", 2000);
  PbrlConfig cfg = desk_config(100);
  cfg.variant = state.range(0) == 0 ? Variant::pbrl : Variant::naive;
  cfg.eval_interval = 1000;
  cfg.eval_episodes = 1;
  for (auto _ : state) {
    const auto r = train(ds, *env, cfg, 0);
    benchmark::DoNotOptimize(r.final_score);
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * cfg.steps));
  state.SetLabel(to_string(cfg.variant));
}
BENCHMARK(BM_TrainSteps)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Pevi(benchmark::State& state) {
  SeededRng rng(1);
  const auto spec = make_linear_mdp(4, 10, 3, 5, rng);
  const auto data = collect_episodes(spec, static_cast<std::size_t>(state.range(0)), uniform_behavior(3), rng);
  for (auto _ : state) {
    const auto res = pevi(spec, data, {1.0, 1.0});
    benchmark::DoNotOptimize(res.v_hat.data());
  }
}
BENCHMARK(BM_Pevi)->Arg(100)->Arg(1000);

static void BM_BootstrapCi(benchmark::State& state) {
  SeededRng rng(2);
  ScoreMatrix m;
  m.tasks = {"a", "b", "c"};
  m.scores.resize(3, 5);
  for (Eigen::Index i = 0; i < m.scores.size(); ++i) m.scores.data()[i] = rng.uniform(0.0, 100.0);
  for (auto _ : state) {
    SeededRng r(3);
    benchmark::DoNotOptimize(stratified_bootstrap_ci(m, Metric::iqm, r, 2000));
  }
}
BENCHMARK(BM_BootstrapCi)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
