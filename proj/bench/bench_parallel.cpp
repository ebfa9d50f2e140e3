// Serial references against their OpenMP counterparts.
// Run with --benchmark_filter=... ; the Arg is the worker count.

#include "reflex/assessor.hpp"
#include "reflex/engine.hpp"
#include "reflex/online.hpp"

#include <benchmark/benchmark.h>

using namespace reflex;

namespace {

EllipsoidalPartition partition_2d() {
  std::vector<double> radii;
  for (int i = 1; i <= 16; ++i) radii.push_back(double(i * i));
  return {Vector::Zero(2), Matrix::Identity(2, 2), radii};
}

CalibrationConfig calib_config() {
  CalibrationConfig c;
  c.seed = 1;
  c.n_min = c.n_max = 50000;
  return c;
}

SamplerState normal_sampler() {
  SamplerConfig cfg;
  cfg.calibration = calib_config();
  return build_sampler(make_builtin(standard_normal(2)), partition_2d(), cfg, 1);
}

void BM_CalibrateSerial(benchmark::State& st) {
  auto target = make_builtin(standard_cauchy(2));
  auto part = partition_2d();
  for (auto _ : st)
    benchmark::DoNotOptimize(calibrate_all_serial(target, part, calib_config()));
}

void BM_CalibrateParallel(benchmark::State& st) {
  auto target = make_builtin(standard_cauchy(2));
  auto part = partition_2d();
  for (auto _ : st)
    benchmark::DoNotOptimize(calibrate_all(target, part, calib_config(), int(st.range(0))));
}

void BM_DrawSerial(benchmark::State& st) {
  auto base = normal_sampler();
  for (auto _ : st) {
    auto s = base;
    benchmark::DoNotOptimize(draw_iid_batch_serial(s, 20000, 3));
  }
}

void BM_DrawParallel(benchmark::State& st) {
  auto base = normal_sampler();
  for (auto _ : st) {
    auto s = base;
    benchmark::DoNotOptimize(draw_iid_batch(s, 20000, 3, int(st.range(0))));
  }
}

struct PfSetup {
  LinearGaussianModel model{Matrix::Identity(2, 2) * 0.9, Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                            Matrix::Identity(2, 2)};
  ParticleEnsemble ensemble = gaussian_ensemble({Vector::Zero(2), Matrix::Identity(2, 2)}, 100000, 4);
  TransitionSampler transition = linear_gaussian_transition(model);
  LogLikelihood likelihood = linear_gaussian_likelihood(model);
  Vector obs = Vector::Constant(2, 0.5);
};

void BM_ParticleSerial(benchmark::State& st) {
  PfSetup s;
  for (auto _ : st)
    benchmark::DoNotOptimize(pf_step_serial(s.ensemble, s.transition, s.likelihood, s.obs, 50000, 4, 1));
}

void BM_ParticleParallel(benchmark::State& st) {
  PfSetup s;
  for (auto _ : st)
    benchmark::DoNotOptimize(
        pf_step(s.ensemble, s.transition, s.likelihood, s.obs, 50000, 4, 1, int(st.range(0))));
}

void BM_StationaritySerial(benchmark::State& st) {
  auto x = ar1_series(0.5, 200000, 5);
  for (auto _ : st)
    benchmark::DoNotOptimize(block_edf_distances_serial(x, 100));
}

void BM_StationarityParallel(benchmark::State& st) {
  auto x = ar1_series(0.5, 200000, 5);
  for (auto _ : st)
    benchmark::DoNotOptimize(block_edf_distances(x, 100, int(st.range(0))));
}

} // namespace

BENCHMARK(BM_CalibrateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CalibrateParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DrawSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DrawParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ParticleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ParticleParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_StationaritySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StationarityParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK_MAIN();
