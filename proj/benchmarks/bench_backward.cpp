// Microbenchmarks for the restricted-backward cost claim: at fixed sequence
// length, one backward of the total masked-entropy readout should cost time
// and tape work proportional to the number of active query rows, with the
// dense backward as the |A| = L ceiling. Wall time uses manual timing so
// construction of the (untimed) forward graph stays out of the measurement;
// element-visit counters are reported alongside as a hardware-independent
// view of the same scaling.

#include <benchmark/benchmark.h>

#include <vector>

#include "estr/bench.hpp"
#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"

namespace {

constexpr int kLength = 256;

estr::DenoiserConfig bench_config() {
  estr::DenoiserConfig c;
  c.vocab = 8;
  c.length = kLength;
  c.d_model = 32;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 32;
  return c;
}

const estr::Denoiser& bench_model() {
  static const estr::Denoiser model = estr::Denoiser::init(bench_config(), 7);
  return model;
}

estr::MaskedSequence fully_masked() {
  estr::MaskedSequence x;
  x.tokens.assign(kLength, bench_config().vocab);
  x.masked.resize(kLength);
  for (int i = 0; i < kLength; ++i) x.masked[i] = i;
  return x;
}

void BM_RestrictedBackward(benchmark::State& state) {
  const auto& model = bench_model();
  const estr::MaskedSequence x = fully_masked();
  const int a = static_cast<int>(state.range(0));
  std::vector<int> candidates(a);
  for (int i = 0; i < a; ++i) candidates[i] = i;
  const bool restricted = a < kLength;

  std::uint64_t work = 0;
  for (auto _ : state) {
    const auto probe =
        estr::time_entropy_backward(model, x, 1, candidates, restricted);
    state.SetIterationTime(probe.seconds);
    work = probe.work;
  }
  state.counters["element_visits"] = static_cast<double>(work);
  state.counters["active_rows"] = static_cast<double>(a);
}

}  // namespace

BENCHMARK(BM_RestrictedBackward)
    ->UseManualTime()
    ->RangeMultiplier(2)
    ->Range(1, kLength)  // 1, 2, 4, ..., 256; the last is the dense pass
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
