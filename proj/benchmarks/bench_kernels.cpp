#include "fastadapt/meta.hpp"

#include <benchmark/benchmark.h>

using namespace fastadapt;

namespace {

ChannelSample draw(const SystemConfig& cfg, std::uint64_t seed)
{
    const ChannelTask task = make_task(1, 0.5, 0.5, seed, cfg);
    Rng rng(seed);
    return sample_channel(task, cfg, rng);
}

std::vector<ChannelSample> batch_of(const SystemConfig& cfg, std::size_t n)
{
    std::vector<ChannelSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(draw(cfg, i + 1));
    }
    return out;
}

SampleRefs refs(const std::vector<ChannelSample>& s)
{
    SampleRefs r;
    for (const ChannelSample& x : s) {
        r.push_back(&x);
    }
    return r;
}

void BM_SumRate(benchmark::State& state)
{
    const SystemConfig cfg;
    const ChannelSample h = draw(cfg, 1);
    const PrecoderSet v = mrt_init(h, cfg);
    for (auto _ : state) {
        benchmark::DoNotOptimize(sum_rate(h, v, cfg.noise_power()));
    }
}
BENCHMARK(BM_SumRate);

void BM_WmmseStep(benchmark::State& state)
{
    const SystemConfig cfg;
    const ChannelSample h = draw(cfg, 2);
    const WmmseState s0 = wmmse_init(h, cfg);
    for (auto _ : state) {
        benchmark::DoNotOptimize(wmmse_step(s0, h, cfg));
    }
}
BENCHMARK(BM_WmmseStep);

void BM_WmmseSolve(benchmark::State& state)
{
    const SystemConfig cfg;
    const ChannelSample h = draw(cfg, 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(wmmse_solve(h, cfg));
    }
}
BENCHMARK(BM_WmmseSolve)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(static_cast<ModelKind>(state.range(0)), cfg, {}, 1);
    const std::vector<ChannelSample> batch = batch_of(cfg, 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(precode(m, m.params, refs(batch), cfg));
    }
    state.SetLabel(to_string(m.kind));
}
BENCHMARK(BM_Forward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

// One training step worth of gradient on a batch of 8.
void BM_LossGradient(benchmark::State& state)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(static_cast<ModelKind>(state.range(0)), cfg, {}, 1);
    const std::vector<ChannelSample> batch = batch_of(cfg, 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(loss_and_gradient(m, m.params, refs(batch), cfg));
    }
    state.SetLabel(to_string(m.kind));
}
BENCHMARK(BM_LossGradient)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_FpnSolve(benchmark::State& state)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(ModelKind::Fpn, cfg, {}, 1);
    const ChannelSample h = draw(cfg, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(fpn_solve(m, h, cfg));
    }
}
BENCHMARK(BM_FpnSolve)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
