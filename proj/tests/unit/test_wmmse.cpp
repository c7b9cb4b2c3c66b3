#include "test_util.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"
#include "fastadapt/wmmse.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cmath>

using namespace fastadapt;

namespace {

// Independent water-filling: bisection on the water level over the squared
// singular values from Eigen's SVD.
double waterfill_bisect(const ComplexMatrix& h, double p, double sigma2)
{
    const Eigen::JacobiSVD<EigenComplex> svd(h.to_eigen());
    const Eigen::VectorXd g = svd.singularValues().array().square() / sigma2;
    double lo = 0.0;
    double hi = p + 1.0 / g.minCoeff() + 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double used = 0.0;
        for (Index i = 0; i < g.size(); ++i) {
            used += std::max(0.0, mid - 1.0 / g(i));
        }
        (used > p ? hi : lo) = mid;
    }
    double rate = 0.0;
    for (Index i = 0; i < g.size(); ++i) {
        rate += std::log2(1.0 + std::max(0.0, lo - 1.0 / g(i)) * g(i));
    }
    return rate;
}

SystemConfig single_user()
{
    SystemConfig c;
    c.num_users = 1;
    c.tx_antennas = 8;
    c.rx_antennas = 2;
    c.streams_per_user = 2;
    return c;
}

} // namespace

TEST(SumRate, SisoClosedForm)
{
    ChannelSample h;
    h.H = {ComplexMatrix::scalar(1.0)};
    PrecoderSet v;
    v.V = {ComplexMatrix::scalar(1.0)};
    EXPECT_NEAR(sum_rate(h, v, 0.1), std::log2(11.0), 1e-12);
}

TEST(SumRate, ZeroPrecodersGiveZero)
{
    Rng rng(1);
    const SystemConfig cfg;
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    PrecoderSet v;
    v.V.assign(4, ComplexMatrix(8, 2));
    EXPECT_EQ(sum_rate(h, v, cfg.noise_power()), 0.0);
}

TEST(SumRate, ShapeMismatchThrows)
{
    Rng rng(1);
    const SystemConfig cfg;
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    PrecoderSet v;
    v.V.assign(3, ComplexMatrix(8, 2));
    EXPECT_THROW(sum_rate(h, v, 0.1), ShapeError);
    v.V.assign(4, ComplexMatrix(7, 2));
    EXPECT_THROW(sum_rate(h, v, 0.1), ShapeError);
}

TEST(SumRate, TapeVersionMatchesValue)
{
    Rng rng(2);
    const SystemConfig cfg;
    for (int rep = 0; rep < 10; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const PrecoderSet v = mrt_init(h, cfg);
        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const ComplexMatrix& m : v.V) {
            vars.push_back(tape.parameter(m));
        }
        const double on_tape = sum_rate(tape, h, vars, cfg.noise_power()).value().re()(0, 0);
        EXPECT_NEAR(on_tape, sum_rate(h, v, cfg.noise_power()), 1e-10);
    }
}

TEST(Waterfilling, OracleMatchesBisection)
{
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const ComplexMatrix h = fatest::random_complex(2, 8, rng, std::sqrt(0.5));
        for (double sigma2 : {1.0, 0.1, 0.01}) {
            EXPECT_NEAR(waterfilling_oracle(h, 1.0, sigma2), waterfill_bisect(h, 1.0, sigma2), 1e-9);
        }
    }
    EXPECT_NEAR(waterfilling_oracle(ComplexMatrix::scalar(1.0), 1.0, 0.1), std::log2(11.0), 1e-12);
}

TEST(Wmmse, SingleUserReachesCapacity)
{
    Rng rng(4);
    SystemConfig cfg = single_user();
    for (int rep = 0; rep < 10; ++rep) {
        ChannelSample h = fatest::iid_sample(cfg, rng);
        const WmmseResult r = wmmse_solve(h, cfg, 1e-12, 5000);
        EXPECT_NEAR(sum_rate(h, r.V, cfg.noise_power()), waterfill_bisect(h.H[0], 1.0, cfg.noise_power()), 1e-4);
    }
}

TEST(Wmmse, TraceIsMonotone)
{
    Rng rng(5);
    const SystemConfig cfg;
    for (int rep = 0; rep < 10; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const WmmseResult r = wmmse_solve(h, cfg);
        ASSERT_GE(r.rate_trace.size(), 2u);
        for (std::size_t i = 1; i < r.rate_trace.size(); ++i) {
            EXPECT_GE(r.rate_trace[i], r.rate_trace[i - 1] - 1e-9);
        }
        EXPECT_NEAR(r.V.total_power(), cfg.total_power, 1e-6);
    }
}

TEST(Wmmse, StepTracksIterationAndTrace)
{
    Rng rng(6);
    const SystemConfig cfg;
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    WmmseState s = wmmse_init(h, cfg);
    EXPECT_EQ(s.iteration, 0u);
    ASSERT_EQ(s.rate_trace.size(), 1u);
    EXPECT_NEAR(s.rate_trace[0], sum_rate(h, mrt_init(h, cfg), cfg.noise_power()), 1e-12);
    s = wmmse_step(s, h, cfg);
    s = wmmse_step(s, h, cfg);
    EXPECT_EQ(s.iteration, 2u);
    EXPECT_EQ(s.rate_trace.size(), 3u);
    EXPECT_NEAR(s.rate_trace.back(), sum_rate(h, s.V, cfg.noise_power()), 1e-12);
}

TEST(Wmmse, BeatsMrtAtHighSnr)
{
    Rng rng(7);
    const SystemConfig cfg;
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    const WmmseResult r = wmmse_solve(h, cfg);
    EXPECT_GT(r.rate_trace.back(), r.rate_trace.front() + 1.0);
}

TEST(Power, MrtSplitsBudgetEvenly)
{
    Rng rng(8);
    const SystemConfig cfg;
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    const PrecoderSet v = mrt_init(h, cfg);
    ASSERT_EQ(v.V.size(), 4u);
    for (const ComplexMatrix& m : v.V) {
        EXPECT_EQ(m.rows(), 8);
        EXPECT_EQ(m.cols(), 2);
        EXPECT_NEAR(m.squared_norm(), 0.25, 1e-12);
    }
}

TEST(Power, ProjectionOnlyShrinks)
{
    Rng rng(9);
    PrecoderSet big;
    big.V = {fatest::random_complex(4, 1, rng), fatest::random_complex(4, 1, rng)};
    const PrecoderSet p = project_power(big, 1.0);
    EXPECT_NEAR(p.total_power(), 1.0, 1e-12);
    EXPECT_LT(distance(p.V[0].scaled(1.0 / p.V[0].frobenius_norm()),
                       big.V[0].scaled(1.0 / big.V[0].frobenius_norm())),
              1e-12);
    PrecoderSet small;
    small.V = {big.V[0].scaled(0.01)};
    EXPECT_EQ(project_power(small, 1.0).V[0], small.V[0]);

    ad::Tape tape;
    std::vector<ad::Var> vars{tape.parameter(big.V[0]), tape.parameter(big.V[1])};
    const std::vector<ad::Var> out = project_power(vars, 1.0);
    EXPECT_LT(distance(out[1].value(), p.V[1]), 1e-12);
}

// Scaling H by c and sigma^2 by c^2 leaves the achieved rate unchanged.
TEST(Wmmse, JointScaleInvariance)
{
    Rng rng(10);
    const SystemConfig cfg;
    for (double c : {0.1, 3.0}) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        ChannelSample scaled = h;
        for (ComplexMatrix& m : scaled.H) {
            m = m.scaled(c);
        }
        SystemConfig sc = cfg;
        sc.snr_db = cfg.snr_db - 20.0 * std::log10(c);
        const double a = wmmse_solve(h, cfg).rate_trace.back();
        const double b = wmmse_solve(scaled, sc).rate_trace.back();
        EXPECT_NEAR(a, b, 1e-8) << c;
    }
}

TEST(Wmmse, ConvergedStateIsAFixedPoint)
{
    Rng rng(11);
    const SystemConfig cfg;
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    WmmseState s = wmmse_init(h, cfg);
    for (int it = 0; it < 3000; ++it) {
        s = wmmse_step(s, h, cfg);
    }
    const double before = s.rate_trace.back();
    s = wmmse_step(s, h, cfg);
    EXPECT_LT(std::abs(s.rate_trace.back() - before), 1e-9);
}

TEST(Wmmse, OneStepStrictlyIncreases)
{
    Rng rng(12);
    const SystemConfig cfg;
    int increased = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const WmmseState s = wmmse_step(wmmse_init(h, cfg), h, cfg);
        increased += s.rate_trace[1] > s.rate_trace[0] ? 1 : 0;
    }
    EXPECT_EQ(increased, 100);
}

TEST(Wmmse, ZeroChannelStaysAtZero)
{
    const SystemConfig cfg;
    ChannelSample h;
    h.H.assign(4, ComplexMatrix(2, 8));
    const WmmseResult r = wmmse_solve(h, cfg);
    EXPECT_EQ(r.V.total_power(), 0.0);
    EXPECT_EQ(r.rate_trace.back(), 0.0);
}

TEST(Wmmse, ConvergesWithin200Iterations)
{
    Rng rng(13);
    const SystemConfig cfg;
    int converged = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const WmmseResult r = wmmse_solve(h, cfg, 1e-5, 200);
        const std::size_t n = r.rate_trace.size();
        converged += std::abs(r.rate_trace[n - 1] - r.rate_trace[n - 2]) < 1e-5 ? 1 : 0;
    }
    EXPECT_EQ(converged, 100);
}

TEST(Waterfilling, SingleModeTakesAllPower)
{
    EXPECT_NEAR(waterfilling_oracle(ComplexMatrix::scalar(1.0), 1.0, 1.0), 1.0, 1e-12);
    ComplexMatrix h(2, 2);
    h.re()(0, 0) = 1.0;
    EXPECT_NEAR(waterfilling_oracle(h, 1.0, 1.0), 1.0, 1e-12);
}
