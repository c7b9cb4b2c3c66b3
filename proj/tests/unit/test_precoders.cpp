#include "test_util.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"
#include "fastadapt/precoders.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace fastadapt;

namespace {

ModelHyper light_hyper()
{
    ModelHyper h;
    h.blackbox_hidden = 32;
    h.unfolded_layers = 3;
    return h;
}

Eigen::VectorXd random_state(Index n, Rng& rng, double sd)
{
    std::normal_distribution<double> g(0.0, sd);
    Eigen::VectorXd z(n);
    for (Index i = 0; i < n; ++i) {
        z(i) = g(rng);
    }
    return z;
}

} // namespace

class EachModel : public ::testing::TestWithParam<ModelKind> {};

TEST_P(EachModel, ShapesAndPowerConstraint)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(GetParam(), cfg, light_hyper(), 7);
    Rng rng(1);
    for (int rep = 0; rep < 5; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const std::vector<PrecoderSet> out = precode(m, m.params, {&h}, cfg);
        ASSERT_EQ(out.size(), 1u);
        ASSERT_EQ(out[0].V.size(), 4u);
        for (const ComplexMatrix& v : out[0].V) {
            EXPECT_EQ(v.rows(), 8);
            EXPECT_EQ(v.cols(), 2);
        }
        EXPECT_LE(out[0].total_power(), cfg.total_power + 1e-12);
        EXPECT_TRUE(out[0].V[0].all_finite());
    }
}

TEST_P(EachModel, DeterministicAcrossCallsAndSeeds)
{
    const SystemConfig cfg;
    const PrecoderModel a = make_model(GetParam(), cfg, light_hyper(), 7);
    const PrecoderModel b = make_model(GetParam(), cfg, light_hyper(), 7);
    EXPECT_EQ(a.params, b.params);
    Rng rng(2);
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    EXPECT_EQ(precode(a, a.params, {&h}, cfg)[0].V, precode(a, a.params, {&h}, cfg)[0].V);
    if (GetParam() != ModelKind::Unfolded) {
        EXPECT_FALSE(make_model(GetParam(), cfg, light_hyper(), 8).params == a.params);
    }
}

TEST_P(EachModel, TapeMatchesValuePath)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(GetParam(), cfg, light_hyper(), 3);
    Rng rng(3);
    const ChannelSample h0 = fatest::iid_sample(cfg, rng);
    const ChannelSample h1 = fatest::iid_sample(cfg, rng);
    const std::vector<ChannelSample> s{h0, h1};
    ad::Tape tape;
    const std::vector<ad::Var> p = bind(tape, m.params);
    const double on_tape = batch_rate(m, tape, p, {&h0, &h1}, cfg).value().re()(0, 0);
    EXPECT_NEAR(on_tape, mean_sum_rate(m, m.params, s, cfg), 1e-8);
    const LossGradient lg = loss_and_gradient(m, m.params, {&h0, &h1}, cfg);
    EXPECT_NEAR(lg.loss, -on_tape, 1e-8);
    EXPECT_EQ(lg.grads.size(), m.params.size());
}

TEST_P(EachModel, RejectsMismatchedChannels)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(GetParam(), cfg, light_hyper(), 3);
    Rng rng(4);
    ChannelSample h = fatest::iid_sample(cfg, rng);
    h.H.pop_back();
    EXPECT_THROW(precode(m, m.params, {&h}, cfg), ShapeError);
    SystemConfig other = cfg;
    other.tx_antennas = 10;
    const ChannelSample g = fatest::iid_sample(other, rng);
    EXPECT_THROW(precode(m, m.params, {&g}, other), ShapeError);
}

TEST_P(EachModel, CheckpointRoundTrip)
{
    PrecoderModel m = make_model(GetParam(), SystemConfig{}, light_hyper(), 5);
    apply_multitask_partition(m);
    const ParamStore back = ParamStore::deserialize(m.params.serialize());
    EXPECT_EQ(back, m.params);
    EXPECT_GT(m.params.scalar_count(Partition::TaskSpecific), 0u);
    EXPECT_GT(m.params.scalar_count(Partition::Shared), 0u);
    EXPECT_EQ(m.params.scalar_count(Partition::TaskSpecific) + m.params.scalar_count(Partition::Shared),
              m.params.scalar_count());
}

// Finite-difference check of -sum_rate with respect to each parameter entry.
TEST_P(EachModel, GradientReachesEveryParameterGroup)
{
    SystemConfig cfg;
    cfg.num_users = 2;
    cfg.tx_antennas = 4;
    cfg.rx_antennas = 1;
    cfg.streams_per_user = 1;
    ModelHyper hyper = light_hyper();
    hyper.blackbox_hidden = 8;
    hyper.unfolded_layers = 2;
    const PrecoderModel m = make_model(GetParam(), cfg, hyper, 13);
    Rng rng(14);
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const ParamEntry& e = m.params.entry(i);
        const ad::GraphBuilder f = [&](ad::Tape& tape, ad::Var x) {
            std::vector<ad::Var> vars;
            for (std::size_t j = 0; j < m.params.size(); ++j) {
                vars.push_back(j == i ? x : tape.constant(m.params.entry(j).matrix()));
            }
            return ad::scale(batch_rate(m, tape, vars, {&h}, cfg), -1.0);
        };
        const ad::Perturb mode = e.is_complex ? ad::Perturb::Complex : ad::Perturb::RealOnly;
        EXPECT_LT(ad::grad_check(f, e.matrix(), 1e-6, mode), 1e-3) << e.name;
    }
}

INSTANTIATE_TEST_SUITE_P(Kinds, EachModel,
                         ::testing::Values(ModelKind::Blackbox, ModelKind::Unfolded, ModelKind::Fpn),
                         [](const ::testing::TestParamInfo<ModelKind>& info) { return to_string(info.param); });

TEST(Models, ParseKindNames)
{
    EXPECT_EQ(parse_model_kind("fpn"), ModelKind::Fpn);
    EXPECT_EQ(parse_model_kind(to_string(ModelKind::Blackbox)), ModelKind::Blackbox);
    EXPECT_THROW(parse_model_kind("resnet"), ConfigError);
}

TEST(Models, ParameterCountsOrdered)
{
    const SystemConfig cfg;
    const std::size_t unf = make_model(ModelKind::Unfolded, cfg).params.scalar_count();
    const std::size_t fpn = make_model(ModelKind::Fpn, cfg).params.scalar_count();
    const std::size_t bb = make_model(ModelKind::Blackbox, cfg).params.scalar_count();
    EXPECT_LT(unf, fpn);
    EXPECT_LT(fpn, bb);
    // 7 layers of three complex 8 x 8 matrices.
    EXPECT_EQ(unf, 7u * 3u * 2u * 64u);
}

TEST(Blackbox, ZeroParametersGiveZeroRate)
{
    const SystemConfig cfg;
    PrecoderModel m = make_model(ModelKind::Blackbox, cfg, light_hyper(), 1);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        std::fill(m.params.entry(i).data.begin(), m.params.entry(i).data.end(), 0.0);
    }
    Rng rng(5);
    const std::vector<ChannelSample> s{fatest::iid_sample(cfg, rng)};
    EXPECT_EQ(blackbox_forward(m, s[0], cfg).total_power(), 0.0);
    EXPECT_EQ(mean_sum_rate(m, m.params, s, cfg), 0.0);
    EXPECT_THROW(unfolded_forward(m, s[0], cfg), ConfigError);
}

// With X = 0, Y = I, Z = 0 the surrogate is exact on diagonal matrices, so one
// layer reproduces a WMMSE step on a diagonal channel.
TEST(Unfolded, IdentityInitMatchesWmmseOnDiagonalChannel)
{
    SystemConfig cfg;
    cfg.num_users = 1;
    cfg.tx_antennas = 2;
    cfg.rx_antennas = 2;
    cfg.streams_per_user = 2;
    cfg.snr_db = 0.0;
    ModelHyper hyper;
    hyper.unfolded_layers = 1;
    const PrecoderModel m = make_model(ModelKind::Unfolded, cfg, hyper);
    for (double g : {0.4, 1.3, 2.5}) {
        ChannelSample h;
        ComplexMatrix d(2, 2);
        d.set(0, 0, {1.0, 0.0});
        d.set(1, 1, {g, 0.0});
        h.H = {d};
        const WmmseState step = wmmse_step(wmmse_init(h, cfg), h, cfg);
        ASSERT_NEAR(step.V.total_power(), cfg.total_power, 1e-9);
        const PrecoderSet v = unfolded_forward(m, h, cfg);
        EXPECT_LT(distance(v.V[0], step.V.V[0]), 1e-8) << g;
    }
}

TEST(Unfolded, ZeroDiagonalIsAnError)
{
    const SystemConfig cfg;
    PrecoderModel m = make_model(ModelKind::Unfolded, cfg, light_hyper());
    ChannelSample h;
    h.H.assign(4, ComplexMatrix(2, 8));
    EXPECT_THROW(unfolded_forward(m, h, cfg), Error);
}

TEST(Lipschitz, ProjectionBoundsSpectralNorm)
{
    PrecoderModel m = make_model(ModelKind::Fpn, SystemConfig{}, {}, 3);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        ParamEntry& e = m.params.entry(i);
        for (double& x : e.data) {
            x *= 10.0;
        }
    }
    const ParamStore p = lipschitz_project(m.params, 0.9);
    std::size_t constrained = 0;
    for (const ParamEntry& e : p.entries()) {
        if (e.lipschitz_constrained) {
            ++constrained;
            EXPECT_LE(linalg::spectral_norm(e.matrix().re()), std::sqrt(0.9) + 1e-9) << e.name;
        }
    }
    EXPECT_EQ(constrained, 6u);
    EXPECT_THROW(lipschitz_project(p, 1.0), ConfigError);
    // Already-feasible weights are left alone up to rounding.
    const ParamStore again = lipschitz_project(p, 0.9);
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = 0; j < p.entry(i).data.size(); ++j) {
            EXPECT_NEAR(again.entry(i).data[j], p.entry(i).data[j], 1e-12);
        }
    }
}

TEST(Lipschitz, WorkedExamples)
{
    ParamStore s;
    ComplexMatrix small = ComplexMatrix::identity(3).scaled(0.1);
    s.add("small", small, false, Partition::Shared, true);
    s.add("big", ComplexMatrix::identity(3).scaled(2.0), false, Partition::Shared, true);
    s.add("free", ComplexMatrix::identity(3).scaled(2.0), false);
    const ParamStore p = lipschitz_project(s, 0.9);
    EXPECT_EQ(p.at("small").matrix(), small);
    EXPECT_NEAR(linalg::spectral_norm(p.at("big").matrix().re()), std::sqrt(0.9), 1e-6);
    EXPECT_EQ(p.at("free").matrix(), s.at("free").matrix());
}

TEST(Fpn, MapContractsOnRandomPairs)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(ModelKind::Fpn, cfg, {}, 11);
    Rng rng(6);
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    const FpnState z0 = fpn_initial_state(h, cfg);
    for (int rep = 0; rep < 20; ++rep) {
        const FpnState a = random_state(z0.size(), rng, 0.3);
        const FpnState b = random_state(z0.size(), rng, 0.3);
        const double ratio = (fpn_map(m, a, h, cfg) - fpn_map(m, b, h, cfg)).norm() / (a - b).norm();
        EXPECT_LT(ratio, 1.0);
    }
}

TEST(Fpn, SolveConvergesLinearly)
{
    const SystemConfig cfg;
    const PrecoderModel m = make_model(ModelKind::Fpn, cfg, {}, 12);
    Rng rng(7);
    for (int rep = 0; rep < 5; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const FpnSolution s = fpn_solve(m, h, cfg);
        ASSERT_FALSE(s.residuals.empty());
        EXPECT_LT(s.residuals.back(), m.hyper.fpn_tolerance);
        EXPECT_LE(s.iterations, m.hyper.fpn_max_iter);
        EXPECT_LE(s.V.total_power(), cfg.total_power + 1e-12);
        // The state is a fixed point of the map up to the tolerance.
        EXPECT_LT((fpn_map(m, s.state, h, cfg) - s.state).norm(), m.hyper.fpn_tolerance);
        const std::size_t n = s.residuals.size();
        if (n >= 3) {
            EXPECT_LT(s.residuals[n - 1] / s.residuals[n - 2], 1.0);
        }
    }
}

// A map contracting by at most gamma reaches step eps within the geometric-series count.
TEST(Fpn, IterationCountWithinGeometricBound)
{
    const SystemConfig cfg;
    ModelHyper hyper;
    hyper.fpn_gamma = 0.5;
    const PrecoderModel m = make_model(ModelKind::Fpn, cfg, hyper, 15);
    Rng rng(16);
    for (int rep = 0; rep < 10; ++rep) {
        const ChannelSample h = fatest::iid_sample(cfg, rng);
        const FpnSolution s = fpn_solve(m, h, cfg);
        const double r0 = s.residuals.front();
        const double bound = std::ceil(std::log(hyper.fpn_tolerance / r0) / std::log(0.5)) + 1.0;
        EXPECT_LE(static_cast<double>(s.iterations), std::max(bound, 1.0));
    }
}

TEST(Fpn, ExhaustedIterationsRaise)
{
    const SystemConfig cfg;
    ModelHyper hyper;
    hyper.fpn_max_iter = 1;
    hyper.fpn_tolerance = 1e-14;
    const PrecoderModel m = make_model(ModelKind::Fpn, cfg, hyper, 12);
    Rng rng(8);
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    EXPECT_THROW(fpn_solve(m, h, cfg), NumericError);
}

TEST(Fpn, StateLayoutCarriesPrecoders)
{
    const SystemConfig cfg;
    Rng rng(9);
    const ChannelSample h = fatest::iid_sample(cfg, rng);
    const FpnState z = fpn_initial_state(h, cfg);
    const PrecoderSet mrt = mrt_init(h, cfg);
    const PrecoderSet v = fpn_precoders(z, cfg);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_LT(distance(v.V[k], mrt.V[k]), 1e-12);
    }
}

TEST(Params, StoreBookkeeping)
{
    ParamStore s;
    s.add("a", ComplexMatrix::identity(2), true);
    s.add("b", ComplexMatrix(RealMatrix::Ones(3, 1)), false, Partition::TaskSpecific);
    EXPECT_THROW(s.add("a", ComplexMatrix::identity(1), false), ConfigError);
    EXPECT_EQ(s.scalar_count(), 11u);
    EXPECT_EQ(s.scalar_count(Partition::TaskSpecific), 3u);
    EXPECT_EQ(s.subset(Partition::Shared).size(), 1u);
    EXPECT_TRUE(s.find("b").has_value());
    EXPECT_FALSE(s.find("c").has_value());
    EXPECT_THROW(ParamStore::deserialize("XXXX"), IoError);
    EXPECT_THROW(ParamStore::load("/nonexistent/p.faps"), IoError);
}
