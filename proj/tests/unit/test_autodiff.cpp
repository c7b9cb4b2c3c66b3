#include "../common/primitive_cases.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <gtest/gtest.h>

using namespace fastadapt;

class Primitive : public ::testing::TestWithParam<std::size_t> {};

TEST_P(Primitive, MatchesFiniteDifferences)
{
    const fatest::PrimitiveCase c = fatest::primitive_cases()[GetParam()];
    Rng rng(derive_seed(17, {GetParam()}));
    for (int instance = 0; instance < 5; ++instance) {
        const ad::GraphBuilder f = c.make(rng);
        const ComplexMatrix x = c.point(rng);
        EXPECT_LT(ad::grad_check(f, x, 1e-6, c.perturb), 1e-4) << c.name << " instance " << instance;
    }
}

INSTANTIATE_TEST_SUITE_P(All, Primitive, ::testing::Range<std::size_t>(0, fatest::primitive_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                             return fatest::primitive_cases()[info.param].name;
                         });

TEST(Tape, ValuesMatchDirectComputation)
{
    Rng rng(1);
    const ComplexMatrix a = fatest::gaussian(3, 3, rng);
    const ComplexMatrix b = fatest::gaussian(3, 2, rng);
    ad::Tape tape;
    const ad::Var va = tape.constant(a);
    const ad::Var vb = tape.parameter(b);
    EXPECT_EQ((va * vb).value(), a * b);
    EXPECT_EQ(ad::hermitian(vb).value(), b.adjoint());
    EXPECT_NEAR(ad::squared_norm(vb).value().re()(0, 0), b.squared_norm(), 1e-12);
    EXPECT_EQ(ad::realify(vb).value().re().topRows(3), b.re());
    EXPECT_EQ(ad::realify(vb).value().re().bottomRows(3), b.im());
}

TEST(Tape, ConstantsCarryNoBackward)
{
    ad::Tape tape;
    const ad::Var a = tape.constant(ComplexMatrix::identity(2));
    const ad::Var b = ad::matmul(a, a);
    EXPECT_FALSE(tape.node(b.id()).requires_grad);
    EXPECT_FALSE(static_cast<bool>(tape.node(b.id()).backward));
    const ad::Var p = tape.parameter(ComplexMatrix::identity(2));
    const ad::Var c = ad::matmul(a, p);
    EXPECT_TRUE(tape.node(c.id()).requires_grad);
}

TEST(Tape, UnreachedAdjointIsZero)
{
    ad::Tape tape;
    const ad::Var x = tape.parameter(ComplexMatrix::identity(2));
    const ad::Var unused = tape.parameter(ComplexMatrix(3, 1));
    const ad::Var loss = ad::squared_norm(x);
    const ad::Gradients g = tape.backward(loss);
    EXPECT_FALSE(g.has(unused));
    EXPECT_EQ(g.of(unused), ComplexMatrix(3, 1));
}

TEST(Tape, GradientConvention)
{
    // L = |z|^2 has adjoint dL/dRe + i dL/dIm = 2z.
    ad::Tape tape;
    const ad::Var z = tape.parameter(ComplexMatrix::scalar(0.3, -1.2));
    const ComplexMatrix g = tape.backward(ad::squared_norm(z)).of(z);
    EXPECT_NEAR(g.re()(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(g.im()(0, 0), -2.4, 1e-15);
}

TEST(Tape, BackwardRejectsComplexOrMatrixRoot)
{
    ad::Tape tape;
    const ad::Var z = tape.parameter(ComplexMatrix::scalar(0.0, 1.0));
    EXPECT_THROW(tape.backward(z), Error);
    const ad::Var m = tape.parameter(ComplexMatrix(2, 2));
    EXPECT_THROW(tape.backward(m), Error);
}

TEST(Tape, ValueOnlyTapeRefusesBackward)
{
    ad::Tape tape(false);
    const ad::Var x = tape.parameter(ComplexMatrix::scalar(2.0));
    const ad::Var y = ad::squared_norm(x);
    EXPECT_DOUBLE_EQ(y.value().re()(0, 0), 4.0);
    EXPECT_THROW(tape.backward(y), Error);
}

TEST(Tape, VectorJacobianProduct)
{
    Rng rng(3);
    const ComplexMatrix a = fatest::gaussian(3, 3, rng);
    const ComplexMatrix x0 = fatest::gaussian(3, 1, rng);
    const ComplexMatrix seed = fatest::gaussian(3, 1, rng);
    ad::Tape tape;
    const ad::Var x = tape.parameter(x0);
    const ad::Var y = ad::matmul(tape.constant(a), x);
    // For a linear map the VJP is A^H seed.
    const ComplexMatrix got = tape.backward_from(y, seed).of(x);
    EXPECT_LT(distance(got, a.adjoint() * seed), 1e-12);
}

TEST(Ops, ShapeErrorsNameTheProblem)
{
    ad::Tape tape;
    const ad::Var a = tape.parameter(ComplexMatrix(2, 3));
    const ad::Var b = tape.parameter(ComplexMatrix(2, 3));
    EXPECT_THROW(ad::matmul(a, b), ShapeError);
    EXPECT_THROW(ad::inverse(a), ShapeError);
    EXPECT_THROW(ad::slice(a, 1, 1, 2, 2), ShapeError);
    EXPECT_THROW(ad::gather(a, {0, 6}, 2, 1), ShapeError);
    EXPECT_THROW(ad::gather(a, {0, 1}, 3, 1), ShapeError);
}

TEST(Ops, InverseOfSingularThrows)
{
    ad::Tape tape;
    const ad::Var a = tape.parameter(ComplexMatrix(2, 2));
    EXPECT_THROW(ad::inverse(a), SingularMatrixError);
    EXPECT_THROW(ad::inv_diag(a), Error);
    EXPECT_THROW(ad::reciprocal(tape.constant(ComplexMatrix::scalar(0.0))), Error);
    EXPECT_THROW(ad::sqrt(tape.constant(ComplexMatrix::scalar(-1.0))), Error);
}

TEST(Ops, InverseValueAndLogdet)
{
    Rng rng(4);
    const ComplexMatrix h = fatest::hpd_point(4, rng);
    ad::Tape tape;
    const ad::Var v = tape.parameter(h);
    EXPECT_LT(distance(ad::inverse(v).value() * h, ComplexMatrix::identity(4)), 1e-10);
    EXPECT_NEAR(ad::logdet(v).value().re()(0, 0), linalg::logdet_hpd(h), 1e-12);
}

TEST(Ops, PowerMultiplierMeetsBudget)
{
    Rng rng(5);
    const ComplexMatrix c = fatest::gaussian(4, 2, rng);
    const ComplexMatrix b = fatest::gaussian(4, 3, rng);
    ad::Tape tape;
    const ad::Var mu = ad::power_multiplier(tape.constant(c * c.adjoint()), tape.constant(b), 0.7);
    const double m = mu.value().re()(0, 0);
    const ComplexMatrix reg = c * c.adjoint() + ComplexMatrix::identity(4).scaled(m);
    EXPECT_NEAR((linalg::inverse(reg) * b).squared_norm(), 0.7, 1e-7);
}

TEST(Ops, GatherUsesColumnMajorIndices)
{
    ComplexMatrix a(2, 2);
    a.re() << 1, 3, 2, 4;  // column-major flat order is 1, 2, 3, 4
    ad::Tape tape;
    const ad::Var g = ad::gather(tape.constant(a), {3, 0, 1}, 3, 1);
    EXPECT_EQ(g.value().re()(0, 0), 4.0);
    EXPECT_EQ(g.value().re()(1, 0), 1.0);
    EXPECT_EQ(g.value().re()(2, 0), 2.0);
}

TEST(GradCheck, RejectsOutOfRangeStep)
{
    const ad::GraphBuilder f = [](ad::Tape&, ad::Var x) { return ad::squared_norm(x); };
    EXPECT_THROW(ad::grad_check(f, ComplexMatrix::identity(2), 1e-2), ConfigError);
}

TEST(GradCheck, DetectsWrongAdjoint)
{
    // A custom node whose adjoint is off by a factor of two must be caught.
    const ad::GraphBuilder f = [](ad::Tape& tape, ad::Var x) {
        const ad::Var in[1] = {x};
        const std::size_t id = x.id();
        const ComplexMatrix xv = x.value();
        const ad::Var y = ad::custom(in, xv, [id](const ComplexMatrix& gy, ad::Gradients& g) {
            g.accumulate(id, gy.scaled(2.0));
        });
        (void)tape;
        return ad::squared_norm(y);
    };
    EXPECT_GT(ad::grad_check(f, ComplexMatrix::scalar(0.5, 0.25), 1e-6), 0.5);
}

TEST(Invariants, InverseResidualAtModerateCondition)
{
    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        // A = Q diag(s) R with singular values spread over [1, 1e5].
        const EigenComplex q = fatest::gaussian(5, 5, rng).to_eigen().householderQr().householderQ();
        const EigenComplex r = fatest::gaussian(5, 5, rng).to_eigen().householderQr().householderQ();
        Eigen::VectorXd s(5);
        s << 1.0, 10.0, 1e2, 1e3, 1e5;
        const ComplexMatrix a = ComplexMatrix::from_eigen(q * s.cast<Complex>().asDiagonal() * r);
        ad::Tape tape;
        const ComplexMatrix ai = ad::inverse(tape.parameter(a)).value();
        EXPECT_LT(distance(ai * a, ComplexMatrix::identity(5)), 1e-8);
    }
}

TEST(Invariants, RepeatedBackwardIsIdentical)
{
    Rng rng(22);
    const fatest::PrimitiveCase c = fatest::primitive_cases().back();
    const ad::GraphBuilder f = c.make(rng);
    ad::Tape tape;
    const ad::Var x = tape.parameter(c.point(rng));
    const ad::Var loss = f(tape, x);
    const ComplexMatrix g1 = tape.backward(loss).of(x);
    const ComplexMatrix g2 = tape.backward(loss).of(x);
    EXPECT_EQ(g1, g2);
}

TEST(Invariants, HermitianIsAnInvolution)
{
    Rng rng(23);
    const ComplexMatrix x = fatest::gaussian(3, 5, rng);
    ad::Tape tape;
    EXPECT_EQ(ad::hermitian(ad::hermitian(tape.parameter(x))).value(), x);
}
