#include "test_util.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

using namespace fastadapt;
using fatest::random_complex;
using fatest::random_hpd;

namespace {

double max_diff(const EigenComplex& a, const EigenComplex& b)
{
    return (a - b).cwiseAbs().maxCoeff();
}

} // namespace

TEST(ComplexMatrix, ProductMatchesEigenComplex)
{
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        const ComplexMatrix a = random_complex(3, 5, rng);
        const ComplexMatrix b = random_complex(5, 4, rng);
        EXPECT_LT(max_diff((a * b).to_eigen(), a.to_eigen() * b.to_eigen()), 1e-12);
    }
}

TEST(ComplexMatrix, RealOperandShortcutAgrees)
{
    Rng rng(2);
    const ComplexMatrix a = random_complex(4, 4, rng);
    const ComplexMatrix r(RealMatrix::Random(4, 3));
    EXPECT_LT(max_diff((a * r).to_eigen(), a.to_eigen() * r.to_eigen()), 1e-12);
    EXPECT_LT(max_diff((r.adjoint() * a).to_eigen(), r.to_eigen().adjoint() * a.to_eigen()), 1e-12);
}

TEST(ComplexMatrix, AdjointConjugateAndNorms)
{
    Rng rng(3);
    const ComplexMatrix a = random_complex(3, 2, rng);
    EXPECT_LT(max_diff(a.adjoint().to_eigen(), a.to_eigen().adjoint()), 0.0 + 1e-15);
    EXPECT_LT(max_diff(a.conjugate().to_eigen(), a.to_eigen().conjugate()), 1e-15);
    EXPECT_NEAR(a.squared_norm(), a.to_eigen().squaredNorm(), 1e-12);
    EXPECT_NEAR(a.frobenius_norm(), a.to_eigen().norm(), 1e-12);
    EXPECT_DOUBLE_EQ(distance(a, a), 0.0);
}

TEST(ComplexMatrix, ShapeMismatchThrows)
{
    const ComplexMatrix a(2, 3);
    const ComplexMatrix b(2, 3);
    EXPECT_THROW(a * b, ShapeError);
    EXPECT_THROW(distance(a, ComplexMatrix(3, 2)), ShapeError);
}

TEST(Linalg, InverseRoundTrip)
{
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const ComplexMatrix a = random_complex(5, 5, rng);
        const ComplexMatrix ai = linalg::inverse(a);
        EXPECT_LT(max_diff((a * ai).to_eigen(), EigenComplex::Identity(5, 5)), 1e-9);
    }
}

TEST(Linalg, SingularInverseThrows)
{
    ComplexMatrix a(3, 3);
    a.re() << 1, 2, 3, 2, 4, 6, 0, 1, 1;
    EXPECT_THROW(linalg::inverse(a), SingularMatrixError);
}

TEST(Linalg, HpdInverseAndLogdetMatchEigen)
{
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const ComplexMatrix a = random_hpd(4, rng);
        const Eigen::SelfAdjointEigenSolver<EigenComplex> es(a.to_eigen());
        EXPECT_NEAR(linalg::logdet_hpd(a), es.eigenvalues().array().log().sum(), 1e-10);
        EXPECT_LT(max_diff(linalg::inverse_hpd(a).to_eigen(), a.to_eigen().inverse()), 1e-10);
    }
}

TEST(Linalg, HpdRejectsIndefinite)
{
    ComplexMatrix a = ComplexMatrix::identity(2);
    a.re()(1, 1) = -1.0;
    EXPECT_THROW(linalg::logdet_hpd(a), SingularMatrixError);
}

TEST(Linalg, HermitianEigReconstructs)
{
    Rng rng(6);
    const ComplexMatrix a = random_hpd(5, rng, 0.0);
    const linalg::HermitianEig e = linalg::hermitian_eig(a);
    for (Index i = 1; i < e.values.size(); ++i) {
        EXPECT_LE(e.values(i - 1), e.values(i));
    }
    const EigenComplex q = e.vectors.to_eigen();
    const EigenComplex rebuilt = q * e.values.cast<Complex>().asDiagonal() * q.adjoint();
    EXPECT_LT(max_diff(rebuilt, a.to_eigen()), 1e-10);
    EXPECT_LT(max_diff(q.adjoint() * q, EigenComplex::Identity(5, 5)), 1e-10);
}

TEST(Linalg, SingularValuesMatchSvd)
{
    Rng rng(7);
    const ComplexMatrix a = random_complex(3, 6, rng);
    const Eigen::JacobiSVD<EigenComplex> svd(a.to_eigen());
    const Eigen::VectorXd s = linalg::singular_values(a);
    ASSERT_EQ(s.size(), 3);
    EXPECT_LT((s - svd.singularValues()).cwiseAbs().maxCoeff(), 1e-10);
    const RealMatrix r = RealMatrix::Random(7, 4);
    EXPECT_NEAR(linalg::spectral_norm(r), Eigen::JacobiSVD<RealMatrix>(r).singularValues()(0), 1e-10);
    EXPECT_NEAR(linalg::spectral_norm(RealMatrix(r.transpose())), linalg::spectral_norm(r), 1e-10);
}

TEST(Linalg, HermitianHelpers)
{
    Rng rng(8);
    const ComplexMatrix a = random_complex(4, 4, rng);
    const ComplexMatrix h = linalg::hermitian_part(a);
    EXPECT_LT(linalg::hermitian_deviation(h), 1e-15);
    EXPECT_GT(linalg::hermitian_deviation(a), 1e-3);
}

// The multiplier satisfies the power equation; checked against a direct solve.
TEST(Linalg, PowerMultiplierHitsBudget)
{
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const ComplexMatrix x = random_complex(6, 2, rng);
        const ComplexMatrix a = x * x.adjoint();  // rank 2, singular
        const ComplexMatrix b = random_complex(6, 3, rng);
        const linalg::HermitianEig e = linalg::hermitian_eig(a);
        const double mu = linalg::solve_power_multiplier(e.values, linalg::projected_weights(e, b), 1.0);
        ASSERT_GT(mu, 0.0);
        const EigenComplex m = a.to_eigen() + mu * EigenComplex::Identity(6, 6);
        const EigenComplex v = m.partialPivLu().solve(b.to_eigen());
        EXPECT_NEAR(v.squaredNorm(), 1.0, 1e-8);
        EXPECT_LT(max_diff(linalg::regularized_solve(e, b, mu).to_eigen(), v), 1e-9);
    }
}

TEST(Linalg, PowerMultiplierZeroWhenBudgetFits)
{
    const Eigen::VectorXd values = Eigen::VectorXd::Constant(3, 10.0);
    const Eigen::VectorXd weights = Eigen::VectorXd::Constant(3, 1.0);
    // sum 1 / 100 = 0.03 < 1
    EXPECT_EQ(linalg::solve_power_multiplier(values, weights, 1.0), 0.0);
}
