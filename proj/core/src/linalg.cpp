#include "fastadapt/linalg.hpp"

#include "fastadapt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fastadapt::linalg {

namespace {

void require_square(const ComplexMatrix& a, const char* what)
{
    if (a.rows() != a.cols()) {
        throw ShapeError(std::string(what) + ": matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + ", expected square");
    }
}

void require_hermitian(const ComplexMatrix& a, const char* what)
{
    require_square(a, what);
    const double scale = std::max(1.0, a.max_abs());
    if (hermitian_deviation(a) > kHermitianTolerance * scale) {
        throw SingularMatrixError(std::string(what) + ": input is not Hermitian");
    }
}

} // namespace

double hermitian_deviation(const ComplexMatrix& a)
{
    require_square(a, "hermitian_deviation");
    if (a.empty()) {
        return 0.0;
    }
    const RealMatrix dre = a.re() - a.re().transpose();
    const RealMatrix dim = a.im() + a.im().transpose();
    return (dre.array().square() + dim.array().square()).sqrt().maxCoeff();
}

ComplexMatrix hermitian_part(const ComplexMatrix& a)
{
    require_square(a, "hermitian_part");
    return ComplexMatrix(0.5 * (a.re() + a.re().transpose()), 0.5 * (a.im() - a.im().transpose()));
}

ComplexMatrix inverse(const ComplexMatrix& a)
{
    require_square(a, "inverse");
    if (a.is_real()) {
        const Eigen::PartialPivLU<RealMatrix> lu(a.re());
        if (!(lu.rcond() >= 1.0 / kMaxCondition)) {
            throw SingularMatrixError("inverse: condition estimate exceeds 1e12");
        }
        return ComplexMatrix(RealMatrix(lu.inverse()));
    }
    const Eigen::PartialPivLU<EigenComplex> lu(a.to_eigen());
    if (!(lu.rcond() >= 1.0 / kMaxCondition)) {
        throw SingularMatrixError("inverse: condition estimate exceeds 1e12");
    }
    return ComplexMatrix::from_eigen(lu.inverse());
}

double logdet_hpd(const ComplexMatrix& a)
{
    require_hermitian(a, "logdet");
    const Eigen::LLT<EigenComplex> llt(a.to_eigen());
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("logdet: matrix is not positive definite");
    }
    const auto diag = llt.matrixL().nestedExpression().diagonal();
    double sum = 0.0;
    for (Index i = 0; i < diag.size(); ++i) {
        const double d = diag(i).real();
        if (!(d > 0.0)) {
            throw SingularMatrixError("logdet: matrix is not positive definite");
        }
        sum += std::log(d);
    }
    return 2.0 * sum;
}

ComplexMatrix inverse_hpd(const ComplexMatrix& a)
{
    require_hermitian(a, "inverse_hpd");
    const Eigen::LLT<EigenComplex> llt(a.to_eigen());
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("inverse_hpd: matrix is not positive definite");
    }
    return ComplexMatrix::from_eigen(llt.solve(EigenComplex::Identity(a.rows(), a.cols())));
}

HermitianEig hermitian_eig(const ComplexMatrix& a)
{
    require_square(a, "hermitian_eig");
    const Eigen::SelfAdjointEigenSolver<EigenComplex> solver(hermitian_part(a).to_eigen());
    if (solver.info() != Eigen::Success) {
        throw NumericError("hermitian_eig: eigensolver did not converge");
    }
    return {solver.eigenvalues(), ComplexMatrix::from_eigen(solver.eigenvectors())};
}

Eigen::VectorXd singular_values(const ComplexMatrix& a)
{
    const Eigen::JacobiSVD<EigenComplex> svd(a.to_eigen());
    return svd.singularValues();
}

double spectral_norm(const RealMatrix& a)
{
    if (a.size() == 0) {
        return 0.0;
    }
    const RealMatrix g = a.rows() < a.cols() ? RealMatrix(a * a.transpose()) : RealMatrix(a.transpose() * a);
    const Eigen::SelfAdjointEigenSolver<RealMatrix> eig(g, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
}

} // namespace fastadapt::linalg

namespace fastadapt::linalg {

namespace {

double power_at(const Eigen::VectorXd& lambda, const Eigen::VectorXd& weights, double mu)
{
    double p = 0.0;
    for (Index i = 0; i < lambda.size(); ++i) {
        if (weights(i) == 0.0) {
            continue;
        }
        const double denom = lambda(i) + mu;
        if (denom <= 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        p += weights(i) / (denom * denom);
    }
    return p;
}

double power_slope(const Eigen::VectorXd& lambda, const Eigen::VectorXd& weights, double mu)
{
    double s = 0.0;
    for (Index i = 0; i < lambda.size(); ++i) {
        if (weights(i) == 0.0) {
            continue;
        }
        const double denom = lambda(i) + mu;
        s -= 2.0 * weights(i) / (denom * denom * denom);
    }
    return s;
}

} // namespace

double solve_power_multiplier(const Eigen::VectorXd& eigenvalues, const Eigen::VectorXd& weights,
                              double power)
{
    if (!(power > 0.0)) {
        throw ConfigError("solve_power_multiplier: power budget must be positive");
    }
    if (eigenvalues.size() != weights.size()) {
        throw ShapeError("solve_power_multiplier: eigenvalue and weight counts differ");
    }
    if (!eigenvalues.allFinite() || !weights.allFinite()) {
        throw NumericError("solve_power_multiplier: non-finite input");
    }
    const double top = eigenvalues.size() > 0 ? std::max(eigenvalues.maxCoeff(), 0.0) : 0.0;
    // Eigenvalues below round-off of the spectrum are treated as exact zeros.
    Eigen::VectorXd lambda = eigenvalues;
    for (Index i = 0; i < lambda.size(); ++i) {
        if (lambda(i) <= 1e-13 * top) {
            lambda(i) = 0.0;
        }
    }
    Eigen::VectorXd w = weights;
    const double wmax = w.size() > 0 ? w.maxCoeff() : 0.0;
    if (wmax == 0.0) {
        return 0.0;
    }
    for (Index i = 0; i < w.size(); ++i) {
        if (w(i) <= 1e-28 * wmax) {
            w(i) = 0.0;
        }
    }
    if (power_at(lambda, w, 0.0) <= power) {
        return 0.0;
    }

    double hi = 1.0;
    int doublings = 0;
    while (!(power_at(lambda, w, hi) < power)) {
        hi *= 2.0;
        if (++doublings > 2000 || !std::isfinite(hi)) {
            throw NumericError("solve_power_multiplier: failed to bracket the multiplier");
        }
    }
    double lo = 0.0;
    double mu = hi;
    for (int step = 0; step < 100; ++step) {
        mu = 0.5 * (lo + hi);
        const double p = power_at(lambda, w, mu);
        if (std::abs(p - power) < 1e-8 * power) {
            break;
        }
        if (p > power) {
            lo = mu;
        } else {
            hi = mu;
        }
    }
    for (int step = 0; step < 8; ++step) {
        const double p = power_at(lambda, w, mu);
        const double err = p - power;
        if (std::abs(err) <= 4.0 * std::numeric_limits<double>::epsilon() * power) {
            break;
        }
        if (err > 0.0) {
            lo = std::max(lo, mu);
        } else {
            hi = std::min(hi, mu);
        }
        const double next = mu - err / power_slope(lambda, w, mu);
        if (!(next > lo && next < hi)) {
            break;
        }
        mu = next;
    }
    return mu;
}

Eigen::VectorXd projected_weights(const HermitianEig& eig, const ComplexMatrix& b)
{
    const ComplexMatrix qb = eig.vectors.adjoint() * b;
    return (qb.re().array().square() + qb.im().array().square()).rowwise().sum().matrix();
}

ComplexMatrix regularized_solve(const HermitianEig& eig, const ComplexMatrix& b, double mu)
{
    ComplexMatrix qb = eig.vectors.adjoint() * b;
    for (Index i = 0; i < qb.rows(); ++i) {
        const double denom = std::max(eig.values(i), 0.0) + mu;
        const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
        qb.re().row(i) *= inv;
        qb.im().row(i) *= inv;
    }
    return eig.vectors * qb;
}

} // namespace fastadapt::linalg
