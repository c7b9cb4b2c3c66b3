#include "fastadapt/complex_matrix.hpp"

#include "fastadapt/error.hpp"

#include <cmath>
#include <string>

namespace fastadapt {

namespace {

void require_same_shape(const ComplexMatrix& a, const ComplexMatrix& b, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

} // namespace

ComplexMatrix::ComplexMatrix(Index rows, Index cols)
    : re_(RealMatrix::Zero(rows, cols)), im_(RealMatrix::Zero(rows, cols))
{
}

ComplexMatrix::ComplexMatrix(RealMatrix re, RealMatrix im) : re_(std::move(re)), im_(std::move(im))
{
    if (re_.rows() != im_.rows() || re_.cols() != im_.cols()) {
        throw ShapeError("ComplexMatrix: real and imaginary parts differ in shape");
    }
}

ComplexMatrix::ComplexMatrix(RealMatrix re) : re_(std::move(re))
{
    im_ = RealMatrix::Zero(re_.rows(), re_.cols());
}

ComplexMatrix ComplexMatrix::identity(Index n)
{
    return ComplexMatrix(RealMatrix::Identity(n, n));
}

ComplexMatrix ComplexMatrix::from_eigen(const EigenComplex& m)
{
    return ComplexMatrix(m.real(), m.imag());
}

ComplexMatrix ComplexMatrix::scalar(double re, double im)
{
    ComplexMatrix out(1, 1);
    out.re_(0, 0) = re;
    out.im_(0, 0) = im;
    return out;
}

EigenComplex ComplexMatrix::to_eigen() const
{
    EigenComplex out(rows(), cols());
    out.real() = re_;
    out.imag() = im_;
    return out;
}

void ComplexMatrix::set(Index r, Index c, Complex v)
{
    re_(r, c) = v.real();
    im_(r, c) = v.imag();
}

bool ComplexMatrix::is_real() const
{
    return (im_.array() == 0.0).all();
}

bool ComplexMatrix::all_finite() const
{
    return re_.allFinite() && im_.allFinite();
}

double ComplexMatrix::squared_norm() const
{
    return re_.squaredNorm() + im_.squaredNorm();
}

double ComplexMatrix::frobenius_norm() const
{
    return std::sqrt(squared_norm());
}

double ComplexMatrix::max_abs() const
{
    if (empty()) {
        return 0.0;
    }
    return (re_.array().square() + im_.array().square()).sqrt().maxCoeff();
}

ComplexMatrix ComplexMatrix::adjoint() const
{
    return ComplexMatrix(re_.transpose(), -im_.transpose());
}

ComplexMatrix ComplexMatrix::conjugate() const
{
    return ComplexMatrix(re_, -im_);
}

ComplexMatrix ComplexMatrix::scaled(double s) const
{
    return ComplexMatrix(re_ * s, im_ * s);
}

ComplexMatrix ComplexMatrix::scaled(Complex s) const
{
    return ComplexMatrix(re_ * s.real() - im_ * s.imag(), re_ * s.imag() + im_ * s.real());
}

ComplexMatrix& ComplexMatrix::operator+=(const ComplexMatrix& other)
{
    require_same_shape(*this, other, "add");
    re_ += other.re_;
    im_ += other.im_;
    return *this;
}

ComplexMatrix& ComplexMatrix::operator-=(const ComplexMatrix& other)
{
    require_same_shape(*this, other, "subtract");
    re_ -= other.re_;
    im_ -= other.im_;
    return *this;
}

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b)
{
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
    }
    const bool a_real = a.is_real();
    const bool b_real = b.is_real();
    if (a_real && b_real) {
        return ComplexMatrix(RealMatrix(a.re_ * b.re_));
    }
    if (a_real) {
        return ComplexMatrix(a.re_ * b.re_, a.re_ * b.im_);
    }
    if (b_real) {
        return ComplexMatrix(a.re_ * b.re_, a.im_ * b.re_);
    }
    RealMatrix re = a.re_ * b.re_;
    re.noalias() -= a.im_ * b.im_;
    RealMatrix im = a.re_ * b.im_;
    im.noalias() += a.im_ * b.re_;
    return ComplexMatrix(std::move(re), std::move(im));
}

bool operator==(const ComplexMatrix& a, const ComplexMatrix& b)
{
    return a.rows() == b.rows() && a.cols() == b.cols() && a.re_ == b.re_ && a.im_ == b.im_;
}

double distance(const ComplexMatrix& a, const ComplexMatrix& b)
{
    require_same_shape(a, b, "distance");
    return std::sqrt((a.re() - b.re()).squaredNorm() + (a.im() - b.im()).squaredNorm());
}

} // namespace fastadapt
