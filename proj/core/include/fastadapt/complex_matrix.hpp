#pragma once

#include <Eigen/Dense>

#include <complex>

namespace fastadapt {

using Index = Eigen::Index;
using RealMatrix = Eigen::MatrixXd;
using EigenComplex = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Dense complex matrix stored as a pair of real matrices of identical shape.
///
/// Products skip the imaginary terms when an operand has an all-zero
/// imaginary part, so real-valued network layers cost a single real GEMM.
class ComplexMatrix {
public:
    ComplexMatrix() = default;
    ComplexMatrix(Index rows, Index cols);
    ComplexMatrix(RealMatrix re, RealMatrix im);
    explicit ComplexMatrix(RealMatrix re);

    static ComplexMatrix identity(Index n);
    static ComplexMatrix from_eigen(const EigenComplex& m);
    static ComplexMatrix scalar(double re, double im = 0.0);

    EigenComplex to_eigen() const;

    Index rows() const { return re_.rows(); }
    Index cols() const { return re_.cols(); }
    Index size() const { return re_.size(); }
    bool empty() const { return re_.size() == 0; }

    const RealMatrix& re() const { return re_; }
    const RealMatrix& im() const { return im_; }
    RealMatrix& re() { return re_; }
    RealMatrix& im() { return im_; }

    Complex operator()(Index r, Index c) const { return {re_(r, c), im_(r, c)}; }
    void set(Index r, Index c, Complex v);

    /// True when every imaginary entry is exactly zero.
    bool is_real() const;
    bool all_finite() const;
    double squared_norm() const;
    double frobenius_norm() const;
    double max_abs() const;

    /// Conjugate transpose.
    ComplexMatrix adjoint() const;
    ComplexMatrix conjugate() const;
    ComplexMatrix scaled(double s) const;
    ComplexMatrix scaled(Complex s) const;

    ComplexMatrix& operator+=(const ComplexMatrix& other);
    ComplexMatrix& operator-=(const ComplexMatrix& other);

    friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
    friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
    friend ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b);

    /// Exact (bitwise value) equality of shape and entries.
    friend bool operator==(const ComplexMatrix& a, const ComplexMatrix& b);

private:
    RealMatrix re_;
    RealMatrix im_;
};

/// Frobenius norm of a - b; shapes must match.
double distance(const ComplexMatrix& a, const ComplexMatrix& b);

} // namespace fastadapt
