#pragma once

#include "fastadapt/complex_matrix.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace fastadapt::ad {

class Tape;
class Gradients;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

    const ComplexMatrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

enum class Op {
    Constant,
    Parameter,
    Add,
    Sub,
    Scale,
    ScaleBy,
    AddColumn,
    Matmul,
    Hermitian,
    Inverse,
    LogDet,
    Trace,
    SquaredNorm,
    Tanh,
    Sqrt,
    Reciprocal,
    Concat,
    Slice,
    Gather,
    Realify,
    Complexify,
    InvDiag,
    PowerMultiplier,
    Custom,
};

const char* op_name(Op op);

/// Receives the adjoint of a node's output and accumulates adjoints of its inputs.
using BackwardFn = std::function<void(const ComplexMatrix& adjoint, Gradients& grads)>;

struct TapeNode {
    std::size_t id = 0;
    Op op = Op::Constant;
    std::vector<std::size_t> inputs;
    ComplexMatrix value;
    bool requires_grad = false;
    BackwardFn backward;
};

/// Adjoints produced by a backward sweep, indexed by node id.
///
/// Gradients follow the real-pair convention: for a real loss L and a node
/// value Z = X + iY the adjoint is dL/dX + i dL/dY, so Z - lr * adjoint is a
/// descent step.
class Gradients {
public:
    explicit Gradients(std::size_t node_count) : adjoints_(node_count), present_(node_count, 0) {}

    bool has(std::size_t id) const { return present_[id] != 0; }
    bool has(Var v) const { return has(v.id()); }

    /// Adjoint of v, or zeros of v's shape when v was not reached.
    ComplexMatrix of(Var v) const;
    const ComplexMatrix* find(std::size_t id) const { return has(id) ? &adjoints_[id] : nullptr; }

    void accumulate(std::size_t id, const ComplexMatrix& contribution);
    void accumulate(std::size_t id, ComplexMatrix&& contribution);

private:
    std::vector<ComplexMatrix> adjoints_;
    std::vector<char> present_;
};

/// Dynamic reverse-mode tape. Nodes are appended in creation order, so every
/// input id is smaller than the id of the node consuming it.
///
/// A tape built with record == false keeps values only; it is used for
/// inference and never accepts a backward call.
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(std::size_t id) const { return nodes_[id]; }
    const ComplexMatrix& value(Var v) const { return nodes_[v.id()].value; }

    Var constant(ComplexMatrix value);
    /// Leaf node that receives an adjoint.
    Var parameter(ComplexMatrix value);

    /// Appends a node. The backward function is dropped when no input requires a gradient.
    Var push(Op op, std::vector<std::size_t> inputs, ComplexMatrix value, BackwardFn backward);

    /// Backward from a scalar loss. The root must be 1x1 with imaginary part below 1e-10.
    Gradients backward(Var root) const;

    /// Vector-Jacobian product: propagates an arbitrary seed adjoint from node.
    Gradients backward_from(Var node, const ComplexMatrix& seed) const;

private:
    bool record_;
    std::vector<TapeNode> nodes_;
};

// Primitive operations. Every operation validates shapes and throws
// ShapeError, SingularMatrixError or NumericError; messages name the node id.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var scale(Var a, Complex s);
/// Multiply a matrix by a 1x1 node.
Var scale_by(Var a, Var s);
/// Adds the column vector b to every column of a.
Var add_column(Var a, Var b);
Var matmul(Var a, Var b);
Var hermitian(Var a);
Var inverse(Var a);
/// Natural log-determinant of a Hermitian positive definite matrix (1x1 real).
Var logdet(Var a);
Var trace(Var a);
/// Sum of squared magnitudes (1x1 real).
Var squared_norm(Var a);
/// Elementwise tanh applied separately to real and imaginary parts.
Var tanh(Var a);
/// Square root of a non-negative real 1x1 node.
Var sqrt(Var a);
/// Reciprocal of a non-zero real 1x1 node.
Var reciprocal(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice(Var a, Index row, Index col, Index rows, Index cols);
/// out(flat i) = a(flat indices[i]) in column-major order; out has shape rows x cols.
Var gather(Var a, std::vector<Index> indices, Index rows, Index cols);
/// Stacks [Re(a); Im(a)] into a real (2r x c) node.
Var realify(Var a);
/// Inverse of realify: a real (2r x c) node becomes a complex (r x c) node.
Var complexify(Var a);
/// Diagonal matrix of reciprocals of a's diagonal; |a_ii| < 1e-12 is an error.
Var inv_diag(Var a);

/// Lagrange multiplier mu >= 0 with ||(A + mu I)^-1 B||_F^2 = power, or mu = 0
/// when the unregularized solution already fits the budget. Gradients follow
/// from the implicit function theorem. A must be Hermitian positive semidefinite.
Var power_multiplier(Var a, Var b, double power);

/// Node with a caller-supplied backward rule.
Var custom(std::span<const Var> inputs, ComplexMatrix value, BackwardFn backward);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return matmul(a, b); }

/// Builds a scalar-valued graph from a leaf.
using GraphBuilder = std::function<Var(Tape&, Var)>;

enum class Perturb { Complex, RealOnly };

/// Central finite-difference check of the adjoint of x.
/// Returns max over perturbed entries of |analytic - numeric| / (|numeric| + 1e-12).
double grad_check(const GraphBuilder& f, const ComplexMatrix& x, double step,
                  Perturb perturb = Perturb::Complex);

} // namespace fastadapt::ad
