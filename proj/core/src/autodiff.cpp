#include "fastadapt/autodiff.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <cmath>
#include <string>

namespace fastadapt::ad {

namespace {

std::string shape_str(const ComplexMatrix& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::string where(const Tape& t, Op op)
{
    return std::string("node ") + std::to_string(t.size()) + " (" + op_name(op) + ")";
}

Tape& same_tape(Var a, Var b, Op op)
{
    if (!a.valid() || !b.valid()) {
        throw Error(std::string(op_name(op)) + ": invalid variable");
    }
    if (a.tape() != b.tape()) {
        throw Error(std::string(op_name(op)) + ": operands live on different tapes");
    }
    return *a.tape();
}

Tape& tape_of(Var a, Op op)
{
    if (!a.valid()) {
        throw Error(std::string(op_name(op)) + ": invalid variable");
    }
    return *a.tape();
}

void require_same_shape(const Tape& t, Op op, const ComplexMatrix& a, const ComplexMatrix& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(where(t, op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

void require_square(const Tape& t, Op op, const ComplexMatrix& a)
{
    if (a.rows() != a.cols()) {
        throw ShapeError(where(t, op) + ": expected square matrix, got " + shape_str(a));
    }
}

void require_real_scalar(const Tape& t, Op op, const ComplexMatrix& a)
{
    if (a.rows() != 1 || a.cols() != 1) {
        throw ShapeError(where(t, op) + ": expected 1x1 operand, got " + shape_str(a));
    }
    if (a.im()(0, 0) != 0.0) {
        throw NumericError(where(t, op) + ": expected real scalar");
    }
}

void require_finite(const Tape& t, Op op, const ComplexMatrix& v)
{
    if (!v.all_finite()) {
        throw NumericError(where(t, op) + ": produced non-finite values");
    }
}

bool needs(const Tape& t, std::size_t id)
{
    return t.node(id).requires_grad;
}

} // namespace

const char* op_name(Op op)
{
    switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Scale: return "scale";
    case Op::ScaleBy: return "scale_by";
    case Op::AddColumn: return "add_column";
    case Op::Matmul: return "matmul";
    case Op::Hermitian: return "hermitian";
    case Op::Inverse: return "inverse";
    case Op::LogDet: return "logdet";
    case Op::Trace: return "trace";
    case Op::SquaredNorm: return "squared_norm";
    case Op::Tanh: return "tanh";
    case Op::Sqrt: return "sqrt";
    case Op::Reciprocal: return "reciprocal";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Gather: return "gather";
    case Op::Realify: return "realify";
    case Op::Complexify: return "complexify";
    case Op::InvDiag: return "inv_diag";
    case Op::PowerMultiplier: return "power_multiplier";
    case Op::Custom: return "custom";
    }
    return "unknown";
}

const ComplexMatrix& Var::value() const
{
    return tape_->value(*this);
}

ComplexMatrix Gradients::of(Var v) const
{
    if (has(v.id())) {
        return adjoints_[v.id()];
    }
    return ComplexMatrix(v.rows(), v.cols());
}

void Gradients::accumulate(std::size_t id, const ComplexMatrix& contribution)
{
    if (present_[id]) {
        adjoints_[id] += contribution;
    } else {
        adjoints_[id] = contribution;
        present_[id] = 1;
    }
}

void Gradients::accumulate(std::size_t id, ComplexMatrix&& contribution)
{
    if (present_[id]) {
        adjoints_[id] += contribution;
    } else {
        adjoints_[id] = std::move(contribution);
        present_[id] = 1;
    }
}

Var Tape::constant(ComplexMatrix value)
{
    const std::size_t id = nodes_.size();
    nodes_.push_back(TapeNode{id, Op::Constant, {}, std::move(value), false, nullptr});
    return Var(this, id);
}

Var Tape::parameter(ComplexMatrix value)
{
    const std::size_t id = nodes_.size();
    nodes_.push_back(TapeNode{id, Op::Parameter, {}, std::move(value), record_, nullptr});
    return Var(this, id);
}

Var Tape::push(Op op, std::vector<std::size_t> inputs, ComplexMatrix value, BackwardFn backward)
{
    const std::size_t id = nodes_.size();
    bool grad = false;
    if (record_) {
        for (const std::size_t in : inputs) {
            grad = grad || nodes_[in].requires_grad;
        }
    }
    TapeNode node{id, op, std::move(inputs), std::move(value), grad, nullptr};
    if (grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, id);
}

Gradients Tape::backward(Var root) const
{
    const ComplexMatrix& v = value(root);
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("backward: root node " + std::to_string(root.id()) + " is " + shape_str(v) +
                         ", expected a scalar");
    }
    if (std::abs(v.im()(0, 0)) >= 1e-10) {
        throw NumericError("backward: root node " + std::to_string(root.id()) +
                           " has an imaginary part; the loss graph is not real");
    }
    return backward_from(root, ComplexMatrix::scalar(1.0));
}

Gradients Tape::backward_from(Var node, const ComplexMatrix& seed) const
{
    if (!record_) {
        throw Error("backward: tape was built without recording");
    }
    if (node.tape() != this) {
        throw Error("backward: node belongs to another tape");
    }
    require_same_shape(*this, nodes_[node.id()].op, seed, value(node));
    Gradients grads(nodes_.size());
    grads.accumulate(node.id(), seed);
    for (std::size_t i = node.id() + 1; i-- > 0;) {
        const TapeNode& n = nodes_[i];
        if (!n.backward || !grads.has(i)) {
            continue;
        }
        n.backward(*grads.find(i), grads);
    }
    return grads;
}

Var add(Var a, Var b)
{
    Tape& t = same_tape(a, b, Op::Add);
    require_same_shape(t, Op::Add, a.value(), b.value());
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const Tape* tp = &t;
    return t.push(Op::Add, {ia, ib}, a.value() + b.value(),
                  [tp, ia, ib](const ComplexMatrix& adj, Gradients& g) {
                      if (needs(*tp, ia)) g.accumulate(ia, adj);
                      if (needs(*tp, ib)) g.accumulate(ib, adj);
                  });
}

Var sub(Var a, Var b)
{
    Tape& t = same_tape(a, b, Op::Sub);
    require_same_shape(t, Op::Sub, a.value(), b.value());
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const Tape* tp = &t;
    return t.push(Op::Sub, {ia, ib}, a.value() - b.value(),
                  [tp, ia, ib](const ComplexMatrix& adj, Gradients& g) {
                      if (needs(*tp, ia)) g.accumulate(ia, adj);
                      if (needs(*tp, ib)) g.accumulate(ib, adj.scaled(-1.0));
                  });
}

Var scale(Var a, double s)
{
    Tape& t = tape_of(a, Op::Scale);
    const std::size_t ia = a.id();
    return t.push(Op::Scale, {ia}, a.value().scaled(s),
                  [ia, s](const ComplexMatrix& adj, Gradients& g) { g.accumulate(ia, adj.scaled(s)); });
}

Var scale(Var a, Complex s)
{
    Tape& t = tape_of(a, Op::Scale);
    const std::size_t ia = a.id();
    return t.push(Op::Scale, {ia}, a.value().scaled(s), [ia, s](const ComplexMatrix& adj, Gradients& g) {
        g.accumulate(ia, adj.scaled(std::conj(s)));
    });
}

Var scale_by(Var a, Var s)
{
    Tape& t = same_tape(a, s, Op::ScaleBy);
    const ComplexMatrix& sv = s.value();
    if (sv.rows() != 1 || sv.cols() != 1) {
        throw ShapeError(where(t, Op::ScaleBy) + ": scale must be 1x1, got " + shape_str(sv));
    }
    const Complex factor = sv(0, 0);
    const std::size_t ia = a.id();
    const std::size_t is = s.id();
    const Tape* tp = &t;
    return t.push(Op::ScaleBy, {ia, is}, a.value().scaled(factor),
                  [tp, ia, is, factor](const ComplexMatrix& adj, Gradients& g) {
                      if (needs(*tp, ia)) g.accumulate(ia, adj.scaled(std::conj(factor)));
                      if (needs(*tp, is)) {
                          const ComplexMatrix& av = tp->node(ia).value;
                          const double re = (adj.re().array() * av.re().array() +
                                             adj.im().array() * av.im().array()).sum();
                          const double im = (adj.im().array() * av.re().array() -
                                             adj.re().array() * av.im().array()).sum();
                          g.accumulate(is, ComplexMatrix::scalar(re, im));
                      }
                  });
}

Var add_column(Var a, Var b)
{
    Tape& t = same_tape(a, b, Op::AddColumn);
    const ComplexMatrix& av = a.value();
    const ComplexMatrix& bv = b.value();
    if (bv.cols() != 1 || bv.rows() != av.rows()) {
        throw ShapeError(where(t, Op::AddColumn) + ": column " + shape_str(bv) + " does not match " +
                         shape_str(av));
    }
    RealMatrix re = av.re().colwise() + bv.re().col(0);
    RealMatrix im = av.im().colwise() + bv.im().col(0);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const Tape* tp = &t;
    return t.push(Op::AddColumn, {ia, ib}, ComplexMatrix(std::move(re), std::move(im)),
                  [tp, ia, ib](const ComplexMatrix& adj, Gradients& g) {
                      if (needs(*tp, ia)) g.accumulate(ia, adj);
                      if (needs(*tp, ib)) {
                          g.accumulate(ib, ComplexMatrix(RealMatrix(adj.re().rowwise().sum()),
                                                         RealMatrix(adj.im().rowwise().sum())));
                      }
                  });
}

Var matmul(Var a, Var b)
{
    Tape& t = same_tape(a, b, Op::Matmul);
    if (a.value().cols() != b.value().rows()) {
        throw ShapeError(where(t, Op::Matmul) + ": cannot multiply " + shape_str(a.value()) + " by " +
                         shape_str(b.value()));
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const Tape* tp = &t;
    return t.push(Op::Matmul, {ia, ib}, a.value() * b.value(),
                  [tp, ia, ib](const ComplexMatrix& adj, Gradients& g) {
                      if (needs(*tp, ia)) g.accumulate(ia, adj * tp->node(ib).value.adjoint());
                      if (needs(*tp, ib)) g.accumulate(ib, tp->node(ia).value.adjoint() * adj);
                  });
}

Var hermitian(Var a)
{
    Tape& t = tape_of(a, Op::Hermitian);
    const std::size_t ia = a.id();
    return t.push(Op::Hermitian, {ia}, a.value().adjoint(),
                  [ia](const ComplexMatrix& adj, Gradients& g) { g.accumulate(ia, adj.adjoint()); });
}

Var inverse(Var a)
{
    Tape& t = tape_of(a, Op::Inverse);
    require_square(t, Op::Inverse, a.value());
    ComplexMatrix inv;
    try {
        inv = linalg::inverse(a.value());
    } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(where(t, Op::Inverse) + ": " + e.what());
    }
    const std::size_t ia = a.id();
    const std::size_t out = t.size();
    const Tape* tp = &t;
    return t.push(Op::Inverse, {ia}, std::move(inv), [tp, ia, out](const ComplexMatrix& adj, Gradients& g) {
        const ComplexMatrix yh = tp->node(out).value.adjoint();
        g.accumulate(ia, (yh * adj * yh).scaled(-1.0));
    });
}

Var logdet(Var a)
{
    Tape& t = tape_of(a, Op::LogDet);
    require_square(t, Op::LogDet, a.value());
    double value = 0.0;
    try {
        value = linalg::logdet_hpd(a.value());
    } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(where(t, Op::LogDet) + ": " + e.what());
    }
    const std::size_t ia = a.id();
    const Tape* tp = &t;
    return t.push(Op::LogDet, {ia}, ComplexMatrix::scalar(value),
                  [tp, ia](const ComplexMatrix& adj, Gradients& g) {
                      const ComplexMatrix inv = linalg::inverse_hpd(tp->node(ia).value);
                      g.accumulate(ia, inv.adjoint().scaled(adj.re()(0, 0)));
                  });
}

Var trace(Var a)
{
    Tape& t = tape_of(a, Op::Trace);
    require_square(t, Op::Trace, a.value());
    const Index n = a.value().rows();
    const std::size_t ia = a.id();
    return t.push(Op::Trace, {ia},
                  ComplexMatrix::scalar(a.value().re().trace(), a.value().im().trace()),
                  [ia, n](const ComplexMatrix& adj, Gradients& g) {
                      g.accumulate(ia, ComplexMatrix::identity(n).scaled(adj(0, 0)));
                  });
}

Var squared_norm(Var a)
{
    Tape& t = tape_of(a, Op::SquaredNorm);
    const std::size_t ia = a.id();
    const Tape* tp = &t;
    return t.push(Op::SquaredNorm, {ia}, ComplexMatrix::scalar(a.value().squared_norm()),
                  [tp, ia](const ComplexMatrix& adj, Gradients& g) {
                      g.accumulate(ia, tp->node(ia).value.scaled(2.0 * adj.re()(0, 0)));
                  });
}

Var tanh(Var a)
{
    Tape& t = tape_of(a, Op::Tanh);
    const ComplexMatrix& av = a.value();
    ComplexMatrix out(RealMatrix(av.re().array().tanh()), RealMatrix(av.im().array().tanh()));
    const std::size_t ia = a.id();
    const std::size_t io = t.size();
    const Tape* tp = &t;
    return t.push(Op::Tanh, {ia}, std::move(out), [tp, ia, io](const ComplexMatrix& adj, Gradients& g) {
        const ComplexMatrix& y = tp->node(io).value;
        g.accumulate(ia, ComplexMatrix(RealMatrix(adj.re().array() * (1.0 - y.re().array().square())),
                                       RealMatrix(adj.im().array() * (1.0 - y.im().array().square()))));
    });
}

Var sqrt(Var a)
{
    Tape& t = tape_of(a, Op::Sqrt);
    require_real_scalar(t, Op::Sqrt, a.value());
    const double x = a.value().re()(0, 0);
    if (!(x >= 0.0)) {
        throw NumericError(where(t, Op::Sqrt) + ": negative argument");
    }
    const double y = std::sqrt(x);
    const std::size_t ia = a.id();
    return t.push(Op::Sqrt, {ia}, ComplexMatrix::scalar(y), [ia, y](const ComplexMatrix& adj, Gradients& g) {
        g.accumulate(ia, ComplexMatrix::scalar(y > 0.0 ? adj.re()(0, 0) / (2.0 * y) : 0.0));
    });
}

Var reciprocal(Var a)
{
    Tape& t = tape_of(a, Op::Reciprocal);
    require_real_scalar(t, Op::Reciprocal, a.value());
    const double x = a.value().re()(0, 0);
    if (x == 0.0) {
        throw NumericError(where(t, Op::Reciprocal) + ": division by zero");
    }
    const std::size_t ia = a.id();
    return t.push(Op::Reciprocal, {ia}, ComplexMatrix::scalar(1.0 / x),
                  [ia, x](const ComplexMatrix& adj, Gradients& g) {
                      g.accumulate(ia, ComplexMatrix::scalar(-adj.re()(0, 0) / (x * x)));
                  });
}

namespace {

Var concat(std::span<const Var> parts, bool rows)
{
    if (parts.empty()) {
        throw ShapeError("concat: no operands");
    }
    Tape& t = tape_of(parts[0], Op::Concat);
    Index total = 0;
    const Index fixed = rows ? parts[0].value().cols() : parts[0].value().rows();
    std::vector<std::size_t> ids;
    std::vector<Index> extents;
    ids.reserve(parts.size());
    for (const Var& p : parts) {
        if (p.tape() != &t) {
            throw Error("concat: operands live on different tapes");
        }
        const ComplexMatrix& v = p.value();
        if ((rows ? v.cols() : v.rows()) != fixed) {
            throw ShapeError(where(t, Op::Concat) + ": operand " + shape_str(v) + " does not align");
        }
        const Index extent = rows ? v.rows() : v.cols();
        ids.push_back(p.id());
        extents.push_back(extent);
        total += extent;
    }
    ComplexMatrix out = rows ? ComplexMatrix(total, fixed) : ComplexMatrix(fixed, total);
    Index offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const ComplexMatrix& v = t.node(ids[k]).value;
        if (rows) {
            out.re().middleRows(offset, extents[k]) = v.re();
            out.im().middleRows(offset, extents[k]) = v.im();
        } else {
            out.re().middleCols(offset, extents[k]) = v.re();
            out.im().middleCols(offset, extents[k]) = v.im();
        }
        offset += extents[k];
    }
    const Tape* tp = &t;
    std::vector<std::size_t> inputs = ids;
    return t.push(Op::Concat, std::move(inputs), std::move(out),
                  [tp, ids, extents, rows](const ComplexMatrix& adj, Gradients& g) {
                      Index off = 0;
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (needs(*tp, ids[k])) {
                              if (rows) {
                                  g.accumulate(ids[k], ComplexMatrix(RealMatrix(adj.re().middleRows(off, extents[k])),
                                                                     RealMatrix(adj.im().middleRows(off, extents[k]))));
                              } else {
                                  g.accumulate(ids[k], ComplexMatrix(RealMatrix(adj.re().middleCols(off, extents[k])),
                                                                     RealMatrix(adj.im().middleCols(off, extents[k]))));
                              }
                          }
                          off += extents[k];
                      }
                  });
}

} // namespace

Var concat_rows(std::span<const Var> parts)
{
    return concat(parts, true);
}

Var concat_cols(std::span<const Var> parts)
{
    return concat(parts, false);
}

Var slice(Var a, Index row, Index col, Index rows, Index cols)
{
    Tape& t = tape_of(a, Op::Slice);
    const ComplexMatrix& av = a.value();
    if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > av.rows() || col + cols > av.cols()) {
        throw ShapeError(where(t, Op::Slice) + ": block out of range for " + shape_str(av));
    }
    ComplexMatrix out(RealMatrix(av.re().block(row, col, rows, cols)),
                      RealMatrix(av.im().block(row, col, rows, cols)));
    const std::size_t ia = a.id();
    const Index src_rows = av.rows();
    const Index src_cols = av.cols();
    return t.push(Op::Slice, {ia}, std::move(out),
                  [ia, row, col, rows, cols, src_rows, src_cols](const ComplexMatrix& adj, Gradients& g) {
                      ComplexMatrix full(src_rows, src_cols);
                      full.re().block(row, col, rows, cols) = adj.re();
                      full.im().block(row, col, rows, cols) = adj.im();
                      g.accumulate(ia, std::move(full));
                  });
}

Var gather(Var a, std::vector<Index> indices, Index rows, Index cols)
{
    Tape& t = tape_of(a, Op::Gather);
    const ComplexMatrix& av = a.value();
    if (rows * cols != static_cast<Index>(indices.size())) {
        throw ShapeError(where(t, Op::Gather) + ": index count does not match output shape");
    }
    ComplexMatrix out(rows, cols);
    const Index n = av.size();
    for (Index i = 0; i < rows * cols; ++i) {
        const Index src = indices[static_cast<std::size_t>(i)];
        if (src < 0 || src >= n) {
            throw ShapeError(where(t, Op::Gather) + ": index out of range");
        }
        out.re().data()[i] = av.re().data()[src];
        out.im().data()[i] = av.im().data()[src];
    }
    const std::size_t ia = a.id();
    const Index src_rows = av.rows();
    const Index src_cols = av.cols();
    return t.push(Op::Gather, {ia}, std::move(out),
                  [ia, idx = std::move(indices), src_rows, src_cols](const ComplexMatrix& adj, Gradients& g) {
                      ComplexMatrix full(src_rows, src_cols);
                      for (std::size_t i = 0; i < idx.size(); ++i) {
                          full.re().data()[idx[i]] += adj.re().data()[i];
                          full.im().data()[idx[i]] += adj.im().data()[i];
                      }
                      g.accumulate(ia, std::move(full));
                  });
}

Var realify(Var a)
{
    Tape& t = tape_of(a, Op::Realify);
    const ComplexMatrix& av = a.value();
    const Index r = av.rows();
    RealMatrix stacked(2 * r, av.cols());
    stacked.topRows(r) = av.re();
    stacked.bottomRows(r) = av.im();
    const std::size_t ia = a.id();
    return t.push(Op::Realify, {ia}, ComplexMatrix(std::move(stacked)),
                  [ia, r](const ComplexMatrix& adj, Gradients& g) {
                      g.accumulate(ia, ComplexMatrix(RealMatrix(adj.re().topRows(r)),
                                                     RealMatrix(adj.re().bottomRows(r))));
                  });
}

Var complexify(Var a)
{
    Tape& t = tape_of(a, Op::Complexify);
    const ComplexMatrix& av = a.value();
    if (av.rows() % 2 != 0) {
        throw ShapeError(where(t, Op::Complexify) + ": row count must be even, got " + shape_str(av));
    }
    if (!av.is_real()) {
        throw NumericError(where(t, Op::Complexify) + ": input must be real");
    }
    const Index r = av.rows() / 2;
    ComplexMatrix out(RealMatrix(av.re().topRows(r)), RealMatrix(av.re().bottomRows(r)));
    const std::size_t ia = a.id();
    return t.push(Op::Complexify, {ia}, std::move(out), [ia, r](const ComplexMatrix& adj, Gradients& g) {
        RealMatrix stacked(2 * r, adj.cols());
        stacked.topRows(r) = adj.re();
        stacked.bottomRows(r) = adj.im();
        g.accumulate(ia, ComplexMatrix(std::move(stacked)));
    });
}

Var inv_diag(Var a)
{
    Tape& t = tape_of(a, Op::InvDiag);
    require_square(t, Op::InvDiag, a.value());
    const ComplexMatrix& av = a.value();
    const Index n = av.rows();
    ComplexMatrix out(n, n);
    std::vector<Complex> inv(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const Complex d = av(i, i);
        if (std::abs(d) < 1e-12) {
            throw SingularMatrixError(where(t, Op::InvDiag) + ": diagonal entry " + std::to_string(i) +
                                      " is zero");
        }
        inv[static_cast<std::size_t>(i)] = 1.0 / d;
        out.set(i, i, inv[static_cast<std::size_t>(i)]);
    }
    const std::size_t ia = a.id();
    return t.push(Op::InvDiag, {ia}, std::move(out), [ia, n, inv](const ComplexMatrix& adj, Gradients& g) {
        ComplexMatrix da(n, n);
        for (Index i = 0; i < n; ++i) {
            const Complex r = inv[static_cast<std::size_t>(i)];
            // d(1/a) = -da / a^2, so the adjoint picks up conj(-1/a^2).
            da.set(i, i, std::conj(-r * r) * adj(i, i));
        }
        g.accumulate(ia, std::move(da));
    });
}

Var power_multiplier(Var a, Var b, double power)
{
    Tape& t = same_tape(a, b, Op::PowerMultiplier);
    require_square(t, Op::PowerMultiplier, a.value());
    if (b.value().rows() != a.value().rows()) {
        throw ShapeError(where(t, Op::PowerMultiplier) + ": right-hand side " + shape_str(b.value()) +
                         " does not match " + shape_str(a.value()));
    }
    const linalg::HermitianEig eig = linalg::hermitian_eig(a.value());
    const double mu =
        linalg::solve_power_multiplier(eig.values, linalg::projected_weights(eig, b.value()), power);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const Tape* tp = &t;
    return t.push(Op::PowerMultiplier, {ia, ib}, ComplexMatrix::scalar(mu),
                  [tp, ia, ib, eig, mu](const ComplexMatrix& adj, Gradients& g) {
                      if (mu == 0.0) {
                          return;
                      }
                      // Implicit differentiation of ||(A + mu I)^-1 B||^2 = power.
                      const Index n = eig.values.size();
                      RealMatrix d = RealMatrix::Zero(n, n);
                      for (Index i = 0; i < n; ++i) {
                          d(i, i) = 1.0 / (std::max(eig.values(i), 0.0) + mu);
                      }
                      const ComplexMatrix m = eig.vectors * ComplexMatrix(d) * eig.vectors.adjoint();
                      const ComplexMatrix v = m * tp->node(ib).value;
                      const ComplexMatrix mv = m * v;
                      const double slope =
                          -2.0 * (v.re().array() * mv.re().array() + v.im().array() * mv.im().array()).sum();
                      const double gmu = adj.re()(0, 0);
                      if (needs(*tp, ia)) g.accumulate(ia, (mv * v.adjoint()).scaled(2.0 * gmu / slope));
                      if (needs(*tp, ib)) g.accumulate(ib, mv.scaled(-2.0 * gmu / slope));
                  });
}

Var custom(std::span<const Var> inputs, ComplexMatrix value, BackwardFn backward)
{
    if (inputs.empty()) {
        throw Error("custom: at least one input required");
    }
    Tape& t = tape_of(inputs[0], Op::Custom);
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape() != &t) {
            throw Error("custom: operands live on different tapes");
        }
        ids.push_back(v.id());
    }
    require_finite(t, Op::Custom, value);
    return t.push(Op::Custom, std::move(ids), std::move(value), std::move(backward));
}

double grad_check(const GraphBuilder& f, const ComplexMatrix& x, double step, Perturb perturb)
{
    if (!(step >= 1e-7 && step <= 1e-3)) {
        throw ConfigError("grad_check: step must lie in [1e-7, 1e-3]");
    }
    ComplexMatrix analytic;
    {
        Tape tape;
        const Var leaf = tape.parameter(x);
        const Var loss = f(tape, leaf);
        analytic = tape.backward(loss).of(leaf);
    }
    const auto evaluate = [&f](const ComplexMatrix& point) {
        Tape tape(false);
        const Var leaf = tape.parameter(point);
        return f(tape, leaf).value().re()(0, 0);
    };
    double worst = 0.0;
    const auto check = [&](bool imag, Index i) {
        ComplexMatrix plus = x;
        ComplexMatrix minus = x;
        double* p = imag ? plus.im().data() : plus.re().data();
        double* m = imag ? minus.im().data() : minus.re().data();
        p[i] += step;
        m[i] -= step;
        const double numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * step);
        const double a = imag ? analytic.im().data()[i] : analytic.re().data()[i];
        worst = std::max(worst, std::abs(a - numeric) / (std::abs(numeric) + 1e-12));
    };
    for (Index i = 0; i < x.size(); ++i) {
        check(false, i);
        if (perturb == Perturb::Complex) {
            check(true, i);
        }
    }
    return worst;
}

} // namespace fastadapt::ad
