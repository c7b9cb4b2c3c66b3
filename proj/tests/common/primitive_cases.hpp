#pragma once

// Scalar-valued probes around each autodiff primitive, shared by the unit tests
// and the acceptance binary.

#include "fastadapt/autodiff.hpp"
#include "fastadapt/rng.hpp"
#include "fastadapt/wmmse.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace fatest {

using namespace fastadapt;

struct PrimitiveCase {
    std::string name;
    Index rows;
    Index cols;
    ad::Perturb perturb = ad::Perturb::Complex;
    /// Builds the graph for one random instance; draws its constants from rng.
    std::function<ad::GraphBuilder(Rng&)> make;
    /// Produces the evaluation point.
    std::function<ComplexMatrix(Rng&)> point;
};

inline ComplexMatrix gaussian(Index r, Index c, Rng& rng, double sd = 1.0)
{
    std::normal_distribution<double> n(0.0, sd);
    ComplexMatrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.re().data()[i] = n(rng);
        m.im().data()[i] = n(rng);
    }
    return m;
}

inline ComplexMatrix real_gaussian(Index r, Index c, Rng& rng, double sd = 1.0)
{
    std::normal_distribution<double> n(0.0, sd);
    ComplexMatrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.re().data()[i] = n(rng);
    }
    return m;
}

/// Real loss sum_ij (P_ij Re y_ij + Q_ij Im y_ij) with random weights.
inline ad::Var probe(ad::Tape& tape, ad::Var y, const RealMatrix& weights)
{
    const ad::Var w = tape.constant(ComplexMatrix(weights));
    return ad::trace(ad::matmul(w, ad::realify(y)));
}

inline RealMatrix probe_weights(Index rows, Index cols, Rng& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    RealMatrix w(cols, 2 * rows);
    for (Index i = 0; i < w.size(); ++i) {
        w.data()[i] = n(rng);
    }
    return w;
}

/// Wraps y = op(x) into a probed scalar graph.
inline std::function<ad::GraphBuilder(Rng&)> unary(Index out_rows, Index out_cols,
                                                   std::function<ad::Var(ad::Tape&, ad::Var, Rng&)> op)
{
    return [=](Rng& rng) -> ad::GraphBuilder {
        const RealMatrix w = probe_weights(out_rows, out_cols, rng);
        const std::uint64_t seed = rng();
        return [=](ad::Tape& tape, ad::Var x) {
            Rng local(seed);
            return probe(tape, op(tape, x, local), w);
        };
    };
}

inline ComplexMatrix hpd_point(Index n, Rng& rng)
{
    const ComplexMatrix a = gaussian(n, n, rng);
    return a * a.adjoint() + ComplexMatrix::identity(n).scaled(static_cast<double>(n));
}

/// Generic (non-Hermitian) matrix with a dominant diagonal.
inline ComplexMatrix shifted_point(Index n, Rng& rng)
{
    return gaussian(n, n, rng) + ComplexMatrix::identity(n).scaled(2.0 * static_cast<double>(n));
}

inline std::vector<PrimitiveCase> primitive_cases()
{
    std::vector<PrimitiveCase> cases;
    const auto g = [](Index r, Index c) { return [=](Rng& rng) { return gaussian(r, c, rng); }; };

    cases.push_back({"add", 3, 2, ad::Perturb::Complex, unary(3, 2, [](ad::Tape& t, ad::Var x, Rng& r) {
                         return ad::add(x, ad::matmul(t.constant(gaussian(3, 3, r)), x));
                     }), g(3, 2)});
    cases.push_back({"sub", 3, 2, ad::Perturb::Complex, unary(3, 2, [](ad::Tape& t, ad::Var x, Rng& r) {
                         return ad::sub(t.constant(gaussian(3, 2, r)), ad::matmul(x, t.constant(gaussian(2, 2, r))));
                     }), g(3, 2)});
    cases.push_back({"scale", 2, 4, ad::Perturb::Complex, unary(2, 4, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::scale(ad::scale(x, -1.7), Complex(0.3, 0.8));
                     }), g(2, 4)});
    cases.push_back({"scale_by", 3, 3, ad::Perturb::Complex, unary(3, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::scale_by(x, ad::slice(x, 1, 2, 1, 1));
                     }), g(3, 3)});
    cases.push_back({"add_column", 3, 4, ad::Perturb::Complex, unary(3, 4, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::add_column(x, ad::slice(x, 0, 1, 3, 1));
                     }), g(3, 4)});
    cases.push_back({"matmul", 3, 3, ad::Perturb::Complex, unary(3, 3, [](ad::Tape& t, ad::Var x, Rng& r) {
                         return ad::matmul(ad::matmul(x, t.constant(gaussian(3, 3, r))), x);
                     }), g(3, 3)});
    cases.push_back({"hermitian", 2, 3, ad::Perturb::Complex, unary(3, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::matmul(ad::hermitian(x), x);
                     }), g(2, 3)});
    cases.push_back({"inverse", 3, 3, ad::Perturb::Complex, unary(3, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::inverse(x);
                     }), [](Rng& rng) { return hpd_point(3, rng); }});
    cases.push_back({"logdet", 3, 3, ad::Perturb::Complex, unary(1, 1, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::logdet(ad::matmul(x, ad::hermitian(x)));
                     }), [](Rng& rng) { return shifted_point(3, rng); }});
    cases.push_back({"trace", 3, 3, ad::Perturb::Complex, unary(1, 1, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::trace(ad::matmul(x, x));
                     }), g(3, 3)});
    cases.push_back({"squared_norm", 4, 2, ad::Perturb::Complex, unary(1, 1, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::squared_norm(x);
                     }), g(4, 2)});
    cases.push_back({"tanh", 3, 2, ad::Perturb::Complex, unary(3, 2, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::tanh(x);
                     }), g(3, 2)});
    cases.push_back({"sqrt", 3, 2, ad::Perturb::Complex, unary(3, 2, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::scale_by(x, ad::sqrt(ad::squared_norm(x)));
                     }), g(3, 2)});
    cases.push_back({"reciprocal", 3, 2, ad::Perturb::Complex, unary(3, 2, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::scale_by(x, ad::reciprocal(ad::squared_norm(x)));
                     }), g(3, 2)});
    cases.push_back({"concat", 2, 2, ad::Perturb::Complex, unary(4, 4, [](ad::Tape& t, ad::Var x, Rng& r) {
                         const ad::Var rows[2] = {x, t.constant(gaussian(2, 2, r))};
                         const ad::Var top = ad::concat_rows(rows);
                         const ad::Var cols[2] = {top, ad::matmul(top, x)};
                         return ad::concat_cols(cols);
                     }), g(2, 2)});
    cases.push_back({"slice", 4, 4, ad::Perturb::Complex, unary(2, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::matmul(ad::slice(x, 1, 0, 2, 2), ad::slice(x, 0, 1, 2, 3));
                     }), g(4, 4)});
    cases.push_back({"gather", 3, 3, ad::Perturb::Complex, unary(2, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::gather(x, {8, 0, 4, 4, 1, 7}, 2, 3);
                     }), g(3, 3)});
    cases.push_back({"realify_complexify", 2, 3, ad::Perturb::Complex, unary(2, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::complexify(ad::tanh(ad::realify(x)));
                     }), g(2, 3)});
    cases.push_back({"inv_diag", 3, 3, ad::Perturb::Complex, unary(3, 3, [](ad::Tape&, ad::Var x, Rng&) {
                         return ad::inv_diag(x);
                     }), [](Rng& rng) { return hpd_point(3, rng); }});
    cases.push_back({"power_multiplier", 4, 2, ad::Perturb::Complex, unary(1, 1, [](ad::Tape& t, ad::Var x, Rng& r) {
                         const ComplexMatrix c = gaussian(4, 2, r);
                         const ad::Var a = ad::matmul(t.constant(c), ad::hermitian(t.constant(c)));
                         return ad::power_multiplier(a, x, 0.5);
                     }), g(4, 2)});
    cases.push_back({"power_multiplier_matrix", 3, 3, ad::Perturb::Complex, unary(1, 1, [](ad::Tape& t, ad::Var x, Rng& r) {
                         const ad::Var a = ad::matmul(x, ad::hermitian(x));
                         return ad::power_multiplier(a, t.constant(gaussian(3, 2, r)), 0.2);
                     }), g(3, 3)});
    cases.push_back({"custom", 2, 2, ad::Perturb::Complex, unary(2, 2, [](ad::Tape&, ad::Var x, Rng&) {
                         // y = x x with a hand-written adjoint.
                         const ComplexMatrix xv = x.value();
                         const ad::Var in[1] = {x};
                         const std::size_t id = x.id();
                         return ad::custom(in, xv * xv, [xv, id](const ComplexMatrix& gy, ad::Gradients& grads) {
                             grads.accumulate(id, gy * xv.adjoint() + xv.adjoint() * gy);
                         });
                     }), g(2, 2)});

    // Full loss: -sum_rate over precoders of a 2-user 4x2 link.
    cases.push_back({"neg_sum_rate", 4, 2, ad::Perturb::Complex, [](Rng& rng) -> ad::GraphBuilder {
                         ChannelSample h;
                         h.H = {gaussian(2, 4, rng, 0.7), gaussian(2, 4, rng, 0.7)};
                         return [h](ad::Tape& tape, ad::Var x) {
                             const ad::Var V[2] = {ad::slice(x, 0, 0, 4, 1), ad::slice(x, 0, 1, 4, 1)};
                             return ad::scale(sum_rate(tape, h, V, 0.1), -1.0);
                         };
                     }, [](Rng& rng) { return gaussian(4, 2, rng, 0.5); }});
    return cases;
}

} // namespace fatest
