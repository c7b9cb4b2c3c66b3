#include "precoders_internal.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

namespace fastadapt::detail {

namespace {

enum Stage { kStageU = 0, kStageW = 1, kStageV = 2 };

const char* const kStageNames[3] = {"U", "W", "V"};

// Parameter slots within a stage, in store order.
enum Slot { kW1x = 0, kW1c = 1, kB1 = 2, kW2 = 3, kB2 = 4, kSlots = 5 };

struct Dims {
    Index K, nt, nr, d;
    Index u_size() const { return nr * d; }
    Index w_size() const { return d * d; }
    Index v_size() const { return nt * d; }
    Index user_block() const { return u_size() + w_size() + v_size(); }
    Index state_size() const { return K * user_block(); }
    Index rows() const { return K * nr; }
    Index context_dim() const { return 2 * rows() * rows() + 1; }
    Index stage_in(int s) const
    {
        switch (s) {
        case kStageU: return 2 * nr * d * K;
        case kStageW: return 2 * (u_size() + nr * d);
        default: return 2 * K * (u_size() + w_size());
        }
    }
    Index stage_out(int s) const
    {
        switch (s) {
        case kStageU: return 2 * u_size();
        case kStageW: return 2 * w_size();
        default: return 2 * rows() * d;
        }
    }
};

Dims dims_of(const SystemConfig& s)
{
    return {s.num_users, s.tx_antennas, s.rx_antennas, s.streams_per_user};
}

ad::Var param(std::span<const ad::Var> params, int stage, int slot)
{
    return params[static_cast<std::size_t>(stage * kSlots + slot)];
}

// Channel-dependent inputs of the map, shared by every iteration.
struct Channels {
    std::vector<ComplexMatrix> h;        // normalized channels
    std::vector<ComplexMatrix> stacked;  // adjoint of the channels stacked cyclically from user k
    ComplexMatrix context;               // one column per user
};

Channels prepare(const Dims& dm, const ChannelSample& H, const SystemConfig& config)
{
    double norm2 = 0.0;
    for (const ComplexMatrix& hk : H.H) {
        const Eigen::VectorXd sv = linalg::singular_values(hk);
        norm2 += sv.size() > 0 ? sv(0) * sv(0) : 0.0;
    }
    const double scale = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 1.0;

    Channels ch;
    for (const ComplexMatrix& hk : H.H) {
        ch.h.push_back(hk.scaled(scale));
    }

    // Column k: Gram matrix of the stacked normalized channels, then the log effective SNR.
    const Index n = dm.rows();
    RealMatrix c(dm.context_dim(), dm.K);
    const double snr_feature = std::log10(std::max(config.total_power * norm2 / config.noise_power(), 1e-30));
    for (Index k = 0; k < dm.K; ++k) {
        ComplexMatrix s(n, dm.nt);
        for (Index slot = 0; slot < dm.K; ++slot) {
            const ComplexMatrix& hj = ch.h[static_cast<std::size_t>((k + slot) % dm.K)];
            s.re().middleRows(slot * dm.nr, dm.nr) = hj.re();
            s.im().middleRows(slot * dm.nr, dm.nr) = hj.im();
        }
        ComplexMatrix sh = s.adjoint();
        const ComplexMatrix g = s * sh;
        c.col(k).head(n * n) = g.re().reshaped();
        c.col(k).segment(n * n, n * n) = g.im().reshaped();
        c(2 * n * n, k) = snr_feature;
        ch.stacked.push_back(std::move(sh));
    }
    ch.context = ComplexMatrix(std::move(c));
    return ch;
}

// Per-stage values the map depends on once the context layer has been applied.
struct StageValues {
    ComplexMatrix w1x, pre, w2, b2;
};
using MapValues = std::array<StageValues, 3>;

struct StageVars {
    ad::Var w1x, pre, w2, b2;
};

struct MapGraph {
    std::vector<ad::Var> h;
    std::vector<ad::Var> stacked;
    std::array<StageVars, 3> net;
};

MapGraph bind_map(ad::Tape& tape, const Channels& ch, const MapValues& values, bool as_parameters)
{
    MapGraph g;
    for (std::size_t k = 0; k < ch.h.size(); ++k) {
        g.h.push_back(tape.constant(ch.h[k]));
        g.stacked.push_back(tape.constant(ch.stacked[k]));
    }
    const auto put = [&](const ComplexMatrix& m) { return as_parameters ? tape.parameter(m) : tape.constant(m); };
    for (int s = 0; s < 3; ++s) {
        const StageValues& v = values[static_cast<std::size_t>(s)];
        g.net[static_cast<std::size_t>(s)] = {put(v.w1x), put(v.pre), put(v.w2), put(v.b2)};
    }
    return g;
}

ad::Var stage_net(const StageVars& net, ad::Var x)
{
    const ad::Var hidden = ad::tanh(ad::add(ad::matmul(net.w1x, x), net.pre));
    return ad::complexify(dense(net.w2, hidden, net.b2));
}

// Each stage net is sqrt(gamma)^2 Lipschitz and the normalized channels have unit
// operator norm, so with a = 0.5 the stage gains are 0.45, 0.65 and 0.36 times
// gamma / 0.9. The V stage sees all K users' U and W, hence its 1/sqrt(K) factor.
ad::Var apply_map(const Dims& dm, double a, const MapGraph& g, ad::Var z)
{
    const std::size_t K = static_cast<std::size_t>(dm.K);
    std::vector<ad::Var> V;
    for (Index k = 0; k < dm.K; ++k) {
        const Index off = k * dm.user_block() + dm.u_size() + dm.w_size();
        V.push_back(ad::gather(z, index_range(off, dm.v_size()), dm.nt, dm.d));
    }
    const ad::Var all = ad::concat_cols(V);

    std::vector<ad::Var> t(K);
    std::vector<ad::Var> xs(K);
    for (std::size_t k = 0; k < K; ++k) {
        t[k] = ad::matmul(g.h[k], all);
        xs[k] = ad::gather(t[k], cyclic_block_indices(dm.nr, dm.d, dm.K, static_cast<Index>(k)),
                           dm.nr * dm.d * dm.K, 1);
    }
    const ad::Var out_u = stage_net(g.net[kStageU], ad::scale(ad::realify(ad::concat_cols(xs)), a));

    for (std::size_t k = 0; k < K; ++k) {
        const Index ki = static_cast<Index>(k);
        const ad::Var own = ad::gather(t[k], index_range(ki * dm.d * dm.nr, dm.nr * dm.d), dm.nr * dm.d, 1);
        const ad::Var parts[2] = {ad::slice(out_u, 0, ki, dm.u_size(), 1), own};
        xs[k] = ad::concat_rows(parts);
    }
    const ad::Var out_w = stage_net(g.net[kStageW], ad::scale(ad::realify(ad::concat_cols(xs)), a));

    const ad::Var uw_parts[2] = {out_u, out_w};
    const ad::Var uw = ad::concat_rows(uw_parts);
    const Index uw_rows = dm.u_size() + dm.w_size();
    for (std::size_t k = 0; k < K; ++k) {
        xs[k] = ad::gather(uw, cyclic_block_indices(uw_rows, 1, dm.K, static_cast<Index>(k)), uw_rows * dm.K, 1);
    }
    const double av = a / std::sqrt(static_cast<double>(dm.K));
    const ad::Var out_v = stage_net(g.net[kStageV], ad::scale(ad::realify(ad::concat_cols(xs)), av));

    // The V network returns coefficients on the stacked channel rows of user k.
    std::vector<ad::Var> blocks;
    for (Index k = 0; k < dm.K; ++k) {
        const ad::Var q = ad::gather(out_v, index_range(k * dm.rows() * dm.d, dm.rows() * dm.d), dm.rows(), dm.d);
        const ad::Var v = ad::matmul(g.stacked[static_cast<std::size_t>(k)], q);
        blocks.push_back(ad::slice(out_u, 0, k, dm.u_size(), 1));
        blocks.push_back(ad::slice(out_w, 0, k, dm.w_size(), 1));
        blocks.push_back(ad::gather(v, index_range(0, dm.v_size()), dm.v_size(), 1));
    }
    return ad::concat_rows(blocks);
}

// Context layer W1c c + b1 on `tape`, one Var per stage.
std::array<ad::Var, 3> context_layer(ad::Tape& tape, std::span<const ad::Var> params, const Channels& ch)
{
    const ad::Var c = tape.constant(ch.context);
    std::array<ad::Var, 3> pre;
    for (int s = 0; s < 3; ++s) {
        pre[static_cast<std::size_t>(s)] = dense(param(params, s, kW1c), c, param(params, s, kB1));
    }
    return pre;
}

MapValues map_values(std::span<const ad::Var> params, const std::array<ad::Var, 3>& pre)
{
    MapValues v;
    for (int s = 0; s < 3; ++s) {
        v[static_cast<std::size_t>(s)] = {param(params, s, kW1x).value(), pre[static_cast<std::size_t>(s)].value(),
                                          param(params, s, kW2).value(), param(params, s, kB2).value()};
    }
    return v;
}

ComplexMatrix initial_state(const Dims& dm, const ChannelSample& H, const SystemConfig& config)
{
    ComplexMatrix z(dm.state_size(), 1);
    const PrecoderSet v = mrt_init(H, config);
    for (Index k = 0; k < dm.K; ++k) {
        const ComplexMatrix& vk = v.V[static_cast<std::size_t>(k)];
        const Index off = k * dm.user_block() + dm.u_size() + dm.w_size();
        z.re().col(0).segment(off, dm.v_size()) = vk.re().reshaped();
        z.im().col(0).segment(off, dm.v_size()) = vk.im().reshaped();
    }
    return z;
}

struct Solved {
    ComplexMatrix z;
    std::size_t iterations = 0;
    std::vector<double> residuals;
};

Solved solve(const PrecoderModel& model, const Dims& dm, const Channels& ch, const MapValues& values,
             const ComplexMatrix& z0)
{
    ad::Tape tape(false);
    const MapGraph g = bind_map(tape, ch, values, false);
    Solved out;
    out.z = z0;
    for (std::size_t it = 0; it < model.hyper.fpn_max_iter; ++it) {
        ComplexMatrix next = apply_map(dm, model.hyper.fpn_input_scale, g, tape.constant(out.z)).value();
        const double r = distance(next, out.z);
        out.z = std::move(next);
        out.residuals.push_back(r);
        out.iterations = it + 1;
        if (r < model.hyper.fpn_tolerance) {
            return out;
        }
    }
    throw NumericError("fpn_solve: no convergence after " + std::to_string(model.hyper.fpn_max_iter) +
                       " iterations, residual " + std::to_string(out.residuals.back()));
}

std::vector<ad::Var> extract_precoders(const Dims& dm, ad::Var z)
{
    std::vector<ad::Var> V;
    for (Index k = 0; k < dm.K; ++k) {
        const Index off = k * dm.user_block() + dm.u_size() + dm.w_size();
        V.push_back(ad::gather(z, index_range(off, dm.v_size()), dm.nt, dm.d));
    }
    return V;
}

ComplexMatrix to_complex(const FpnState& z)
{
    const Index n = z.size() / 2;
    return ComplexMatrix(RealMatrix(z.head(n)), RealMatrix(z.tail(n)));
}

FpnState to_real(const ComplexMatrix& z)
{
    FpnState out(2 * z.rows());
    out << z.re().col(0), z.im().col(0);
    return out;
}

constexpr double kAdjointTolerance = 1e-11;
constexpr std::size_t kAdjointMaxIter = 1000;

} // namespace

void init_fpn(ParamStore& params, const SystemConfig& system, const ModelHyper& hyper, Rng& rng)
{
    const Dims dm = dims_of(system);
    for (int s = 0; s < 3; ++s) {
        const Index in = dm.stage_in(s);
        const Index hidden = static_cast<Index>(hyper.fpn_width_factor) * in;
        const Index out = dm.stage_out(s);
        const std::string p = std::string("fpn.") + kStageNames[s] + ".";
        params.add(p + "W1x", ComplexMatrix(glorot(hidden, in, rng)), false, Partition::Shared, true);
        params.add(p + "W1c", ComplexMatrix(glorot(hidden, dm.context_dim(), rng)), false);
        params.add(p + "b1", ComplexMatrix(hidden, 1), false);
        params.add(p + "W2", ComplexMatrix(glorot(out, hidden, rng)), false, Partition::Shared, true);
        params.add(p + "b2", ComplexMatrix(out, 1), false);
    }
}

std::vector<ad::Var> fpn_graph(const PrecoderModel& model, ad::Tape& tape, std::span<const ad::Var> params,
                               const ChannelSample& H, const SystemConfig& config)
{
    const Dims dm = dims_of(config);
    auto ch = std::make_shared<const Channels>(prepare(dm, H, config));
    const std::array<ad::Var, 3> pre = context_layer(tape, params, *ch);
    auto values = std::make_shared<const MapValues>(map_values(params, pre));
    Solved s = solve(model, dm, *ch, *values, initial_state(dm, H, config));
    if (!tape.recording()) {
        return extract_precoders(dm, tape.constant(std::move(s.z)));
    }

    // Implicit differentiation at the fixed point: the adjoint u of z* solves
    // u = g + J_z^H u, after which the input adjoints are J^H u.
    std::vector<ad::Var> inputs;
    for (int st = 0; st < 3; ++st) {
        inputs.push_back(param(params, st, kW1x));
        inputs.push_back(pre[static_cast<std::size_t>(st)]);
        inputs.push_back(param(params, st, kW2));
        inputs.push_back(param(params, st, kB2));
    }
    std::vector<std::size_t> ids;
    for (const ad::Var& v : inputs) {
        ids.push_back(v.id());
    }
    const ad::Tape* outer = &tape;
    const double a = model.hyper.fpn_input_scale;
    auto backward = [outer, ids, values, ch, zstar = s.z, dm, a](const ComplexMatrix& g, ad::Gradients& grads) {
        ComplexMatrix u = g;
        {
            ad::Tape inner;
            const MapGraph mg = bind_map(inner, *ch, *values, false);
            const ad::Var z = inner.parameter(zstar);
            const ad::Var fz = apply_map(dm, a, mg, z);
            const double scale = 1.0 + g.frobenius_norm();
            bool converged = false;
            for (std::size_t it = 0; it < kAdjointMaxIter; ++it) {
                ComplexMatrix next = g + inner.backward_from(fz, u).of(z);
                const double step = distance(next, u);
                u = std::move(next);
                if (step <= kAdjointTolerance * scale) {
                    converged = true;
                    break;
                }
            }
            if (!converged) {
                throw NumericError("fpn: adjoint fixed-point iteration did not converge");
            }
        }
        ad::Tape inner;
        const MapGraph mg = bind_map(inner, *ch, *values, true);
        const ad::Var fz = apply_map(dm, a, mg, inner.constant(zstar));
        const ad::Gradients inner_grads = inner.backward_from(fz, u);
        for (std::size_t st = 0; st < 3; ++st) {
            const StageVars& n = mg.net[st];
            const ad::Var local[4] = {n.w1x, n.pre, n.w2, n.b2};
            for (std::size_t j = 0; j < 4; ++j) {
                const std::size_t id = ids[4 * st + j];
                if (outer->node(id).requires_grad) {
                    grads.accumulate(id, inner_grads.of(local[j]));
                }
            }
        }
    };
    const ad::Var z = ad::custom(inputs, s.z, std::move(backward));
    return extract_precoders(dm, z);
}

} // namespace fastadapt::detail

namespace fastadapt {

FpnState fpn_initial_state(const ChannelSample& H, const SystemConfig& config)
{
    return detail::to_real(detail::initial_state(detail::dims_of(config), H, config));
}

FpnState fpn_map(const PrecoderModel& model, const FpnState& z, const ChannelSample& H, const SystemConfig& config)
{
    if (model.kind != ModelKind::Fpn) {
        throw ConfigError("fpn_map: model is " + to_string(model.kind));
    }
    const detail::Dims dm = detail::dims_of(config);
    if (z.size() != 2 * dm.state_size()) {
        throw ShapeError("fpn_map: state has " + std::to_string(z.size()) + " entries, expected " +
                         std::to_string(2 * dm.state_size()));
    }
    if (H.H.size() != static_cast<std::size_t>(dm.K)) {
        throw ShapeError("fpn_map: sample has the wrong number of users");
    }
    ad::Tape tape(false);
    const std::vector<ad::Var> params = bind(tape, model.params, false);
    const detail::Channels ch = detail::prepare(dm, H, config);
    const detail::MapValues values = detail::map_values(params, detail::context_layer(tape, params, ch));
    const detail::MapGraph g = detail::bind_map(tape, ch, values, false);
    const ad::Var out = detail::apply_map(dm, model.hyper.fpn_input_scale, g, tape.constant(detail::to_complex(z)));
    return detail::to_real(out.value());
}

FpnSolution fpn_solve(const PrecoderModel& model, const ChannelSample& H, const SystemConfig& config)
{
    if (model.kind != ModelKind::Fpn) {
        throw ConfigError("fpn_solve: model is " + to_string(model.kind));
    }
    const detail::Dims dm = detail::dims_of(config);
    if (H.H.size() != static_cast<std::size_t>(dm.K)) {
        throw ShapeError("fpn_solve: sample has the wrong number of users");
    }
    ad::Tape tape(false);
    const std::vector<ad::Var> params = bind(tape, model.params, false);
    const detail::Channels ch = detail::prepare(dm, H, config);
    const detail::MapValues values = detail::map_values(params, detail::context_layer(tape, params, ch));
    detail::Solved s = detail::solve(model, dm, ch, values, detail::initial_state(dm, H, config));
    FpnSolution out;
    out.state = detail::to_real(s.z);
    out.V = project_power(fpn_precoders(out.state, config), config.total_power);
    out.iterations = s.iterations;
    out.residuals = std::move(s.residuals);
    return out;
}

PrecoderSet fpn_precoders(const FpnState& z, const SystemConfig& config)
{
    const detail::Dims dm = detail::dims_of(config);
    if (z.size() != 2 * dm.state_size()) {
        throw ShapeError("fpn_precoders: state size does not match the configuration");
    }
    const ComplexMatrix zc = detail::to_complex(z);
    PrecoderSet out;
    for (Index k = 0; k < dm.K; ++k) {
        const Index off = k * dm.user_block() + dm.u_size() + dm.w_size();
        RealMatrix re = zc.re().col(0).segment(off, dm.v_size()).reshaped(dm.nt, dm.d);
        RealMatrix im = zc.im().col(0).segment(off, dm.v_size()).reshaped(dm.nt, dm.d);
        out.V.emplace_back(std::move(re), std::move(im));
    }
    return out;
}

} // namespace fastadapt
