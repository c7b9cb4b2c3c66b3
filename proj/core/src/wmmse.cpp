#include "fastadapt/wmmse.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fastadapt {

namespace {

ComplexMatrix stack_columns(const std::vector<ComplexMatrix>& blocks)
{
    Index cols = 0;
    for (const ComplexMatrix& b : blocks) {
        cols += b.cols();
    }
    ComplexMatrix out(blocks.empty() ? 0 : blocks.front().rows(), cols);
    Index offset = 0;
    for (const ComplexMatrix& b : blocks) {
        out.re().middleCols(offset, b.cols()) = b.re();
        out.im().middleCols(offset, b.cols()) = b.im();
        offset += b.cols();
    }
    return out;
}

ComplexMatrix column_block(const ComplexMatrix& m, Index col, Index width)
{
    return ComplexMatrix(RealMatrix(m.re().middleCols(col, width)), RealMatrix(m.im().middleCols(col, width)));
}

void check_shapes(const ChannelSample& H, const PrecoderSet& V)
{
    if (H.H.size() != V.V.size() || H.H.empty()) {
        throw ShapeError("sum_rate: channel and precoder user counts differ");
    }
    for (std::size_t k = 0; k < H.H.size(); ++k) {
        if (H.H[k].cols() != V.V[k].rows() || V.V[k].cols() != V.V.front().cols()) {
            throw ShapeError("sum_rate: precoder shape does not match channel");
        }
    }
}

} // namespace

double PrecoderSet::total_power() const
{
    double p = 0.0;
    for (const ComplexMatrix& v : V) {
        p += v.squared_norm();
    }
    return p;
}

double sum_rate(const ChannelSample& H, const PrecoderSet& V, double sigma2)
{
    check_shapes(H, V);
    if (!(sigma2 > 0.0)) {
        throw ConfigError("sum_rate: noise power must be positive");
    }
    const ComplexMatrix all = stack_columns(V.V);
    const Index d = V.V.front().cols();
    double rate = 0.0;
    for (std::size_t k = 0; k < H.H.size(); ++k) {
        if (!H.H[k].all_finite() || !V.V[k].all_finite()) {
            throw NumericError("sum_rate: non-finite input");
        }
        const ComplexMatrix t = H.H[k] * all;
        const ComplexMatrix own = column_block(t, static_cast<Index>(k) * d, d);
        ComplexMatrix total = t * t.adjoint();
        total.re().diagonal().array() += sigma2;
        const ComplexMatrix interference = total - own * own.adjoint();
        rate += linalg::logdet_hpd(total) - linalg::logdet_hpd(interference);
    }
    return rate / std::numbers::ln2;
}

ad::Var sum_rate(ad::Tape& tape, const ChannelSample& H, std::span<const ad::Var> V, double sigma2)
{
    if (H.H.size() != V.size() || V.empty()) {
        throw ShapeError("sum_rate: channel and precoder user counts differ");
    }
    if (!(sigma2 > 0.0)) {
        throw ConfigError("sum_rate: noise power must be positive");
    }
    const ad::Var all = ad::concat_cols(V);
    const Index nr = H.H.front().rows();
    ComplexMatrix noise = ComplexMatrix::identity(nr).scaled(sigma2);
    const ad::Var noise_var = tape.constant(std::move(noise));
    ad::Var total_rate;
    for (std::size_t k = 0; k < H.H.size(); ++k) {
        const ad::Var h = tape.constant(H.H[k]);
        const ad::Var t = ad::matmul(h, all);
        const ad::Var own = ad::matmul(h, V[k]);
        const ad::Var total = ad::add(ad::matmul(t, ad::hermitian(t)), noise_var);
        const ad::Var interference = ad::sub(total, ad::matmul(own, ad::hermitian(own)));
        const ad::Var r = ad::sub(ad::logdet(total), ad::logdet(interference));
        total_rate = k == 0 ? r : ad::add(total_rate, r);
    }
    return ad::scale(total_rate, 1.0 / std::numbers::ln2);
}

PrecoderSet mrt_init(const ChannelSample& H, const SystemConfig& config)
{
    PrecoderSet out;
    const double per_user = config.total_power / static_cast<double>(config.num_users);
    for (const ComplexMatrix& h : H.H) {
        const ComplexMatrix hh = h.adjoint();
        ComplexMatrix v = column_block(hh, 0, config.streams_per_user);
        const double p = v.squared_norm();
        if (p > 0.0) {
            v = v.scaled(std::sqrt(per_user / p));
        }
        out.V.push_back(std::move(v));
    }
    return out;
}

PrecoderSet project_power(const PrecoderSet& V, double P)
{
    const double total = V.total_power();
    if (!(total > P)) {
        return V;
    }
    const double s = std::sqrt(P / total);
    PrecoderSet out;
    for (const ComplexMatrix& v : V.V) {
        out.V.push_back(v.scaled(s));
    }
    return out;
}

std::vector<ad::Var> project_power(std::span<const ad::Var> V, double P)
{
    std::vector<ad::Var> out(V.begin(), V.end());
    if (V.empty()) {
        return out;
    }
    double total = 0.0;
    for (const ad::Var& v : V) {
        total += v.value().squared_norm();
    }
    if (!(total > P)) {
        return out;
    }
    ad::Var power = ad::squared_norm(V[0]);
    for (std::size_t k = 1; k < V.size(); ++k) {
        power = ad::add(power, ad::squared_norm(V[k]));
    }
    // sqrt(P / total) as a node so the scale participates in the gradient.
    const ad::Var factor = ad::sqrt(ad::scale(ad::reciprocal(power), P));
    for (std::size_t k = 0; k < V.size(); ++k) {
        out[k] = ad::scale_by(V[k], factor);
    }
    return out;
}

WmmseState wmmse_init(const ChannelSample& H, const SystemConfig& config)
{
    WmmseState state;
    state.V = mrt_init(H, config);
    state.rate_trace.push_back(sum_rate(H, state.V, config.noise_power()));
    return state;
}

WmmseState wmmse_step(const WmmseState& state, const ChannelSample& H, const SystemConfig& config)
{
    const double sigma2 = config.noise_power();
    const std::size_t K = H.H.size();
    const Index d = config.streams_per_user;
    const Index nt = config.tx_antennas;
    if (state.V.V.size() != K) {
        throw ShapeError("wmmse_step: state and channel user counts differ");
    }
    const ComplexMatrix all = stack_columns(state.V.V);

    WmmseState next;
    next.iteration = state.iteration + 1;
    next.rate_trace = state.rate_trace;
    next.U.resize(K);
    next.W.resize(K);

    ComplexMatrix a(nt, nt);
    std::vector<ComplexMatrix> b(K);
    for (std::size_t k = 0; k < K; ++k) {
        const ComplexMatrix t = H.H[k] * all;
        const ComplexMatrix own = column_block(t, static_cast<Index>(k) * d, d);
        ComplexMatrix cov = t * t.adjoint();
        cov.re().diagonal().array() += sigma2;
        next.U[k] = linalg::inverse(linalg::hermitian_part(cov)) * own;
        ComplexMatrix e = ComplexMatrix::identity(d) - next.U[k].adjoint() * own;
        next.W[k] = linalg::hermitian_part(linalg::inverse(linalg::hermitian_part(e)));
        const ComplexMatrix hu = H.H[k].adjoint() * next.U[k];
        b[k] = hu * next.W[k];
        a += b[k] * hu.adjoint();
    }
    const linalg::HermitianEig eig = linalg::hermitian_eig(a);
    const ComplexMatrix rhs = stack_columns(b);
    const double mu =
        linalg::solve_power_multiplier(eig.values, linalg::projected_weights(eig, rhs), config.total_power);
    const ComplexMatrix v_all = linalg::regularized_solve(eig, rhs, mu);
    for (std::size_t k = 0; k < K; ++k) {
        next.V.V.push_back(column_block(v_all, static_cast<Index>(k) * d, d));
    }
    next.rate_trace.push_back(sum_rate(H, next.V, sigma2));
    return next;
}

WmmseResult wmmse_solve(const ChannelSample& H, const SystemConfig& config, double tol, std::size_t max_iter)
{
    if (!(tol > 0.0)) {
        throw ConfigError("wmmse_solve: tolerance must be positive");
    }
    WmmseState state = wmmse_init(H, config);
    for (std::size_t it = 0; it < max_iter; ++it) {
        state = wmmse_step(state, H, config);
        const std::size_t n = state.rate_trace.size();
        if (std::abs(state.rate_trace[n - 1] - state.rate_trace[n - 2]) < tol) {
            break;
        }
    }
    return {std::move(state.V), std::move(state.rate_trace)};
}

double waterfilling_oracle(const ComplexMatrix& H, double P, double sigma2)
{
    const Eigen::VectorXd s = linalg::singular_values(H);
    std::vector<double> gains;
    const double top = s.size() > 0 ? s(0) * s(0) : 0.0;
    for (Index i = 0; i < s.size(); ++i) {
        const double g = s(i) * s(i);
        if (g > 1e-14 * top && g > 0.0) {
            gains.push_back(g / sigma2);
        }
    }
    std::sort(gains.begin(), gains.end(), std::greater<>());
    double rate = 0.0;
    for (std::size_t m = gains.size(); m >= 1; --m) {
        double inv_sum = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            inv_sum += 1.0 / gains[i];
        }
        const double level = (P + inv_sum) / static_cast<double>(m);
        if (level > 1.0 / gains[m - 1]) {
            for (std::size_t i = 0; i < m; ++i) {
                rate += std::log2(level * gains[i]);
            }
            return rate;
        }
    }
    return rate;
}

} // namespace fastadapt
