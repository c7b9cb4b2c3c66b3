#include "precoders_internal.hpp"

#include <cmath>

namespace fastadapt::detail {

void init_unfolded(ParamStore& params, const SystemConfig& system, const ModelHyper& hyper)
{
    const Index n = system.tx_antennas;
    for (std::size_t l = 1; l <= hyper.unfolded_layers; ++l) {
        const std::string tag = std::to_string(l);
        params.add("unf.X" + tag, ComplexMatrix(n, n), true);
        params.add("unf.Y" + tag, ComplexMatrix::identity(n), true);
        params.add("unf.Z" + tag, ComplexMatrix(n, n), true);
    }
}

std::vector<ad::Var> unfolded_graph(const PrecoderModel& model, ad::Tape& tape, std::span<const ad::Var> params,
                                    const ChannelSample& H, const SystemConfig& config)
{
    const std::size_t K = H.H.size();
    const Index d = config.streams_per_user;
    const Index nt = config.tx_antennas;
    const double P = config.total_power;

    std::vector<ad::Var> h;
    std::vector<ad::Var> hh;
    for (const ComplexMatrix& hk : H.H) {
        h.push_back(tape.constant(hk));
        hh.push_back(tape.constant(hk.adjoint()));
    }
    const ad::Var noise = tape.constant(ComplexMatrix::identity(config.rx_antennas).scaled(config.noise_power()));
    const ad::Var eye_d = tape.constant(ComplexMatrix::identity(d));
    const ad::Var eye_nt = tape.constant(ComplexMatrix::identity(nt));

    std::vector<ad::Var> V;
    for (ComplexMatrix& v : mrt_init(H, config).V) {
        V.push_back(tape.constant(std::move(v)));
    }

    for (std::size_t l = 0; l < model.hyper.unfolded_layers; ++l) {
        const ad::Var X = params[3 * l];
        const ad::Var Y = params[3 * l + 1];
        const ad::Var Z = params[3 * l + 2];

        const ad::Var all = ad::concat_cols(V);
        ad::Var A;
        std::vector<ad::Var> B;
        for (std::size_t k = 0; k < K; ++k) {
            const ad::Var t = ad::matmul(h[k], all);
            const ad::Var own = ad::matmul(h[k], V[k]);
            const ad::Var cov = ad::add(ad::matmul(t, ad::hermitian(t)), noise);
            const ad::Var U = ad::matmul(ad::inverse(cov), own);
            const ad::Var E = ad::sub(eye_d, ad::matmul(ad::hermitian(U), own));
            const ad::Var W = ad::inverse(E);
            const ad::Var hu = ad::matmul(hh[k], U);
            const ad::Var b = ad::matmul(hu, W);
            const ad::Var a = ad::matmul(b, ad::hermitian(hu));
            A = k == 0 ? a : ad::add(A, a);
            B.push_back(b);
        }
        const ad::Var Ball = ad::concat_cols(B);
        const ad::Var mu = ad::power_multiplier(A, Ball, P);
        const ad::Var M = ad::add(A, ad::scale_by(eye_nt, mu));

        // Surrogate of M^-1 evaluated on M / c with c the RMS eigenvalue scale;
        // the 1/c factor is absorbed by the power normalization below.
        const ad::Var c = ad::sqrt(ad::scale(ad::squared_norm(M), 1.0 / static_cast<double>(nt)));
        const ad::Var Mn = ad::scale_by(M, ad::reciprocal(c));
        const ad::Var S = ad::add(ad::add(ad::matmul(X, Mn), ad::matmul(Y, ad::inv_diag(Mn))), Z);
        ad::Var Vall = ad::matmul(S, Ball);
        Vall = ad::scale_by(Vall, ad::sqrt(ad::scale(ad::reciprocal(ad::squared_norm(Vall)), P)));

        for (std::size_t k = 0; k < K; ++k) {
            V[k] = ad::slice(Vall, 0, static_cast<Index>(k) * d, nt, d);
        }
    }
    return V;
}

} // namespace fastadapt::detail
