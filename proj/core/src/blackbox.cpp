#include "precoders_internal.hpp"

namespace fastadapt::detail {

namespace {

Index input_dim(const SystemConfig& s)
{
    return 2 * s.num_users * s.rx_antennas * s.tx_antennas;
}

Index output_dim(const SystemConfig& s)
{
    return 2 * s.num_users * s.tx_antennas * s.streams_per_user;
}

} // namespace

void init_blackbox(ParamStore& params, const SystemConfig& system, const ModelHyper& hyper, Rng& rng)
{
    Index in = input_dim(system);
    for (std::size_t l = 1; l <= hyper.blackbox_layers; ++l) {
        const Index out = l == hyper.blackbox_layers ? output_dim(system) : hyper.blackbox_hidden;
        const std::string tag = std::to_string(l);
        params.add("bb.W" + tag, ComplexMatrix(glorot(out, in, rng)), false);
        params.add("bb.b" + tag, ComplexMatrix(out, 1), false);
        in = out;
    }
}

std::vector<std::vector<ad::Var>> blackbox_graph(const PrecoderModel& model, ad::Tape& tape,
                                                 std::span<const ad::Var> params, const SampleRefs& batch)
{
    const SystemConfig& s = model.system;
    const Index n_in = input_dim(s);
    const Index half = n_in / 2;
    const Index per_user = s.rx_antennas * s.tx_antennas;

    // Columns are samples: [Re vec(H_1); ...; Re vec(H_K); Im vec(H_1); ...].
    RealMatrix x(n_in, static_cast<Index>(batch.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        for (Index k = 0; k < s.num_users; ++k) {
            const ComplexMatrix& h = batch[b]->H[static_cast<std::size_t>(k)];
            x.col(static_cast<Index>(b)).segment(k * per_user, per_user) = h.re().reshaped();
            x.col(static_cast<Index>(b)).segment(half + k * per_user, per_user) = h.im().reshaped();
        }
    }
    ad::Var act = tape.constant(ComplexMatrix(std::move(x)));
    const std::size_t L = model.hyper.blackbox_layers;
    for (std::size_t l = 0; l < L; ++l) {
        act = dense(params[2 * l], act, params[2 * l + 1]);
        if (l + 1 < L) {
            act = ad::tanh(act);
        }
    }

    const Index n_out = output_dim(s);
    const Index block = s.tx_antennas * s.streams_per_user;
    std::vector<std::vector<ad::Var>> out;
    out.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const ad::Var z = ad::complexify(ad::slice(act, 0, static_cast<Index>(b), n_out, 1));
        std::vector<ad::Var> users;
        for (Index k = 0; k < s.num_users; ++k) {
            users.push_back(ad::gather(z, index_range(k * block, block), s.tx_antennas, s.streams_per_user));
        }
        out.push_back(std::move(users));
    }
    return out;
}

} // namespace fastadapt::detail
