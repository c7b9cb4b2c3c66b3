#include "precoders_internal.hpp"

#include "fastadapt/error.hpp"

#include <cmath>

namespace fastadapt {

namespace detail {

ad::Var dense(ad::Var w, ad::Var x, ad::Var b)
{
    return ad::add_column(ad::matmul(w, x), b);
}

RealMatrix glorot(Index rows, Index cols, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    RealMatrix m(rows, cols);
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) {
            m(r, c) = u(rng);
        }
    }
    return m;
}

std::vector<Index> cyclic_block_indices(Index r, Index d, Index K, Index k)
{
    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(r * d * K));
    for (Index slot = 0; slot < K; ++slot) {
        const Index user = (k + slot) % K;
        for (Index c = 0; c < d; ++c) {
            for (Index i = 0; i < r; ++i) {
                idx.push_back((user * d + c) * r + i);
            }
        }
    }
    return idx;
}

std::vector<Index> index_range(Index first, Index count)
{
    std::vector<Index> idx(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) {
        idx[static_cast<std::size_t>(i)] = first + i;
    }
    return idx;
}

} // namespace detail

std::string to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::Blackbox: return "blackbox";
    case ModelKind::Unfolded: return "unfolded";
    case ModelKind::Fpn: return "fpn";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& name)
{
    if (name == "blackbox") return ModelKind::Blackbox;
    if (name == "unfolded") return ModelKind::Unfolded;
    if (name == "fpn") return ModelKind::Fpn;
    throw ConfigError("unknown model kind '" + name + "'");
}

PrecoderModel make_model(ModelKind kind, const SystemConfig& system, const ModelHyper& hyper, std::uint64_t seed)
{
    system.validate();
    PrecoderModel model;
    model.kind = kind;
    model.hyper = hyper;
    model.system = system;
    Rng rng = make_rng(seed, {0x6d6f64656cULL, static_cast<std::uint64_t>(kind)});
    switch (kind) {
    case ModelKind::Blackbox:
        if (hyper.blackbox_layers < 1 || hyper.blackbox_hidden < 1) {
            throw ConfigError("blackbox needs at least one layer and a positive width");
        }
        detail::init_blackbox(model.params, system, hyper, rng);
        break;
    case ModelKind::Unfolded:
        if (hyper.unfolded_layers < 1) {
            throw ConfigError("unfolded model needs at least one layer");
        }
        detail::init_unfolded(model.params, system, hyper);
        break;
    case ModelKind::Fpn:
        if (!(hyper.fpn_gamma > 0.0 && hyper.fpn_gamma < 1.0) || !(hyper.fpn_tolerance > 0.0) ||
            hyper.fpn_max_iter < 1 || hyper.fpn_width_factor < 1 ||
            !(hyper.fpn_input_scale > 0.0 && hyper.fpn_input_scale <= 1.0)) {
            throw ConfigError("invalid fixed-point network hyperparameters");
        }
        detail::init_fpn(model.params, system, hyper, rng);
        model.params = lipschitz_project(model.params, hyper.fpn_gamma);
        break;
    }
    return model;
}

void apply_multitask_partition(PrecoderModel& model)
{
    const std::string last_bb = std::to_string(model.hyper.blackbox_layers);
    const std::string last_unf = std::to_string(model.hyper.unfolded_layers);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        ParamEntry& e = model.params.entry(i);
        bool specific = false;
        switch (model.kind) {
        case ModelKind::Blackbox: specific = e.name == "bb.W" + last_bb || e.name == "bb.b" + last_bb; break;
        case ModelKind::Unfolded:
            specific = e.name == "unf.X" + last_unf || e.name == "unf.Y" + last_unf || e.name == "unf.Z" + last_unf;
            break;
        case ModelKind::Fpn: specific = e.name.rfind("fpn.V.", 0) == 0; break;
        }
        e.partition = specific ? Partition::TaskSpecific : Partition::Shared;
    }
}

std::vector<std::vector<ad::Var>> forward(const PrecoderModel& model, ad::Tape& tape,
                                          std::span<const ad::Var> params, const SampleRefs& batch,
                                          const SystemConfig& config)
{
    if (params.size() != model.params.size()) {
        throw ShapeError("forward: bound parameter count does not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamEntry& e = model.params.entry(i);
        if (params[i].rows() != e.rows || params[i].cols() != e.cols) {
            throw ShapeError("forward: parameter '" + e.name + "' has the wrong shape");
        }
    }
    if (config.num_users != model.system.num_users || config.tx_antennas != model.system.tx_antennas ||
        config.rx_antennas != model.system.rx_antennas ||
        config.streams_per_user != model.system.streams_per_user) {
        throw ShapeError("forward: configuration dimensions differ from the model");
    }
    for (const ChannelSample* s : batch) {
        if (s->H.size() != static_cast<std::size_t>(config.num_users)) {
            throw ShapeError("forward: sample has the wrong number of users");
        }
        for (const ComplexMatrix& h : s->H) {
            if (h.rows() != config.rx_antennas || h.cols() != config.tx_antennas) {
                throw ShapeError("forward: channel shape does not match the configuration");
            }
        }
    }
    std::vector<std::vector<ad::Var>> raw;
    switch (model.kind) {
    case ModelKind::Blackbox: raw = detail::blackbox_graph(model, tape, params, batch); break;
    case ModelKind::Unfolded:
        for (const ChannelSample* s : batch) {
            raw.push_back(detail::unfolded_graph(model, tape, params, *s, config));
        }
        break;
    case ModelKind::Fpn:
        for (const ChannelSample* s : batch) {
            raw.push_back(detail::fpn_graph(model, tape, params, *s, config));
        }
        break;
    }
    for (std::vector<ad::Var>& v : raw) {
        v = project_power(v, config.total_power);
    }
    return raw;
}

ad::Var batch_rate(const PrecoderModel& model, ad::Tape& tape, std::span<const ad::Var> params,
                   const SampleRefs& batch, const SystemConfig& config)
{
    if (batch.empty()) {
        throw ConfigError("batch_rate: empty batch");
    }
    const std::vector<std::vector<ad::Var>> V = forward(model, tape, params, batch, config);
    const double sigma2 = config.noise_power();
    ad::Var total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ad::Var r = sum_rate(tape, *batch[i], V[i], sigma2);
        total = i == 0 ? r : ad::add(total, r);
    }
    return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

LossGradient loss_and_gradient(const PrecoderModel& model, const ParamStore& params, const SampleRefs& batch,
                               const SystemConfig& config)
{
    ad::Tape tape;
    const std::vector<ad::Var> vars = bind(tape, params, true);
    const ad::Var loss = ad::scale(batch_rate(model, tape, vars, batch, config), -1.0);
    const ad::Gradients grads = tape.backward(loss);
    return {loss.value().re()(0, 0), collect_gradients(params, vars, grads)};
}

std::vector<PrecoderSet> precode(const PrecoderModel& model, const ParamStore& params, const SampleRefs& batch,
                                 const SystemConfig& config)
{
    ad::Tape tape(false);
    const std::vector<ad::Var> vars = bind(tape, params, false);
    const std::vector<std::vector<ad::Var>> V = forward(model, tape, vars, batch, config);
    std::vector<PrecoderSet> out;
    out.reserve(V.size());
    for (const std::vector<ad::Var>& users : V) {
        PrecoderSet p;
        for (const ad::Var& v : users) {
            p.V.push_back(v.value());
        }
        out.push_back(std::move(p));
    }
    return out;
}

double mean_sum_rate(const PrecoderModel& model, const ParamStore& params, std::span<const ChannelSample> samples,
                     const SystemConfig& config)
{
    if (samples.empty()) {
        throw ConfigError("mean_sum_rate: no samples");
    }
    const std::size_t chunk = model.kind == ModelKind::Blackbox ? 256 : 1;
    const double sigma2 = config.noise_power();
    double total = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        SampleRefs refs;
        for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) {
            refs.push_back(&samples[i]);
        }
        const std::vector<PrecoderSet> V = precode(model, params, refs, config);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            total += sum_rate(*refs[i], V[i], sigma2);
        }
    }
    return total / static_cast<double>(samples.size());
}

PrecoderSet blackbox_forward(const PrecoderModel& model, const ChannelSample& H, const SystemConfig& config)
{
    if (model.kind != ModelKind::Blackbox) {
        throw ConfigError("blackbox_forward: model is " + to_string(model.kind));
    }
    return precode(model, model.params, {&H}, config).front();
}

PrecoderSet unfolded_forward(const PrecoderModel& model, const ChannelSample& H, const SystemConfig& config)
{
    if (model.kind != ModelKind::Unfolded) {
        throw ConfigError("unfolded_forward: model is " + to_string(model.kind));
    }
    return precode(model, model.params, {&H}, config).front();
}

} // namespace fastadapt
