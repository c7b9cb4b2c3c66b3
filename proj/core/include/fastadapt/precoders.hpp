#pragma once

#include "fastadapt/autodiff.hpp"
#include "fastadapt/channel.hpp"
#include "fastadapt/params.hpp"
#include "fastadapt/wmmse.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fastadapt {

enum class ModelKind { Blackbox, Unfolded, Fpn };

std::string to_string(ModelKind kind);
/// Accepts "blackbox", "unfolded" and "fpn".
ModelKind parse_model_kind(const std::string& name);

/// Architecture record. Immutable once a model is built.
struct ModelHyper {
    std::size_t unfolded_layers = 7;
    std::size_t blackbox_layers = 3;  // weight layers, the last one linear
    Index blackbox_hidden = 512;
    double fpn_tolerance = 1e-4;
    double fpn_gamma = 0.9;
    std::size_t fpn_max_iter = 200;
    std::size_t fpn_width_factor = 4;
    /// Scale applied to every stage input of the fixed-point map.
    double fpn_input_scale = 0.5;

    friend bool operator==(const ModelHyper&, const ModelHyper&) = default;
};

struct PrecoderModel {
    ModelKind kind = ModelKind::Unfolded;
    ModelHyper hyper;
    SystemConfig system;  // dimensions; the operating SNR comes from the forward call
    ParamStore params;
};

/// Fresh model with seeded initialization. Unfolded layers start at X = 0,
/// Y = I, Z = 0; fixed-point networks start Lipschitz-projected.
PrecoderModel make_model(ModelKind kind, const SystemConfig& system, const ModelHyper& hyper = {},
                         std::uint64_t seed = 0);

/// Tags the output-adjacent entries task-specific: the last blackbox layer, the
/// last unfolded layer, or the V-stage network of a fixed-point model.
void apply_multitask_partition(PrecoderModel& model);

using SampleRefs = std::vector<const ChannelSample*>;

/// Precoders for each sample of a batch, built on `tape` from bound parameters.
/// Outputs are power projected.
std::vector<std::vector<ad::Var>> forward(const PrecoderModel& model, ad::Tape& tape,
                                          std::span<const ad::Var> params, const SampleRefs& batch,
                                          const SystemConfig& config);

/// Mean sum-rate over the batch as a 1x1 node.
ad::Var batch_rate(const PrecoderModel& model, ad::Tape& tape, std::span<const ad::Var> params,
                   const SampleRefs& batch, const SystemConfig& config);

struct LossGradient {
    double loss = 0.0;  // -mean sum-rate
    std::vector<ComplexMatrix> grads;
};

/// Loss -mean sum_rate over the batch and its gradient per parameter entry.
LossGradient loss_and_gradient(const PrecoderModel& model, const ParamStore& params, const SampleRefs& batch,
                               const SystemConfig& config);

/// Value-only precoders using `params` in place of model.params.
std::vector<PrecoderSet> precode(const PrecoderModel& model, const ParamStore& params, const SampleRefs& batch,
                                 const SystemConfig& config);

/// Mean sum-rate of the model over samples at the SNR of `config`.
double mean_sum_rate(const PrecoderModel& model, const ParamStore& params, std::span<const ChannelSample> samples,
                     const SystemConfig& config);

PrecoderSet blackbox_forward(const PrecoderModel& model, const ChannelSample& H, const SystemConfig& config);
PrecoderSet unfolded_forward(const PrecoderModel& model, const ChannelSample& H, const SystemConfig& config);

/// Real state vector [Re z; Im z] with z the per-user stack of vec(U_k), vec(W_k), vec(V_k).
using FpnState = Eigen::VectorXd;

/// Initial state: MRT precoders, zero U and W.
FpnState fpn_initial_state(const ChannelSample& H, const SystemConfig& config);

/// One application of the learned contraction.
FpnState fpn_map(const PrecoderModel& model, const FpnState& z, const ChannelSample& H, const SystemConfig& config);

struct FpnSolution {
    PrecoderSet V;
    std::size_t iterations = 0;
    std::vector<double> residuals;  // ||z_{t+1} - z_t|| per iteration
    FpnState state;
};

/// Iterates fpn_map until the step is below hyper.fpn_tolerance; NumericError
/// with the residual when hyper.fpn_max_iter is exhausted.
FpnSolution fpn_solve(const PrecoderModel& model, const ChannelSample& H, const SystemConfig& config);

/// Precoders per user extracted from a state vector.
PrecoderSet fpn_precoders(const FpnState& z, const SystemConfig& config);

} // namespace fastadapt
