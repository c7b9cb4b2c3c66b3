#pragma once

#include "fastadapt/precoders.hpp"

namespace fastadapt::detail {

void init_blackbox(ParamStore& params, const SystemConfig& system, const ModelHyper& hyper, Rng& rng);
void init_unfolded(ParamStore& params, const SystemConfig& system, const ModelHyper& hyper);
void init_fpn(ParamStore& params, const SystemConfig& system, const ModelHyper& hyper, Rng& rng);

/// Unprojected precoders of every sample in one batched pass.
std::vector<std::vector<ad::Var>> blackbox_graph(const PrecoderModel& model, ad::Tape& tape,
                                                 std::span<const ad::Var> params, const SampleRefs& batch);

/// Unprojected precoders for one sample.
std::vector<ad::Var> unfolded_graph(const PrecoderModel& model, ad::Tape& tape, std::span<const ad::Var> params,
                                    const ChannelSample& H, const SystemConfig& config);
std::vector<ad::Var> fpn_graph(const PrecoderModel& model, ad::Tape& tape, std::span<const ad::Var> params,
                               const ChannelSample& H, const SystemConfig& config);

/// Dense layer W x + b with b added to every column.
ad::Var dense(ad::Var w, ad::Var x, ad::Var b);

/// Uniform Glorot initialization of a real rows x cols matrix.
RealMatrix glorot(Index rows, Index cols, Rng& rng);

/// Indices placing the column block of width d of user j at slot (j - k) mod K,
/// applied to the column-major vec of an r x (K d) matrix.
std::vector<Index> cyclic_block_indices(Index r, Index d, Index K, Index k);

/// Consecutive indices [first, first + count).
std::vector<Index> index_range(Index first, Index count);

} // namespace fastadapt::detail
