#pragma once

#include "fastadapt/autodiff.hpp"
#include "fastadapt/channel.hpp"

#include <span>
#include <vector>

namespace fastadapt {

/// Per-user transmit precoders V_k (Nt x d).
struct PrecoderSet {
    std::vector<ComplexMatrix> V;

    double total_power() const;
};

/// Receive filters, MSE weights, precoders and the sum-rate trace of WMMSE.
struct WmmseState {
    std::vector<ComplexMatrix> U;  // Nr x d
    std::vector<ComplexMatrix> W;  // d x d
    PrecoderSet V;
    std::size_t iteration = 0;
    std::vector<double> rate_trace;  // bits/s/Hz, entry 0 is the initial precoder
};

struct WmmseResult {
    PrecoderSet V;
    std::vector<double> rate_trace;
};

/// Sum of log2 det(I + S_k N_k^{-1}) over users, with S_k the own-signal
/// covariance and N_k = sigma2 I plus inter-user interference.
double sum_rate(const ChannelSample& H, const PrecoderSet& V, double sigma2);

/// Differentiable sum-rate over precoder nodes; returns a 1x1 real node in bits/s/Hz.
ad::Var sum_rate(ad::Tape& tape, const ChannelSample& H, std::span<const ad::Var> V, double sigma2);

/// Maximum-ratio directions V_k proportional to the first d columns of H_k^H,
/// each user scaled to power P / K.
PrecoderSet mrt_init(const ChannelSample& H, const SystemConfig& config);

/// Scales every V_k by sqrt(P / total) when the total power exceeds P.
PrecoderSet project_power(const PrecoderSet& V, double P);

/// Differentiable project_power; the branch is chosen from the forward value.
std::vector<ad::Var> project_power(std::span<const ad::Var> V, double P);

WmmseState wmmse_init(const ChannelSample& H, const SystemConfig& config);

/// One round of U, W and V block updates at the noise power of `config`.
WmmseState wmmse_step(const WmmseState& state, const ChannelSample& H, const SystemConfig& config);

/// Iterates wmmse_step until the rate changes by less than tol or max_iter steps.
WmmseResult wmmse_solve(const ChannelSample& H, const SystemConfig& config, double tol = 1e-5,
                        std::size_t max_iter = 500);

/// Single-user capacity with water-filling over the singular values of H.
double waterfilling_oracle(const ComplexMatrix& H, double P, double sigma2);

} // namespace fastadapt
