#pragma once

#include "fastadapt/complex_matrix.hpp"
#include "fastadapt/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fastadapt {

/// Narrow-band MU-MIMO downlink dimensions and operating point.
struct SystemConfig {
    Index num_users = 4;         // K
    Index tx_antennas = 8;       // Nt
    Index rx_antennas = 2;       // Nr
    Index streams_per_user = 2;  // d
    double total_power = 1.0;    // P
    double snr_db = 20.0;

    /// Noise power sigma^2 = P * 10^(-snr_db / 10).
    double noise_power() const;
    double noise_power_at(double snr) const;

    /// Throws ConfigError when K*d > Nt, d > Nr, P <= 0 or a dimension is zero.
    void validate() const;

    friend bool operator==(const SystemConfig&, const SystemConfig&) = default;
};

/// One propagation environment of the exponential Kronecker model.
struct ChannelTask {
    int task_id = 0;
    double rho_tx = 0.0;
    double rho_rx = 0.0;
    ComplexMatrix R_t;       // Nt x Nt
    ComplexMatrix R_r;       // Nr x Nr
    std::uint64_t seed = 0;
    ComplexMatrix sqrt_R_t;  // cached R_t^{1/2}
    ComplexMatrix sqrt_R_r;  // cached R_r^{1/2}
};

/// Builds a task and its correlation matrices (recomputed, never loaded).
ChannelTask make_task(int task_id, double rho_tx, double rho_rx, std::uint64_t seed,
                      const SystemConfig& config);

/// Per-user channels H_k, each Nr x Nt.
struct ChannelSample {
    std::vector<ComplexMatrix> H;

    friend bool operator==(const ChannelSample&, const ChannelSample&) = default;
};

struct TaskDataset {
    ChannelTask task;
    std::vector<ChannelSample> support;
    std::vector<ChannelSample> query;
};

/// n x n real matrix with entries rho^{|i-j|}. Requires 0 <= rho < 1 and n >= 1.
ComplexMatrix make_correlation(Index n, double rho);

/// Hermitian square root of a Hermitian PSD matrix (eigenvalues clamped at 0).
ComplexMatrix sqrt_psd(const ComplexMatrix& a);

/// H_k = R_r^{1/2} G_k R_t^{1/2} with G_k i.i.d. CN(0, 1).
ChannelSample sample_channel(const ChannelTask& task, const SystemConfig& config, Rng& rng);

/// Correlation grid of a task suite. One rho per task drives both sides.
struct SuiteSpec {
    std::vector<double> train_rho{0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75};
    double test_rho = 0.90;
    std::uint64_t seed = 2024;

    friend bool operator==(const SuiteSpec&, const SuiteSpec&) = default;
};

struct TaskSuite {
    SystemConfig config;
    std::vector<ChannelTask> training;  // task ids 1..N, most similar to testing first
    ChannelTask testing;                // task id 0
};

/// Orders training tasks by |rho - test_rho| ascending; duplicate rho values are an error.
TaskSuite make_task_suite(const SystemConfig& config, const SuiteSpec& spec);

/// Support and query sets from disjoint RNG substreams of `seed`.
TaskDataset build_dataset(const ChannelTask& task, const SystemConfig& config, std::size_t n_support,
                          std::size_t n_query, std::uint64_t seed);

/// JSON document {config, tasks:[{task_id, rho_tx, rho_rx, seed}], testing:{...}}.
std::string suite_to_json(const TaskSuite& suite);
TaskSuite suite_from_json(const std::string& text);
void save_suite(const TaskSuite& suite, const std::string& path);
TaskSuite load_suite(const std::string& path);

} // namespace fastadapt
