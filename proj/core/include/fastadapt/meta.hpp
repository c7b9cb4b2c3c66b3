#pragma once

#include "fastadapt/precoders.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace fastadapt {

enum class Optimizer { Sgd, Adam };

/// Which split of each TaskDataset feeds the gradient.
enum class DataSplit { Support, Query };

struct TrainOptions {
    double learning_rate = 1e-3;
    std::size_t iterations = 2000;
    std::size_t batch_size = 8;
    Optimizer optimizer = Optimizer::Adam;
    std::uint64_t seed = 0;
    double snr_db = 20.0;
    DataSplit split = DataSplit::Support;
    /// Append-only CSV log (iteration,task_id,loss,query_rate,wall_time_s); empty disables it.
    std::string log_path;
    /// Query rate logged every this many iterations; 0 logs the loss only.
    std::size_t log_every = 0;

    /// learning_rate > 0 and batch_size >= 1. Zero iterations are allowed and return the input.
    void validate() const;
};

/// Per-entry optimizer state. Adam keeps first and second moments and a step
/// count per entry, so entries that are updated on different schedules stay independent.
class OptimizerState {
public:
    OptimizerState(Optimizer kind, double learning_rate);

    /// Applies one update to the entries with a true mask bit (all entries when mask is empty).
    void step(ParamStore& params, const std::vector<ComplexMatrix>& grads, const std::vector<bool>& mask = {});

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
        std::size_t t = 0;
    };

    Optimizer kind_;
    double lr_;
    std::vector<Moments> moments_;
};

/// Gradient of -mean sum_rate with only the masked entries on the tape as parameters.
LossGradient masked_loss_and_gradient(const PrecoderModel& model, const ParamStore& params,
                                      const std::vector<bool>& trainable, const SampleRefs& batch,
                                      const SystemConfig& config);

/// Trains model.params on batches drawn uniformly across tasks.
ParamStore joint_train(const PrecoderModel& model, const std::vector<TaskDataset>& tasks, const TrainOptions& opts);

/// First-order MAML meta-initialization. Inner steps are plain gradient steps on support batches;
/// the query-batch gradient at the adapted point updates the meta-parameters.
ParamStore maml_train(const PrecoderModel& model, const std::vector<TaskDataset>& tasks, std::size_t inner_steps,
                      double inner_lr, const TrainOptions& outer_opts);

struct AdaptationReport {
    std::vector<double> rate_per_iteration;  // index 0 is the pre-adaptation rate
    std::size_t iterations_to_95pct = 0;
    double final_rate = 0.0;
    double wall_time = 0.0;  // seconds
};

/// First index whose rate reaches 0.95 of the last entry.
std::size_t iterations_to_fraction(const std::vector<double>& rates, double fraction = 0.95);

/// Called with the iteration index and the parameters after that many steps.
using StepObserver = std::function<void(std::size_t, const ParamStore&)>;

/// Full-batch gradient steps on the support set; the query set is only evaluated.
std::pair<ParamStore, AdaptationReport> fine_tune(const PrecoderModel& model, const ParamStore& params,
                                                  const std::vector<ChannelSample>& support,
                                                  const std::vector<ChannelSample>& query, const TrainOptions& opts,
                                                  const StepObserver& observer = {});

/// Shared part w and one task-specific part v_n per training task.
struct MultiTaskParams {
    ParamStore shared;
    std::vector<ParamStore> task_specific;

    /// Full parameter set in model order, using v_n for the task-specific entries.
    ParamStore compose(const PrecoderModel& model, std::size_t n) const;
    /// Full parameter set using an explicit task-specific part.
    ParamStore compose(const PrecoderModel& model, const ParamStore& specific) const;
};

/// Splits model.params by partition; throws unless both parts are non-empty and disjoint.
MultiTaskParams split_partition(const PrecoderModel& model, std::size_t n_tasks);

/// Minimizes the mean over tasks of -sum_rate(f(w, v_n; x)) jointly over w and every v_n.
MultiTaskParams multitask_train(const PrecoderModel& model, const std::vector<TaskDataset>& tasks,
                                const TrainOptions& opts);

/// v_new starts at the mean of the v_n and is the only part updated.
std::pair<ParamStore, AdaptationReport> adapt_multitask(const PrecoderModel& model, const MultiTaskParams& mt,
                                                        const std::vector<ChannelSample>& support,
                                                        const std::vector<ChannelSample>& query,
                                                        const TrainOptions& opts, const StepObserver& observer = {});

/// Number of real scalars updated by adapt_multitask.
std::size_t multitask_trainable_count(const PrecoderModel& model);

} // namespace fastadapt
