#include "fastadapt/meta.hpp"

#include "fastadapt/error.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fastadapt {

namespace {

// Joint, multi-task and MAML training share one stream so their draws line up.
constexpr std::uint64_t kTrainStream = 0x747261696eULL;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

SystemConfig train_config(const PrecoderModel& model, double snr_db)
{
    SystemConfig c = model.system;
    c.snr_db = snr_db;
    return c;
}

const std::vector<ChannelSample>& pool_of(const TaskDataset& t, DataSplit split)
{
    return split == DataSplit::Support ? t.support : t.query;
}

void check_tasks(const std::vector<TaskDataset>& tasks, DataSplit split)
{
    if (tasks.empty()) {
        throw ConfigError("training requires at least one task");
    }
    for (const TaskDataset& t : tasks) {
        if (pool_of(t, split).empty()) {
            throw ConfigError("task " + std::to_string(t.task.task_id) + " has no training samples");
        }
    }
}

SampleRefs draw_batch(const std::vector<ChannelSample>& pool, std::size_t batch_size, Rng& rng)
{
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    SampleRefs batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        batch.push_back(&pool[pick(rng)]);
    }
    return batch;
}

SampleRefs all_of(const std::vector<ChannelSample>& samples)
{
    SampleRefs refs;
    refs.reserve(samples.size());
    for (const ChannelSample& s : samples) {
        refs.push_back(&s);
    }
    return refs;
}

void check_finite(double loss, std::size_t iteration)
{
    if (!std::isfinite(loss)) {
        throw NumericError("training diverged at iteration " + std::to_string(iteration) + " (loss is not finite)");
    }
}

/// Keeps fixed-point networks contractive after every update.
void constrain(const PrecoderModel& model, ParamStore& params)
{
    if (model.kind == ModelKind::Fpn) {
        params = lipschitz_project(params, model.hyper.fpn_gamma);
    }
}

LossGradient guarded_gradient(const PrecoderModel& model, const ParamStore& params, const std::vector<bool>& mask,
                              const SampleRefs& batch, const SystemConfig& config, std::size_t iteration)
{
    try {
        LossGradient lg = mask.empty() ? loss_and_gradient(model, params, batch, config)
                                       : masked_loss_and_gradient(model, params, mask, batch, config);
        check_finite(lg.loss, iteration);
        return lg;
    } catch (const NumericError& e) {
        const std::string what = e.what();
        if (what.rfind("training diverged", 0) == 0) {
            throw;
        }
        throw NumericError("training diverged at iteration " + std::to_string(iteration) + ": " + what);
    }
}

class TrainLog {
public:
    TrainLog(const TrainOptions& opts) : every_(opts.log_every), start_(Clock::now())
    {
        if (opts.log_path.empty()) {
            return;
        }
        const bool fresh = !std::filesystem::exists(opts.log_path) || std::filesystem::file_size(opts.log_path) == 0;
        out_.open(opts.log_path, std::ios::app);
        if (!out_) {
            throw IoError("cannot open training log " + opts.log_path);
        }
        if (fresh) {
            out_ << "iteration,task_id,loss,query_rate,wall_time_s\n";
        }
    }

    bool enabled() const { return out_.is_open(); }
    bool wants_rate(std::size_t it) const { return enabled() && every_ > 0 && (it + 1) % every_ == 0; }

    void write(std::size_t it, int task_id, double loss, const double* rate)
    {
        if (!enabled()) {
            return;
        }
        out_ << it << ',' << task_id << ',' << loss << ',';
        if (rate) {
            out_ << *rate;
        }
        out_ << ',' << seconds_since(start_) << '\n';
    }

private:
    std::size_t every_;
    Clock::time_point start_;
    std::ofstream out_;
};

double logged_rate(const PrecoderModel& model, const ParamStore& params, const TaskDataset& task,
                   const SystemConfig& config)
{
    const std::size_t n = std::min<std::size_t>(64, task.query.size());
    return mean_sum_rate(model, params, std::span<const ChannelSample>(task.query.data(), n), config);
}

std::vector<bool> partition_mask(const ParamStore& params, Partition p)
{
    std::vector<bool> mask(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        mask[i] = params.entry(i).partition == p;
    }
    return mask;
}

std::pair<ParamStore, AdaptationReport> adapt(const PrecoderModel& model, ParamStore params,
                                              const std::vector<bool>& mask, const std::vector<ChannelSample>& support,
                                              const std::vector<ChannelSample>& query, const TrainOptions& opts,
                                              const StepObserver& observer,
                                              const std::function<ParamStore(const ParamStore&)>& expand)
{
    opts.validate();
    if (support.empty()) {
        throw ConfigError("adaptation requires a non-empty support set");
    }
    if (query.empty()) {
        throw ConfigError("adaptation requires a non-empty query set");
    }
    const SystemConfig config = train_config(model, opts.snr_db);
    const Clock::time_point start = Clock::now();
    const SampleRefs batch = all_of(support);
    OptimizerState opt(opts.optimizer, opts.learning_rate);

    AdaptationReport report;
    const auto record = [&](std::size_t it) {
        const ParamStore full = expand ? expand(params) : params;
        report.rate_per_iteration.push_back(mean_sum_rate(model, full, query, config));
        if (observer) {
            observer(it, full);
        }
    };
    record(0);
    for (std::size_t it = 1; it <= opts.iterations; ++it) {
        const ParamStore full = expand ? expand(params) : params;
        const LossGradient lg = guarded_gradient(model, full, mask, batch, config, it);
        if (expand) {
            // params holds only the trainable entries, in full-store order.
            std::vector<ComplexMatrix> g;
            for (std::size_t i = 0; i < full.size(); ++i) {
                if (mask[i]) {
                    g.push_back(lg.grads[i]);
                }
            }
            opt.step(params, g);
        } else {
            opt.step(params, lg.grads, mask);
        }
        if (!expand) {
            constrain(model, params);
        } else if (model.kind == ModelKind::Fpn) {
            params = lipschitz_project(params, model.hyper.fpn_gamma);
        }
        record(it);
    }
    report.final_rate = report.rate_per_iteration.back();
    report.iterations_to_95pct = iterations_to_fraction(report.rate_per_iteration);
    report.wall_time = seconds_since(start);
    return {expand ? expand(params) : params, report};
}

} // namespace

void TrainOptions::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("TrainOptions: learning rate must be positive");
    }
    if (batch_size < 1) {
        throw ConfigError("TrainOptions: batch size must be at least 1");
    }
    if (!std::isfinite(snr_db)) {
        throw ConfigError("TrainOptions: snr_db must be finite");
    }
}

OptimizerState::OptimizerState(Optimizer kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

void OptimizerState::step(ParamStore& params, const std::vector<ComplexMatrix>& grads, const std::vector<bool>& mask)
{
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    if (grads.size() != params.size() || (!mask.empty() && mask.size() != params.size())) {
        throw ShapeError("OptimizerState::step: gradient count does not match the store");
    }
    if (moments_.empty()) {
        moments_.resize(params.size());
    }
    if (moments_.size() != params.size()) {
        throw ShapeError("OptimizerState::step: store layout changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!mask.empty() && !mask[i]) {
            continue;
        }
        ParamEntry& e = params.entry(i);
        const ComplexMatrix& g = grads[i];
        if (g.rows() != e.rows || g.cols() != e.cols) {
            throw ShapeError("OptimizerState::step: gradient shape mismatch for '" + e.name + "'");
        }
        const std::size_t n = static_cast<std::size_t>(e.rows * e.cols);
        const double* gre = g.re().data();
        const double* gim = g.im().data();
        const auto grad_at = [&](std::size_t j) { return j < n ? gre[j] : gim[j - n]; };
        if (kind_ == Optimizer::Sgd) {
            for (std::size_t j = 0; j < e.data.size(); ++j) {
                e.data[j] -= lr_ * grad_at(j);
            }
            continue;
        }
        Moments& mo = moments_[i];
        if (mo.m.empty()) {
            mo.m.assign(e.data.size(), 0.0);
            mo.v.assign(e.data.size(), 0.0);
        }
        ++mo.t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(mo.t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(mo.t));
        for (std::size_t j = 0; j < e.data.size(); ++j) {
            const double gj = grad_at(j);
            mo.m[j] = beta1 * mo.m[j] + (1.0 - beta1) * gj;
            mo.v[j] = beta2 * mo.v[j] + (1.0 - beta2) * gj * gj;
            e.data[j] -= lr_ * (mo.m[j] / c1) / (std::sqrt(mo.v[j] / c2) + eps);
        }
    }
}

LossGradient masked_loss_and_gradient(const PrecoderModel& model, const ParamStore& params,
                                      const std::vector<bool>& trainable, const SampleRefs& batch,
                                      const SystemConfig& config)
{
    if (trainable.size() != params.size()) {
        throw ShapeError("masked_loss_and_gradient: mask size does not match the store");
    }
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ComplexMatrix m = params.entry(i).matrix();
        vars.push_back(trainable[i] ? tape.parameter(m) : tape.constant(m));
    }
    const ad::Var loss = ad::scale(batch_rate(model, tape, vars, batch, config), -1.0);
    const ad::Gradients grads = tape.backward(loss);
    return {loss.value().re()(0, 0), collect_gradients(params, vars, grads)};
}

ParamStore joint_train(const PrecoderModel& model, const std::vector<TaskDataset>& tasks, const TrainOptions& opts)
{
    opts.validate();
    check_tasks(tasks, opts.split);
    const SystemConfig config = train_config(model, opts.snr_db);
    ParamStore params = model.params;
    OptimizerState opt(opts.optimizer, opts.learning_rate);
    Rng rng = make_rng(opts.seed, {kTrainStream});
    std::uniform_int_distribution<std::size_t> pick_task(0, tasks.size() - 1);
    TrainLog log(opts);
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        const TaskDataset& task = tasks[pick_task(rng)];
        const SampleRefs batch = draw_batch(pool_of(task, opts.split), opts.batch_size, rng);
        const LossGradient lg = guarded_gradient(model, params, {}, batch, config, it);
        opt.step(params, lg.grads);
        constrain(model, params);
        if (log.enabled()) {
            const double rate = log.wants_rate(it) ? logged_rate(model, params, task, config) : 0.0;
            log.write(it, task.task.task_id, lg.loss, log.wants_rate(it) ? &rate : nullptr);
        }
    }
    return params;
}

ParamStore maml_train(const PrecoderModel& model, const std::vector<TaskDataset>& tasks, std::size_t inner_steps,
                      double inner_lr, const TrainOptions& outer_opts)
{
    outer_opts.validate();
    check_tasks(tasks, DataSplit::Query);
    if (inner_steps > 0) {
        check_tasks(tasks, DataSplit::Support);
        if (!(inner_lr > 0.0)) {
            throw ConfigError("maml_train: inner learning rate must be positive");
        }
    }
    const SystemConfig config = train_config(model, outer_opts.snr_db);
    ParamStore meta = model.params;
    OptimizerState opt(outer_opts.optimizer, outer_opts.learning_rate);
    Rng rng = make_rng(outer_opts.seed, {kTrainStream});
    std::uniform_int_distribution<std::size_t> pick_task(0, tasks.size() - 1);
    TrainLog log(outer_opts);
    for (std::size_t it = 0; it < outer_opts.iterations; ++it) {
        const TaskDataset& task = tasks[pick_task(rng)];
        ParamStore adapted = meta;
        OptimizerState inner(Optimizer::Sgd, inner_lr);
        for (std::size_t s = 0; s < inner_steps; ++s) {
            const SampleRefs batch = draw_batch(task.support, outer_opts.batch_size, rng);
            inner.step(adapted, guarded_gradient(model, adapted, {}, batch, config, it).grads);
            constrain(model, adapted);
        }
        const SampleRefs batch = draw_batch(task.query, outer_opts.batch_size, rng);
        const LossGradient lg = guarded_gradient(model, adapted, {}, batch, config, it);
        opt.step(meta, lg.grads);
        constrain(model, meta);
        if (log.enabled()) {
            const double rate = log.wants_rate(it) ? logged_rate(model, adapted, task, config) : 0.0;
            log.write(it, task.task.task_id, lg.loss, log.wants_rate(it) ? &rate : nullptr);
        }
    }
    return meta;
}

std::size_t iterations_to_fraction(const std::vector<double>& rates, double fraction)
{
    if (rates.empty()) {
        return 0;
    }
    const double target = fraction * rates.back();
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] >= target) {
            return i;
        }
    }
    return rates.size() - 1;
}

std::pair<ParamStore, AdaptationReport> fine_tune(const PrecoderModel& model, const ParamStore& params,
                                                  const std::vector<ChannelSample>& support,
                                                  const std::vector<ChannelSample>& query, const TrainOptions& opts,
                                                  const StepObserver& observer)
{
    if (params.size() != model.params.size()) {
        throw ShapeError("fine_tune: parameters do not match the model");
    }
    return adapt(model, params, {}, support, query, opts, observer, {});
}

ParamStore MultiTaskParams::compose(const PrecoderModel& model, std::size_t n) const
{
    if (n >= task_specific.size()) {
        throw ConfigError("MultiTaskParams: task index " + std::to_string(n) + " out of range");
    }
    return compose(model, task_specific[n]);
}

ParamStore MultiTaskParams::compose(const PrecoderModel& model, const ParamStore& specific) const
{
    ParamStore full = model.params;
    for (std::size_t i = 0; i < full.size(); ++i) {
        ParamEntry& e = full.entry(i);
        const ParamStore& src = e.partition == Partition::Shared ? shared : specific;
        const ParamEntry& from = src.at(e.name);
        if (from.rows != e.rows || from.cols != e.cols || from.is_complex != e.is_complex) {
            throw ShapeError("MultiTaskParams: entry '" + e.name + "' has the wrong shape");
        }
        e.data = from.data;
    }
    return full;
}

MultiTaskParams split_partition(const PrecoderModel& model, std::size_t n_tasks)
{
    MultiTaskParams mt;
    mt.shared = model.params.subset(Partition::Shared);
    const ParamStore specific = model.params.subset(Partition::TaskSpecific);
    if (specific.empty() || mt.shared.empty()) {
        throw ConfigError("multi-task training needs non-empty shared and task-specific partitions");
    }
    mt.task_specific.assign(n_tasks, specific);
    return mt;
}

MultiTaskParams multitask_train(const PrecoderModel& model, const std::vector<TaskDataset>& tasks,
                                const TrainOptions& opts)
{
    opts.validate();
    check_tasks(tasks, opts.split);
    MultiTaskParams mt = split_partition(model, tasks.size());
    const SystemConfig config = train_config(model, opts.snr_db);
    OptimizerState shared_opt(opts.optimizer, opts.learning_rate);
    std::vector<OptimizerState> specific_opt(tasks.size(), OptimizerState(opts.optimizer, opts.learning_rate));
    Rng rng = make_rng(opts.seed, {kTrainStream});
    std::uniform_int_distribution<std::size_t> pick_task(0, tasks.size() - 1);
    TrainLog log(opts);
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        const std::size_t n = pick_task(rng);
        const TaskDataset& task = tasks[n];
        const SampleRefs batch = draw_batch(pool_of(task, opts.split), opts.batch_size, rng);
        ParamStore full = mt.compose(model, n);
        const LossGradient lg = guarded_gradient(model, full, {}, batch, config, it);

        std::vector<ComplexMatrix> g_shared;
        std::vector<ComplexMatrix> g_specific;
        for (std::size_t i = 0; i < full.size(); ++i) {
            (full.entry(i).partition == Partition::Shared ? g_shared : g_specific).push_back(lg.grads[i]);
        }
        shared_opt.step(mt.shared, g_shared);
        specific_opt[n].step(mt.task_specific[n], g_specific);
        if (model.kind == ModelKind::Fpn) {
            mt.shared = lipschitz_project(mt.shared, model.hyper.fpn_gamma);
            mt.task_specific[n] = lipschitz_project(mt.task_specific[n], model.hyper.fpn_gamma);
        }
        if (log.enabled()) {
            const double rate =
                log.wants_rate(it) ? logged_rate(model, mt.compose(model, n), task, config) : 0.0;
            log.write(it, task.task.task_id, lg.loss, log.wants_rate(it) ? &rate : nullptr);
        }
    }
    return mt;
}

std::pair<ParamStore, AdaptationReport> adapt_multitask(const PrecoderModel& model, const MultiTaskParams& mt,
                                                        const std::vector<ChannelSample>& support,
                                                        const std::vector<ChannelSample>& query,
                                                        const TrainOptions& opts, const StepObserver& observer)
{
    if (mt.task_specific.empty()) {
        throw ConfigError("adapt_multitask: no task-specific parts to average");
    }
    ParamStore v_new = mt.task_specific.front();
    for (std::size_t i = 0; i < v_new.size(); ++i) {
        ParamEntry& e = v_new.entry(i);
        for (std::size_t j = 0; j < e.data.size(); ++j) {
            double s = 0.0;
            for (const ParamStore& v : mt.task_specific) {
                s += v.entry(i).data[j];
            }
            e.data[j] = s / static_cast<double>(mt.task_specific.size());
        }
    }
    const std::vector<bool> mask = partition_mask(model.params, Partition::TaskSpecific);
    const auto expand = [&](const ParamStore& specific) { return mt.compose(model, specific); };
    return adapt(model, v_new, mask, support, query, opts, observer, expand);
}

std::size_t multitask_trainable_count(const PrecoderModel& model)
{
    return model.params.scalar_count(Partition::TaskSpecific);
}

} // namespace fastadapt
