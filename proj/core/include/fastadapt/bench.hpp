#pragma once

#include "fastadapt/meta.hpp"

#include <map>
#include <string>
#include <vector>

namespace fastadapt::bench {

enum class Method { Wmmse, Blackbox, Unfolded, Fpn };
enum class Regime { JointFinetune, MamlFinetune, Multitask, PerTaskTrain };

std::string to_string(Method m);
std::string to_string(Regime r);
/// "wmmse", "blackbox", "unfolded", "fpn".
Method parse_method(const std::string& name);
/// "joint+finetune", "maml+finetune", "multitask", "per-task-train".
Regime parse_regime(const std::string& name);

/// WMMSE only runs under per-task-train, where it is solved on each task directly.
bool compatible(Method m, Regime r);

/// Fine-tune iterations reported as the adapted result.
struct FineTuneBudget {
    std::size_t plain = 20;
    std::size_t maml = 6;

    friend bool operator==(const FineTuneBudget&, const FineTuneBudget&) = default;
};

/// Sample counts and optimizer settings shared by every cell.
struct Schedule {
    std::size_t train_iterations = 2000;  // joint, per-task and multitask training
    std::size_t maml_iterations = 2000;
    std::size_t inner_steps = 3;
    std::size_t batch_size = 8;
    double outer_lr = 1e-3;
    double inner_lr = 1e-2;  // MAML inner loop and fine-tuning
    double train_snr_db = 20.0;
    std::size_t train_samples = 1000;  // support samples per training task
    std::size_t query_samples = 1000;  // query samples per task
    std::size_t shots = 16;
    std::size_t curve_iterations = 30;
    std::size_t curve_query_samples = 200;  // leading testing-task query samples used for curves
    std::size_t upperbound_samples = 1000;
    std::size_t wmmse_samples = 100;

    friend bool operator==(const Schedule&, const Schedule&) = default;
};

struct ExperimentConfig {
    SystemConfig system;
    /// Correlation grid; the suite seed is derived from `seed`.
    SuiteSpec suite_spec;
    std::uint64_t seed = 2024;
    std::vector<Method> methods{Method::Wmmse, Method::Blackbox, Method::Unfolded, Method::Fpn};
    std::vector<Regime> regimes{Regime::JointFinetune, Regime::MamlFinetune, Regime::Multitask, Regime::PerTaskTrain};
    std::map<Method, FineTuneBudget> budgets{{Method::Blackbox, {20, 6}},
                                             {Method::Unfolded, {20, 6}},
                                             {Method::Fpn, {15, 6}}};
    std::vector<double> snr_eval_grid{0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    std::string output_dir = "results";
    ModelHyper model;
    Schedule schedule;

    /// ConfigError on empty lists, no compatible (method, regime) pair, a missing
    /// budget, zero sample counts or an invalid system.
    void validate() const;
    bool has(Method m) const;
    bool has(Regime r) const;
    FineTuneBudget budget(Method m) const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::string config_to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

/// Task suite of the experiment, seeded from cfg.seed.
TaskSuite make_suite(const ExperimentConfig& cfg);

constexpr int kAllTrainingTasks = -1;

/// test_task 0 is the testing task; train_task -1 means joint over all training tasks.
struct ResultRow {
    std::string method;
    std::string regime;
    int train_task = 0;
    int test_task = 0;
    double snr_db = 0.0;
    double sum_rate_bits_s_hz = 0.0;
    std::size_t iterations_used = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultTable {
    std::vector<ResultRow> rows;

    /// Canonical order: method, regime, train_task, test_task, snr_db, iterations_used, seed.
    void sort();
    /// Rows matching every non-empty filter.
    std::vector<ResultRow> select(const std::string& method, const std::string& regime = {}) const;

    friend bool operator==(const ResultTable&, const ResultTable&) = default;
};

extern const char* const kCsvHeader;

/// Doubles are written with 17 significant digits so parsing restores them exactly.
std::string to_csv(const ResultTable& table);
ResultTable parse_csv(const std::string& text);
std::string to_json(const ResultTable& table);
ResultTable parse_json(const std::string& text);

/// Summary of one adaptation curve.
struct CurveSummary {
    std::string method;
    std::string regime;
    std::size_t budget = 0;
    std::size_t iterations_to_95pct = 0;
    double rate_at_budget = 0.0;  // at the training SNR
    double final_rate = 0.0;
    std::vector<double> rates;  // per iteration at the training SNR
    std::size_t trainable_params = 0;
    double wall_time = 0.0;
};

/// Trained parameters kept for checkpointing.
struct Checkpoint {
    std::string name;
    ParamStore params;
};

struct MethodCost {
    std::string method;
    std::size_t parameters = 0;
    double train_seconds = 0.0;
};

struct CurveResult {
    ResultTable table;
    std::vector<CurveSummary> curves;
    std::vector<Checkpoint> checkpoints;
    std::vector<MethodCost> costs;
};

struct Table1Result {
    ResultTable table;
    std::vector<Checkpoint> checkpoints;
    std::vector<MethodCost> costs;
};

/// Per-task training of each learned method, evaluated zero-shot on the testing-task
/// query set at the training SNR. Requires per-task-train.
Table1Result reproduce_table1_full(const ExperimentConfig& cfg);
ResultTable reproduce_table1(const ExperimentConfig& cfg);

/// Trains one cell. Checkpoint names: <method>_per-task-train_task<n>, <method>_<regime>_init,
/// or <method>_multitask_shared followed by <method>_multitask_task<n> in task order.
std::vector<Checkpoint> train_cell(const ExperimentConfig& cfg, Method m, Regime r, int task = kAllTrainingTasks);

/// 16-shot adaptation curve on the testing task from the checkpoints of train_cell.
CurveResult adapt_cell(const ExperimentConfig& cfg, Method m, Regime r, const std::vector<Checkpoint>& trained);

/// Curve summaries recovered from result rows at the training SNR.
std::vector<CurveSummary> curves_from_table(const ExperimentConfig& cfg, const ResultTable& table);

/// 16-shot adaptation curves on the testing task for every requested adaptation
/// regime, plus the unfolded upper bound trained on abundant testing-task data.
/// Rows carry the query rate after iterations_used steps at every grid SNR.
CurveResult adaptation_curves(const ExperimentConfig& cfg);
/// Same, with the precondition that joint+finetune and maml+finetune are both requested.
CurveResult reproduce_adaptation_curves(const ExperimentConfig& cfg);

/// Mean WMMSE-converged rate on every task and grid SNR.
ResultTable wmmse_table(const ExperimentConfig& cfg);

/// Zero-shot rate of params on the testing-task query set, as used for the first curve point.
double zero_shot_rate(const PrecoderModel& model, const ParamStore& params, const std::vector<ChannelSample>& query,
                      const SystemConfig& system, double snr_db);

struct ExperimentResult {
    ResultTable table;
    std::vector<CurveSummary> curves;
    std::vector<MethodCost> costs;
};

/// Runs the requested matrix and writes results.csv, results.json, summary.md,
/// curves/<method>_<regime>.csv and checkpoints/*.faps under cfg.output_dir.
/// The directory is checked for writability before any compute.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string markdown_summary(const ExperimentConfig& cfg, const ExperimentResult& result);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

} // namespace fastadapt::bench
