#include "fastadapt/bench.hpp"

#include "fastadapt/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

namespace fastadapt::bench {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

// Substream tags under the experiment seed.
constexpr std::uint64_t kSuiteTag = 1;
constexpr std::uint64_t kDataTag = 2;
constexpr std::uint64_t kModelTag = 3;
constexpr std::uint64_t kTrainTag = 4;
constexpr std::uint64_t kUpperTag = 5;

const Method kLearned[] = {Method::Blackbox, Method::Unfolded, Method::Fpn};
const Regime kAdaptive[] = {Regime::JointFinetune, Regime::MamlFinetune, Regime::Multitask};

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

ModelKind kind_of(Method m)
{
    switch (m) {
    case Method::Blackbox: return ModelKind::Blackbox;
    case Method::Unfolded: return ModelKind::Unfolded;
    case Method::Fpn: return ModelKind::Fpn;
    default: throw ConfigError("wmmse has no trainable model");
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

// Rejects keys outside `allowed`.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    for (const auto& item : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return item.key() == k; });
        if (!known) {
            throw ConfigError(where + ": unknown key '" + item.key() + "'");
        }
    }
}

template <class T>
void read_key(const json& j, const char* key, T& out)
{
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

struct Data {
    TaskSuite suite;
    std::vector<TaskDataset> training;
    TaskDataset testing;
};

TaskDataset task_data(const ExperimentConfig& cfg, const ChannelTask& task, std::size_t n_support)
{
    return build_dataset(task, cfg.system, n_support, cfg.schedule.query_samples,
                         derive_seed(cfg.seed, {kDataTag, static_cast<std::uint64_t>(task.task_id)}));
}

Data make_data(const ExperimentConfig& cfg)
{
    Data d;
    d.suite = make_suite(cfg);
    for (const ChannelTask& t : d.suite.training) {
        d.training.push_back(task_data(cfg, t, cfg.schedule.train_samples));
    }
    d.testing = task_data(cfg, d.suite.testing, cfg.schedule.shots);
    return d;
}

PrecoderModel model_for(const ExperimentConfig& cfg, Method m, Regime r = Regime::JointFinetune)
{
    PrecoderModel model = make_model(kind_of(m), cfg.system, cfg.model,
                                     derive_seed(cfg.seed, {kModelTag, static_cast<std::uint64_t>(m)}));
    if (r == Regime::Multitask) {
        apply_multitask_partition(model);
    }
    return model;
}

TrainOptions train_options(const ExperimentConfig& cfg, Method m, Regime r, int task, std::size_t iterations)
{
    TrainOptions o;
    o.learning_rate = cfg.schedule.outer_lr;
    o.iterations = iterations;
    o.batch_size = cfg.schedule.batch_size;
    o.optimizer = Optimizer::Adam;
    o.snr_db = cfg.schedule.train_snr_db;
    o.seed = derive_seed(cfg.seed, {kTrainTag, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(r),
                                    static_cast<std::uint64_t>(task + 1)});
    return o;
}

TrainOptions finetune_options(const ExperimentConfig& cfg)
{
    TrainOptions o;
    o.learning_rate = cfg.schedule.inner_lr;
    o.iterations = cfg.schedule.curve_iterations;
    o.optimizer = Optimizer::Sgd;
    o.snr_db = cfg.schedule.train_snr_db;
    return o;
}

void add_cost(std::vector<MethodCost>& costs, Method m, std::size_t parameters, double seconds)
{
    const std::string name = to_string(m);
    for (MethodCost& c : costs) {
        if (c.method == name) {
            c.train_seconds += seconds;
            return;
        }
    }
    costs.push_back({name, parameters, seconds});
}

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
T parse_number(const std::string& field, const char* what)
{
    T value{};
    const char* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw IoError(std::string("results csv: bad ") + what + " '" + field + "'");
    }
    return value;
}

double parse_real(const std::string& field)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) {
            throw IoError("results csv: bad number '" + field + "'");
        }
        return v;
    } catch (const std::logic_error&) {
        throw IoError("results csv: bad number '" + field + "'");
    }
}

json row_json(const ResultRow& r)
{
    return {{"method", r.method},       {"regime", r.regime},
            {"train_task", r.train_task}, {"test_task", r.test_task},
            {"snr_db", r.snr_db},       {"sum_rate_bits_s_hz", r.sum_rate_bits_s_hz},
            {"iterations_used", r.iterations_used}, {"seed", r.seed}};
}

} // namespace

std::string to_string(Method m)
{
    switch (m) {
    case Method::Wmmse: return "wmmse";
    case Method::Blackbox: return "blackbox";
    case Method::Unfolded: return "unfolded";
    case Method::Fpn: return "fpn";
    }
    return "unknown";
}

std::string to_string(Regime r)
{
    switch (r) {
    case Regime::JointFinetune: return "joint+finetune";
    case Regime::MamlFinetune: return "maml+finetune";
    case Regime::Multitask: return "multitask";
    case Regime::PerTaskTrain: return "per-task-train";
    }
    return "unknown";
}

Method parse_method(const std::string& name)
{
    for (Method m : {Method::Wmmse, Method::Blackbox, Method::Unfolded, Method::Fpn}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown method '" + name + "'");
}

Regime parse_regime(const std::string& name)
{
    for (Regime r : {Regime::JointFinetune, Regime::MamlFinetune, Regime::Multitask, Regime::PerTaskTrain}) {
        if (to_string(r) == name) {
            return r;
        }
    }
    throw ConfigError("unknown regime '" + name + "'");
}

bool compatible(Method m, Regime r)
{
    return m != Method::Wmmse || r == Regime::PerTaskTrain;
}

bool ExperimentConfig::has(Method m) const
{
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

bool ExperimentConfig::has(Regime r) const
{
    return std::find(regimes.begin(), regimes.end(), r) != regimes.end();
}

FineTuneBudget ExperimentConfig::budget(Method m) const
{
    const auto it = budgets.find(m);
    if (it == budgets.end()) {
        throw ConfigError("no fine-tune budget for " + to_string(m));
    }
    return it->second;
}

void ExperimentConfig::validate() const
{
    system.validate();
    if (methods.empty()) {
        throw ConfigError("experiment: no methods requested");
    }
    if (regimes.empty()) {
        throw ConfigError("experiment: no regimes requested");
    }
    if (snr_eval_grid.empty()) {
        throw ConfigError("experiment: snr_eval_grid is empty");
    }
    if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size() ||
        std::set<Regime>(regimes.begin(), regimes.end()).size() != regimes.size()) {
        throw ConfigError("experiment: duplicate method or regime");
    }
    for (double s : snr_eval_grid) {
        if (!std::isfinite(s)) {
            throw ConfigError("experiment: non-finite SNR in the evaluation grid");
        }
    }
    bool any = false;
    for (Method m : methods) {
        for (Regime r : regimes) {
            any = any || compatible(m, r);
        }
    }
    if (!any) {
        throw ConfigError("experiment: no requested method runs under the requested regimes");
    }
    const Schedule& s = schedule;
    for (Method m : methods) {
        if (m == Method::Wmmse) {
            continue;
        }
        const FineTuneBudget b = budget(m);
        if (b.plain > s.curve_iterations || b.maml > s.curve_iterations) {
            throw ConfigError("experiment: fine-tune budget of " + to_string(m) + " exceeds curve_iterations");
        }
    }
    if (s.batch_size == 0 || s.train_samples == 0 || s.query_samples == 0 || s.shots == 0 ||
        s.curve_query_samples == 0 || s.upperbound_samples == 0 || s.wmmse_samples == 0) {
        throw ConfigError("experiment: sample counts and batch size must be positive");
    }
    if (s.curve_query_samples > s.query_samples || s.wmmse_samples > s.query_samples) {
        throw ConfigError("experiment: curve and wmmse sample counts cannot exceed query_samples");
    }
    if (!(s.outer_lr > 0.0) || !(s.inner_lr > 0.0)) {
        throw ConfigError("experiment: learning rates must be positive");
    }
    if (!std::isfinite(s.train_snr_db)) {
        throw ConfigError("experiment: training SNR must be finite");
    }
    if (output_dir.empty()) {
        throw ConfigError("experiment: output_dir is empty");
    }
    make_suite(*this);
}

std::string config_to_json(const ExperimentConfig& cfg)
{
    json methods = json::array();
    for (Method m : cfg.methods) {
        methods.push_back(to_string(m));
    }
    json regimes = json::array();
    for (Regime r : cfg.regimes) {
        regimes.push_back(to_string(r));
    }
    json budgets = json::object();
    for (const auto& [m, b] : cfg.budgets) {
        budgets[to_string(m)] = {{"plain", b.plain}, {"maml", b.maml}};
    }
    const SystemConfig& sy = cfg.system;
    const ModelHyper& h = cfg.model;
    const Schedule& s = cfg.schedule;
    const json j = {
        {"system",
         {{"num_users", sy.num_users},
          {"tx_antennas", sy.tx_antennas},
          {"rx_antennas", sy.rx_antennas},
          {"streams_per_user", sy.streams_per_user},
          {"total_power", sy.total_power},
          {"snr_db", sy.snr_db}}},
        {"suite_spec", {{"train_rho", cfg.suite_spec.train_rho}, {"test_rho", cfg.suite_spec.test_rho}}},
        {"seed", cfg.seed},
        {"methods", methods},
        {"regimes", regimes},
        {"budgets", budgets},
        {"snr_eval_grid", cfg.snr_eval_grid},
        {"output_dir", cfg.output_dir},
        {"model",
         {{"unfolded_layers", h.unfolded_layers},
          {"blackbox_layers", h.blackbox_layers},
          {"blackbox_hidden", h.blackbox_hidden},
          {"fpn_tolerance", h.fpn_tolerance},
          {"fpn_gamma", h.fpn_gamma},
          {"fpn_max_iter", h.fpn_max_iter},
          {"fpn_width_factor", h.fpn_width_factor},
          {"fpn_input_scale", h.fpn_input_scale}}},
        {"schedule",
         {{"train_iterations", s.train_iterations},
          {"maml_iterations", s.maml_iterations},
          {"inner_steps", s.inner_steps},
          {"batch_size", s.batch_size},
          {"outer_lr", s.outer_lr},
          {"inner_lr", s.inner_lr},
          {"train_snr_db", s.train_snr_db},
          {"train_samples", s.train_samples},
          {"query_samples", s.query_samples},
          {"shots", s.shots},
          {"curve_iterations", s.curve_iterations},
          {"curve_query_samples", s.curve_query_samples},
          {"upperbound_samples", s.upperbound_samples},
          {"wmmse_samples", s.wmmse_samples}}},
    };
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    check_keys(j,
               {"system", "suite_spec", "seed", "methods", "regimes", "budgets", "snr_eval_grid", "output_dir",
                "model", "schedule"},
               "config");
    ExperimentConfig cfg;
    if (j.contains("system")) {
        const json& s = j["system"];
        check_keys(s, {"num_users", "tx_antennas", "rx_antennas", "streams_per_user", "total_power", "snr_db"},
                   "config.system");
        read_key(s, "num_users", cfg.system.num_users);
        read_key(s, "tx_antennas", cfg.system.tx_antennas);
        read_key(s, "rx_antennas", cfg.system.rx_antennas);
        read_key(s, "streams_per_user", cfg.system.streams_per_user);
        read_key(s, "total_power", cfg.system.total_power);
        read_key(s, "snr_db", cfg.system.snr_db);
    }
    if (j.contains("suite_spec")) {
        const json& s = j["suite_spec"];
        check_keys(s, {"train_rho", "test_rho"}, "config.suite_spec");
        read_key(s, "train_rho", cfg.suite_spec.train_rho);
        read_key(s, "test_rho", cfg.suite_spec.test_rho);
    }
    read_key(j, "seed", cfg.seed);
    if (j.contains("methods")) {
        std::vector<std::string> names;
        read_key(j, "methods", names);
        cfg.methods.clear();
        for (const std::string& n : names) {
            cfg.methods.push_back(parse_method(n));
        }
    }
    if (j.contains("regimes")) {
        std::vector<std::string> names;
        read_key(j, "regimes", names);
        cfg.regimes.clear();
        for (const std::string& n : names) {
            cfg.regimes.push_back(parse_regime(n));
        }
    }
    if (j.contains("budgets")) {
        const json& b = j["budgets"];
        if (!b.is_object()) {
            throw ConfigError("config.budgets: expected an object");
        }
        for (const auto& item : b.items()) {
            const Method m = parse_method(item.key());
            check_keys(item.value(), {"plain", "maml"}, "config.budgets." + item.key());
            FineTuneBudget budget = cfg.budgets.count(m) ? cfg.budgets[m] : FineTuneBudget{};
            read_key(item.value(), "plain", budget.plain);
            read_key(item.value(), "maml", budget.maml);
            cfg.budgets[m] = budget;
        }
    }
    read_key(j, "snr_eval_grid", cfg.snr_eval_grid);
    read_key(j, "output_dir", cfg.output_dir);
    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m,
                   {"unfolded_layers", "blackbox_layers", "blackbox_hidden", "fpn_tolerance", "fpn_gamma",
                    "fpn_max_iter", "fpn_width_factor", "fpn_input_scale"},
                   "config.model");
        read_key(m, "unfolded_layers", cfg.model.unfolded_layers);
        read_key(m, "blackbox_layers", cfg.model.blackbox_layers);
        read_key(m, "blackbox_hidden", cfg.model.blackbox_hidden);
        read_key(m, "fpn_tolerance", cfg.model.fpn_tolerance);
        read_key(m, "fpn_gamma", cfg.model.fpn_gamma);
        read_key(m, "fpn_max_iter", cfg.model.fpn_max_iter);
        read_key(m, "fpn_width_factor", cfg.model.fpn_width_factor);
        read_key(m, "fpn_input_scale", cfg.model.fpn_input_scale);
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s,
                   {"train_iterations", "maml_iterations", "inner_steps", "batch_size", "outer_lr", "inner_lr",
                    "train_snr_db", "train_samples", "query_samples", "shots", "curve_iterations",
                    "curve_query_samples", "upperbound_samples", "wmmse_samples"},
                   "config.schedule");
        Schedule& o = cfg.schedule;
        read_key(s, "train_iterations", o.train_iterations);
        read_key(s, "maml_iterations", o.maml_iterations);
        read_key(s, "inner_steps", o.inner_steps);
        read_key(s, "batch_size", o.batch_size);
        read_key(s, "outer_lr", o.outer_lr);
        read_key(s, "inner_lr", o.inner_lr);
        read_key(s, "train_snr_db", o.train_snr_db);
        read_key(s, "train_samples", o.train_samples);
        read_key(s, "query_samples", o.query_samples);
        read_key(s, "shots", o.shots);
        read_key(s, "curve_iterations", o.curve_iterations);
        read_key(s, "curve_query_samples", o.curve_query_samples);
        read_key(s, "upperbound_samples", o.upperbound_samples);
        read_key(s, "wmmse_samples", o.wmmse_samples);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    return config_from_json(read_file(path));
}

void save_config(const ExperimentConfig& cfg, const std::string& path)
{
    write_file(path, config_to_json(cfg));
}

TaskSuite make_suite(const ExperimentConfig& cfg)
{
    SuiteSpec spec = cfg.suite_spec;
    spec.seed = derive_seed(cfg.seed, {kSuiteTag});
    return make_task_suite(cfg.system, spec);
}

void ResultTable::sort()
{
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return std::tie(a.method, a.regime, a.train_task, a.test_task, a.snr_db, a.iterations_used, a.seed) <
               std::tie(b.method, b.regime, b.train_task, b.test_task, b.snr_db, b.iterations_used, b.seed);
    });
}

std::vector<ResultRow> ResultTable::select(const std::string& method, const std::string& regime) const
{
    std::vector<ResultRow> out;
    for (const ResultRow& r : rows) {
        if ((method.empty() || r.method == method) && (regime.empty() || r.regime == regime)) {
            out.push_back(r);
        }
    }
    return out;
}

const char* const kCsvHeader = "method,regime,train_task,test_task,snr_db,sum_rate_bits_s_hz,iterations_used,seed";

std::string to_csv(const ResultTable& table)
{
    std::string out = std::string(kCsvHeader) + "\n";
    for (const ResultRow& r : table.rows) {
        if (r.method.find(',') != std::string::npos || r.regime.find(',') != std::string::npos) {
            throw IoError("results csv: field contains a comma");
        }
        out += r.method + ',' + r.regime + ',' + std::to_string(r.train_task) + ',' + std::to_string(r.test_task) +
               ',' + format_double(r.snr_db) + ',' + format_double(r.sum_rate_bits_s_hz) + ',' +
               std::to_string(r.iterations_used) + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

ResultTable parse_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw IoError("results csv: missing or wrong header");
    }
    ResultTable table;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) {
            f.push_back(field);
        }
        if (f.size() != 8) {
            throw IoError("results csv: expected 8 fields in '" + line + "'");
        }
        ResultRow r;
        r.method = f[0];
        r.regime = f[1];
        r.train_task = parse_number<int>(f[2], "train_task");
        r.test_task = parse_number<int>(f[3], "test_task");
        r.snr_db = parse_real(f[4]);
        r.sum_rate_bits_s_hz = parse_real(f[5]);
        r.iterations_used = parse_number<std::size_t>(f[6], "iterations_used");
        r.seed = parse_number<std::uint64_t>(f[7], "seed");
        table.rows.push_back(std::move(r));
    }
    return table;
}

std::string to_json(const ResultTable& table)
{
    json rows = json::array();
    for (const ResultRow& r : table.rows) {
        rows.push_back(row_json(r));
    }
    return json{{"rows", rows}}.dump(2) + "\n";
}

ResultTable parse_json(const std::string& text)
{
    ResultTable table;
    try {
        const json j = json::parse(text);
        for (const json& r : j.at("rows")) {
            ResultRow row;
            row.method = r.at("method").get<std::string>();
            row.regime = r.at("regime").get<std::string>();
            row.train_task = r.at("train_task").get<int>();
            row.test_task = r.at("test_task").get<int>();
            row.snr_db = r.at("snr_db").get<double>();
            row.sum_rate_bits_s_hz = r.at("sum_rate_bits_s_hz").get<double>();
            row.iterations_used = r.at("iterations_used").get<std::size_t>();
            row.seed = r.at("seed").get<std::uint64_t>();
            table.rows.push_back(std::move(row));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("results json: ") + e.what());
    }
    return table;
}

double zero_shot_rate(const PrecoderModel& model, const ParamStore& params, const std::vector<ChannelSample>& query,
                      const SystemConfig& system, double snr_db)
{
    SystemConfig c = system;
    c.snr_db = snr_db;
    return mean_sum_rate(model, params, query, c);
}

Table1Result reproduce_table1_full(const ExperimentConfig& cfg)
{
    cfg.validate();
    if (!cfg.has(Regime::PerTaskTrain)) {
        throw ConfigError("table1 requires the per-task-train regime");
    }
    const Data data = make_data(cfg);
    const double snr = cfg.schedule.train_snr_db;
    Table1Result out;
    for (Method m : kLearned) {
        if (!cfg.has(m)) {
            continue;
        }
        const PrecoderModel model = model_for(cfg, m);
        for (const TaskDataset& task : data.training) {
            const int id = task.task.task_id;
            const Clock::time_point start = Clock::now();
            const ParamStore params = joint_train(
                model, {task}, train_options(cfg, m, Regime::PerTaskTrain, id, cfg.schedule.train_iterations));
            add_cost(out.costs, m, model.params.scalar_count(), seconds_since(start));
            const double rate = zero_shot_rate(model, params, data.testing.query, cfg.system, snr);
            out.table.rows.push_back({to_string(m), to_string(Regime::PerTaskTrain), id, 0, snr, rate,
                                      cfg.schedule.train_iterations, cfg.seed});
            out.checkpoints.push_back({to_string(m) + "_per-task-train_task" + std::to_string(id), params});
        }
    }
    out.table.sort();
    return out;
}

ResultTable reproduce_table1(const ExperimentConfig& cfg)
{
    return reproduce_table1_full(cfg).table;
}

ResultTable wmmse_table(const ExperimentConfig& cfg)
{
    cfg.validate();
    const TaskSuite suite = make_suite(cfg);
    std::vector<ChannelTask> tasks = suite.training;
    tasks.push_back(suite.testing);
    ResultTable table;
    for (const ChannelTask& task : tasks) {
        const TaskDataset ds = task_data(cfg, task, 1);
        for (double snr : cfg.snr_eval_grid) {
            SystemConfig c = cfg.system;
            c.snr_db = snr;
            double total = 0.0;
            std::size_t iterations = 0;
            for (std::size_t i = 0; i < cfg.schedule.wmmse_samples; ++i) {
                const WmmseResult r = wmmse_solve(ds.query[i], c);
                total += r.rate_trace.back();
                iterations += r.rate_trace.size() - 1;
            }
            const double n = static_cast<double>(cfg.schedule.wmmse_samples);
            table.rows.push_back({to_string(Method::Wmmse), to_string(Regime::PerTaskTrain), task.task_id,
                                  task.task_id, snr, total / n,
                                  static_cast<std::size_t>(std::llround(static_cast<double>(iterations) / n)),
                                  cfg.seed});
        }
    }
    table.sort();
    return table;
}

std::vector<Checkpoint> train_cell(const ExperimentConfig& cfg, Method m, Regime r, int task)
{
    cfg.validate();
    if (!compatible(m, r) || m == Method::Wmmse) {
        throw ConfigError("train: " + to_string(m) + " is not trained under " + to_string(r));
    }
    const Data data = make_data(cfg);
    const PrecoderModel model = model_for(cfg, m, r);
    const Schedule& sch = cfg.schedule;
    const std::string tag = to_string(m) + "_" + to_string(r);
    if (r == Regime::PerTaskTrain) {
        const auto it = std::find_if(data.training.begin(), data.training.end(),
                                     [&](const TaskDataset& t) { return t.task.task_id == task; });
        if (it == data.training.end()) {
            throw ConfigError("train: no training task " + std::to_string(task));
        }
        return {{tag + "_task" + std::to_string(task),
                 joint_train(model, {*it}, train_options(cfg, m, r, task, sch.train_iterations))}};
    }
    const TrainOptions opts = train_options(cfg, m, r, kAllTrainingTasks, sch.train_iterations);
    if (r == Regime::Multitask) {
        const MultiTaskParams mt = multitask_train(model, data.training, opts);
        std::vector<Checkpoint> out{{tag + "_shared", mt.shared}};
        for (std::size_t n = 0; n < mt.task_specific.size(); ++n) {
            out.push_back({tag + "_task" + std::to_string(n + 1), mt.task_specific[n]});
        }
        return out;
    }
    if (r == Regime::MamlFinetune) {
        TrainOptions outer = opts;
        outer.iterations = sch.maml_iterations;
        return {{tag + "_init", maml_train(model, data.training, sch.inner_steps, sch.inner_lr, outer)}};
    }
    return {{tag + "_init", joint_train(model, data.training, opts)}};
}

CurveResult adapt_cell(const ExperimentConfig& cfg, Method m, Regime r, const std::vector<Checkpoint>& trained)
{
    cfg.validate();
    if (m == Method::Wmmse || r == Regime::PerTaskTrain) {
        throw ConfigError("adapt: " + to_string(r) + " has no adaptation stage");
    }
    if (trained.empty()) {
        throw ConfigError("adapt: no trained parameters");
    }
    const Data data = make_data(cfg);
    const Schedule& sch = cfg.schedule;
    const std::vector<ChannelSample> query(data.testing.query.begin(),
                                           data.testing.query.begin() +
                                               static_cast<std::ptrdiff_t>(sch.curve_query_samples));
    const PrecoderModel model = model_for(cfg, m, r);
    const FineTuneBudget budget = cfg.budget(m);
    const TrainOptions ft = finetune_options(cfg);

    std::vector<ResultRow> rows;
    const auto observe = [&](std::size_t it, const ParamStore& p) {
        for (double snr : cfg.snr_eval_grid) {
            if (snr != sch.train_snr_db) {
                rows.push_back({to_string(m), to_string(r), kAllTrainingTasks, 0, snr,
                                zero_shot_rate(model, p, query, cfg.system, snr), it, cfg.seed});
            }
        }
    };

    std::pair<ParamStore, AdaptationReport> result;
    CurveSummary s;
    if (r == Regime::Multitask) {
        MultiTaskParams mt;
        mt.shared = trained.front().params;
        for (std::size_t i = 1; i < trained.size(); ++i) {
            mt.task_specific.push_back(trained[i].params);
        }
        if (mt.task_specific.empty()) {
            throw ConfigError("adapt: multitask adaptation needs task-specific parameters");
        }
        result = adapt_multitask(model, mt, data.testing.support, query, ft, observe);
        s.trainable_params = multitask_trainable_count(model);
    } else {
        if (!trained.front().params.same_layout(model.params)) {
            throw ConfigError("adapt: checkpoint does not match the " + to_string(m) + " model");
        }
        result = fine_tune(model, trained.front().params, data.testing.support, query, ft, observe);
        s.trainable_params = model.params.scalar_count();
    }
    const AdaptationReport& report = result.second;
    for (double snr : cfg.snr_eval_grid) {
        if (snr == sch.train_snr_db) {
            for (std::size_t it = 0; it < report.rate_per_iteration.size(); ++it) {
                rows.push_back({to_string(m), to_string(r), kAllTrainingTasks, 0, snr, report.rate_per_iteration[it],
                                it, cfg.seed});
            }
        }
    }
    s.method = to_string(m);
    s.regime = to_string(r);
    s.budget = r == Regime::MamlFinetune ? budget.maml : budget.plain;
    s.iterations_to_95pct = report.iterations_to_95pct;
    s.rate_at_budget = report.rate_per_iteration[s.budget];
    s.final_rate = report.final_rate;
    s.rates = report.rate_per_iteration;
    s.wall_time = report.wall_time;

    CurveResult out;
    out.table.rows = std::move(rows);
    out.table.sort();
    out.curves.push_back(std::move(s));
    out.checkpoints.push_back({to_string(m) + "_" + to_string(r) + "_adapted", std::move(result.first)});
    return out;
}

std::vector<CurveSummary> curves_from_table(const ExperimentConfig& cfg, const ResultTable& table)
{
    std::vector<CurveSummary> out;
    const auto push = [&](const std::string& method, const std::string& regime, std::size_t budget) {
        std::vector<std::pair<std::size_t, double>> pts;
        for (const ResultRow& r : table.rows) {
            if (r.method == method && r.regime == regime && r.snr_db == cfg.schedule.train_snr_db) {
                pts.emplace_back(r.iterations_used, r.sum_rate_bits_s_hz);
            }
        }
        if (pts.empty()) {
            return;
        }
        std::sort(pts.begin(), pts.end());
        CurveSummary s;
        s.method = method;
        s.regime = regime;
        for (const auto& p : pts) {
            s.rates.push_back(p.second);
        }
        s.budget = std::min(budget, s.rates.size() - 1);
        s.iterations_to_95pct = iterations_to_fraction(s.rates);
        s.rate_at_budget = s.rates[s.budget];
        s.final_rate = s.rates.back();
        out.push_back(std::move(s));
    };
    for (Method m : kLearned) {
        if (cfg.budgets.count(m) == 0) {
            continue;
        }
        const FineTuneBudget b = cfg.budget(m);
        for (Regime r : kAdaptive) {
            push(to_string(m), to_string(r), r == Regime::MamlFinetune ? b.maml : b.plain);
        }
    }
    push(to_string(Method::Unfolded), "upperbound", 0);
    return out;
}

CurveResult adaptation_curves(const ExperimentConfig& cfg)
{
    cfg.validate();
    std::vector<Regime> regimes;
    for (Regime r : kAdaptive) {
        if (cfg.has(r)) {
            regimes.push_back(r);
        }
    }
    if (regimes.empty()) {
        throw ConfigError("adaptation curves require joint+finetune, maml+finetune or multitask");
    }
    const Schedule& sch = cfg.schedule;
    CurveResult out;
    for (Method m : kLearned) {
        if (!cfg.has(m)) {
            continue;
        }
        const std::size_t full = model_for(cfg, m).params.scalar_count();
        for (Regime r : regimes) {
            const Clock::time_point start = Clock::now();
            std::vector<Checkpoint> trained = train_cell(cfg, m, r);
            add_cost(out.costs, m, full, seconds_since(start));
            CurveResult c = adapt_cell(cfg, m, r, trained);
            out.table.rows.insert(out.table.rows.end(), c.table.rows.begin(), c.table.rows.end());
            out.curves.insert(out.curves.end(), c.curves.begin(), c.curves.end());
            out.checkpoints.insert(out.checkpoints.end(), trained.begin(), trained.end());
            out.checkpoints.insert(out.checkpoints.end(), c.checkpoints.begin(), c.checkpoints.end());
        }
    }

    if (cfg.has(Method::Unfolded)) {
        const Data data = make_data(cfg);
        const std::vector<ChannelSample> query(data.testing.query.begin(),
                                               data.testing.query.begin() +
                                                   static_cast<std::ptrdiff_t>(sch.curve_query_samples));
        const PrecoderModel model = model_for(cfg, Method::Unfolded);
        const TaskDataset abundant = build_dataset(data.suite.testing, cfg.system, sch.upperbound_samples, 1,
                                                   derive_seed(cfg.seed, {kUpperTag}));
        const Clock::time_point start = Clock::now();
        TrainOptions opts = train_options(cfg, Method::Unfolded, Regime::JointFinetune, 0, sch.train_iterations);
        opts.seed = derive_seed(cfg.seed, {kUpperTag, kTrainTag});
        const ParamStore params = joint_train(model, {abundant}, opts);
        add_cost(out.costs, Method::Unfolded, model.params.scalar_count(), seconds_since(start));
        CurveSummary s;
        s.method = to_string(Method::Unfolded);
        s.regime = "upperbound";
        for (double snr : cfg.snr_eval_grid) {
            const double rate = zero_shot_rate(model, params, query, cfg.system, snr);
            out.table.rows.push_back({s.method, s.regime, 0, 0, snr, rate, sch.train_iterations, cfg.seed});
            if (snr == sch.train_snr_db) {
                s.rate_at_budget = s.final_rate = rate;
                s.rates = {rate};
            }
        }
        s.trainable_params = model.params.scalar_count();
        s.wall_time = seconds_since(start);
        out.curves.push_back(std::move(s));
        out.checkpoints.push_back({"unfolded_upperbound", params});
    }
    out.table.sort();
    return out;
}

CurveResult reproduce_adaptation_curves(const ExperimentConfig& cfg)
{
    if (!cfg.has(Regime::JointFinetune) || !cfg.has(Regime::MamlFinetune)) {
        throw ConfigError("adaptation curves require both joint+finetune and maml+finetune");
    }
    return adaptation_curves(cfg);
}

std::string markdown_summary(const ExperimentConfig& cfg, const ExperimentResult& result)
{
    std::ostringstream md;
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };
    md << "# Experiment summary\n\nSeed " << cfg.seed << ", training SNR " << num(cfg.schedule.train_snr_db)
       << " dB, " << cfg.system.num_users << " users, " << cfg.system.tx_antennas << "x"
       << cfg.system.rx_antennas << " antennas.\n";

    const TaskSuite suite = make_suite(cfg);
    const std::vector<ResultRow> per_task = result.table.select({}, to_string(Regime::PerTaskTrain));
    std::vector<ResultRow> zero_shot;
    for (const ResultRow& r : per_task) {
        if (r.method != to_string(Method::Wmmse)) {
            zero_shot.push_back(r);
        }
    }
    if (!zero_shot.empty()) {
        md << "\n## Zero-shot rate on the testing task (bits/s/Hz)\n\n| method |";
        for (const ChannelTask& t : suite.training) {
            md << " task " << t.task_id << " |";
        }
        md << "\n|---|";
        for (std::size_t i = 0; i < suite.training.size(); ++i) {
            md << "---|";
        }
        md << "\n";
        for (Method m : kLearned) {
            if (!cfg.has(m)) {
                continue;
            }
            md << "| " << to_string(m) << " |";
            for (const ChannelTask& t : suite.training) {
                for (const ResultRow& r : zero_shot) {
                    if (r.method == to_string(m) && r.train_task == t.task_id) {
                        md << ' ' << num(r.sum_rate_bits_s_hz) << " |";
                    }
                }
            }
            md << "\n";
        }
    }

    if (!result.curves.empty()) {
        md << "\n## Adaptation on the testing task\n\n"
           << "| method | regime | budget | iterations to 95% | rate at budget | final rate | updated values |\n"
           << "|---|---|---|---|---|---|---|\n";
        for (const CurveSummary& c : result.curves) {
            md << "| " << c.method << " | " << c.regime << " | " << c.budget << " | " << c.iterations_to_95pct
               << " | " << num(c.rate_at_budget) << " | " << num(c.final_rate) << " | " << c.trainable_params
               << " |\n";
        }
    }

    const std::vector<ResultRow> wm = result.table.select(to_string(Method::Wmmse));
    if (!wm.empty()) {
        md << "\n## WMMSE (bits/s/Hz)\n\n| task |";
        for (double s : cfg.snr_eval_grid) {
            md << ' ' << num(s) << " dB |";
        }
        md << "\n|---|";
        for (std::size_t i = 0; i < cfg.snr_eval_grid.size(); ++i) {
            md << "---|";
        }
        md << "\n";
        std::vector<int> ids;
        for (const ResultRow& r : wm) {
            if (std::find(ids.begin(), ids.end(), r.train_task) == ids.end()) {
                ids.push_back(r.train_task);
            }
        }
        for (int id : ids) {
            md << "| " << id << " |";
            for (double s : cfg.snr_eval_grid) {
                for (const ResultRow& r : wm) {
                    if (r.train_task == id && r.snr_db == s) {
                        md << ' ' << num(r.sum_rate_bits_s_hz) << " |";
                    }
                }
            }
            md << "\n";
        }
    }

    if (!result.costs.empty()) {
        md << "\n## Training cost\n\n| method | parameters | training wall-clock (s) |\n|---|---|---|\n";
        for (const MethodCost& c : result.costs) {
            md << "| " << c.method << " | " << c.parameters << " | " << num(c.train_seconds) << " |\n";
        }
    }
    return md.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg)
{
    cfg.validate();
    const fs::path dir(cfg.output_dir);
    try {
        fs::create_directories(dir / "curves");
        fs::create_directories(dir / "checkpoints");
    } catch (const fs::filesystem_error& e) {
        throw IoError("cannot create output directory " + cfg.output_dir + ": " + e.what());
    }
    {
        const fs::path probe = dir / ".write_probe";
        std::ofstream out(probe);
        if (!out || !(out << "ok")) {
            throw IoError("output directory " + cfg.output_dir + " is not writable");
        }
        out.close();
        fs::remove(probe);
    }

    bool learned = false;
    for (Method m : kLearned) {
        learned = learned || cfg.has(m);
    }
    bool adaptive = false;
    for (Regime r : kAdaptive) {
        adaptive = adaptive || cfg.has(r);
    }

    ExperimentResult result;
    std::vector<Checkpoint> checkpoints;
    const auto merge_costs = [&](const std::vector<MethodCost>& costs) {
        for (const MethodCost& c : costs) {
            add_cost(result.costs, parse_method(c.method), c.parameters, c.train_seconds);
        }
    };
    if (cfg.has(Regime::PerTaskTrain)) {
        if (learned) {
            Table1Result t = reproduce_table1_full(cfg);
            result.table.rows.insert(result.table.rows.end(), t.table.rows.begin(), t.table.rows.end());
            checkpoints.insert(checkpoints.end(), t.checkpoints.begin(), t.checkpoints.end());
            merge_costs(t.costs);
        }
        if (cfg.has(Method::Wmmse)) {
            const ResultTable w = wmmse_table(cfg);
            result.table.rows.insert(result.table.rows.end(), w.rows.begin(), w.rows.end());
        }
    }
    if (learned && adaptive) {
        CurveResult c = adaptation_curves(cfg);
        result.table.rows.insert(result.table.rows.end(), c.table.rows.begin(), c.table.rows.end());
        checkpoints.insert(checkpoints.end(), c.checkpoints.begin(), c.checkpoints.end());
        result.curves = std::move(c.curves);
        merge_costs(c.costs);
    }
    result.table.sort();

    write_file(dir / "results.csv", to_csv(result.table));
    write_file(dir / "results.json", to_json(result.table));
    write_file(dir / "config.json", config_to_json(cfg));
    write_file(dir / "summary.md", markdown_summary(cfg, result));
    for (const CurveSummary& s : result.curves) {
        ResultTable t;
        t.rows = result.table.select(s.method, s.regime);
        write_file(dir / "curves" / (s.method + "_" + s.regime + ".csv"), to_csv(t));
    }
    for (const Checkpoint& c : checkpoints) {
        c.params.save((dir / "checkpoints" / (c.name + ".faps")).string());
    }
    return result;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) {
        throw ConfigError("spearman: need two equally sized samples of at least two values");
    }
    const auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
                ++j;
            }
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) {
                r[order[k]] = avg;
            }
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x);
    const std::vector<double> ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace fastadapt::bench
