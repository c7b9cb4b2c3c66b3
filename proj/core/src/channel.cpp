#include "fastadapt/channel.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fastadapt {

double SystemConfig::noise_power() const
{
    return noise_power_at(snr_db);
}

double SystemConfig::noise_power_at(double snr) const
{
    return total_power * std::pow(10.0, -snr / 10.0);
}

void SystemConfig::validate() const
{
    if (num_users < 1 || tx_antennas < 1 || rx_antennas < 1 || streams_per_user < 1) {
        throw ConfigError("SystemConfig: all dimensions must be at least 1");
    }
    if (num_users * streams_per_user > tx_antennas) {
        throw ConfigError("SystemConfig: K*d exceeds the number of transmit antennas");
    }
    if (streams_per_user > rx_antennas) {
        throw ConfigError("SystemConfig: more streams than receive antennas");
    }
    if (!(total_power > 0.0) || !std::isfinite(total_power)) {
        throw ConfigError("SystemConfig: total power must be positive");
    }
    if (!std::isfinite(snr_db)) {
        throw ConfigError("SystemConfig: snr_db must be finite");
    }
}

ComplexMatrix make_correlation(Index n, double rho)
{
    if (n < 1) {
        throw ConfigError("make_correlation: size must be at least 1");
    }
    if (!(rho >= 0.0 && rho < 1.0)) {
        throw ConfigError("make_correlation: rho must lie in [0, 1)");
    }
    RealMatrix r(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const Index gap = i > j ? i - j : j - i;
            r(i, j) = gap == 0 ? 1.0 : std::pow(rho, static_cast<double>(gap));
        }
    }
    return ComplexMatrix(std::move(r));
}

ComplexMatrix sqrt_psd(const ComplexMatrix& a)
{
    if (a.rows() != a.cols()) {
        throw ShapeError("sqrt_psd: matrix must be square");
    }
    if (linalg::hermitian_deviation(a) >= 1e-10) {
        throw ConfigError("sqrt_psd: matrix is not Hermitian");
    }
    const linalg::HermitianEig eig = linalg::hermitian_eig(a);
    const Index n = a.rows();
    RealMatrix root = RealMatrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        root(i, i) = std::sqrt(std::max(eig.values(i), 0.0));
    }
    ComplexMatrix s = eig.vectors * ComplexMatrix(root) * eig.vectors.adjoint();
    return linalg::hermitian_part(s);
}

ChannelTask make_task(int task_id, double rho_tx, double rho_rx, std::uint64_t seed,
                      const SystemConfig& config)
{
    config.validate();
    ChannelTask task;
    task.task_id = task_id;
    task.rho_tx = rho_tx;
    task.rho_rx = rho_rx;
    task.seed = seed;
    task.R_t = make_correlation(config.tx_antennas, rho_tx);
    task.R_r = make_correlation(config.rx_antennas, rho_rx);
    task.sqrt_R_t = sqrt_psd(task.R_t);
    task.sqrt_R_r = sqrt_psd(task.R_r);
    return task;
}

ChannelSample sample_channel(const ChannelTask& task, const SystemConfig& config, Rng& rng)
{
    if (task.sqrt_R_t.rows() != config.tx_antennas || task.sqrt_R_r.rows() != config.rx_antennas) {
        throw ShapeError("sample_channel: task correlation sizes do not match the configuration");
    }
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    ChannelSample sample;
    sample.H.reserve(static_cast<std::size_t>(config.num_users));
    for (Index k = 0; k < config.num_users; ++k) {
        ComplexMatrix g(config.rx_antennas, config.tx_antennas);
        for (Index c = 0; c < g.cols(); ++c) {
            for (Index r = 0; r < g.rows(); ++r) {
                g.re()(r, c) = normal(rng);
                g.im()(r, c) = normal(rng);
            }
        }
        sample.H.push_back(task.sqrt_R_r * g * task.sqrt_R_t);
    }
    return sample;
}

TaskSuite make_task_suite(const SystemConfig& config, const SuiteSpec& spec)
{
    config.validate();
    if (spec.train_rho.empty()) {
        throw ConfigError("make_task_suite: at least one training task is required");
    }
    std::vector<double> all = spec.train_rho;
    all.push_back(spec.test_rho);
    std::vector<double> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("make_task_suite: duplicate rho values; tasks must be distinct environments");
    }

    std::vector<std::size_t> order(spec.train_rho.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(spec.train_rho[a] - spec.test_rho) < std::abs(spec.train_rho[b] - spec.test_rho);
    });

    TaskSuite suite;
    suite.config = config;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double rho = spec.train_rho[order[i]];
        const int id = static_cast<int>(i) + 1;
        suite.training.push_back(
            make_task(id, rho, rho, derive_seed(spec.seed, {static_cast<std::uint64_t>(id)}), config));
    }
    suite.testing = make_task(0, spec.test_rho, spec.test_rho, derive_seed(spec.seed, {0}), config);
    return suite;
}

TaskDataset build_dataset(const ChannelTask& task, const SystemConfig& config, std::size_t n_support,
                          std::size_t n_query, std::uint64_t seed)
{
    if (n_support < 1 || n_query < 1) {
        throw ConfigError("build_dataset: support and query sizes must be at least 1");
    }
    TaskDataset data;
    data.task = task;
    Rng support_rng = make_rng(seed, {task.seed, 0});
    Rng query_rng = make_rng(seed, {task.seed, 1});
    data.support.reserve(n_support);
    data.query.reserve(n_query);
    for (std::size_t i = 0; i < n_support; ++i) {
        data.support.push_back(sample_channel(task, config, support_rng));
    }
    for (std::size_t i = 0; i < n_query; ++i) {
        data.query.push_back(sample_channel(task, config, query_rng));
    }
    return data;
}

namespace {

using nlohmann::json;

json config_json(const SystemConfig& c)
{
    return json{{"num_users", c.num_users},           {"tx_antennas", c.tx_antennas},
                {"rx_antennas", c.rx_antennas},       {"streams_per_user", c.streams_per_user},
                {"total_power", c.total_power},       {"snr_db", c.snr_db}};
}

SystemConfig config_from(const json& j)
{
    SystemConfig c;
    c.num_users = j.at("num_users").get<Index>();
    c.tx_antennas = j.at("tx_antennas").get<Index>();
    c.rx_antennas = j.at("rx_antennas").get<Index>();
    c.streams_per_user = j.at("streams_per_user").get<Index>();
    c.total_power = j.at("total_power").get<double>();
    c.snr_db = j.at("snr_db").get<double>();
    c.validate();
    return c;
}

json task_json(const ChannelTask& t)
{
    return json{{"task_id", t.task_id}, {"rho_tx", t.rho_tx}, {"rho_rx", t.rho_rx}, {"seed", t.seed}};
}

ChannelTask task_from(const json& j, const SystemConfig& c)
{
    return make_task(j.at("task_id").get<int>(), j.at("rho_tx").get<double>(), j.at("rho_rx").get<double>(),
                     j.at("seed").get<std::uint64_t>(), c);
}

} // namespace

std::string suite_to_json(const TaskSuite& suite)
{
    json tasks = json::array();
    for (const ChannelTask& t : suite.training) {
        tasks.push_back(task_json(t));
    }
    const json doc{{"config", config_json(suite.config)}, {"tasks", tasks}, {"testing", task_json(suite.testing)}};
    return doc.dump(2);
}

TaskSuite suite_from_json(const std::string& text)
{
    try {
        const json doc = json::parse(text);
        TaskSuite suite;
        suite.config = config_from(doc.at("config"));
        for (const json& t : doc.at("tasks")) {
            suite.training.push_back(task_from(t, suite.config));
        }
        suite.testing = task_from(doc.at("testing"), suite.config);
        return suite;
    } catch (const json::exception& e) {
        throw IoError(std::string("suite_from_json: ") + e.what());
    }
}

void save_suite(const TaskSuite& suite, const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("save_suite: cannot open " + path);
    }
    out << suite_to_json(suite) << '\n';
}

TaskSuite load_suite(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("load_suite: cannot open " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return suite_from_json(buf.str());
}

} // namespace fastadapt
