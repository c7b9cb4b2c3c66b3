// Command line harness for the fast-adaptation experiments.

#include "fastadapt/bench.hpp"
#include "fastadapt/error.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace fastadapt;
using namespace fastadapt::bench;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> methods;
    std::vector<std::string> regimes;
    std::vector<double> snr;
};

void add_common(CLI::App* cmd, CommonFlags& f)
{
    cmd->add_option("--config", f.config, "Experiment config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Top-level seed");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--methods", f.methods, "Comma list of wmmse, blackbox, unfolded, fpn")->delimiter(',');
    cmd->add_option("--regimes", f.regimes, "Comma list of joint+finetune, maml+finetune, multitask, per-task-train")
        ->delimiter(',');
    cmd->add_option("--snr", f.snr, "Comma list of evaluation SNRs in dB")->delimiter(',');
}

ExperimentConfig resolve(const CommonFlags& f)
{
    ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
    if (f.seed) {
        cfg.seed = *f.seed;
    }
    if (!f.out.empty()) {
        cfg.output_dir = f.out;
    }
    if (!f.methods.empty()) {
        cfg.methods.clear();
        for (const std::string& m : f.methods) {
            cfg.methods.push_back(parse_method(m));
        }
    }
    if (!f.regimes.empty()) {
        cfg.regimes.clear();
        for (const std::string& r : f.regimes) {
            cfg.regimes.push_back(parse_regime(r));
        }
    }
    if (!f.snr.empty()) {
        cfg.snr_eval_grid = f.snr;
    }
    cfg.validate();
    return cfg;
}

fs::path prepare_dir(const fs::path& dir)
{
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        throw IoError("cannot write " + path.string());
    }
    std::cout << "wrote " << path.string() << "\n";
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_checkpoints(const fs::path& dir, const std::vector<Checkpoint>& cps)
{
    prepare_dir(dir);
    for (const Checkpoint& c : cps) {
        const fs::path p = dir / (c.name + ".faps");
        c.params.save(p.string());
        std::cout << "wrote " << p.string() << "\n";
    }
}

void write_table(const fs::path& dir, const std::string& stem, const ResultTable& t)
{
    write_text(dir / (stem + ".csv"), to_csv(t));
    write_text(dir / (stem + ".json"), to_json(t));
}

void print_curves(const std::vector<CurveSummary>& curves)
{
    for (const CurveSummary& c : curves) {
        std::cout << c.method << " " << c.regime << ": budget " << c.budget << ", iterations to 95% "
                  << c.iterations_to_95pct << ", rate at budget " << c.rate_at_budget << ", final " << c.final_rate
                  << "\n";
    }
}

std::vector<Checkpoint> load_trained(const fs::path& dir, Method m, Regime r, std::size_t n_tasks)
{
    const std::string tag = to_string(m) + "_" + to_string(r);
    std::vector<Checkpoint> out;
    if (r == Regime::Multitask) {
        out.push_back({tag + "_shared", ParamStore::load((dir / (tag + "_shared.faps")).string())});
        for (std::size_t n = 1; n <= n_tasks; ++n) {
            const std::string name = tag + "_task" + std::to_string(n);
            out.push_back({name, ParamStore::load((dir / (name + ".faps")).string())});
        }
        return out;
    }
    out.push_back({tag + "_init", ParamStore::load((dir / (tag + "_init.faps")).string())});
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Few-shot adaptation experiments for learned MU-MIMO precoders"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string method_name;
    std::string regime_name;
    int task = kAllTrainingTasks;
    std::string checkpoint_dir;
    bool from_results = false;

    CLI::App* gen = app.add_subcommand("gen-suite", "Write the task suite and resolved config");
    CLI::App* train = app.add_subcommand("train", "Train one method under one regime");
    CLI::App* adapt = app.add_subcommand("adapt", "Adapt trained parameters to the testing task");
    CLI::App* table1 = app.add_subcommand("table1", "Per-task training with zero-shot transfer");
    CLI::App* curves = app.add_subcommand("curves", "Few-shot adaptation curves on the testing task");
    CLI::App* report = app.add_subcommand("report", "Run the full experiment and write every artifact");
    for (CLI::App* c : {gen, train, adapt, table1, curves, report}) {
        add_common(c, flags);
    }
    for (CLI::App* c : {train, adapt}) {
        c->add_option("--method", method_name, "Learned method")->required();
        c->add_option("--regime", regime_name, "Training regime")->required();
    }
    train->add_option("--task", task, "Training task id for per-task-train");
    adapt->add_option("--checkpoints", checkpoint_dir, "Directory holding the trained checkpoints");
    report->add_flag("--from-results", from_results, "Rebuild summary.md from an existing results.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig cfg = resolve(flags);
        const fs::path out = prepare_dir(cfg.output_dir);

        if (gen->parsed()) {
            save_suite(make_suite(cfg), (out / "suite.json").string());
            std::cout << "wrote " << (out / "suite.json").string() << "\n";
            save_config(cfg, (out / "config.json").string());
            std::cout << "wrote " << (out / "config.json").string() << "\n";
        } else if (train->parsed()) {
            const Regime r = parse_regime(regime_name);
            if (r == Regime::PerTaskTrain && task == kAllTrainingTasks) {
                throw ConfigError("train: per-task-train needs --task");
            }
            save_checkpoints(out / "checkpoints", train_cell(cfg, parse_method(method_name), r, task));
        } else if (adapt->parsed()) {
            const Method m = parse_method(method_name);
            const Regime r = parse_regime(regime_name);
            const fs::path dir = checkpoint_dir.empty() ? out / "checkpoints" : fs::path(checkpoint_dir);
            const CurveResult c = adapt_cell(cfg, m, r, load_trained(dir, m, r, cfg.suite_spec.train_rho.size()));
            write_table(prepare_dir(out / "curves"), to_string(m) + "_" + to_string(r), c.table);
            save_checkpoints(out / "checkpoints", c.checkpoints);
            print_curves(c.curves);
        } else if (table1->parsed()) {
            const Table1Result t = reproduce_table1_full(cfg);
            write_table(out, "table1", t.table);
            save_checkpoints(out / "checkpoints", t.checkpoints);
        } else if (curves->parsed()) {
            const CurveResult c = adaptation_curves(cfg);
            write_table(out, "curves", c.table);
            save_checkpoints(out / "checkpoints", c.checkpoints);
            print_curves(c.curves);
        } else if (report->parsed()) {
            if (from_results) {
                ExperimentResult r;
                r.table = parse_csv(read_text(out / "results.csv"));
                r.curves = curves_from_table(cfg, r.table);
                write_text(out / "summary.md", markdown_summary(cfg, r));
            } else {
                const ExperimentResult r = run_experiment(cfg);
                std::cout << "wrote " << r.table.rows.size() << " rows to " << (out / "results.csv").string()
                          << "\n";
                print_curves(r.curves);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "fastadapt: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
