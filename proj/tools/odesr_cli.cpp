#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "odesr/bench.hpp"

namespace {

struct Options {
    std::string registry;
    std::vector<std::string> systems;
    std::vector<std::size_t> dims;
    std::string proposer = "random";
    std::string endpoint;
    std::string model;
    double temperature = 0.7;
    double timeout = 60.0;
    int retries = 3;
    std::string audit_log;
    std::string script;
    odesr::SearchConfig search;
    std::string out;
    std::size_t workers = 1;
};

void add_search_flags(CLI::App* cmd, Options& o)
{
    cmd->add_option("--proposer", o.proposer, "Equation proposer")
        ->check(CLI::IsMember({"chat", "scripted", "random"}))
        ->capture_default_str();
    cmd->add_option("--endpoint", o.endpoint, "Chat endpoint base URL (default: $ODESR_ENDPOINT)");
    cmd->add_option("--model", o.model, "Chat model name (default: $ODESR_MODEL)");
    cmd->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
    cmd->add_option("--timeout", o.timeout, "Chat request timeout in seconds")->capture_default_str();
    cmd->add_option("--retries", o.retries, "Chat retries after the first attempt")->capture_default_str();
    cmd->add_option("--audit-log", o.audit_log, "Append chat requests and responses to this JSONL file");
    cmd->add_option("--script", o.script, "Script file for the scripted proposer");
    cmd->add_option("--seed", o.search.seed, "Random seed")->capture_default_str();
    cmd->add_option("--iters", o.search.n_iter, "Evolution iterations")->capture_default_str();
    cmd->add_option("--islands", o.search.n_islands, "Islands per state variable")->capture_default_str()->check(
        CLI::PositiveNumber);
    cmd->add_option("--k", o.search.k, "In-context examples per prompt")->capture_default_str()->check(
        CLI::PositiveNumber);
    cmd->add_option("--b", o.search.b, "Proposals per prompt")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--refine-every", o.search.n_refine, "Iterations between migrations")->capture_default_str();
    cmd->add_option("--mix", o.search.n_mix, "Members copied per island at migration")->capture_default_str();
    cmd->add_option("--checkpoint-every", o.search.checkpoint_every, "Iterations between convergence checkpoints")
        ->capture_default_str();
    cmd->add_option("--threads", o.search.threads, "Threads per search")->capture_default_str();
}

odesr::BenchmarkConfig make_config(const Options& o)
{
    odesr::BenchmarkConfig cfg;
    cfg.search = o.search;
    cfg.names = o.systems;
    cfg.dims = o.dims;
    cfg.workers = o.workers;
    cfg.proposer.kind = odesr::parse_proposer_kind(o.proposer);
    cfg.proposer.chat.endpoint = o.endpoint;
    cfg.proposer.chat.model = o.model;
    cfg.proposer.chat.temperature = o.temperature;
    cfg.proposer.chat.timeout = std::chrono::milliseconds(static_cast<long>(o.timeout * 1000.0));
    cfg.proposer.chat.max_retries = o.retries;
    if (!o.audit_log.empty()) {
        cfg.proposer.chat.audit_log = o.audit_log;
    }
    if (!o.script.empty()) {
        cfg.proposer.script_path = o.script;
    }
    cfg.proposer.apply_environment();
    if (!o.out.empty()) {
        cfg.out_dir = o.out;
    }
    // Fail early on an unusable proposer configuration.
    (void)odesr::make_proposer(cfg.proposer);
    return cfg;
}

std::vector<odesr::BenchmarkSystem> load(const Options& o)
{
    return odesr::load_registry(o.registry.empty() ? odesr::default_registry_path() : std::filesystem::path(o.registry));
}

void print_report(const odesr::RunReport& r)
{
    fmt::print("{} (D={})\n", r.system, r.dim);
    if (r.error) {
        fmt::print("  error: {}\n", *r.error);
        return;
    }
    for (const auto& line : r.equations) {
        fmt::print("  {}\n", line);
    }
    fmt::print("  complexity {}  train fitness {}  test NMSE {}\n", r.total_complexity, r.train_fitness, r.test_nmse);
}

void print_table(const std::vector<odesr::RunReport>& reports)
{
    odesr::write_discovery_table(std::cout, odesr::discovery_table(reports));
}

int cmd_simulate(const Options& o)
{
    const auto registry = load(o);
    odesr::BenchmarkConfig filter;
    filter.names = o.systems;
    filter.dims = o.dims;
    const auto systems = odesr::select_systems(registry, filter);
    const std::filesystem::path out = o.out.empty() ? std::filesystem::path("trajectories") : std::filesystem::path(o.out);
    std::filesystem::create_directories(out);
    for (const auto& sys : systems) {
        const auto inst = odesr::make_instance(sys);
        const auto stem = odesr::report_stem(sys.name);
        std::ofstream train(out / (stem + "_train.csv"));
        odesr::write_csv(train, inst.train);
        std::ofstream test(out / (stem + "_test.csv"));
        odesr::write_csv(test, inst.test);
    }
    fmt::print("wrote {} systems to {}\n", systems.size(), out.string());
    return 0;
}

int cmd_discover(const Options& o)
{
    const auto registry = load(o);
    auto cfg = make_config(o);
    const auto systems = odesr::select_systems(registry, cfg);
    if (systems.size() != 1) {
        fmt::print(stderr, "no system named '{}'\n", o.systems.empty() ? "" : o.systems.front());
        return 2;
    }
    const auto report = odesr::run_system(systems.front(), cfg);
    print_report(report);
    if (cfg.out_dir) {
        odesr::write_reports(*cfg.out_dir, {report});
    }
    return report.error ? 1 : 0;
}

int cmd_sweep(const Options& o)
{
    const auto registry = load(o);
    const auto cfg = make_config(o);
    const auto reports = odesr::run_benchmark(registry, cfg);
    for (const auto& r : reports) {
        print_report(r);
    }
    print_table(reports);
    return 0;
}

int cmd_report(const Options& o)
{
    const auto reports = odesr::load_reports(o.out);
    odesr::write_tables(o.out, reports);
    fmt::print("{} reports\n", reports.size());
    print_table(reports);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ODE system discovery by island-based symbolic regression"};
    app.require_subcommand(1);
    Options o;

    auto* simulate = app.add_subcommand("simulate", "Write train and test trajectories as CSV");
    auto* discover = app.add_subcommand("discover", "Discover one benchmark system");
    auto* sweep = app.add_subcommand("sweep", "Run the benchmark over many systems");
    auto* report = app.add_subcommand("report", "Rebuild aggregate tables from saved reports");

    for (auto* cmd : {simulate, discover, sweep}) {
        cmd->add_option("--registry", o.registry, "Registry file (default: shipped data/systems.json)");
    }
    simulate->add_option("--system", o.systems, "System name (repeatable; default: all)");
    simulate->add_option("--dim", o.dims, "Only systems of this dimension (repeatable)");
    simulate->add_option("--out", o.out, "Output directory")->capture_default_str();

    discover->add_option("--system", o.systems, "System name")->required()->expected(1);
    discover->add_option("--out", o.out, "Directory for the report document");
    add_search_flags(discover, o);

    sweep->add_option("--system", o.systems, "System name (repeatable; default: all)");
    sweep->add_option("--dim", o.dims, "Only systems of this dimension (repeatable)");
    sweep->add_option("--out", o.out, "Output directory")->required();
    sweep->add_option("--workers", o.workers, "Systems run concurrently")->capture_default_str();
    add_search_flags(sweep, o);

    report->add_option("--out", o.out, "Directory written by sweep")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (simulate->parsed()) return cmd_simulate(o);
        if (discover->parsed()) return cmd_discover(o);
        if (sweep->parsed()) return cmd_sweep(o);
        if (report->parsed()) return cmd_report(o);
    } catch (const std::exception& err) {
        fmt::print(stderr, "error: {}\n", err.what());
        return 1;
    }
    return 0;
}
