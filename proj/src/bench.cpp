#include "odesr/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <json.hpp>

namespace odesr {

using nlohmann::json;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();
constexpr const char* threshold_labels[] = {"1e-1", "1e-2", "1e-3", "1e-4", "1e-5", "1e-6"};

json number(double x)
{
    if (std::isfinite(x)) {
        return x;
    }
    if (std::isnan(x)) {
        return "nan";
    }
    return x > 0 ? "inf" : "-inf";
}

double read_number(const json& j)
{
    if (j.is_number()) {
        return j.get<double>();
    }
    const auto s = j.get<std::string>();
    if (s == "inf") return inf;
    if (s == "-inf") return -inf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw std::invalid_argument(fmt::format("not a number: '{}'", s));
}

void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    }
    out << content;
}

template <typename F>
std::string render(F&& write)
{
    std::ostringstream os;
    write(os);
    return os.str();
}

} // namespace

double nmse(const TrajectoryData& pred, const TrajectoryData& obs)
{
    if (pred.samples() != obs.samples() || pred.dim() != obs.dim() || pred.times.size() != obs.times.size()) {
        throw ShapeError(fmt::format("prediction is {}x{} but observation is {}x{}", pred.samples(), pred.dim(),
                                     obs.samples(), obs.dim()));
    }
    for (std::size_t i = 0; i < obs.times.size(); ++i) {
        if (std::fabs(pred.times[i] - obs.times[i]) > 1e-9 * std::max(1.0, std::fabs(obs.times[i]))) {
            throw ShapeError(fmt::format("time grids differ at sample {}", i));
        }
    }
    const std::size_t n = obs.samples();
    const std::size_t dims = obs.dim();
    if (n == 0 || dims == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += obs.states(i, d);
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        double mse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = obs.states(i, d) - mean;
            const double r = pred.states(i, d) - obs.states(i, d);
            var += c * c;
            mse += r * r;
        }
        var /= static_cast<double>(n);
        mse /= static_cast<double>(n);
        total += mse / std::max(var, variance_floor);
    }
    const double out = total / static_cast<double>(dims);
    return std::isfinite(out) ? out : inf;
}

double nmse(const IntegrateResult& pred, const TrajectoryData& obs)
{
    if (const auto* traj = std::get_if<TrajectoryData>(&pred)) {
        return nmse(*traj, obs);
    }
    return inf;
}

SuccessFlags success_flags(double test_nmse)
{
    SuccessFlags flags{};
    for (std::size_t i = 0; i < nmse_thresholds.size(); ++i) {
        flags[i] = test_nmse < nmse_thresholds[i];
    }
    return flags;
}

Evaluation evaluate_discovery(const SystemCandidate& selected, const ProblemInstance& inst)
{
    const auto& obs = inst.test;
    const double dt = uniform_step(obs.times);
    const auto pred = integrate(to_rhs(selected), inst.system.test_iv, obs.times.back(), dt,
                                inst.system.integrate_options());
    Evaluation ev;
    ev.test_nmse = nmse(pred, obs);
    ev.success = success_flags(ev.test_nmse);
    return ev;
}

// --- reports -----------------------------------------------------------------

namespace {

void fill_config(RunReport& r, const SearchConfig& cfg)
{
    r.seed = cfg.seed;
    r.iterations = cfg.n_iter;
    r.islands = cfg.n_islands;
    r.k = cfg.k;
    r.b = cfg.b;
    r.refine_every = cfg.n_refine;
    r.mix = cfg.n_mix;
}

} // namespace

RunReport make_report(const ProblemInstance& inst, const Discovery& found, const SearchConfig& cfg,
                      std::string_view proposer_kind)
{
    RunReport r;
    r.system = inst.system.name;
    r.dim = inst.system.dim;
    r.chaotic = inst.system.chaotic;
    r.proposer = std::string(proposer_kind);
    fill_config(r, cfg);

    r.equations = render_system(found.selected);
    r.total_complexity = found.selected.total_complexity;
    r.train_fitness = found.selected.traj_fitness;
    const Evaluation ev = evaluate_discovery(found.selected, inst);
    r.test_nmse = ev.test_nmse;
    r.success = ev.success;

    r.pool_size = found.pool_size;
    r.system_front_size = found.system_front_size;
    for (const auto& front : found.fronts) {
        std::vector<FrontEntry> entries;
        for (const auto& f : front) {
            entries.push_back({to_string(f.expr, f.constants), f.complexity, f.train_score});
        }
        r.equation_fronts.push_back(std::move(entries));
    }
    for (const auto& cp : found.checkpoints) {
        r.convergence.push_back({cp.iteration, evaluate_discovery(cp.selected, inst).test_nmse, cp.front_size});
    }
    for (std::size_t v = 0; v < found.searches.size(); ++v) {
        for (const auto& row : found.searches[v].telemetry) {
            r.telemetry.push_back({v, row});
        }
        r.proposals += found.searches[v].proposals;
        r.transport_failures += found.searches[v].transport_failures;
    }
    return r;
}

std::string report_to_json(const RunReport& r)
{
    json doc;
    doc["system"] = r.system;
    doc["dim"] = r.dim;
    doc["chaotic"] = r.chaotic;
    doc["proposer"] = r.proposer;
    doc["seed"] = r.seed;
    doc["config"] = {{"iterations", r.iterations}, {"islands", r.islands}, {"k", r.k},
                     {"b", r.b},                   {"refine_every", r.refine_every}, {"mix", r.mix}};
    doc["selected"] = {{"equations", r.equations},
                       {"total_complexity", r.total_complexity},
                       {"train_fitness", number(r.train_fitness)}};
    doc["test_nmse"] = number(r.test_nmse);
    doc["nmse_definition"] = nmse_definition;
    json success = json::object();
    for (std::size_t i = 0; i < nmse_thresholds.size(); ++i) {
        success[threshold_labels[i]] = r.success[i];
    }
    doc["success"] = success;
    doc["pool_size"] = r.pool_size;
    doc["system_front_size"] = r.system_front_size;
    json fronts = json::array();
    for (const auto& front : r.equation_fronts) {
        json entries = json::array();
        for (const auto& e : front) {
            entries.push_back({{"expression", e.expression}, {"complexity", e.complexity}, {"score", number(e.score)}});
        }
        fronts.push_back(std::move(entries));
    }
    doc["equation_fronts"] = std::move(fronts);
    json conv = json::array();
    for (const auto& c : r.convergence) {
        conv.push_back(
            {{"iteration", c.iteration}, {"test_nmse", number(c.test_nmse)}, {"system_front_size", c.system_front_size}});
    }
    doc["convergence"] = std::move(conv);
    json tele = json::array();
    for (const auto& t : r.telemetry) {
        tele.push_back({{"variable", t.variable},
                        {"iteration", t.row.iteration},
                        {"island", t.row.island},
                        {"best_score", number(t.row.best_score)},
                        {"pareto_size", t.row.pareto_size}});
    }
    doc["telemetry"] = std::move(tele);
    doc["proposals"] = r.proposals;
    doc["transport_failures"] = r.transport_failures;
    doc["error"] = r.error ? json(*r.error) : json(nullptr);
    return doc.dump(2) + "\n";
}

RunReport report_from_json(std::string_view text)
{
    const json doc = json::parse(text.begin(), text.end());
    RunReport r;
    r.system = doc.at("system").get<std::string>();
    r.dim = doc.at("dim").get<std::size_t>();
    r.chaotic = doc.at("chaotic").get<bool>();
    r.proposer = doc.at("proposer").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    const json& cfg = doc.at("config");
    r.iterations = cfg.at("iterations").get<std::size_t>();
    r.islands = cfg.at("islands").get<std::size_t>();
    r.k = cfg.at("k").get<std::size_t>();
    r.b = cfg.at("b").get<std::size_t>();
    r.refine_every = cfg.at("refine_every").get<std::size_t>();
    r.mix = cfg.at("mix").get<std::size_t>();
    const json& sel = doc.at("selected");
    r.equations = sel.at("equations").get<std::vector<std::string>>();
    r.total_complexity = sel.at("total_complexity").get<std::size_t>();
    r.train_fitness = read_number(sel.at("train_fitness"));
    r.test_nmse = read_number(doc.at("test_nmse"));
    for (std::size_t i = 0; i < nmse_thresholds.size(); ++i) {
        r.success[i] = doc.at("success").at(threshold_labels[i]).get<bool>();
    }
    r.pool_size = doc.at("pool_size").get<std::size_t>();
    r.system_front_size = doc.at("system_front_size").get<std::size_t>();
    for (const auto& front : doc.at("equation_fronts")) {
        std::vector<FrontEntry> entries;
        for (const auto& e : front) {
            entries.push_back({e.at("expression").get<std::string>(), e.at("complexity").get<std::size_t>(),
                               read_number(e.at("score"))});
        }
        r.equation_fronts.push_back(std::move(entries));
    }
    for (const auto& c : doc.at("convergence")) {
        r.convergence.push_back({c.at("iteration").get<std::size_t>(), read_number(c.at("test_nmse")),
                                 c.at("system_front_size").get<std::size_t>()});
    }
    for (const auto& t : doc.at("telemetry")) {
        r.telemetry.push_back({t.at("variable").get<std::size_t>(),
                               {t.at("iteration").get<std::size_t>(), t.at("island").get<std::size_t>(),
                                read_number(t.at("best_score")), t.at("pareto_size").get<std::size_t>()}});
    }
    r.proposals = doc.at("proposals").get<std::size_t>();
    r.transport_failures = doc.at("transport_failures").get<std::size_t>();
    if (!doc.at("error").is_null()) {
        r.error = doc.at("error").get<std::string>();
    }
    return r;
}

// --- tables ------------------------------------------------------------------

DiscoveryTable discovery_table(const std::vector<RunReport>& reports)
{
    DiscoveryTable table;
    for (std::size_t d = 1; d <= 4; ++d) {
        table[d] = {};
    }
    for (const auto& r : reports) {
        auto& row = table[r.dim];
        for (std::size_t i = 0; i < nmse_thresholds.size(); ++i) {
            row[i] += r.success[i] ? 1 : 0;
        }
    }
    return table;
}

void write_discovery_table(std::ostream& os, const DiscoveryTable& table)
{
    os << "dim";
    for (const char* label : threshold_labels) {
        os << ",lambda=" << label;
    }
    os << '\n';
    std::array<std::size_t, nmse_thresholds.size()> total{};
    for (const auto& [dim, row] : table) {
        os << dim;
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << ',' << row[i];
            total[i] += row[i];
        }
        os << '\n';
    }
    os << "total";
    for (std::size_t v : total) {
        os << ',' << v;
    }
    os << '\n';
}

namespace {

std::vector<std::size_t> checkpoint_iterations(const std::vector<RunReport>& reports)
{
    std::set<std::size_t> its;
    for (const auto& r : reports) {
        for (const auto& c : r.convergence) {
            its.insert(c.iteration);
        }
    }
    return {its.begin(), its.end()};
}

} // namespace

void write_convergence(std::ostream& os, const std::vector<RunReport>& reports)
{
    os << "iteration";
    for (const char* label : threshold_labels) {
        os << ",lambda=" << label;
    }
    os << '\n';
    for (std::size_t it : checkpoint_iterations(reports)) {
        std::array<std::size_t, nmse_thresholds.size()> hits{};
        for (const auto& r : reports) {
            double best = inf;
            for (const auto& c : r.convergence) {
                if (c.iteration <= it && c.test_nmse < best) {
                    best = c.test_nmse;
                }
            }
            for (std::size_t i = 0; i < nmse_thresholds.size(); ++i) {
                hits[i] += best < nmse_thresholds[i] ? 1 : 0;
            }
        }
        os << it;
        for (std::size_t h : hits) {
            os << ',' << fmt::format("{}", static_cast<double>(h) / static_cast<double>(reports.size()));
        }
        os << '\n';
    }
}

void write_pareto_size(std::ostream& os, const std::vector<RunReport>& reports)
{
    os << "iteration,runs,mean,ci_low,ci_high\n";
    for (std::size_t it : checkpoint_iterations(reports)) {
        std::vector<double> xs;
        for (const auto& r : reports) {
            for (const auto& c : r.convergence) {
                if (c.iteration == it) {
                    xs.push_back(static_cast<double>(c.system_front_size));
                }
            }
        }
        const double n = static_cast<double>(xs.size());
        double mean = 0.0;
        for (double x : xs) {
            mean += x;
        }
        mean /= n;
        os << fmt::format("{},{},{}", it, xs.size(), mean);
        if (xs.size() < 2) {
            os << ",,\n";
            continue;
        }
        double ss = 0.0;
        for (double x : xs) {
            ss += (x - mean) * (x - mean);
        }
        const double sd = std::sqrt(ss / (n - 1.0));
        const boost::math::students_t dist(n - 1.0);
        const double half = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
        os << fmt::format(",{},{}\n", mean - half, mean + half);
    }
}

void write_telemetry(std::ostream& os, const std::vector<RunReport>& reports)
{
    os << "system,variable,iteration,island,best_score,pareto_size\n";
    for (const auto& r : reports) {
        for (const auto& t : r.telemetry) {
            os << fmt::format("\"{}\",{},{},{},{},{}\n", r.system, t.variable, t.row.iteration, t.row.island,
                              t.row.best_score, t.row.pareto_size);
        }
    }
}

void write_timings(std::ostream& os, const std::vector<RunReport>& reports)
{
    os << "system,dim,wall_seconds\n";
    for (const auto& r : reports) {
        os << fmt::format("\"{}\",{},{:.3f}\n", r.system, r.dim, r.wall_seconds);
    }
}

// --- orchestration -----------------------------------------------------------

std::vector<BenchmarkSystem> select_systems(const std::vector<BenchmarkSystem>& registry, const BenchmarkConfig& cfg)
{
    std::vector<BenchmarkSystem> out;
    for (const auto& sys : registry) {
        const bool name_ok = cfg.names.empty() || std::find(cfg.names.begin(), cfg.names.end(), sys.name) != cfg.names.end();
        const bool dim_ok = cfg.dims.empty() || std::find(cfg.dims.begin(), cfg.dims.end(), sys.dim) != cfg.dims.end();
        if (name_ok && dim_ok) {
            out.push_back(sys);
        }
    }
    return out;
}

RunReport run_system(const BenchmarkSystem& sys, const BenchmarkConfig& cfg)
{
    const auto start = std::chrono::steady_clock::now();
    RunReport report;
    try {
        const ProblemInstance inst = make_instance(sys);
        auto proposer = cfg.factory ? cfg.factory(sys) : make_proposer(cfg.proposer);
        const Discovery found = discover(inst, cfg.search, *proposer, cfg.cartesian);
        report = make_report(inst, found, cfg.search, proposer->kind());
    } catch (const std::exception& err) {
        report = RunReport{};
        report.system = sys.name;
        report.dim = sys.dim;
        report.chaotic = sys.chaotic;
        report.proposer = std::string(to_string(cfg.proposer.kind));
        fill_config(report, cfg.search);
        report.error = err.what();
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::vector<RunReport> run_benchmark(const std::vector<BenchmarkSystem>& registry, const BenchmarkConfig& cfg)
{
    const auto systems = select_systems(registry, cfg);
    std::vector<RunReport> reports(systems.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < systems.size(); i = next++) {
            reports[i] = run_system(systems[i], cfg);
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(cfg.workers, 1), std::max<std::size_t>(systems.size(), 1));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    if (cfg.out_dir) {
        write_reports(*cfg.out_dir, reports);
        write_tables(*cfg.out_dir, reports);
        write_file(*cfg.out_dir / "timings.csv", render([&](std::ostream& os) { write_timings(os, reports); }));
    }
    return reports;
}

std::string report_stem(std::string_view name)
{
    std::string out;
    for (char ch : name) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            out += static_cast<char>(std::tolower(u));
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') {
        out.pop_back();
    }
    return out.empty() ? "system" : out;
}

void write_reports(const std::filesystem::path& out_dir, const std::vector<RunReport>& reports)
{
    const auto dir = out_dir / "reports";
    std::filesystem::create_directories(dir);
    for (const auto& r : reports) {
        write_file(dir / (report_stem(r.system) + ".json"), report_to_json(r));
    }
}

void write_tables(const std::filesystem::path& out_dir, std::vector<RunReport> reports)
{
    std::filesystem::create_directories(out_dir);
    std::stable_sort(reports.begin(), reports.end(),
                     [](const RunReport& a, const RunReport& b) { return report_stem(a.system) < report_stem(b.system); });
    write_file(out_dir / "discovery_table.csv",
               render([&](std::ostream& os) { write_discovery_table(os, discovery_table(reports)); }));
    write_file(out_dir / "convergence.csv", render([&](std::ostream& os) { write_convergence(os, reports); }));
    write_file(out_dir / "pareto_size.csv", render([&](std::ostream& os) { write_pareto_size(os, reports); }));
    write_file(out_dir / "telemetry.csv", render([&](std::ostream& os) { write_telemetry(os, reports); }));
}

std::vector<RunReport> load_reports(const std::filesystem::path& out_dir)
{
    std::vector<std::filesystem::path> files;
    const auto dir = out_dir / "reports";
    if (!std::filesystem::is_directory(dir)) {
        return {};
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<RunReport> out;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        out.push_back(report_from_json(buf.str()));
    }
    return out;
}

} // namespace odesr
