// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <unistd.h>

#include "odesr/bench.hpp"
#include "oracles.hpp"
#include "stub_server.hpp"

using namespace odesr;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

const std::vector<BenchmarkSystem>& registry()
{
    static const auto systems = load_registry(ODESR_REGISTRY);
    return systems;
}

const BenchmarkSystem& registry_system(std::string_view name)
{
    for (const auto& s : registry()) {
        if (s.name == name) {
            return s;
        }
    }
    throw std::runtime_error("missing system " + std::string(name));
}

std::filesystem::path scratch(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() /
                   ("odesr_acceptance_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::map<std::string, std::string> artifacts(const std::filesystem::path& dir)
{
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() != "timings.csv") {
            std::ifstream in(e.path(), std::ios::binary);
            std::stringstream buf;
            buf << in.rdbuf();
            out[std::filesystem::relative(e.path(), dir).string()] = buf.str();
        }
    }
    return out;
}

TrajectoryData sampled(double dt, std::size_t n, const std::function<double(double)>& f)
{
    TrajectoryData traj;
    traj.states = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = dt * static_cast<double>(i);
        traj.times.push_back(t);
        traj.states(i, 0) = f(t);
    }
    return traj;
}

// Ground-truth structure with literals masked, as a proposer would emit it.
std::string masked_truth(const Expr& e)
{
    return to_masked_string(mask_literals(e).expr);
}

Outcome registry_integrity()
{
    Outcome o;
    const auto start = Clock::now();
    const auto systems = load_registry(ODESR_REGISTRY);
    o.require(systems.size() == 91, fmt::format("{} systems", systems.size()));
    std::map<std::size_t, std::size_t> per_dim;
    for (const auto& s : systems) {
        ++per_dim[s.dim];
        for (const auto* iv : {&s.train_iv, &s.test_iv}) {
            const auto res = integrate(s.rhs(), *iv, 10.0, 0.1, s.integrate_options());
            o.require(std::holds_alternative<TrajectoryData>(res), s.name + " diverges");
        }
    }
    o.require(per_dim[1] == 23 && per_dim[2] == 28 && per_dim[3] == 22 && per_dim[4] == 18,
              fmt::format("split {}/{}/{}/{}", per_dim[1], per_dim[2], per_dim[3], per_dim[4]));
    const double secs = seconds_since(start);
    o.require(secs < 30.0, fmt::format("{:.1f} s", secs));
    if (o.pass) {
        o.detail = fmt::format("91 systems, 23/28/22/18, {:.2f} s", secs);
    }
    return o;
}

Outcome integrator()
{
    Outcome o;
    const auto& ho = registry_system("Harmonic oscillator");
    const auto res = integrate(ho.rhs(), std::vector<double>{0.40, -0.03}, 10.0, 0.1, ho.integrate_options());
    o.require(std::holds_alternative<TrajectoryData>(res), "oscillator diverged");
    if (!o.pass) {
        return o;
    }
    const auto& traj = std::get<TrajectoryData>(res);
    const double w = std::sqrt(2.1);
    double worst_ho = 0.0;
    for (std::size_t i = 0; i < traj.samples(); ++i) {
        const double t = traj.times[i];
        const double x0 = 0.40 * std::cos(w * t) - 0.03 / w * std::sin(w * t);
        const double x1 = -0.40 * w * std::sin(w * t) - 0.03 * std::cos(w * t);
        worst_ho = std::max({worst_ho, std::fabs(traj.states(i, 0) - x0), std::fabs(traj.states(i, 1) - x1)});
    }
    o.require(worst_ho <= 1e-6, fmt::format("oscillator error {:.3g}", worst_ho));

    const auto& growth = registry_system("Population growth (naive)");
    const auto g = std::get<TrajectoryData>(integrate(growth.rhs(), growth.train_iv, 10.0, 0.1,
                                                      growth.integrate_options()));
    double worst_rel = 0.0;
    for (std::size_t i = 0; i < g.samples(); ++i) {
        const double want = 4.78 * std::exp(0.23 * g.times[i]);
        worst_rel = std::max(worst_rel, std::fabs(g.states(i, 0) - want) / want);
    }
    o.require(worst_rel <= 1e-5, fmt::format("growth relative error {:.3g}", worst_rel));
    if (o.pass) {
        o.detail = fmt::format("oscillator max-abs {:.2g}, growth max-rel {:.2g}", worst_ho, worst_rel);
    }
    return o;
}

Outcome derivative_kernel()
{
    Outcome o;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst_poly = 0.0;
    for (int degree = 0; degree <= 4; ++degree) {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> a(static_cast<std::size_t>(degree) + 1);
            for (double& v : a) {
                v = u(rng);
            }
            auto p = [&](double t) {
                double s = 0.0;
                for (std::size_t j = a.size(); j-- > 0;) {
                    s = s * t + a[j];
                }
                return s;
            };
            auto dp = [&](double t) {
                double s = 0.0;
                for (std::size_t j = a.size(); j-- > 1;) {
                    s = s * t + static_cast<double>(j) * a[j];
                }
                return s;
            };
            const auto traj = estimate_derivatives(sampled(0.1, 101, p));
            for (std::size_t i = 0; i < traj.samples(); ++i) {
                worst_poly = std::max(worst_poly, std::fabs((*traj.derivs)(i, 0) - dp(traj.times[i])));
            }
        }
    }
    o.require(worst_poly <= 1e-9, fmt::format("polynomial error {:.3g}", worst_poly));

    const auto s = estimate_derivatives(sampled(0.1, 101, [](double t) { return std::sin(t); }));
    double worst_sin = 0.0;
    for (std::size_t i = 2; i + 2 < s.samples(); ++i) {
        worst_sin = std::max(worst_sin, std::fabs((*s.derivs)(i, 0) - std::cos(s.times[i])));
    }
    o.require(worst_sin <= 1e-5, fmt::format("sin error {:.3g}", worst_sin));
    if (o.pass) {
        o.detail = fmt::format("polynomials {:.2g}, sin interior {:.2g}", worst_poly, worst_sin);
    }
    return o;
}

Outcome constant_fitting()
{
    Outcome o;
    {
        Matrix X(20, 1);
        std::vector<double> y(20);
        for (std::size_t i = 0; i < 20; ++i) {
            X(i, 0) = -1.0 + 0.1 * static_cast<double>(i);
            y[i] = 2.0 * X(i, 0) + 5.0;
        }
        Rng rng(2);
        const auto r = fit_constants(parse("C*x_0 + C", 1, Grammar::Discovery), X, y, {1.0, 1.0}, rng);
        o.require(std::fabs(r.constants[0] - 2.0) <= 1e-6 && std::fabs(r.constants[1] - 5.0) <= 1e-6,
                  fmt::format("affine fit ({}, {})", r.constants[0], r.constants[1]));
    }
    {
        const auto inst = make_instance(registry_system("Population growth (naive)"));
        const auto& X = inst.train.states;
        const auto& dX = *inst.train.derivs;
        Matrix Xf(inst.fit_rows.end - inst.fit_rows.begin, 1);
        std::vector<double> y;
        for (std::size_t i = inst.fit_rows.begin; i < inst.fit_rows.end; ++i) {
            Xf(i - inst.fit_rows.begin, 0) = X(i, 0);
            y.push_back(dX(i, 0));
        }
        Rng rng(1);
        const auto r = fit_constants(parse("C*x_0", 1, Grammar::Discovery), Xf, y, {1.0}, rng);
        o.require(std::fabs(r.constants[0] - 0.23) <= 1e-6, fmt::format("growth rate {}", r.constants[0]));
    }

    const std::vector<std::string> basis{"x_0", "x_1", "x_0*x_1", "sin(x_0)", "exp(x_1)", "x_0*x_0", "Abs(x_1)"};
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::string> terms;
        for (const auto& b : basis) {
            if (std::bernoulli_distribution(0.45)(rng)) {
                terms.push_back(b);
            }
        }
        if (terms.empty()) {
            terms.push_back(basis[static_cast<std::size_t>(trial) % basis.size()]);
        }
        std::string text;
        for (const auto& t : terms) {
            text += "C*" + t + " + ";
        }
        text += "C";
        const std::size_t p = terms.size() + 1;
        const std::size_t n = 60;
        Matrix X(n, 2);
        Eigen::MatrixXd A(n, p);
        Eigen::VectorXd b(n);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            X(i, 0) = u(rng);
            X(i, 1) = u(rng);
            const std::vector<double> x{X(i, 0), X(i, 1)};
            for (std::size_t j = 0; j < terms.size(); ++j) {
                A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    oracle::eval(parse(terms[j], 2, Grammar::Discovery), {}, x);
            }
            A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p - 1)) = 1.0;
            y[i] = u(rng);
            b(static_cast<Eigen::Index>(i)) = y[i];
        }
        const Eigen::VectorXd want = A.colPivHouseholderQr().solve(b);
        Rng fit_rng(static_cast<std::uint64_t>(trial));
        const auto got = fit_constants(parse(text, 2, Grammar::Discovery), X, y, ConstVector(p, 1.0), fit_rng);
        for (std::size_t j = 0; j < p; ++j) {
            worst = std::max(worst, std::fabs(got.constants[j] - want(static_cast<Eigen::Index>(j))));
        }
    }
    o.require(worst <= 1e-5, fmt::format("least-squares deviation {:.3g}", worst));
    if (o.pass) {
        o.detail = fmt::format("20 linear instances within {:.2g}", worst);
    }
    return o;
}

Outcome pareto_correctness()
{
    Outcome o;
    const double ninf = -std::numeric_limits<double>::infinity();
    std::mt19937_64 gen(31);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + gen() % 500;
        std::vector<std::size_t> cx;
        std::vector<double> sc;
        for (std::size_t i = 0; i < n; ++i) {
            cx.push_back(1 + gen() % 30);
            sc.push_back(gen() % 30 == 0 ? ninf : -static_cast<double>(gen() % 40) / 4.0);
        }
        o.require(pareto_indices(cx, sc) == oracle::brute_front(cx, sc),
                  fmt::format("equation front mismatch in trial {}", trial));
    }
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + gen() % 2000;
        std::vector<SystemCandidate> cands;
        std::vector<std::size_t> cx;
        std::vector<double> sc;
        for (std::size_t i = 0; i < n; ++i) {
            SystemCandidate c;
            c.total_complexity = 3 + gen() % 50;
            c.traj_fitness = gen() % 40 == 0 ? ninf : -static_cast<double>(gen() % 60) / 8.0;
            c.equations.push_back({Expr::variable(0), {}, static_cast<double>(i), 1});
            cx.push_back(c.total_complexity);
            sc.push_back(c.traj_fitness);
            cands.push_back(std::move(c));
        }
        const auto got = system_pareto(cands);
        const auto want = oracle::brute_front(cx, sc);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].equations[0].train_score == static_cast<double>(want[i]);
        }
        o.require(same, fmt::format("system front mismatch in trial {}", trial));
    }
    if (o.pass) {
        o.detail = "100 equation sets (n<=500) and 100 system sets (n<=2000) match";
    }
    return o;
}

SystemCandidate candidate(std::size_t cx, double t)
{
    SystemCandidate c;
    c.total_complexity = cx;
    c.traj_fitness = t;
    return c;
}

Outcome knee_selection()
{
    Outcome o;
    const std::vector<SystemCandidate> a{candidate(3, -10.0), candidate(5, -0.5), candidate(9, -0.4)};
    const std::vector<SystemCandidate> b{candidate(7, -2.0)};
    const std::vector<SystemCandidate> c{candidate(3, 0.0), candidate(5, 0.0)};
    o.require(&select_knee(a) == &a[1], "steep front should pick complexity 5");
    o.require(&select_knee(b) == &b[0], "single member");
    o.require(&select_knee(c) == &c[0], "perfect fit should pick complexity 3");
    if (o.pass) {
        o.detail = "picks 5, 7 and 3";
    }
    return o;
}

PromptContext reference_context()
{
    PromptContext ctx;
    ctx.dim = 3;
    ctx.k = 8;
    ctx.b = 3;
    ctx.examples = oracle::reference_examples;
    return ctx;
}

Outcome prompt_fidelity()
{
    Outcome o;
    const ChatPayload p = build_prompt(reference_context());
    o.require(p.user.content == oracle::reference_user_block, "user block differs");
    o.require(p.system.content == oracle::reference_system_message, "system message differs");
    o.require(p.system.role == "system" && p.user.role == "user", "roles");
    if (o.pass) {
        o.detail = "user block and system message byte-exact";
    }
    return o;
}

Outcome oracle_end_to_end()
{
    Outcome o;
    const auto start = Clock::now();
    SearchConfig cfg;
    cfg.n_iter = 3;
    cfg.threads = 1;
    cfg.seed = 1;

    std::vector<const BenchmarkSystem*> targets;
    for (const auto& s : registry()) {
        if (s.dim == 1) {
            targets.push_back(&s);
        }
    }
    targets.push_back(&registry_system("Harmonic oscillator"));

    std::size_t d1_found = 0;
    bool oscillator_found = false;
    std::string misses;
    for (const auto* sys : targets) {
        std::map<std::size_t, ScriptedProposer::Script> per_var;
        const auto eqs = sys->parsed_equations();
        for (std::size_t v = 0; v < eqs.size(); ++v) {
            per_var[v] = {{}, {}, {masked_truth(eqs[v])}};
        }
        ScriptedProposer proposer(per_var);
        const auto inst = make_instance(*sys);
        const auto found = discover(inst, cfg, proposer);
        const double err = evaluate_discovery(found.selected, inst).test_nmse;
        if (err < 1e-6) {
            if (sys->dim == 1) {
                ++d1_found;
            } else {
                oscillator_found = true;
            }
        } else {
            misses += fmt::format(" [{}: {:.2g}]", sys->name, err);
        }
    }
    const double secs = seconds_since(start);
    o.require(d1_found >= 5, fmt::format("{} one-dimensional systems recovered;{}", d1_found, misses));
    o.require(oscillator_found, "harmonic oscillator not recovered;" + misses);
    o.require(secs < 120.0, fmt::format("{:.1f} s", secs));
    if (o.pass) {
        o.detail = fmt::format("{}/{} D=1 systems and the oscillator below 1e-6 in {:.1f} s", d1_found,
                               targets.size() - 1, secs);
    }
    return o;
}

Outcome random_control()
{
    Outcome o;
    const auto inst = make_instance(registry_system("Population growth (naive)"));
    std::size_t hits = 0;
    std::string values;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SearchConfig cfg;
        cfg.n_iter = 200;
        cfg.n_islands = 4;
        cfg.seed = seed;
        RandomProposer proposer;
        const auto found = discover(inst, cfg, proposer);
        const double err = evaluate_discovery(found.selected, inst).test_nmse;
        hits += err < 1e-4 ? 1 : 0;
        values += fmt::format(" {:.2g}", err);
    }
    o.require(hits >= 3, fmt::format("{}/5 seeds below 1e-4:{}", hits, values));
    if (o.pass) {
        o.detail = fmt::format("{}/5 seeds below 1e-4:{}", hits, values);
    }
    return o;
}

Outcome determinism()
{
    Outcome o;
    BenchmarkConfig cfg;
    cfg.names = {"RC-circuit", "Harmonic oscillator", "Population growth (naive)", "Autocatalysis"};
    cfg.search.n_iter = 12;
    cfg.search.seed = 17;

    const std::map<std::string, std::string> truth{
        {"RC-circuit", "C - C*x_0"},
        {"Population growth (naive)", "C*x_0"},
        {"Autocatalysis", "C*x_0**2 + C*x_0"},
        {"Harmonic oscillator", "C*x_0 + C*x_1"},
    };
    const ProposerFactory scripted = [&](const BenchmarkSystem& sys) -> std::unique_ptr<Proposer> {
        return std::make_unique<ScriptedProposer>(
            ScriptedProposer::Script{{"C*x_0"}, {}, {truth.at(sys.name)}, {"x_0 + C"}});
    };

    int run = 0;
    for (const bool use_script : {false, true}) {
        cfg.factory = use_script ? scripted : ProposerFactory{};
        std::map<std::string, std::string> reference;
        for (const std::size_t workers : {1u, 1u, 2u, 4u}) {
            const auto dir = scratch("det" + std::to_string(run++));
            cfg.workers = workers;
            cfg.out_dir = dir;
            (void)run_benchmark(registry(), cfg);
            const auto got = artifacts(dir);
            std::filesystem::remove_all(dir);
            if (reference.empty()) {
                reference = got;
                o.require(got.size() == 8, fmt::format("{} artifacts", got.size()));
            }
            o.require(got == reference, fmt::format("{} artifacts differ at {} workers",
                                                    use_script ? "scripted" : "random", workers));
        }
    }
    if (o.pass) {
        o.detail = "random and scripted sweeps identical at 1, 1, 2 and 4 workers";
    }
    return o;
}

Outcome stub_round_trip()
{
    Outcome o;
    oracle::StubServer server(oracle::reference_reply);
    ChatOptions chat;
    chat.endpoint = server.endpoint();
    chat.model = "stub-model";
    chat.timeout = std::chrono::milliseconds(5000);
    chat.backoff = std::chrono::milliseconds(1);

    ChatProposer proposer(chat);
    Rng rng(0);
    const auto parsed = proposer.propose(reference_context(), {}, rng);
    o.require(parsed.size() == 3, fmt::format("{} parsed expressions", parsed.size()));

    const BenchmarkSystem* d3 = nullptr;
    for (const auto& s : registry()) {
        if (s.dim == 3 && !s.chaotic) {
            d3 = &s;
            break;
        }
    }
    BenchmarkConfig cfg;
    cfg.proposer.kind = ProposerConfig::Kind::Chat;
    cfg.proposer.chat = chat;
    cfg.search.n_iter = 2;
    cfg.search.n_islands = 2;
    const RunReport r = run_system(*d3, cfg);
    o.require(!r.error, "run failed: " + r.error.value_or(""));
    o.require(r.dim == 3 && r.equations.size() == 3, "selected system is not three-dimensional");
    o.require(r.proposer == "chat", "proposer kind " + r.proposer);
    o.require(r.proposals == 2 * 3 * 2 * cfg.search.b && r.transport_failures == 0,
              fmt::format("{} proposals, {} transport failures", r.proposals, r.transport_failures));
    o.require(r.telemetry.size() == 2 * 3 * 2, fmt::format("{} telemetry rows", r.telemetry.size()));
    o.require(r.equation_fronts.size() == 3 && !r.convergence.empty() && r.pool_size > 0, "report incomplete");
    o.require(std::isfinite(r.test_nmse), "test NMSE not finite");
    o.require(report_to_json(report_from_json(report_to_json(r))) == report_to_json(r), "report round trip");
    o.require(server.hits() == 1 + 2 * 3 * 2, fmt::format("{} requests served", server.hits()));
    if (o.pass) {
        o.detail = fmt::format("3 expressions parsed; {} run, test NMSE {:.3g}", d3->name, r.test_nmse);
    }
    return o;
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"registry integrity", registry_integrity},
        {"integrator accuracy", integrator},
        {"derivative kernel", derivative_kernel},
        {"constant fitting", constant_fitting},
        {"Pareto correctness", pareto_correctness},
        {"knee selection", knee_selection},
        {"prompt fidelity", prompt_fidelity},
        {"oracle end-to-end", oracle_end_to_end},
        {"uninformed GP control", random_control},
        {"determinism", determinism},
        {"stub-server round trip", stub_round_trip},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome out;
        const auto start = Clock::now();
        try {
            out = criteria[i].second();
        } catch (const std::exception& err) {
            out.pass = false;
            out.detail = std::string("exception: ") + err.what();
        }
        failures += out.pass ? 0 : 1;
        fmt::print("{} {:2} {}: {} ({:.1f} s)\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, out.detail,
                   seconds_since(start));
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
