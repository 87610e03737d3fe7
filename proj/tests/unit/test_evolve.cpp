#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <doctest.h>
#include <fmt/format.h>

#include "odesr/dataset.hpp"
#include "odesr/evolve.hpp"
#include "oracles.hpp"

using namespace odesr;

namespace {

constexpr double ninf = -std::numeric_limits<double>::infinity();

FittedEquation member(double score, std::size_t cx = 3)
{
    return {Expr::variable(0), {}, score, cx};
}

Island island_of(std::initializer_list<double> scores)
{
    Island isl;
    for (double s : scores) {
        isl.members.push_back(member(s));
    }
    return isl;
}

const BenchmarkSystem& registry_system(std::string_view name)
{
    static const auto systems = load_registry(ODESR_REGISTRY);
    for (const auto& s : systems) {
        if (s.name == name) {
            return s;
        }
    }
    throw std::runtime_error("missing system");
}

const ProblemInstance& growth()
{
    static const auto inst = make_instance(registry_system("Population growth (naive)"));
    return inst;
}

std::string fingerprint(const std::vector<FittedEquation>& front)
{
    std::string out;
    for (const auto& f : front) {
        out += to_string(f.expr, f.constants) + "|" + std::to_string(f.complexity) + "|";
        out += fmt::format("{}\n", f.train_score);
    }
    return out;
}

} // namespace

TEST_CASE("score examples")
{
    Matrix X(2, 1, 0.0);
    const std::vector<double> y{1.0, 3.0};
    const ConstVector one{1.0};
    CHECK(score_equation(Expr::constant(0), one, X, y) == -2.0);
    const std::vector<double> same{1.0, 1.0};
    CHECK(score_equation(Expr::constant(0), one, X, same) == 0.0);
    CHECK(score_equation(parse("log(x_0)", 1, Grammar::Discovery), {}, X, y) == ninf);
}

TEST_CASE("fit_equation records complexity and score")
{
    const auto& inst = growth();
    const Matrix X = inst.train.states.slice_rows(0, 51);
    const auto dx = inst.train.derivs->column(0);
    const std::vector<double> y(dx.begin(), dx.begin() + 51);
    Rng rng(0);
    const auto f = fit_equation(parse("C*x_0", 1, Grammar::Discovery), {1.0}, X, y, rng);
    CHECK(f.complexity == 3);
    CHECK(f.train_score >= -1e-10);
    CHECK(f.train_score <= 0.0);
    CHECK(std::fabs(f.constants.at(0) - 0.23) <= 1e-6);
}

TEST_CASE("softmax selection of equal scores is fair")
{
    Rng rng(1);
    const int draws = 20000;
    Island tagged;
    tagged.members = {member(0.0, 3), member(0.0, 4)};
    std::size_t threes = 0;
    for (int i = 0; i < draws; ++i) {
        threes += softmax_select(tagged, 1, rng)[0].complexity == 3 ? 1 : 0;
    }
    const double p = static_cast<double>(threes) / draws;
    // Binomial standard error is about 0.0035.
    CHECK(std::fabs(p - 0.5) < 0.02);
}

TEST_CASE("softmax selection strongly prefers much better members")
{
    Island isl;
    isl.members = {member(-1000.0, 4), member(0.0, 3)};
    Rng rng(2);
    for (int i = 0; i < 5000; ++i) {
        CHECK(softmax_select(isl, 1, rng)[0].complexity == 3);
    }
}

TEST_CASE("softmax selection output contract")
{
    Rng rng(3);
    const Island big = island_of({-3.0, -1.0, ninf, -2.0, -0.5, std::nan(""), -7.0, -1.5, -4.0, -0.1});
    for (int i = 0; i < 200; ++i) {
        const auto pick = softmax_select(big, 8, rng);
        REQUIRE(pick.size() == 8);
        for (std::size_t j = 1; j < pick.size(); ++j) {
            const double a = std::isnan(pick[j - 1].train_score) ? ninf : pick[j - 1].train_score;
            const double b = std::isnan(pick[j].train_score) ? ninf : pick[j].train_score;
            CHECK(a <= b);
        }
    }

    // Without replacement: each member appears at most once.
    Island tagged;
    for (std::size_t c = 1; c <= 10; ++c) {
        tagged.members.push_back(member(-static_cast<double>(c), c));
    }
    for (int i = 0; i < 100; ++i) {
        std::map<std::size_t, int> seen;
        for (const auto& f : softmax_select(tagged, 10, rng)) {
            ++seen[f.complexity];
        }
        CHECK(seen.size() == 10);
    }

    // With replacement when the island is small.
    CHECK(softmax_select(island_of({-1.0, -2.0}), 8, rng).size() == 8);

    // All -inf: uniform, still k members.
    Island dead;
    dead.members = {member(ninf, 3), member(ninf, 4), member(ninf, 5)};
    std::map<std::size_t, int> counts;
    for (int i = 0; i < 3000; ++i) {
        ++counts[softmax_select(dead, 1, rng)[0].complexity];
    }
    CHECK(counts.size() == 3);
    for (const auto& [cx, n] : counts) {
        CHECK(std::abs(n - 1000) < 150);
    }

    // Fewer finite members than k: the rest are filled from -inf members.
    Island mixed;
    mixed.members = {member(-1.0, 3), member(ninf, 4), member(ninf, 5), member(ninf, 6)};
    const auto all = softmax_select(mixed, 4, rng);
    std::map<std::size_t, int> seen;
    for (const auto& f : all) {
        ++seen[f.complexity];
    }
    CHECK(seen.size() == 4);
    CHECK(all.back().complexity == 3);
}

TEST_CASE("softmax selection is invariant to shifting every score")
{
    Island base;
    Island shifted;
    const std::vector<double> scores{-1.0, -2.5, -0.5, -4.0, -0.25, -3.0};
    for (std::size_t i = 0; i < scores.size(); ++i) {
        base.members.push_back(member(scores[i], i + 1));
        shifted.members.push_back(member(scores[i] + 64.0, i + 1));
    }
    Rng a(10);
    Rng b(10);
    std::map<std::size_t, int> fa;
    std::map<std::size_t, int> fb;
    for (int i = 0; i < 5000; ++i) {
        for (const auto& f : softmax_select(base, 3, a)) {
            ++fa[f.complexity];
        }
        for (const auto& f : softmax_select(shifted, 3, b)) {
            ++fb[f.complexity];
        }
    }
    CHECK(fa == fb);
}

TEST_CASE("evolve_island appends fitted proposals")
{
    const auto& inst = growth();
    const Matrix X = inst.train.states.slice_rows(0, 51);
    const auto dx = inst.train.derivs->column(0);
    const std::vector<double> y(dx.begin(), dx.begin() + 51);
    SearchConfig cfg;
    Rng rng(0);

    Island isl;
    isl.members.push_back(fit_equation(parse("C + x_0", 1, Grammar::Discovery), {1.0}, X, y, rng));
    isl.members.push_back(fit_equation(parse("x_0**C", 1, Grammar::Discovery), {1.0}, X, y, rng));

    ScriptedProposer truth(ScriptedProposer::Script{{"C*x_0"}, {}, {"x_0", "C*x_0", "sin(x_0)"}});
    auto out = evolve_island(isl, X, y, cfg, truth, {0, 0, 1}, rng);
    CHECK(out.added == 1);
    REQUIRE(isl.members.size() == 3);
    CHECK(isl.members.back().train_score >= -1e-10);

    out = evolve_island(isl, X, y, cfg, truth, {0, 0, 2}, rng);
    CHECK(out.added == 0);
    CHECK(isl.members.size() == 3);

    out = evolve_island(isl, X, y, cfg, truth, {0, 0, 3}, rng);
    CHECK(out.added == 3);
    CHECK(isl.members.size() == 6);
}

TEST_CASE("evolve_island survives transport failures")
{
    struct Failing final : Proposer {
        std::string_view kind() const noexcept override { return "failing"; }
        std::vector<ParsedExpr> propose(const PromptContext&, const ProposalSite&, Rng&) override
        {
            throw TransportError("down");
        }
    } failing;
    Matrix X(3, 1, 1.0);
    const std::vector<double> y{1.0, 1.0, 1.0};
    Island isl = island_of({-1.0, -2.0});
    Rng rng(0);
    const auto out = evolve_island(isl, X, y, SearchConfig{}, failing, {}, rng);
    CHECK(out.transport_failed);
    CHECK(isl.members.size() == 2);
}

TEST_CASE("refine arithmetic")
{
    std::vector<Island> islands(2);
    for (std::size_t i = 0; i < 2; ++i) {
        islands[i].id = i;
        for (int j = 0; j < 10; ++j) {
            islands[i].members.push_back(member(-static_cast<double>(j) - 0.5 * static_cast<double>(i)));
        }
    }
    Rng rng(0);
    refine(islands, 2, rng);
    CHECK(islands[0].members.size() == 6);
    CHECK(islands[1].members.size() == 6);
    CHECK(islands[0].members.front().train_score == 0.0);
    CHECK(islands[1].members.front().train_score >= -0.5);

    std::vector<Island> dead(2);
    dead[0].members = {member(ninf), member(ninf), member(ninf)};
    dead[1].members = {member(ninf)};
    refine(dead, 0, rng);
    CHECK(dead[0].members.size() == 2);
    CHECK(dead[1].members.size() == 1);
}

TEST_CASE("refine keeps every island's best and the sizes follow the contract")
{
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-10.0, 0.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 4);
        std::vector<Island> islands(n);
        double global_best = ninf;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t size = 1 + gen() % 12;
            for (std::size_t j = 0; j < size; ++j) {
                islands[i].members.push_back(member(u(gen)));
                global_best = std::max(global_best, islands[i].members.back().train_score);
            }
        }
        std::vector<double> own_best(n, ninf);
        for (std::size_t i = 0; i < n; ++i) {
            for (const auto& f : islands[i].members) {
                own_best[i] = std::max(own_best[i], f.train_score);
            }
        }
        std::size_t total_before = 0;
        for (const auto& isl : islands) {
            total_before += isl.members.size();
        }
        Rng rng(static_cast<std::uint64_t>(trial));
        refine(islands, 2, rng);
        double after_best = ninf;
        for (std::size_t i = 0; i < n; ++i) {
            double best = ninf;
            for (const auto& f : islands[i].members) {
                best = std::max(best, f.train_score);
            }
            CHECK(best >= own_best[i]);
            after_best = std::max(after_best, best);
            for (std::size_t j = 1; j < islands[i].members.size(); ++j) {
                CHECK(islands[i].members[j - 1].train_score >= islands[i].members[j].train_score);
            }
        }
        CHECK(after_best == global_best);
        std::size_t total_after = 0;
        for (const auto& isl : islands) {
            total_after += isl.members.size();
        }
        // Migration adds min(n_mix, size) per island; pruning keeps about half.
        CHECK(total_after <= total_before + 2 * n);
    }
}

TEST_CASE("Pareto examples")
{
    const std::vector<std::size_t> cx{3, 5, 4};
    const std::vector<double> sc{-1.0, -0.1, -2.0};
    CHECK(pareto_indices(cx, sc) == std::vector<std::size_t>{0, 1});

    const std::vector<std::size_t> one{7};
    const std::vector<double> s1{-3.0};
    CHECK(pareto_indices(one, s1) == std::vector<std::size_t>{0});

    const std::vector<std::size_t> tie{4, 4};
    const std::vector<double> st{-2.0, -1.0};
    CHECK(pareto_indices(tie, st) == std::vector<std::size_t>{1});

    const std::vector<std::size_t> dead{5, 3, 4};
    const std::vector<double> sd{ninf, ninf, std::nan("")};
    CHECK(pareto_indices(dead, sd) == std::vector<std::size_t>{1});
}

TEST_CASE("Pareto front equals the brute-force oracle")
{
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + gen() % 500;
        const std::size_t cx_range = 1 + gen() % 30;
        const std::size_t sc_levels = 1 + gen() % 40;
        std::vector<std::size_t> cx(n);
        std::vector<double> sc(n);
        for (std::size_t i = 0; i < n; ++i) {
            cx[i] = 1 + gen() % cx_range;
            const auto r = gen() % 50;
            if (r == 0) {
                sc[i] = ninf;
            } else if (r == 1) {
                sc[i] = std::nan("");
            } else {
                sc[i] = -static_cast<double>(gen() % sc_levels) * 0.25;
            }
        }
        CHECK(pareto_indices(cx, sc) == oracle::brute_front(cx, sc));
    }
}

TEST_CASE("equation_pareto rescoring on validation data")
{
    Matrix X(5, 1);
    std::vector<double> y(5);
    for (std::size_t i = 0; i < 5; ++i) {
        X(i, 0) = 1.0 + static_cast<double>(i);
        y[i] = 2.0 * X(i, 0);
    }
    std::vector<FittedEquation> members{
        {parse("C*x_0", 1, Grammar::Discovery), {2.0}, -99.0, 3},
        {parse("x_0 + x_0", 1, Grammar::Discovery), {}, -99.0, 3},
        {parse("C*x_0 + C", 1, Grammar::Discovery), {2.0, 0.0}, 0.0, 5},
        {Expr::variable(0), {}, 0.0, 1},
        {parse("log(x_0 - C)", 1, Grammar::Discovery), {10.0}, 0.0, 4},
    };
    const auto front = equation_pareto(members, X, y);
    REQUIRE(front.size() == 2);
    CHECK(front[0].complexity == 1);
    CHECK(front[0].train_score == doctest::Approx(-11.0));
    CHECK(front[1].complexity == 3);
    CHECK(to_masked_string(front[1].expr) == "C*x_0");
    CHECK(front[1].train_score == 0.0);

    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<FittedEquation> pool;
        std::vector<std::size_t> cx;
        std::vector<double> sc;
        Rng rng(static_cast<std::uint64_t>(trial));
        const std::size_t n = 1 + gen() % 60;
        for (std::size_t i = 0; i < n; ++i) {
            Expr e = renumber_constants(random_subtree(rng, 1, 4));
            ConstVector c(constant_count(e));
            for (auto& v : c) {
                v = static_cast<double>(gen() % 5) - 2.0;
            }
            pool.push_back({e, c, 0.0, complexity(e)});
            cx.push_back(complexity(e));
            sc.push_back(score_equation(e, c, X, y));
        }
        const auto got = equation_pareto(pool, X, y);
        const auto want = oracle::brute_front(cx, sc);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(structurally_equal(got[i].expr, pool[want[i]].expr));
        }
    }
}

TEST_CASE("search with no iterations returns the seeds' front")
{
    SearchConfig cfg;
    cfg.n_iter = 0;
    cfg.seed = 4;
    RandomProposer p;
    const auto r = llm_symreg(growth(), 0, cfg, p);
    CHECK(r.telemetry.empty());
    REQUIRE(r.checkpoints.size() == 1);
    CHECK(r.checkpoints[0].iteration == 0);
    CHECK_FALSE(r.front.empty());
    for (const auto& f : r.front) {
        CHECK(f.complexity == 3);
    }
    CHECK(r.proposals == 0);
}

TEST_CASE("search finds the ground truth when the proposer offers it")
{
    SearchConfig cfg;
    cfg.n_iter = 6;
    cfg.seed = 1;
    ScriptedProposer truth(ScriptedProposer::Script{{}, {}, {"C*x_0"}});
    const auto r = llm_symreg(growth(), 0, cfg, truth);
    bool found = false;
    for (const auto& f : r.front) {
        found = found || f.train_score >= -1e-8;
    }
    CHECK(found);
    CHECK(r.telemetry.size() == cfg.n_iter * cfg.n_islands);
    for (std::size_t isl = 0; isl < cfg.n_islands; ++isl) {
        std::size_t n = 0;
        for (const auto& row : r.telemetry) {
            n += row.island == isl ? 1 : 0;
        }
        CHECK(n == cfg.n_iter);
    }
    CHECK(r.proposals == cfg.n_islands);
}

TEST_CASE("best score per island never drops between refinements")
{
    SearchConfig cfg;
    cfg.n_iter = 30;
    cfg.seed = 8;
    RandomProposer p;
    const auto r = llm_symreg(growth(), 0, cfg, p);
    std::map<std::size_t, double> last;
    for (const auto& row : r.telemetry) {
        if (last.count(row.island)) {
            if (row.iteration % cfg.n_refine != 0) {
                CHECK(row.best_score >= last[row.island]);
            }
        }
        last[row.island] = row.best_score;
    }
    // The pooled best never drops.
    double prev = ninf;
    for (std::size_t it = 1; it <= cfg.n_iter; ++it) {
        double best = ninf;
        for (const auto& row : r.telemetry) {
            if (row.iteration == it) {
                best = std::max(best, row.best_score);
            }
        }
        CHECK(best >= prev);
        prev = best;
    }
}

TEST_CASE("search is deterministic across runs and thread counts")
{
    const auto& inst = make_instance(registry_system("Harmonic oscillator"));
    SearchConfig cfg;
    cfg.n_iter = 15;
    cfg.seed = 2;
    std::string reference;
    for (std::size_t threads : {1u, 1u, 2u, 4u}) {
        cfg.threads = threads;
        RandomProposer p;
        const auto r = llm_symreg(inst, 1, cfg, p);
        std::string fp = fingerprint(r.front);
        for (const auto& row : r.telemetry) {
            fp += fmt::format("{} {} {} {}\n", row.iteration, row.island, row.best_score, row.pareto_size);
        }
        if (reference.empty()) {
            reference = fp;
        }
        CHECK(fp == reference);
    }

    ScriptedProposer::Script script{{"C*x_0"}, {"C*x_1", "x_0"}, {"C*x_0 + C*x_1"}};
    std::string scripted_reference;
    for (std::size_t threads : {1u, 3u}) {
        cfg.threads = threads;
        ScriptedProposer p(script);
        const auto fp = fingerprint(llm_symreg(inst, 1, cfg, p).front);
        if (scripted_reference.empty()) {
            scripted_reference = fp;
        }
        CHECK(fp == scripted_reference);
    }
}

TEST_CASE("checkpoints follow the configured cadence")
{
    SearchConfig cfg;
    cfg.n_iter = 25;
    cfg.checkpoint_every = 10;
    RandomProposer p;
    const auto r = llm_symreg(growth(), 0, cfg, p);
    std::vector<std::size_t> its;
    for (const auto& c : r.checkpoints) {
        its.push_back(c.iteration);
    }
    CHECK(its == std::vector<std::size_t>{0, 10, 20, 25});
    CHECK(fingerprint(r.front) == fingerprint(r.checkpoints.back().front));
}
