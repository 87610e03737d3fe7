#include "odesr/evolve.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

namespace odesr {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double sanitize(double s)
{
    return std::isnan(s) ? neg_inf : s;
}

Rng stream(std::uint64_t seed, std::size_t var, std::uint64_t lane)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(var), static_cast<std::uint32_t>(lane),
                      static_cast<std::uint32_t>(lane >> 32)};
    return Rng(seq);
}

constexpr std::uint64_t refine_lane = 0xFFFF'FFFFull;

} // namespace

double score_equation(const Expr& e, std::span<const double> c, const Matrix& X, std::span<const double> y)
{
    const double mse = mse_objective(e, c, X, y);
    return std::isfinite(mse) ? -mse : neg_inf;
}

FittedEquation fit_equation(const Expr& e, const ConstVector& init, const Matrix& X, std::span<const double> y,
                            Rng& rng, const FitOptions& opts)
{
    FitResult r = fit_constants(e, X, y, init, rng, opts);
    const double score = std::isfinite(r.mse) ? -r.mse : neg_inf;
    return {e, std::move(r.constants), score, complexity(e)};
}

std::vector<FittedEquation> softmax_select(const Island& island, std::size_t k, Rng& rng)
{
    const auto& m = island.members;
    const std::size_t n = m.size();
    std::vector<FittedEquation> out;
    if (n == 0 || k == 0) {
        return out;
    }

    double top = neg_inf;
    for (const auto& f : m) {
        top = std::max(top, sanitize(f.train_score));
    }
    std::vector<double> weights(n, 1.0);
    if (top != neg_inf) {
        for (std::size_t i = 0; i < n; ++i) {
            const double s = sanitize(m[i].train_score);
            weights[i] = s == neg_inf ? 0.0 : std::exp(s - top);
        }
    }

    auto draw = [&](const std::vector<double>& w, const std::vector<bool>& taken) {
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        if (total > 0.0) {
            return std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
        }
        // Only zero-weight members remain: fall back to uniform over them.
        std::vector<double> uniform(n);
        for (std::size_t i = 0; i < n; ++i) {
            uniform[i] = taken[i] ? 0.0 : 1.0;
        }
        return std::discrete_distribution<std::size_t>(uniform.begin(), uniform.end())(rng);
    };

    std::vector<bool> taken(n, false);
    if (n < k) {
        for (std::size_t d = 0; d < k; ++d) {
            out.push_back(m[draw(weights, taken)]);
        }
    } else {
        std::vector<double> w = weights;
        for (std::size_t d = 0; d < k; ++d) {
            const std::size_t i = draw(w, taken);
            taken[i] = true;
            w[i] = 0.0;
            out.push_back(m[i]);
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const FittedEquation& a, const FittedEquation& b) {
        return sanitize(a.train_score) < sanitize(b.train_score);
    });
    return out;
}

EvolveOutcome evolve_island(Island& island, const Matrix& X_fit, std::span<const double> y_fit,
                            const SearchConfig& cfg, Proposer& proposer, const ProposalSite& site, Rng& rng)
{
    EvolveOutcome outcome;
    PromptContext ctx;
    ctx.dim = X_fit.cols();
    ctx.k = cfg.k;
    ctx.b = cfg.b;
    for (const auto& f : softmax_select(island, cfg.k, rng)) {
        ctx.examples.push_back(to_masked_string(f.expr));
    }

    std::vector<ParsedExpr> proposals;
    try {
        proposals = proposer.propose(ctx, site, rng);
    } catch (const TransportError&) {
        outcome.transport_failed = true;
        return outcome;
    }
    outcome.proposed = proposals.size();
    for (const auto& p : proposals) {
        island.members.push_back(fit_equation(p.expr, p.init, X_fit, y_fit, rng, cfg.fit));
        ++outcome.added;
    }
    return outcome;
}

void refine(std::vector<Island>& islands, std::size_t n_mix, Rng& rng)
{
    const std::size_t n = islands.size();
    if (n >= 2 && n_mix > 0) {
        std::vector<std::vector<FittedEquation>> snapshot;
        snapshot.reserve(n);
        for (const auto& isl : islands) {
            snapshot.push_back(isl.members);
        }
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> idx(snapshot[i].size());
            std::iota(idx.begin(), idx.end(), 0);
            std::vector<std::size_t> chosen;
            std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), n_mix, rng);
            std::size_t target = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
            if (target >= i) {
                ++target;
            }
            for (std::size_t c : chosen) {
                islands[target].members.push_back(snapshot[i][c]);
            }
        }
    }
    for (auto& isl : islands) {
        auto& m = isl.members;
        const std::size_t keep = std::max((m.size() + 1) / 2, std::min<std::size_t>(2, m.size()));
        std::stable_sort(m.begin(), m.end(), [](const FittedEquation& a, const FittedEquation& b) {
            return sanitize(a.train_score) > sanitize(b.train_score);
        });
        m.erase(m.begin() + static_cast<std::ptrdiff_t>(keep), m.end());
    }
}

std::vector<std::size_t> pareto_indices(std::span<const std::size_t> complexity, std::span<const double> score)
{
    std::vector<std::size_t> order(complexity.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (complexity[a] != complexity[b]) {
            return complexity[a] < complexity[b];
        }
        const double sa = sanitize(score[a]);
        const double sb = sanitize(score[b]);
        if (sa != sb) {
            return sa > sb;
        }
        return a < b;
    });

    std::vector<std::size_t> front;
    bool have_best = false;
    double best = neg_inf;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const std::size_t i = order[pos];
        if (pos > 0 && complexity[order[pos - 1]] == complexity[i]) {
            continue;
        }
        const double s = sanitize(score[i]);
        if (!have_best || s > best) {
            front.push_back(i);
            best = s;
            have_best = true;
        }
    }
    return front;
}

std::vector<FittedEquation> equation_pareto(const std::vector<FittedEquation>& members, const Matrix& X_val,
                                            std::span<const double> y_val)
{
    std::vector<std::size_t> cx(members.size());
    std::vector<double> sc(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
        cx[i] = members[i].complexity;
        sc[i] = score_equation(members[i].expr, members[i].constants, X_val, y_val);
    }
    std::vector<FittedEquation> front;
    for (std::size_t i : pareto_indices(cx, sc)) {
        FittedEquation f = members[i];
        f.train_score = sc[i];
        front.push_back(std::move(f));
    }
    return front;
}

namespace {

std::size_t train_front_size(const Island& island)
{
    std::vector<std::size_t> cx;
    std::vector<double> sc;
    for (const auto& f : island.members) {
        cx.push_back(f.complexity);
        sc.push_back(f.train_score);
    }
    return pareto_indices(cx, sc).size();
}

double best_score(const Island& island)
{
    double best = neg_inf;
    for (const auto& f : island.members) {
        best = std::max(best, sanitize(f.train_score));
    }
    return best;
}

} // namespace

SymRegResult llm_symreg(const ProblemInstance& inst, std::size_t var, const SearchConfig& cfg, Proposer& proposer)
{
    const Matrix& states = inst.train.states;
    if (!inst.train.derivs) {
        throw std::invalid_argument("llm_symreg: training trajectory has no derivative estimates");
    }
    const std::vector<double> dx = inst.train.derivs->column(var);
    const Matrix X_fit = states.slice_rows(inst.fit_rows.begin, inst.fit_rows.end);
    const std::vector<double> y_fit(dx.begin() + static_cast<std::ptrdiff_t>(inst.fit_rows.begin),
                                    dx.begin() + static_cast<std::ptrdiff_t>(inst.fit_rows.end));
    const Matrix X_val = states.slice_rows(inst.select_rows.begin, inst.select_rows.end);
    const std::vector<double> y_val(dx.begin() + static_cast<std::ptrdiff_t>(inst.select_rows.begin),
                                    dx.begin() + static_cast<std::ptrdiff_t>(inst.select_rows.end));
    const std::size_t dim = states.cols();

    std::vector<Island> islands(cfg.n_islands);
    std::vector<Rng> rngs;
    for (std::size_t i = 0; i < cfg.n_islands; ++i) {
        islands[i].id = i;
        rngs.push_back(stream(cfg.seed, var, i));
        for (std::size_t s = 0; s < cfg.seeds_per_island; ++s) {
            const Expr e = random_seed_expr(rngs[i], dim);
            islands[i].members.push_back(
                fit_equation(e, ConstVector(constant_count(e), 1.0), X_fit, y_fit, rngs[i], cfg.fit));
        }
    }
    Rng refine_rng = stream(cfg.seed, var, refine_lane);

    SymRegResult result;
    auto pooled_front = [&] {
        std::vector<FittedEquation> pool;
        for (const auto& isl : islands) {
            pool.insert(pool.end(), isl.members.begin(), isl.members.end());
        }
        return equation_pareto(pool, X_val, y_val);
    };
    result.checkpoints.push_back({0, pooled_front()});

    std::vector<EvolveOutcome> outcomes(cfg.n_islands);
    for (std::size_t it = 1; it <= cfg.n_iter; ++it) {
        auto step = [&](std::size_t i) {
            outcomes[i] = evolve_island(islands[i], X_fit, y_fit, cfg, proposer, {var, i, it}, rngs[i]);
        };
        const std::size_t workers = std::min(std::max<std::size_t>(cfg.threads, 1), cfg.n_islands);
        if (workers <= 1) {
            for (std::size_t i = 0; i < cfg.n_islands; ++i) {
                step(i);
            }
        } else {
            std::vector<std::exception_ptr> errors(workers);
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t i = w; i < cfg.n_islands; i += workers) {
                            step(i);
                        }
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
            for (auto& t : pool) {
                t.join();
            }
            for (const auto& err : errors) {
                if (err) {
                    std::rethrow_exception(err);
                }
            }
        }
        for (const auto& o : outcomes) {
            result.proposals += o.proposed;
            result.transport_failures += o.transport_failed ? 1 : 0;
        }

        if (cfg.n_refine > 0 && it % cfg.n_refine == 0 && cfg.n_islands >= 2) {
            refine(islands, cfg.n_mix, refine_rng);
        }
        for (const auto& isl : islands) {
            result.telemetry.push_back({it, isl.id, best_score(isl), train_front_size(isl)});
        }
        if ((cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) || it == cfg.n_iter) {
            result.checkpoints.push_back({it, pooled_front()});
        }
    }
    result.front = result.checkpoints.back().front;
    return result;
}

} // namespace odesr
