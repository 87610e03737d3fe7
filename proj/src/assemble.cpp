#include "odesr/assemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>

namespace odesr {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double sanitize(double s)
{
    return std::isnan(s) ? neg_inf : s;
}

// Positions of `front` ordered by descending score, ties to the earlier member.
std::vector<std::size_t> by_score(const std::vector<FittedEquation>& front)
{
    std::vector<std::size_t> order(front.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sanitize(front[a].train_score) > sanitize(front[b].train_score);
    });
    return order;
}

SystemCandidate combine(const std::vector<std::vector<FittedEquation>>& fronts, const std::vector<std::size_t>& pick)
{
    SystemCandidate c;
    for (std::size_t v = 0; v < fronts.size(); ++v) {
        c.equations.push_back(fronts[v][pick[v]]);
        c.total_complexity += fronts[v][pick[v]].complexity;
    }
    return c;
}

// Appends every rank tuple with the given sum, lexicographically, until `limit` tuples exist.
void tuples_with_sum(const std::vector<std::size_t>& sizes, std::size_t v, std::size_t remaining,
                     std::vector<std::size_t>& cur, std::vector<std::vector<std::size_t>>& out, std::size_t limit)
{
    if (out.size() >= limit) {
        return;
    }
    if (v + 1 == sizes.size()) {
        if (remaining < sizes[v]) {
            cur[v] = remaining;
            out.push_back(cur);
        }
        return;
    }
    std::size_t tail_max = 0;
    for (std::size_t u = v + 1; u < sizes.size(); ++u) {
        tail_max += sizes[u] - 1;
    }
    for (std::size_t r = 0; r < sizes[v] && r <= remaining; ++r) {
        if (remaining - r > tail_max) {
            continue;
        }
        cur[v] = r;
        tuples_with_sum(sizes, v + 1, remaining - r, cur, out, limit);
        if (out.size() >= limit) {
            return;
        }
    }
}

std::string fitness_key(const SystemCandidate& cand)
{
    std::string key;
    for (const auto& eq : cand.equations) {
        key += to_string(eq.expr, eq.constants);
        key += '\n';
    }
    return key;
}

using FitnessCache = std::unordered_map<std::string, double>;

AssembleResult assemble_cached(const std::vector<std::vector<FittedEquation>>& fronts, const ProblemInstance& inst,
                               const CartesianOptions& opts, std::size_t threads, FitnessCache* cache)
{
    auto cands = cartesian_candidates(fronts, opts);
    std::vector<std::size_t> todo;
    std::vector<std::string> keys(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (cache != nullptr) {
            keys[i] = fitness_key(cands[i]);
            if (const auto it = cache->find(keys[i]); it != cache->end()) {
                cands[i].traj_fitness = it->second;
                continue;
            }
        }
        todo.push_back(i);
    }

    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(todo.size(), 1));
    auto run = [&](std::size_t w) {
        for (std::size_t j = w; j < todo.size(); j += workers) {
            cands[todo[j]].traj_fitness = trajectory_fitness(cands[todo[j]], inst);
        }
    };
    if (workers <= 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(run, w);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (cache != nullptr) {
        for (std::size_t i : todo) {
            cache->emplace(keys[i], cands[i].traj_fitness);
        }
    }

    AssembleResult out;
    out.pool_size = cands.size();
    const auto front = system_pareto(cands);
    out.front_size = front.size();
    out.selected = select_knee(front);
    return out;
}

} // namespace

std::vector<FittedEquation> truncate_front(const std::vector<FittedEquation>& front, std::size_t cap)
{
    if (front.size() <= cap) {
        return front;
    }
    const auto order = by_score(front);
    std::vector<bool> keep(front.size(), false);
    std::size_t kept = 0;
    auto take = [&](std::size_t i) {
        if (!keep[i] && kept < cap) {
            keep[i] = true;
            ++kept;
        }
    };
    take(0);
    for (std::size_t i : order) {
        take(i);
    }
    std::vector<FittedEquation> out;
    for (std::size_t i = 0; i < front.size(); ++i) {
        if (keep[i]) {
            out.push_back(front[i]);
        }
    }
    return out;
}

std::vector<SystemCandidate> cartesian_candidates(const std::vector<std::vector<FittedEquation>>& fronts,
                                                  const CartesianOptions& opts)
{
    std::vector<std::vector<FittedEquation>> cut;
    std::vector<std::size_t> sizes;
    double product = 1.0;
    for (const auto& f : fronts) {
        if (f.empty()) {
            return {};
        }
        cut.push_back(truncate_front(f, std::max<std::size_t>(opts.cap_per_front, 1)));
        sizes.push_back(cut.back().size());
        product *= static_cast<double>(sizes.back());
    }
    std::vector<SystemCandidate> out;
    if (cut.empty()) {
        return out;
    }

    if (product <= static_cast<double>(opts.cap_total)) {
        std::vector<std::size_t> pick(cut.size(), 0);
        while (true) {
            out.push_back(combine(cut, pick));
            std::size_t v = cut.size();
            while (v > 0) {
                --v;
                if (++pick[v] < sizes[v]) {
                    break;
                }
                pick[v] = 0;
                if (v == 0) {
                    return out;
                }
            }
        }
    }

    std::vector<std::vector<std::size_t>> ranks;
    for (const auto& f : cut) {
        ranks.push_back(by_score(f));
    }
    std::size_t max_sum = 0;
    for (std::size_t s : sizes) {
        max_sum += s - 1;
    }
    std::vector<std::vector<std::size_t>> tuples;
    std::vector<std::size_t> cur(cut.size(), 0);
    for (std::size_t s = 0; s <= max_sum && tuples.size() < opts.cap_total; ++s) {
        tuples_with_sum(sizes, 0, s, cur, tuples, opts.cap_total);
    }
    for (const auto& t : tuples) {
        std::vector<std::size_t> pick(t.size());
        for (std::size_t v = 0; v < t.size(); ++v) {
            pick[v] = ranks[v][t[v]];
        }
        out.push_back(combine(cut, pick));
    }
    return out;
}

std::vector<RhsTerm> to_rhs(const SystemCandidate& cand)
{
    std::vector<RhsTerm> rhs;
    for (const auto& eq : cand.equations) {
        rhs.push_back({eq.expr, eq.constants});
    }
    return rhs;
}

double trajectory_fitness(const SystemCandidate& cand, const ProblemInstance& inst)
{
    const auto& obs = inst.train;
    const double dt = uniform_step(obs.times);
    const auto result =
        integrate(to_rhs(cand), inst.system.train_iv, obs.times.back(), dt, inst.system.integrate_options());
    const auto* traj = std::get_if<TrajectoryData>(&result);
    if (traj == nullptr || traj->samples() != obs.samples()) {
        return neg_inf;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < obs.samples(); ++i) {
        for (std::size_t d = 0; d < obs.dim(); ++d) {
            const double r = traj->states(i, d) - obs.states(i, d);
            acc += r * r;
        }
    }
    const double mse = acc / static_cast<double>(obs.samples() * obs.dim());
    return std::isfinite(mse) ? -mse : neg_inf;
}

std::vector<SystemCandidate> system_pareto(const std::vector<SystemCandidate>& cands)
{
    std::vector<std::size_t> cx;
    std::vector<double> sc;
    for (const auto& c : cands) {
        cx.push_back(c.total_complexity);
        sc.push_back(c.traj_fitness);
    }
    std::vector<SystemCandidate> out;
    for (std::size_t i : pareto_indices(cx, sc)) {
        out.push_back(cands[i]);
    }
    return out;
}

const SystemCandidate& select_knee(const std::vector<SystemCandidate>& front, double h)
{
    if (front.empty()) {
        throw std::invalid_argument("select_knee: empty front");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < front.size(); ++i) {
        if (sanitize(front[i].traj_fitness) > sanitize(front[best].traj_fitness)) {
            best = i;
        }
    }
    const double t_best = sanitize(front[best].traj_fitness);
    if (front.size() == 1 || t_best == neg_inf) {
        return front[best];
    }

    const double limit = -t_best / h; // largest admissible error
    std::size_t knee = front.size();
    double knee_gain = 0.0;
    for (std::size_t i = 1; i < front.size(); ++i) {
        const double t = sanitize(front[i].traj_fitness);
        if (!(-t <= limit)) {
            continue;
        }
        if (front[i].total_complexity <= front[i - 1].total_complexity) {
            continue;
        }
        const double prev = sanitize(front[i - 1].traj_fitness);
        const double dc = static_cast<double>(front[i].total_complexity - front[i - 1].total_complexity);
        const double gain = prev == neg_inf ? std::numeric_limits<double>::infinity() : (t - prev) / dc;
        if (gain > knee_gain) {
            knee = i;
            knee_gain = gain;
        }
    }
    return knee < front.size() ? front[knee] : front[best];
}

AssembleResult assemble(const std::vector<std::vector<FittedEquation>>& fronts, const ProblemInstance& inst,
                        const CartesianOptions& opts, std::size_t threads)
{
    return assemble_cached(fronts, inst, opts, threads, nullptr);
}

Discovery discover(const ProblemInstance& inst, const SearchConfig& cfg, Proposer& proposer,
                   const CartesianOptions& opts)
{
    Discovery out;
    const std::size_t dim = inst.system.dim;
    for (std::size_t v = 0; v < dim; ++v) {
        out.searches.push_back(llm_symreg(inst, v, cfg, proposer));
        out.fronts.push_back(out.searches.back().front);
    }

    FitnessCache cache;
    const std::size_t n_checkpoints = out.searches.front().checkpoints.size();
    for (std::size_t c = 0; c < n_checkpoints; ++c) {
        std::vector<std::vector<FittedEquation>> fronts;
        for (const auto& s : out.searches) {
            fronts.push_back(s.checkpoints[c].front);
        }
        auto r = assemble_cached(fronts, inst, opts, cfg.threads, &cache);
        out.checkpoints.push_back({out.searches.front().checkpoints[c].iteration, r.selected, r.front_size});
        if (c + 1 == n_checkpoints) {
            out.selected = std::move(r.selected);
            out.pool_size = r.pool_size;
            out.system_front_size = r.front_size;
        }
    }
    return out;
}

std::vector<std::string> render_system(const SystemCandidate& cand)
{
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < cand.equations.size(); ++i) {
        lines.push_back(fmt::format("x_{}' = {}", i, to_string(cand.equations[i].expr, cand.equations[i].constants)));
    }
    return lines;
}

} // namespace odesr
