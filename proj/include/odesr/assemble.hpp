#pragma once

#include <cstddef>
#include <vector>

#include "odesr/dataset.hpp"
#include "odesr/evolve.hpp"

namespace odesr {

struct SystemCandidate {
    std::vector<FittedEquation> equations; // one per state variable
    std::size_t total_complexity = 0;
    double traj_fitness = 0.0; // -MSE against the train trajectory, -inf on divergence
};

struct CartesianOptions {
    std::size_t cap_per_front = 10;
    std::size_t cap_total = 10000;
};

// Keeps at most cap members of a front sorted by complexity: the simplest,
// the best-scoring, then the highest-scoring of the rest. Order is preserved.
[[nodiscard]] std::vector<FittedEquation> truncate_front(const std::vector<FittedEquation>& front, std::size_t cap);

/// Cross product of the truncated fronts. When the product exceeds
/// cap_total, combinations are taken in order of increasing rank sum, where
/// a member's rank is its position by descending validation score.
[[nodiscard]] std::vector<SystemCandidate> cartesian_candidates(const std::vector<std::vector<FittedEquation>>& fronts,
                                                                const CartesianOptions& opts = {});

[[nodiscard]] std::vector<RhsTerm> to_rhs(const SystemCandidate& cand);

[[nodiscard]] double trajectory_fitness(const SystemCandidate& cand, const ProblemInstance& inst);

[[nodiscard]] std::vector<SystemCandidate> system_pareto(const std::vector<SystemCandidate>& cands);

/// Knee of a front sorted by complexity. Members whose error is within a
/// factor 1/h of the best are eligible; among eligible members past the
/// first, the one with the largest fitness gain per added complexity over
/// its predecessor wins. Without a positive gain the best-fitness member is
/// returned. Ties go to the lower complexity.
[[nodiscard]] const SystemCandidate& select_knee(const std::vector<SystemCandidate>& front, double h = 0.1);

struct SystemCheckpoint {
    std::size_t iteration = 0;
    SystemCandidate selected;
    std::size_t front_size = 0;
};

struct Discovery {
    SystemCandidate selected;
    std::vector<std::vector<FittedEquation>> fronts; // per variable, validation scores
    std::size_t pool_size = 0;
    std::size_t system_front_size = 0;
    std::vector<SymRegResult> searches;
    std::vector<SystemCheckpoint> checkpoints;
};

struct AssembleResult {
    SystemCandidate selected;
    std::size_t pool_size = 0;
    std::size_t front_size = 0;
};

// Fitness of every candidate, front, knee.
[[nodiscard]] AssembleResult assemble(const std::vector<std::vector<FittedEquation>>& fronts,
                                      const ProblemInstance& inst, const CartesianOptions& opts = {},
                                      std::size_t threads = 1);

/// Per-variable search followed by system assembly. Every equation
/// checkpoint is also assembled so callers can trace convergence.
[[nodiscard]] Discovery discover(const ProblemInstance& inst, const SearchConfig& cfg, Proposer& proposer,
                                 const CartesianOptions& opts = {});

// One line per state variable, "x_i' = <expression with constants inlined>".
[[nodiscard]] std::vector<std::string> render_system(const SystemCandidate& cand);

} // namespace odesr
