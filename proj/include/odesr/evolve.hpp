#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "odesr/dataset.hpp"
#include "odesr/expr.hpp"
#include "odesr/numeric.hpp"
#include "odesr/proposer.hpp"

namespace odesr {

struct FittedEquation {
    Expr expr;
    ConstVector constants;
    double train_score = 0.0; // -MSE on the fit rows, -inf on NaN
    std::size_t complexity = 0;
};

struct Island {
    std::size_t id = 0;
    std::vector<FittedEquation> members;
};

struct SearchConfig {
    std::size_t n_islands = 4;
    std::size_t n_iter = 200;
    std::size_t k = 8;
    std::size_t b = 3;
    std::size_t n_refine = 5;
    std::size_t n_mix = 2;
    std::size_t seeds_per_island = 2;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 10;
    FitOptions fit;
};

// -MSE of e(c, X) against y; -inf when any prediction is NaN.
[[nodiscard]] double score_equation(const Expr& e, std::span<const double> c, const Matrix& X,
                                    std::span<const double> y);

[[nodiscard]] FittedEquation fit_equation(const Expr& e, const ConstVector& init, const Matrix& X,
                                          std::span<const double> y, Rng& rng, const FitOptions& opts = {});

/// Draws k members with probability proportional to exp(score - max score),
/// without replacement when the island holds at least k members. Members
/// scoring -inf are never drawn unless every member does. Sorted worst first.
[[nodiscard]] std::vector<FittedEquation> softmax_select(const Island& island, std::size_t k, Rng& rng);

struct EvolveOutcome {
    std::size_t proposed = 0;
    std::size_t added = 0;
    bool transport_failed = false;
};

// One evolution step: select, prompt, propose, fit, append.
EvolveOutcome evolve_island(Island& island, const Matrix& X_fit, std::span<const double> y_fit,
                            const SearchConfig& cfg, Proposer& proposer, const ProposalSite& site, Rng& rng);

// Copies n_mix random members of every island into another random island,
// then keeps the best half of each (at least two members).
void refine(std::vector<Island>& islands, std::size_t n_mix, Rng& rng);

/// Indices of the non-dominated points under (complexity minimized, score
/// maximized), sorted by complexity. j dominates i when it is no more
/// complex and scores at least as well, and is strictly better in one of
/// the two; exact duplicates keep the lowest index. NaN scores count as -inf.
[[nodiscard]] std::vector<std::size_t> pareto_indices(std::span<const std::size_t> complexity,
                                                      std::span<const double> score);

// Re-scores every member on (X_val, y_val) and returns the front with
// train_score replaced by the validation score.
[[nodiscard]] std::vector<FittedEquation> equation_pareto(const std::vector<FittedEquation>& members,
                                                          const Matrix& X_val, std::span<const double> y_val);

struct TelemetryRow {
    std::size_t iteration = 0; // 1-based
    std::size_t island = 0;
    double best_score = 0.0;
    std::size_t pareto_size = 0; // on training scores
};

struct EquationCheckpoint {
    std::size_t iteration = 0; // 0 for the seeds
    std::vector<FittedEquation> front;
};

struct SymRegResult {
    std::vector<FittedEquation> front; // validation front of the pooled islands
    std::vector<TelemetryRow> telemetry;
    std::vector<EquationCheckpoint> checkpoints; // ascending; the last is the final front
    std::size_t proposals = 0;
    std::size_t transport_failures = 0;
};

/// Island search for one state variable: seeds, n_iter evolution rounds
/// with refinement every n_refine rounds, then the validation front.
[[nodiscard]] SymRegResult llm_symreg(const ProblemInstance& inst, std::size_t var, const SearchConfig& cfg,
                                      Proposer& proposer);

} // namespace odesr
