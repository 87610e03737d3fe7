#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "odesr/expr.hpp"
#include "odesr/matrix.hpp"

namespace odesr {

class GridError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniformly sampled state time series: N samples of a D-dimensional state,
/// with optional per-variable derivative estimates of the same shape.
struct TrajectoryData {
    std::vector<double> times;
    Matrix states;
    std::optional<Matrix> derivs;

    [[nodiscard]] std::size_t samples() const noexcept { return states.rows(); }
    [[nodiscard]] std::size_t dim() const noexcept { return states.cols(); }
};

// Throws GridError unless times has >= min_samples strictly increasing points
// with a constant step (1e-12 relative).
double uniform_step(std::span<const double> times, std::size_t min_samples = 2);

/// Fourth-order finite differences: 5-point central stencil in the interior,
/// 5-point one-sided stencils on the two points at each end. Exact for
/// polynomials of degree <= 4.
[[nodiscard]] TrajectoryData estimate_derivatives(TrajectoryData traj);

// --- constant fitting --------------------------------------------------------

struct FitOptions {
    int max_iterations = 100;
    double gradient_tolerance = 1e-8;
    int random_restarts = 2;
    double restart_low = -2.0;
    double restart_high = 2.0;
};

struct FitResult {
    ConstVector constants;
    double mse = 0.0;
    // Objective value after every accepted BFGS iteration of the winning
    // start, beginning with the starting point.
    std::vector<double> trace;
};

// Mean squared error of e(c, X) against y; +inf when any prediction is NaN.
[[nodiscard]] double mse_objective(const Expr& e, std::span<const double> c, const Matrix& X, std::span<const double> y);

// Central-difference gradient with per-coordinate step 1e-6 * (1 + |c_j|).
template <typename F>
std::vector<double> numeric_gradient(F&& f, std::span<const double> c, double fc);

/// BFGS on c -> MSE(y, e(c, X)) from `init`, then from `random_restarts`
/// uniform draws; keeps the lowest MSE. Non-convergence returns the best
/// iterate found.
[[nodiscard]] FitResult fit_constants(const Expr& e, const Matrix& X, std::span<const double> y,
                                      const ConstVector& init, Rng& rng, const FitOptions& opts = {});

// Minimizes an arbitrary objective with the same BFGS kernel. Exposed for tests.
struct BfgsResult {
    std::vector<double> x;
    double value = 0.0;
    std::vector<double> trace;
    int iterations = 0;
};

template <typename F>
BfgsResult bfgs_minimize(F&& f, std::vector<double> x0, int max_iterations, double gradient_tolerance);

// --- integration -------------------------------------------------------------

struct RhsTerm {
    Expr expr;
    ConstVector constants;
};

struct Divergence {
    enum class Reason { Blowup, NotFinite, StepUnderflow, StepBudget };
    Reason reason;
    double time;
};

[[nodiscard]] std::string to_string(Divergence::Reason r);

struct IntegrateOptions {
    double rtol = 1e-8;
    double atol = 1e-10;
    double blowup = 1e6;
    long max_steps = 200000;
};

using IntegrateResult = std::variant<TrajectoryData, Divergence>;

/// Dormand-Prince 5(4) with dense output, sampled at t = k * dt_out for
/// k = 0..round(t_end / dt_out). Returns Divergence when a state exceeds the
/// blow-up threshold, an evaluation is NaN, or the step size underflows.
[[nodiscard]] IntegrateResult integrate(std::span<const RhsTerm> system, std::span<const double> x0, double t_end,
                                        double dt_out, const IntegrateOptions& opts = {});

} // namespace odesr

#include "odesr/detail/bfgs.ipp"
