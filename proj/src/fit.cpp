#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "odesr/numeric.hpp"

namespace odesr {

double mse_objective(const Expr& e, std::span<const double> c, const Matrix& X, std::span<const double> y)
{
    const auto pred = evaluate(e, c, X);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = y[i] - pred[i];
        acc += r * r;
    }
    const double mse = pred.empty() ? 0.0 : acc / static_cast<double>(pred.size());
    return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
}

FitResult fit_constants(const Expr& e, const Matrix& X, std::span<const double> y, const ConstVector& init, Rng& rng,
                        const FitOptions& opts)
{
    if (X.rows() != y.size()) {
        throw std::invalid_argument(fmt::format("{} rows of X but {} targets", X.rows(), y.size()));
    }
    const std::size_t slots = constant_count(e);
    if (init.size() != slots) {
        throw ArityError(fmt::format("initial vector has {} entries for {} slots", init.size(), slots));
    }
    if (slots == 0) {
        const double mse = mse_objective(e, {}, X, y);
        return {{}, mse, {mse}};
    }

    auto objective = [&](std::span<const double> c) { return mse_objective(e, c, X, y); };

    FitResult best;
    best.mse = std::numeric_limits<double>::infinity();
    best.constants = init;
    std::uniform_real_distribution<double> draw(opts.restart_low, opts.restart_high);
    for (int start = 0; start <= opts.random_restarts; ++start) {
        std::vector<double> x0 = init;
        if (start > 0) {
            for (double& v : x0) {
                v = draw(rng);
            }
        }
        auto r = bfgs_minimize(objective, std::move(x0), opts.max_iterations, opts.gradient_tolerance);
        if (r.value < best.mse) {
            best.constants = std::move(r.x);
            best.mse = r.value;
            best.trace = std::move(r.trace);
        }
    }
    if (best.trace.empty()) {
        best.trace.push_back(best.mse);
    }
    return best;
}

} // namespace odesr
