#include <cmath>

#include <fmt/format.h>

#include "odesr/numeric.hpp"

namespace odesr {

double uniform_step(std::span<const double> times, std::size_t min_samples)
{
    if (times.size() < min_samples || times.size() < 2) {
        throw GridError(fmt::format("need at least {} samples, got {}", min_samples, times.size()));
    }
    const double step = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw GridError("time grid is not strictly increasing");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
        const double d = times[i] - times[i - 1];
        if (!(d > 0.0) || std::fabs(d - step) > 1e-12 * step + 1e-12 * std::fabs(times[i])) {
            throw GridError(fmt::format("non-uniform step at sample {}: {} vs {}", i, d, step));
        }
    }
    return step;
}

TrajectoryData estimate_derivatives(TrajectoryData traj)
{
    const std::size_t n = traj.samples();
    if (traj.times.size() != n) {
        throw GridError(fmt::format("{} time stamps for {} state rows", traj.times.size(), n));
    }
    const double h = uniform_step(traj.times, 5);
    const double inv = 1.0 / (12.0 * h);
    const std::size_t d = traj.dim();

    Matrix out(n, d);
    for (std::size_t j = 0; j < d; ++j) {
        auto f = [&](std::size_t i) { return traj.states(i, j); };
        out(0, j) = (-25.0 * f(0) + 48.0 * f(1) - 36.0 * f(2) + 16.0 * f(3) - 3.0 * f(4)) * inv;
        out(1, j) = (-3.0 * f(0) - 10.0 * f(1) + 18.0 * f(2) - 6.0 * f(3) + f(4)) * inv;
        for (std::size_t i = 2; i + 2 < n; ++i) {
            out(i, j) = (-f(i + 2) + 8.0 * f(i + 1) - 8.0 * f(i - 1) + f(i - 2)) * inv;
        }
        const std::size_t m = n - 1;
        out(m - 1, j) = (-f(m - 4) + 6.0 * f(m - 3) - 18.0 * f(m - 2) + 10.0 * f(m - 1) + 3.0 * f(m)) * inv;
        out(m, j) = (3.0 * f(m - 4) - 16.0 * f(m - 3) + 36.0 * f(m - 2) - 48.0 * f(m - 1) + 25.0 * f(m)) * inv;
    }
    traj.derivs = std::move(out);
    return traj;
}

} // namespace odesr
