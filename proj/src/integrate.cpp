#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "odesr/numeric.hpp"

namespace odesr {

std::string to_string(Divergence::Reason r)
{
    switch (r) {
    case Divergence::Reason::Blowup: return "blowup";
    case Divergence::Reason::NotFinite: return "not-finite";
    case Divergence::Reason::StepUnderflow: return "step-underflow";
    case Divergence::Reason::StepBudget: return "step-budget";
    }
    return "unknown";
}

namespace {

// Dormand-Prince 5(4) tableau with Hairer's dense-output coefficients.
namespace dp {
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                 a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                 e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
} // namespace dp

class Rhs {
public:
    explicit Rhs(std::span<const RhsTerm> system) : system_(system) {}

    // False when any component is NaN.
    bool operator()(std::span<const double> x, std::span<double> dx) const
    {
        for (std::size_t i = 0; i < system_.size(); ++i) {
            dx[i] = evaluate_point(system_[i].expr, system_[i].constants, x);
            if (std::isnan(dx[i])) {
                return false;
            }
        }
        return true;
    }

private:
    std::span<const RhsTerm> system_;
};

using Vec = std::vector<double>;

double rms_norm(const Vec& v, const Vec& scale)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double r = v[i] / scale[i];
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
}

bool exceeds(std::span<const double> x, double bound)
{
    return std::any_of(x.begin(), x.end(), [bound](double v) { return !(std::fabs(v) <= bound); });
}

} // namespace

IntegrateResult integrate(std::span<const RhsTerm> system, std::span<const double> x0, double t_end, double dt_out,
                          const IntegrateOptions& opts)
{
    if (!(t_end > 0.0) || !(dt_out > 0.0)) {
        throw std::invalid_argument("integrate: t_end and dt_out must be positive");
    }
    const std::size_t n = x0.size();
    if (system.size() != n) {
        throw DimError(fmt::format("system has {} equations but the initial state has {} entries", system.size(), n));
    }
    for (const auto& term : system) {
        if (constant_count(term.expr) != term.constants.size()) {
            throw ArityError("integrate: constant vector does not match its expression");
        }
    }

    const auto n_out = static_cast<std::size_t>(std::llround(t_end / dt_out));
    const double t_final = static_cast<double>(n_out) * dt_out;

    TrajectoryData out;
    out.times.resize(n_out + 1);
    for (std::size_t k = 0; k <= n_out; ++k) {
        out.times[k] = static_cast<double>(k) * dt_out;
    }
    out.states = Matrix(n_out + 1, n);

    Rhs f(system);
    Vec y(x0.begin(), x0.end());
    if (exceeds(y, opts.blowup)) {
        return Divergence{Divergence::Reason::Blowup, 0.0};
    }
    std::copy(y.begin(), y.end(), out.states.row(0).begin());

    Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n), err(n), scale(n);
    if (!f(y, k1)) {
        return Divergence{Divergence::Reason::NotFinite, 0.0};
    }

    // Initial step size (Hairer & Wanner's heuristic).
    double h = 0.0;
    {
        for (std::size_t i = 0; i < n; ++i) {
            scale[i] = opts.atol + opts.rtol * std::fabs(y[i]);
        }
        const double d0 = rms_norm(y, scale);
        const double d1 = rms_norm(k1, scale);
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, t_final);
        for (std::size_t i = 0; i < n; ++i) {
            tmp[i] = y[i] + h0 * k1[i];
        }
        if (!f(tmp, k2)) {
            return Divergence{Divergence::Reason::NotFinite, 0.0};
        }
        for (std::size_t i = 0; i < n; ++i) {
            err[i] = k2[i] - k1[i];
        }
        const double d2 = rms_norm(err, scale) / h0;
        const double dm = std::max(d1, d2);
        const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 1.0 / 5.0);
        h = std::min({100.0 * h0, h1, t_final});
    }

    double t = 0.0;
    std::size_t next_out = 1;
    bool last_rejected = false;
    constexpr double eps = std::numeric_limits<double>::epsilon();

    for (long step = 0; next_out <= n_out; ++step) {
        if (step >= opts.max_steps) {
            return Divergence{Divergence::Reason::StepBudget, t};
        }
        if (h < 16.0 * eps * std::max(1.0, std::fabs(t))) {
            return Divergence{Divergence::Reason::StepUnderflow, t};
        }
        if (t + h > t_final) {
            h = t_final - t;
        }

        using namespace dp;
        auto stage = [&](Vec& k, auto&& combine) {
            for (std::size_t i = 0; i < n; ++i) {
                tmp[i] = y[i] + h * combine(i);
            }
            return f(tmp, k);
        };
        const bool ok = stage(k2, [&](std::size_t i) { return a21 * k1[i]; })
            && stage(k3, [&](std::size_t i) { return a31 * k1[i] + a32 * k2[i]; })
            && stage(k4, [&](std::size_t i) { return a41 * k1[i] + a42 * k2[i] + a43 * k3[i]; })
            && stage(k5, [&](std::size_t i) { return a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]; })
            && stage(k6, [&](std::size_t i) {
                   return a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i];
               });
        if (!ok) {
            return Divergence{Divergence::Reason::NotFinite, t};
        }
        for (std::size_t i = 0; i < n; ++i) {
            ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
        }
        if (!f(ynew, k7)) {
            return Divergence{Divergence::Reason::NotFinite, t + h};
        }
        for (std::size_t i = 0; i < n; ++i) {
            err[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
            scale[i] = opts.atol + opts.rtol * std::max(std::fabs(y[i]), std::fabs(ynew[i]));
        }
        const double enorm = rms_norm(err, scale);
        if (!std::isfinite(enorm)) {
            return Divergence{Divergence::Reason::NotFinite, t};
        }

        if (enorm > 1.0) {
            h *= std::max(0.2, 0.9 * std::pow(enorm, -0.2));
            last_rejected = true;
            continue;
        }

        // Accepted: emit every output sample inside (t, t + h] by dense output.
        const double t_new = (t + h >= t_final) ? t_final : t + h;
        while (next_out <= n_out && (out.times[next_out] <= t_new || t_new == t_final)) {
            const double theta = (out.times[next_out] - t) / h;
            const double theta1 = 1.0 - theta;
            auto row = out.states.row(next_out);
            for (std::size_t i = 0; i < n; ++i) {
                const double r1 = y[i];
                const double r2 = ynew[i] - y[i];
                const double r3 = h * k1[i] - r2;
                const double r4 = r2 - h * k7[i] - r3;
                const double r5 = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
                row[i] = r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
            }
            if (exceeds(row, opts.blowup)) {
                return Divergence{Divergence::Reason::Blowup, out.times[next_out]};
            }
            ++next_out;
        }
        if (exceeds(ynew, opts.blowup)) {
            return Divergence{Divergence::Reason::Blowup, t_new};
        }

        t = t_new;
        y.swap(ynew);
        k1.swap(k7); // FSAL

        double fac = enorm == 0.0 ? 10.0 : 0.9 * std::pow(enorm, -0.2);
        fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 10.0);
        h *= fac;
        last_rejected = false;
    }
    return out;
}

} // namespace odesr
