#pragma once

// Template definitions for numeric.hpp.

#include <algorithm>
#include <cmath>
#include <numeric>

namespace odesr {

template <typename F>
std::vector<double> numeric_gradient(F&& f, std::span<const double> c, double fc)
{
    std::vector<double> x(c.begin(), c.end());
    std::vector<double> g(c.size(), 0.0);
    for (std::size_t j = 0; j < c.size(); ++j) {
        const double h = 1e-6 * (1.0 + std::fabs(c[j]));
        x[j] = c[j] + h;
        const double fp = f(std::span<const double>(x));
        x[j] = c[j] - h;
        const double fm = f(std::span<const double>(x));
        x[j] = c[j];
        const bool okp = std::isfinite(fp);
        const bool okm = std::isfinite(fm);
        if (okp && okm) {
            g[j] = (fp - fm) / (2.0 * h);
        } else if (okp && std::isfinite(fc)) {
            g[j] = (fp - fc) / h;
        } else if (okm && std::isfinite(fc)) {
            g[j] = (fc - fm) / h;
        }
    }
    return g;
}

template <typename F>
BfgsResult bfgs_minimize(F&& f, std::vector<double> x0, int max_iterations, double gradient_tolerance)
{
    const std::size_t n = x0.size();
    BfgsResult res;
    res.x = std::move(x0);
    res.value = f(std::span<const double>(res.x));
    res.trace.push_back(res.value);
    if (n == 0 || !std::isfinite(res.value)) {
        return res;
    }

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    };
    auto reset = [n](std::vector<double>& H) {
        std::fill(H.begin(), H.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            H[i * n + i] = 1.0;
        }
    };

    // Inverse Hessian approximation, row-major n x n.
    std::vector<double> H(n * n);
    reset(H);
    bool identity = true;
    bool scaled = false;

    std::vector<double> g = numeric_gradient(f, res.x, res.value);
    std::vector<double> p(n), xn(n), s(n), yv(n), Hy(n);

    for (int it = 0; it < max_iterations; ++it) {
        double gmax = 0.0;
        for (double v : g) {
            gmax = std::max(gmax, std::fabs(v));
        }
        if (gmax <= gradient_tolerance || res.value == 0.0) {
            break;
        }

        for (std::size_t i = 0; i < n; ++i) {
            p[i] = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                p[i] -= H[i * n + j] * g[j];
            }
        }
        double gp = dot(g, p);
        if (!(gp < 0.0)) {
            reset(H);
            identity = true;
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = -g[i];
            }
            gp = -dot(g, g);
        }

        // Backtracking (Armijo); non-finite trial values count as +inf.
        double alpha = 1.0;
        double fn = 0.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < n; ++i) {
                xn[i] = res.x[i] + alpha * p[i];
            }
            fn = f(std::span<const double>(xn));
            if (std::isfinite(fn) && fn <= res.value + 1e-4 * alpha * gp) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (identity) {
                break;
            }
            reset(H);
            identity = true;
            continue;
        }

        std::vector<double> gn = numeric_gradient(f, xn, fn);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = xn[i] - res.x[i];
            yv[i] = gn[i] - g[i];
        }
        const double sy = dot(s, yv);
        const double yy = dot(yv, yv);
        if (sy > 1e-12 * std::sqrt(dot(s, s) * yy) && sy > 0.0) {
            if (!scaled) {
                const double gamma = sy / yy;
                for (double& h : H) {
                    h *= gamma;
                }
                scaled = true;
            }
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            const double rho = 1.0 / sy;
            for (std::size_t i = 0; i < n; ++i) {
                Hy[i] = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    Hy[i] += H[i * n + j] * yv[j];
                }
            }
            const double yHy = dot(yv, Hy);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    H[i * n + j] += -rho * (Hy[i] * s[j] + s[i] * Hy[j]) + (rho * rho * yHy + rho) * s[i] * s[j];
                }
            }
            identity = false;
        }

        res.x = xn;
        res.value = fn;
        res.trace.push_back(fn);
        g = std::move(gn);
        res.iterations = it + 1;
    }
    return res;
}

} // namespace odesr
