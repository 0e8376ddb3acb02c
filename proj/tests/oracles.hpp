#pragma once

// Independent reference computations used by the test suites. Nothing here
// calls into the library's algorithms; only plain data types are shared.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mmqss/core.hpp"

namespace oracle {

/// Bisection root of f on [lo, hi]; f(lo) and f(hi) must differ in sign.
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     int iterations = 400) {
    double flo = f(lo);
    for (int i = 0; i < iterations; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        const double fm = f(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

/// Smaller root of k1 c^2 - k1 (e0 + K_M + s0 - p) c + k1 e0 (s0 - p) by
/// bisection on [0, min(e0, s0 - p)] (the quadratic is >= 0 at 0 and <= 0 at
/// the right end).
inline double complex_root_bisect(const mmqss::RateParameters& p, double product = 0.0) {
    const double km = (p.k_off + p.k_cat) / p.k1;
    const double q = p.s0 - product;
    auto quad = [&](double c) { return c * c - (p.e0 + km + q) * c + p.e0 * q; };
    const double hi = std::min(p.e0, q);
    if (quad(hi) >= 0.0) return hi;
    return bisect(quad, 0.0, hi);
}

/// Log-uniform parameter generator: rate constants and concentrations in
/// [lo, hi], independently.
class ParamSampler {
public:
    explicit ParamSampler(std::uint64_t seed, double lo = 1e-3, double hi = 1e3)
        : rng_(seed), dist_(std::log(lo), std::log(hi)) {}

    mmqss::RateParameters next() {
        mmqss::RateParameters p;
        p.k1 = draw();
        p.k_off = draw();
        p.k_cat = draw();
        p.e0 = draw();
        p.s0 = draw();
        return p;
    }

private:
    double draw() { return std::exp(dist_(rng_)); }

    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> dist_;
};

inline double rel_diff(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Classic fixed-step RK4 on a generic system, used as an independent
/// reference for the adaptive integrators.
template <class State, class Rhs>
State rk4_fixed(Rhs rhs, State y, double t0, double t1, std::size_t steps) {
    const double h = (t1 - t0) / static_cast<double>(steps);
    double t = t0;
    for (std::size_t i = 0; i < steps; ++i) {
        const State k1 = rhs(t, y);
        const State k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1);
        const State k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2);
        const State k4 = rhs(t + h, y + h * k3);
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
    }
    return y;
}

inline mmqss::RateParameters fig_final() { return {20.0, 10.0, 10.0, 10.0, 1000.0}; }

/// eta = 0.005 instance: k1 = k_off = k_cat = 1, e0 = 0.01, s0 = 10.
inline mmqss::RateParameters small_eta() { return {1.0, 1.0, 1.0, 0.01, 10.0}; }

/// rQSSA instance: e0 = s0 = 100, k1 = 1, k_off = k_cat = 0.005.
inline mmqss::RateParameters rqssa_instance() { return {1.0, 0.005, 0.005, 100.0, 100.0}; }

}  // namespace oracle
