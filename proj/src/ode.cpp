#include "mmqss/ode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "mmqss/errors.hpp"

namespace mmqss {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Dormand--Prince 5(4).
namespace dp {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Real-axis stability boundary of the fifth-order solution.
constexpr double kStabilityRadius = 3.3;
}  // namespace dp

// L-stable SDIRK, order 4 with embedded order 3, gamma = 1/4; stiffly accurate.
namespace sdirk {
constexpr int kStages = 5;
constexpr double gamma = 0.25;
constexpr std::array<double, kStages> c = {0.25, 0.75, 11.0 / 20, 0.5, 1.0};
constexpr double A[kStages][kStages] = {
    {0.25, 0, 0, 0, 0},
    {0.5, 0.25, 0, 0, 0},
    {17.0 / 50, -1.0 / 25, 0.25, 0, 0},
    {371.0 / 1360, -137.0 / 2720, 15.0 / 544, 0.25, 0},
    {25.0 / 24, -49.0 / 48, 125.0 / 16, -85.0 / 12, 0.25},
};
constexpr std::array<double, kStages> b = {25.0 / 24, -49.0 / 48, 125.0 / 16, -85.0 / 12, 0.25};
constexpr std::array<double, kStages> bhat = {59.0 / 48, -17.0 / 96, 225.0 / 32, -85.0 / 12, 0.0};
constexpr int kMaxNewton = 10;
constexpr double kNewtonTol = 1e-3;
}  // namespace sdirk

struct Stop {
    double t;
    bool record;
};

class Integrator {
public:
    Integrator(const OdeSystem& sys, const IntegratorConfig& cfg)
        : sys_(sys), cfg_(cfg), n_(sys.dim), jac_(n_, n_), lu_(n_) {}

    Trajectory run(const Vector& y0, double t0, double t1) {
        Trajectory traj;
        traj.meta.rtol = cfg_.rtol;
        traj.meta.atol = cfg_.atol;
        traj.meta.requested = cfg_.method;

        std::vector<Stop> stops;
        for (double ts : cfg_.output_times) {
            if (!(ts > t0 && ts <= t1))
                continue;
            stops.push_back({ts, true});
        }
        std::sort(stops.begin(), stops.end(), [](const Stop& a, const Stop& b) { return a.t < b.t; });
        stops.erase(std::unique(stops.begin(), stops.end(),
                                [](const Stop& a, const Stop& b) { return a.t == b.t; }),
                    stops.end());
        const bool grid_only = !cfg_.output_times.empty() && !cfg_.dense_output;
        if (stops.empty() || stops.back().t < t1) stops.push_back({t1, !grid_only});

        double t = t0;
        Vector y = y0;
        Vector f(n_);
        eval(t, y, f);
        const bool record_t0 =
            !grid_only ||
            std::find(cfg_.output_times.begin(), cfg_.output_times.end(), t0) != cfg_.output_times.end();
        if (record_t0) push(traj, t, y, f);

        Method method = cfg_.method == Method::ImplicitAdaptive ? Method::ImplicitAdaptive
                                                                : Method::ExplicitAdaptive;
        double h = cfg_.initial_step > 0.0 ? cfg_.initial_step : initial_step(t, y, f, t1 - t0);
        std::size_t stop_idx = 0;
        int stiff_count = 0;
        int negative_count = 0;
        bool last_rejected = false;
        Vector ynew(n_), fnew(n_);

        while (stop_idx < stops.size()) {
            if (traj.meta.steps + traj.meta.rejected >= cfg_.max_steps)
                throw Error("StepLimitExceeded", "integration exceeded max_steps at t = " +
                                                     format_double(t));
            const double next_stop = stops[stop_idx].t;
            h = std::min(h, cfg_.max_step);
            const double h_wanted = h;
            bool hits = false;
            if (t + 1.0001 * h >= next_stop) {
                h = next_stop - t;
                hits = true;
            }
            if (hits && h <= 16.0 * kEps * std::max(std::abs(t), 1e-300)) {
                // Stop within rounding of the current time: record in place.
                t = next_stop;
                if (stops[stop_idx].record || !grid_only) push(traj, t, y, f);
                ++stop_idx;
                h = h_wanted;
                continue;
            }
            if (h <= 16.0 * kEps * std::max(std::abs(t), 1e-300) || !(h > 0.0)) {
                throw StepUnderflow("step size underflow at t = " + format_double(t) +
                                    (method == Method::ExplicitAdaptive
                                         ? "; consider the IMPLICIT_ADAPTIVE method"
                                         : ""));
            }

            double err;
            int order;
            if (method == Method::ExplicitAdaptive) {
                err = explicit_step(t, y, f, h, ynew, fnew);
                order = 5;
            } else {
                auto e = implicit_step(t, y, f, h, ynew, fnew);
                order = 4;
                if (!e) {
                    ++traj.meta.rejected;
                    h *= 0.25;
                    last_rejected = true;
                    continue;
                }
                err = *e;
            }

            if (!(err <= 1.0)) {
                ++traj.meta.rejected;
                const double fac = std::isfinite(err) ? 0.9 * std::pow(err, -1.0 / order) : 0.1;
                h *= std::clamp(fac, 0.1, 0.9);
                last_rejected = true;
                continue;
            }
            if (cfg_.enforce_nonnegative && ynew.minCoeff() < -cfg_.atol) {
                ++traj.meta.rejected;
                if (++negative_count > 60)
                    throw NegativeState("state component below -atol persisted at t = " +
                                        format_double(t));
                h *= 0.5;
                last_rejected = true;
                continue;
            }
            negative_count = 0;

            t = hits ? next_stop : t + h;
            y = ynew;
            f = fnew;
            ++traj.meta.steps;
            if (method == Method::ExplicitAdaptive)
                ++traj.meta.explicit_steps;
            else
                ++traj.meta.implicit_steps;
            if (hits) {
                if (stops[stop_idx].record || !grid_only) push(traj, t, y, f);
                ++stop_idx;
            } else if (!grid_only) {
                push(traj, t, y, f);
            }

            double fac = err == 0.0 ? 5.0 : 0.9 * std::pow(err, -1.0 / order);
            fac = std::clamp(fac, 0.2, 5.0);
            if (last_rejected) fac = std::min(fac, 1.0);
            double h_next = h * fac;
            if (hits) h_next = std::max(h_next, std::min(h_wanted, h_wanted * fac));
            last_rejected = false;

            if (cfg_.method == Method::Auto && method == Method::ExplicitAdaptive) {
                jacobian(t, y, f);
                const double rho = spectral_radius();
                if (h_next * rho > dp::kStabilityRadius) {
                    if (++stiff_count >= 2) {
                        method = Method::ImplicitAdaptive;
                        traj.meta.stiffness_switch_time = t;
                    }
                } else {
                    stiff_count = 0;
                }
            }
            h = h_next;
        }

        if (traj.meta.implicit_steps > 0 && traj.meta.explicit_steps > 0)
            traj.meta.method_used = "auto(explicit->implicit)";
        else if (traj.meta.implicit_steps > 0)
            traj.meta.method_used = "implicit_sdirk4";
        else
            traj.meta.method_used = "explicit_dopri5";
        return traj;
    }

private:
    void eval(double t, const Vector& y, Vector& out) {
        out.resize(n_);
        sys_.rhs(t, y, out);
    }

    void push(Trajectory& traj, double t, const Vector& y, const Vector& f) {
        traj.times.push_back(t);
        traj.states.push_back(y);
        traj.derivatives.push_back(f);
    }

    double weight(double a, double b) const {
        return cfg_.atol + cfg_.rtol * std::max(std::abs(a), std::abs(b));
    }

    double norm(const Vector& v, const Vector& y, const Vector& ynew) const {
        double m = 0.0;
        for (std::size_t i = 0; i < n_; ++i) m = std::max(m, std::abs(v[i]) / weight(y[i], ynew[i]));
        return m;
    }

    double initial_step(double t, const Vector& y, const Vector& f, double span) {
        const double d0 = norm(y, y, y);
        const double d1 = norm(f, y, y);
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 * span : 0.01 * d0 / d1;
        h0 = std::min(h0, span);
        Vector y1 = y + h0 * f;
        Vector f1(n_);
        eval(t + h0, y1, f1);
        const double d2 = norm(f1 - f, y, y) / h0;
        const double dm = std::max(d1, d2);
        const double h1 = dm <= 1e-15 ? std::max(1e-6 * span, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
        return std::min({100.0 * h0, h1, span});
    }

    void jacobian(double t, const Vector& y, const Vector& f) {
        if (sys_.jacobian) {
            sys_.jacobian(t, y, jac_);
            return;
        }
        Vector yp = y, fp(n_);
        for (std::size_t j = 0; j < n_; ++j) {
            const double delta = std::sqrt(kEps) * std::max(std::abs(y[j]), 1e-8);
            yp[j] = y[j] + delta;
            eval(t, yp, fp);
            jac_.col(j) = (fp - f) / delta;
            yp[j] = y[j];
        }
    }

    double spectral_radius() const {
        if (n_ == 1) return std::abs(jac_(0, 0));
        Eigen::EigenSolver<Matrix> es(jac_, false);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    }

    double explicit_step(double t, const Vector& y, const Vector& k1, double h, Vector& ynew,
                         Vector& k7) {
        using namespace dp;
        Vector k2(n_), k3(n_), k4(n_), k5(n_), k6(n_);
        eval(t + c2 * h, y + h * (a21 * k1), k2);
        eval(t + c3 * h, y + h * (a31 * k1 + a32 * k2), k3);
        eval(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3), k4);
        eval(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), k5);
        eval(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), k6);
        ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        eval(t + h, ynew, k7);
        const Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        if (!ynew.allFinite()) return std::numeric_limits<double>::infinity();
        return norm(err, y, ynew);
    }

    std::optional<double> implicit_step(double t, const Vector& y, const Vector& f, double h,
                                        Vector& ynew, Vector& fnew) {
        using namespace sdirk;
        jacobian(t, y, f);
        const double hg = h * gamma;
        lu_.compute(Matrix::Identity(n_, n_) - hg * jac_);

        std::array<Vector, kStages> k;
        Vector base(n_), Y(n_), fY(n_), G(n_), dY(n_);
        for (int i = 0; i < kStages; ++i) {
            base = y;
            for (int j = 0; j < i; ++j) base += (h * A[i][j]) * k[j];
            Y = base + hg * (i == 0 ? f : k[i - 1]);
            bool converged = false;
            double prev = 0.0;
            for (int it = 0; it < kMaxNewton; ++it) {
                eval(t + c[i] * h, Y, fY);
                G = Y - base - hg * fY;
                dY = lu_.solve(-G);
                Y += dY;
                if (!Y.allFinite()) return std::nullopt;
                const double dn = norm(dY, Y, Y);
                if (it > 0 && dn > 0.9 * prev && dn > kNewtonTol) return std::nullopt;
                prev = dn;
                if (dn <= kNewtonTol) {
                    converged = true;
                    break;
                }
            }
            if (!converged) return std::nullopt;
            k[i] = (Y - base) / hg;
        }
        ynew = Y;  // stiffly accurate: b equals the last row of A
        eval(t + h, ynew, fnew);
        Vector err = Vector::Zero(n_);
        for (int i = 0; i < kStages; ++i) err += (h * (b[i] - bhat[i])) * k[i];
        err = lu_.solve(err);
        return norm(err, y, ynew);
    }

    const OdeSystem& sys_;
    const IntegratorConfig& cfg_;
    std::size_t n_;
    Matrix jac_;
    Eigen::PartialPivLU<Matrix> lu_;
};

}  // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::Auto: return "AUTO";
        case Method::ExplicitAdaptive: return "EXPLICIT_ADAPTIVE";
        case Method::ImplicitAdaptive: return "IMPLICIT_ADAPTIVE";
    }
    return "AUTO";
}

Method parse_method(std::string_view name) {
    if (name == "AUTO" || name == "auto") return Method::Auto;
    if (name == "EXPLICIT_ADAPTIVE" || name == "explicit") return Method::ExplicitAdaptive;
    if (name == "IMPLICIT_ADAPTIVE" || name == "implicit") return Method::ImplicitAdaptive;
    throw InvalidParameters("unknown integration method: " + std::string(name));
}

void IntegratorConfig::validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidParameters("rtol and atol must be > 0");
    if (!(max_step > 0.0)) throw InvalidParameters("max_step must be > 0");
}

Vector Trajectory::interpolate(double t) const {
    if (times.empty()) throw DomainError("cannot interpolate an empty trajectory");
    const double slack = 1e-12 * std::max(std::abs(times.front()), std::abs(times.back()));
    if (t < times.front() - slack || t > times.back() + slack)
        throw DomainError("interpolation time " + format_double(t) + " outside the trajectory");
    if (t <= times.front()) return states.front();
    if (t >= times.back()) return states.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i1 = static_cast<std::size_t>(it - times.begin());
    const std::size_t i0 = i1 - 1;
    const double h = times[i1] - times[i0];
    const double th = (t - times[i0]) / h;
    const double th2 = th * th, th3 = th2 * th;
    const double h00 = 2 * th3 - 3 * th2 + 1;
    const double h10 = th3 - 2 * th2 + th;
    const double h01 = -2 * th3 + 3 * th2;
    const double h11 = th3 - th2;
    return h00 * states[i0] + (h10 * h) * derivatives[i0] + h01 * states[i1] +
           (h11 * h) * derivatives[i1];
}

std::vector<double> Trajectory::component(std::size_t index) const {
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(s[static_cast<Eigen::Index>(index)]);
    return out;
}

std::optional<std::size_t> Trajectory::index_of(std::string_view label) const {
    for (std::size_t i = 0; i < meta.labels.size(); ++i)
        if (meta.labels[i] == label) return i;
    return std::nullopt;
}

Trajectory integrate(const OdeSystem& system, const Vector& y0, double t0, double t1,
                     const IntegratorConfig& config) {
    config.validate();
    if (!std::isfinite(t0) || !std::isfinite(t1) || !(t1 > t0))
        throw DomainError("integration span must be finite with t1 > t0");
    if (static_cast<std::size_t>(y0.size()) != system.dim || !system.rhs)
        throw DomainError("initial state dimension does not match the system");
    Integrator integrator(system, config);
    return integrator.run(y0, t0, t1);
}

MMDerivative mass_action_rhs(const MMState& x, const RateParameters& p) {
    const double bind = p.k1 * (p.e0 - x.c) * x.s;
    const double unbind = p.k_off * x.c;
    const double cat = p.k_cat * x.c;
    return {-bind + unbind, bind - unbind - cat, cat};
}

OdeSystem mass_action_system(const RateParameters& params) {
    params.validate();
    OdeSystem sys;
    sys.dim = 3;
    sys.rhs = [params](double, const Vector& y, Vector& dy) {
        const MMDerivative d = mass_action_rhs({y[0], y[1], y[2]}, params);
        dy[0] = d.ds;
        dy[1] = d.dc;
        dy[2] = d.dp;
    };
    sys.jacobian = [params](double, const Vector& y, Matrix& J) {
        const double s = y[0], c = y[1];
        const double dbind_ds = params.k1 * (params.e0 - c);
        const double dbind_dc = -params.k1 * s;
        J.setZero(3, 3);
        J(0, 0) = -dbind_ds;
        J(0, 1) = -dbind_dc + params.k_off;
        J(1, 0) = dbind_ds;
        J(1, 1) = dbind_dc - params.k_off - params.k_cat;
        J(2, 1) = params.k_cat;
    };
    return sys;
}

Trajectory simulate_mass_action(const RateParameters& params, double t_end,
                                IntegratorConfig config, std::optional<MMState> initial) {
    const MMState x0 = initial.value_or(MMState{params.s0, 0.0, 0.0});
    config.enforce_nonnegative = true;
    Vector y0(3);
    y0 << x0.s, x0.c, x0.p;
    Trajectory traj = integrate(mass_action_system(params), y0, 0.0, t_end, config);
    traj.meta.model = "mass_action";
    traj.meta.labels = {"s", "c", "p"};
    traj.meta.params = params;
    return traj;
}

namespace {

double hermite_slope(double y0, double y1, double f0, double f1, double h, double th) {
    const double d00 = 6 * th * th - 6 * th;
    const double d10 = 3 * th * th - 4 * th + 1;
    const double d01 = -6 * th * th + 6 * th;
    const double d11 = 3 * th * th - 2 * th;
    return (d00 * y0 + d01 * y1) / h + d10 * f0 + d11 * f1;
}

}  // namespace

double detect_transient_end(const Trajectory& traj, std::optional<double> rtol) {
    const auto ci = traj.index_of("c");
    if (!ci) throw QuantityUnavailable("trajectory has no c component");
    const std::size_t n = traj.size();
    if (n < 2) throw NoTransient("trajectory has fewer than two samples");
    const Eigen::Index k = static_cast<Eigen::Index>(*ci);

    std::size_t imax = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (traj.states[i][k] > traj.states[imax][k]) imax = i;
    const double atol = traj.meta.atol > 0.0 ? traj.meta.atol : 1e-10;
    if (traj.states[imax][k] <= atol) throw NoTransient("c never exceeds atol");

    if (imax > 0 && imax + 1 < n) {
        const auto& d = traj.derivatives;
        std::size_t a = imax, b = imax + 1;
        if (d[imax][k] < 0.0) {
            a = imax - 1;
            b = imax;
        } else if (d[imax][k] == 0.0) {
            return traj.times[imax];
        }
        const double y0 = traj.states[a][k], y1 = traj.states[b][k];
        const double f0 = d[a][k], f1 = d[b][k];
        const double h = traj.times[b] - traj.times[a];
        if (!(f0 > 0.0 && f1 <= 0.0)) return traj.times[imax];
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (hermite_slope(y0, y1, f0, f1, h, mid) > 0.0)
                lo = mid;
            else
                hi = mid;
        }
        return traj.times[a] + 0.5 * (lo + hi) * h;
    }

    const double tol = rtol.value_or(traj.meta.rtol > 0.0 ? traj.meta.rtol : 1e-8);
    std::size_t jmax = 0;
    double dmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = std::abs(traj.derivatives[i][k]);
        if (v > dmax) {
            dmax = v;
            jmax = i;
        }
    }
    for (std::size_t i = jmax; i < n; ++i)
        if (std::abs(traj.derivatives[i][k]) < tol * dmax) return traj.times[i];
    throw NoTransient("c is monotone and |dc/dt| never fell below rtol * max|dc/dt|; "
                      "extend the integration horizon");
}

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double e0) {
    const auto si = traj.index_of("s"), ci = traj.index_of("c"), pi = traj.index_of("p");
    if (!si || !ci || !pi) throw QuantityUnavailable("trajectory CSV needs s, c and p components");
    os << "t,s,c,p,e\n";
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const auto& y = traj.states[i];
        const double c = y[static_cast<Eigen::Index>(*ci)];
        os << format_double(traj.times[i]) << ',' << format_double(y[static_cast<Eigen::Index>(*si)])
           << ',' << format_double(c) << ',' << format_double(y[static_cast<Eigen::Index>(*pi)])
           << ',' << format_double(e0 - c) << '\n';
    }
}

}  // namespace mmqss
