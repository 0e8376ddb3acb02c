#include "mmqss/reductions.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include "mmqss/errors.hpp"

namespace mmqss {

namespace {

struct KindName {
    ReducedModelKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {ReducedModelKind::SQSSA_S, "SQSSA_S"},
    {ReducedModelKind::SQSSA_P, "SQSSA_P"},
    {ReducedModelKind::TQSSA, "TQSSA"},
    {ReducedModelKind::TQSSA_PRACTICE, "TQSSA_PRACTICE"},
    {ReducedModelKind::EXTENDED, "EXTENDED"},
    {ReducedModelKind::EQSSA_SEGEL, "EQSSA_SEGEL"},
    {ReducedModelKind::RQSSA, "RQSSA"},
};

std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) {
        if (ch == '-') ch = '_';
        ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    return out;
}

// Unchecked reduced vector field; x is s or p depending on the kind.
double rhs_unchecked(ReducedModelKind kind, double x, const RateParameters& p, const Nullclines& nc) {
    const double km = p.michaelis_constant();
    const double ks = p.dissociation_constant();
    const double V = p.k_cat * p.e0;
    switch (kind) {
        case ReducedModelKind::SQSSA_S:
        case ReducedModelKind::EQSSA_SEGEL:
            return km + x == 0.0 ? 0.0 : -V * x / (km + x);
        case ReducedModelKind::EXTENDED: {
            const double sk = x + ks;
            const double denom = p.e0 * ks + sk * sk;
            return denom == 0.0 ? 0.0 : -V * x * sk / denom;
        }
        case ReducedModelKind::SQSSA_P: {
            const double q = p.s0 - x;
            return km + q == 0.0 ? 0.0 : V * q / (km + q);
        }
        case ReducedModelKind::TQSSA:
            return p.k_cat * nc.h_minus_unchecked(x);
        case ReducedModelKind::TQSSA_PRACTICE: {
            const double q = p.s0 - x;
            return V * q / (p.e0 + km + q);
        }
        case ReducedModelKind::RQSSA:
            return p.k_cat * (p.s0 - x);
    }
    return 0.0;
}

// c implied by the reduced variable, with dc/dx.
std::pair<double, double> complex_of(ReducedModelKind kind, double x, const RateParameters& p,
                                     const Nullclines& nc) {
    const double km = p.michaelis_constant();
    const double ks = p.dissociation_constant();
    const double e0 = p.e0;
    switch (kind) {
        case ReducedModelKind::SQSSA_S:
        case ReducedModelKind::EQSSA_SEGEL: {
            if (km + x == 0.0) return {0.0, 0.0};
            const double d = km + x;
            return {e0 * x / d, e0 * km / (d * d)};
        }
        case ReducedModelKind::EXTENDED: {
            if (ks + x == 0.0) return {0.0, 0.0};
            const double d = ks + x;
            return {e0 * x / d, e0 * ks / (d * d)};
        }
        case ReducedModelKind::SQSSA_P: {
            const double q = p.s0 - x;
            if (km + q == 0.0) return {0.0, 0.0};
            const double d = km + q;
            return {e0 * q / d, -e0 * km / (d * d)};
        }
        case ReducedModelKind::TQSSA:
            return {nc.h_minus_unchecked(x), nc.dh_minus_dp_unchecked(x)};
        case ReducedModelKind::TQSSA_PRACTICE: {
            const double q = p.s0 - x;
            const double d = e0 + km + q;
            return {e0 * q / d, -e0 * (e0 + km) / (d * d)};
        }
        case ReducedModelKind::RQSSA:
            return {p.s0 - x, -1.0};
    }
    return {0.0, 0.0};
}

void check_domain(double x, const RateParameters& p, const char* what) {
    if (!(x >= 0.0 && x <= p.s0)) {
        std::ostringstream os;
        os << what << " = " << x << " outside [0, s0 = " << p.s0 << "]";
        throw DomainError(os.str());
    }
}

}  // namespace

std::string_view to_string(ReducedModelKind kind) {
    for (const auto& kn : kKindNames)
        if (kn.kind == kind) return kn.name;
    return "SQSSA_S";
}

ReducedModelKind parse_reduced_kind(std::string_view name) {
    const std::string key = upper(name);
    for (const auto& kn : kKindNames)
        if (key == kn.name) return kn.kind;
    throw InvalidParameters("unknown reduced model: " + std::string(name));
}

const std::vector<ReducedModelKind>& all_reduced_kinds() {
    static const std::vector<ReducedModelKind> kinds = [] {
        std::vector<ReducedModelKind> v;
        for (const auto& kn : kKindNames) v.push_back(kn.kind);
        return v;
    }();
    return kinds;
}

bool integrates_substrate(ReducedModelKind kind) {
    return kind == ReducedModelKind::SQSSA_S || kind == ReducedModelKind::EXTENDED ||
           kind == ReducedModelKind::EQSSA_SEGEL;
}

bool historical_refuted(ReducedModelKind kind) { return kind == ReducedModelKind::EQSSA_SEGEL; }

double reduced_rhs(ReducedModelKind kind, double x, const RateParameters& params) {
    const Nullclines nc(params);
    check_domain(x, params, integrates_substrate(kind) ? "s" : "p");
    return rhs_unchecked(kind, x, params, nc);
}

OdeSystem reduced_system(ReducedModelKind kind, const RateParameters& params) {
    params.validate();
    OdeSystem sys;
    sys.dim = 1;
    sys.rhs = [kind, params, nc = Nullclines(params)](double, const Vector& y, Vector& dy) {
        dy[0] = rhs_unchecked(kind, y[0], params, nc);
    };
    return sys;
}

double reduced_initial_state(ReducedModelKind kind, const RateParameters& params) {
    params.validate();
    switch (kind) {
        case ReducedModelKind::SQSSA_S: return params.s0;
        case ReducedModelKind::EQSSA_SEGEL: return (std::sqrt(2.0) - 1.0) * params.s0;
        case ReducedModelKind::EXTENDED: return riccati_base_point(params).s;
        default: return 0.0;
    }
}

MMState reconstruct_state(ReducedModelKind kind, double x, const RateParameters& params) {
    const Nullclines nc(params);
    const double c = complex_of(kind, x, params, nc).first;
    if (kind == ReducedModelKind::RQSSA) return {0.0, c, x};
    if (integrates_substrate(kind)) return {x, c, params.s0 - x - c};
    return {params.s0 - x - c, c, x};
}

Trajectory simulate_reduced(ReducedModelKind kind, const RateParameters& params, double t_end,
                            IntegratorConfig config, ReducedStart start) {
    const Nullclines nc(params);
    const double x0 = start.x0.value_or(reduced_initial_state(kind, params));
    check_domain(x0, params, "initial reduced state");
    config.enforce_nonnegative = true;

    Vector y0(1);
    y0 << x0;
    const Trajectory raw = integrate(reduced_system(kind, params), y0, start.t0, t_end, config);

    Trajectory out;
    out.meta = raw.meta;
    out.meta.model = std::string(to_string(kind));
    out.meta.labels = {"s", "c", "p"};
    out.meta.params = params;
    out.meta.notes["integrated_variable"] = integrates_substrate(kind) ? "s" : "p";
    out.meta.notes["initial_value"] = format_double(x0);
    out.meta.notes["initial_time"] = format_double(start.t0);
    if (historical_refuted(kind)) {
        out.meta.notes["historical_refuted"] = "true";
        out.meta.notes["segel_slemrod_s0e"] = format_double((std::sqrt(2.0) - 1.0) * params.s0);
    }

    out.times = raw.times;
    out.states.reserve(raw.size());
    out.derivatives.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double x = raw.states[i][0];
        const double dx = raw.derivatives[i][0];
        const auto [c, dc] = complex_of(kind, x, params, nc);
        Vector y(3), d(3);
        if (kind == ReducedModelKind::RQSSA) {
            y << 0.0, c, x;
            d << 0.0, dc * dx, dx;
        } else if (integrates_substrate(kind)) {
            y << x, c, params.s0 - x - c;
            d << dx, dc * dx, -dx - dc * dx;
        } else {
            y << params.s0 - x - c, c, x;
            d << -dx - dc * dx, dc * dx, dx;
        }
        out.states.push_back(std::move(y));
        out.derivatives.push_back(std::move(d));
    }
    return out;
}

double closed_form(ClosedFormKind kind, double t, const RateParameters& params) {
    params.validate();
    if (t < 0.0) throw DomainError("closed_form requires t >= 0");
    switch (kind) {
        case ClosedFormKind::RQSSA_P:
            return -params.s0 * std::expm1(-params.k_cat * t);
        case ClosedFormKind::INNER_LAYER: {
            const double km = params.michaelis_constant();
            const double eps_ss = params.e0 / (km + params.s0);
            const double t_c = 1.0 / (params.k1 * (params.s0 + km));
            return -eps_ss * params.s0 * std::expm1(-t / t_c);
        }
    }
    return 0.0;
}

RiccatiBasePoint riccati_base_point(double mu) {
    if (!(mu >= 0.0 && mu <= 1.0)) throw DomainError("riccati_base_point requires mu in [0, 1]");
    RiccatiBasePoint bp;
    bp.mu = mu;
    if (mu <= 1e-12)
        bp.c_bar = 0.5;
    else
        // (2 - 2 sqrt(1 - mu)) / (2 mu), rationalized.
        bp.c_bar = 1.0 / (1.0 + std::sqrt(1.0 - mu));
    bp.s_bar = 1.0 - bp.c_bar;
    return bp;
}

RiccatiBasePoint riccati_base_point(const RateParameters& params) {
    params.validate();
    const double km = params.michaelis_constant();
    RiccatiBasePoint bp = riccati_base_point(params.s0 / (km + params.s0));
    const double eps_ss = params.e0 / (km + params.s0);
    bp.s = bp.s_bar * params.s0;
    bp.c = bp.c_bar * eps_ss * params.s0;
    return bp;
}

// ---------------------------------------------------------------------------

ManifoldGraph c_nullcline_graph(const RateParameters& params) {
    const double e0 = params.e0, km = params.michaelis_constant();
    return {[=](double s) { return e0 * s / (km + s); },
            [=](double s) { return e0 * km / ((km + s) * (km + s)); }};
}

ManifoldGraph s_nullcline_graph(const RateParameters& params) {
    const double e0 = params.e0, ks = params.dissociation_constant();
    return {[=](double s) { return e0 * s / (ks + s); },
            [=](double s) { return e0 * ks / ((ks + s) * (ks + s)); }};
}

namespace {

double sup_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Second-order differences on a (possibly nonuniform) grid; one-sided at the ends.
std::vector<double> grid_derivative(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<double> d(n, 0.0);
    if (n < 3) {
        if (n == 2) d[0] = d[1] = (y[1] - y[0]) / (x[1] - x[0]);
        return d;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
        d[i] = (-h1 / (h0 * (h0 + h1))) * y[i - 1] + ((h1 - h0) / (h0 * h1)) * y[i] +
               (h0 / (h1 * (h0 + h1))) * y[i + 1];
    }
    {
        const double h0 = x[1] - x[0], h1 = x[2] - x[1];
        d[0] = (-(2 * h0 + h1) / (h0 * (h0 + h1))) * y[0] + ((h0 + h1) / (h0 * h1)) * y[1] -
               (h0 / (h1 * (h0 + h1))) * y[2];
    }
    {
        const std::size_t m = n - 1;
        const double h0 = x[m - 1] - x[m - 2], h1 = x[m] - x[m - 1];
        d[m] = (h1 / (h0 * (h0 + h1))) * y[m - 2] - ((h0 + h1) / (h0 * h1)) * y[m - 1] +
               ((2 * h1 + h0) / (h1 * (h0 + h1))) * y[m];
    }
    return d;
}

void check_grid(const std::vector<double>& s_grid, const RateParameters& params) {
    if (s_grid.empty()) throw DomainError("s grid is empty");
    for (std::size_t i = 0; i < s_grid.size(); ++i) {
        if (!(s_grid[i] > 0.0 && s_grid[i] <= params.s0))
            throw DomainError("s grid must lie in (0, s0]");
        if (i > 0 && !(s_grid[i] > s_grid[i - 1]))
            throw DomainError("s grid must be strictly increasing");
    }
}

InvarianceResidual residual_from_samples(const std::vector<double>& s, const std::vector<double>& h,
                                         const std::vector<double>& dh, const RateParameters& p) {
    InvarianceResidual out;
    out.s = s;
    out.residual.resize(s.size());
    out.scaled.resize(s.size());
    const double scale = p.k1 * p.e0 * p.s0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto d = mass_action_rhs({s[i], h[i], 0.0}, p);
        out.residual[i] = d.dc - dh[i] * d.ds;
        out.scaled[i] = out.residual[i] / scale;
    }
    return out;
}

std::vector<double> sample_derivative(const ManifoldGraph& m, const std::vector<double>& s_grid) {
    std::vector<double> dh(s_grid.size());
    const double step = std::cbrt(std::numeric_limits<double>::epsilon());
    for (std::size_t i = 0; i < s_grid.size(); ++i) {
        const double s = s_grid[i];
        if (m.dh) {
            dh[i] = m.dh(s);
        } else {
            const double delta = step * s;
            dh[i] = (m.h(s + delta) - m.h(s - delta)) / (2.0 * delta);
        }
    }
    return dh;
}

}  // namespace

double InvarianceResidual::sup() const { return sup_abs(residual); }
double InvarianceResidual::sup_scaled() const { return sup_abs(scaled); }

InvarianceResidual invariance_residual(const ManifoldGraph& manifold, const RateParameters& params,
                                       const std::vector<double>& s_grid) {
    params.validate();
    check_grid(s_grid, params);
    if (!manifold.h) throw DomainError("manifold graph has no h");
    std::vector<double> h(s_grid.size());
    for (std::size_t i = 0; i < s_grid.size(); ++i) h[i] = manifold.h(s_grid[i]);
    const std::vector<double> dh = sample_derivative(manifold, s_grid);
    return residual_from_samples(s_grid, h, dh, params);
}

RefinementResult refine_manifold(const ManifoldGraph& h0, const RateParameters& params, int n_iter,
                                 const std::vector<double>& s_grid) {
    if (n_iter < 1) throw InvalidParameters("refine_manifold needs n_iter >= 1");
    const InvarianceResidual r0 = invariance_residual(h0, params, s_grid);

    RefinementResult out;
    out.s = s_grid;
    std::vector<double> h(s_grid.size());
    for (std::size_t i = 0; i < s_grid.size(); ++i) h[i] = h0.h(s_grid[i]);
    out.iterates.push_back(h);
    out.sup_residuals.push_back(r0.sup_scaled());

    const double km = params.michaelis_constant();
    // The first update uses h0's own derivative; later ones differentiate on the grid.
    std::vector<double> dh = sample_derivative(h0, s_grid);

    int growth = 0;
    for (int it = 0; it < n_iter; ++it) {
        std::vector<double> next(s_grid.size());
        for (std::size_t i = 0; i < s_grid.size(); ++i) {
            const double s = s_grid[i];
            const double f = mass_action_rhs({s, h[i], 0.0}, params).ds;
            next[i] = (params.k1 * params.e0 * s - dh[i] * f) / (params.k1 * (s + km));
        }
        h = std::move(next);
        dh = grid_derivative(s_grid, h);
        const double sup = residual_from_samples(s_grid, h, dh, params).sup_scaled();
        out.iterates.push_back(h);
        const double prev = out.sup_residuals.back();
        out.sup_residuals.push_back(sup);
        growth = (!std::isfinite(sup) || sup > prev) ? growth + 1 : 0;
        if (growth >= 2) {
            out.diverged = true;
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Tfp tfp) {
    switch (tfp) {
        case Tfp::KOFF_AND_KCAT: return "KOFF_AND_KCAT";
        case Tfp::K1: return "K1";
        case Tfp::E0: return "E0";
        case Tfp::KCAT: return "KCAT";
    }
    return "KOFF_AND_KCAT";
}

Tfp parse_tfp(std::string_view name) {
    const std::string key = upper(name);
    for (Tfp t : {Tfp::KOFF_AND_KCAT, Tfp::K1, Tfp::E0, Tfp::KCAT})
        if (key == to_string(t)) return t;
    throw InvalidParameters("unknown tfp: " + std::string(name));
}

double hyperbolicity_margin(double p_bar, double c_hat, const RateParameters& params) {
    params.validate();
    const double ell = params.s0 / params.e0;
    return -ell * (1.0 - c_hat - p_bar) - (1.0 - ell * c_hat);
}

namespace {

double bisect_margin(const std::function<double(double)>& m, double lo, double hi) {
    double mlo = m(lo);
    if (mlo == 0.0) return lo;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        const double mm = m(mid);
        if (mm == 0.0) return mid;
        if ((mm < 0.0) == (mlo < 0.0)) {
            lo = mid;
            mlo = mm;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-15) break;
    }
    return std::abs(m(lo)) <= std::abs(m(hi)) ? lo : hi;
}

}  // namespace

CriticalSetDescription critical_set(const RateParameters& params, Tfp tfp, std::size_t samples) {
    params.validate();
    if (samples < 2) samples = 2;
    CriticalSetDescription out;
    out.tfp = tfp;
    out.ell = params.s0 / params.e0;
    const double ell = out.ell;
    auto frac = [&](std::size_t i) { return static_cast<double>(i) / static_cast<double>(samples - 1); };

    if (tfp == Tfp::KOFF_AND_KCAT) {
        out.x_name = "p_bar";
        out.y_name = "c_hat";
        const bool ell_is_one = std::abs(ell - 1.0) <= 1e-12;

        CriticalComponent diag{"1 - c_hat - p_bar = 0", {}};
        for (std::size_t i = 0; i < samples; ++i) {
            const double pb = frac(i);
            diag.vertices.push_back({pb, 1.0 - pb, hyperbolicity_margin(pb, 1.0 - pb, params)});
        }
        out.components.push_back(std::move(diag));

        if (ell >= 1.0 || ell_is_one) {
            const double level = ell_is_one ? 1.0 : 1.0 / ell;
            CriticalComponent flat{"1 - ell c_hat = 0", {}};
            for (std::size_t i = 0; i < samples; ++i) {
                const double pb = frac(i);
                flat.vertices.push_back({pb, level, hyperbolicity_margin(pb, level, params)});
            }
            out.components.push_back(std::move(flat));

            // The branches cross where the margin along c_hat = 1 - p_bar vanishes.
            auto along = [&](double pb) { return hyperbolicity_margin(pb, 1.0 - pb, params); };
            const double pb = ell_is_one ? 0.0 : bisect_margin(along, 0.0, 1.0);
            const double m = along(pb);
            if (std::abs(m) <= 1e-12) out.singular_points.push_back({pb, 1.0 - pb, m});
        }
        return out;
    }

    out.x_name = "s";
    out.y_name = "c";
    const double s0 = params.s0;
    const double e0 = params.e0;
    if (tfp == Tfp::K1 || tfp == Tfp::E0) {
        CriticalComponent comp{"c = 0", {}};
        for (std::size_t i = 0; i < samples; ++i) {
            const double s = s0 * frac(i);
            double margin = -(params.k_off + params.k_cat);
            if (tfp == Tfp::E0) margin -= params.k1 * s;
            comp.vertices.push_back({s, 0.0, margin});
        }
        out.components.push_back(std::move(comp));
        return out;
    }

    // KCAT = 0: the s-nullcline is a curve of equilibria; its nonzero
    // eigenvalue is the trace of the (s, c) Jacobian.
    const double ks = params.dissociation_constant();
    CriticalComponent comp{"c = e0 s / (K_S + s)", {}};
    for (std::size_t i = 0; i < samples; ++i) {
        const double s = s0 * frac(i);
        const double c = (ks + s) == 0.0 ? 0.0 : e0 * s / (ks + s);
        const double trace = -params.k1 * (e0 - c) - params.k1 * s - params.k_off;
        comp.vertices.push_back({s, c, trace});
    }
    out.components.push_back(std::move(comp));
    return out;
}

NormalForm normal_form_coefficients(const RateParameters& params) {
    params.validate();
    const double ell = params.s0 / params.e0;
    if (std::abs(ell - 1.0) > 1e-12) {
        std::ostringstream os;
        os << "transcritical point requires e0 = s0; got e0 = " << params.e0 << ", s0 = " << params.s0;
        throw NoTranscriticalPoint(os.str());
    }
    // Fast field with K_M = 0, written in u = 1 - c^: F(p, u) = -G(p, 1 - u).
    auto F = [ell](double pb, double u) {
        const double c = 1.0 - u;
        return -(1.0 - ell * c) * (1.0 - c - pb);
    };
    // F is quadratic, so these differences are exact up to rounding.
    const double h = 0.25;
    NormalForm nf;
    nf.taylor_a = (F(h, h) - F(h, -h) - F(-h, h) + F(-h, -h)) / (4 * h * h);
    nf.taylor_b = 0.5 * (F(0.0, h) - 2 * F(0.0, 0.0) + F(0.0, -h)) / (h * h);
    return nf;
}

}  // namespace mmqss
