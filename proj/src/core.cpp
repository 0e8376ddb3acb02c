#include "mmqss/core.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mmqss/errors.hpp"

namespace mmqss {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// a / b with b == 0 mapped to +inf (a > 0) or 0 (a == 0).
double ratio_or_inf(double a, double b) {
    if (b != 0.0) return a / b;
    return a == 0.0 ? 0.0 : kInf;
}

}  // namespace

void RateParameters::validate() const {
    auto bad = [](const char* what, double v) {
        std::ostringstream os;
        os << what << " = " << v;
        throw InvalidParameters(os.str());
    };
    if (!std::isfinite(k1) || k1 <= 0.0) bad("k1 must be finite and > 0; got k1", k1);
    if (!std::isfinite(k_off) || k_off < 0.0) bad("k_off must be finite and >= 0; got k_off", k_off);
    if (!std::isfinite(k_cat) || k_cat < 0.0) bad("k_cat must be finite and >= 0; got k_cat", k_cat);
    if (!std::isfinite(e0) || e0 <= 0.0) bad("e0 must be finite and > 0; got e0", e0);
    if (!std::isfinite(s0) || s0 <= 0.0) bad("s0 must be finite and > 0; got s0", s0);
}

RateParameters RateParameters::with_michaelis_constant(double km) const {
    RateParameters out = *this;
    const double total = k_off + k_cat;
    if (total == 0.0) {
        out.k_off = 0.5 * km * k1;
        out.k_cat = 0.5 * km * k1;
    } else {
        out.k_off = km * k1 * (k_off / total);
        out.k_cat = km * k1 * (k_cat / total);
    }
    return out;
}

double complex_discriminant(double e0, double km, double q) {
    const double d = e0 - q;
    return d * d + 2.0 * km * (e0 + q) + km * km;
}

DerivedConstants derive_constants(const RateParameters& params) {
    params.validate();
    DerivedConstants out;
    out.K_M = params.michaelis_constant();
    out.K_S = params.dissociation_constant();
    out.V = params.k_cat * params.e0;
    const double a = params.e0 + out.K_M + params.s0;
    const double root = std::sqrt(complex_discriminant(params.e0, out.K_M, params.s0));
    out.lambda = 2.0 * params.e0 * params.s0 / (a + root);
    if (out.K_M == 0.0) out.lambda = std::min(params.e0, params.s0);
    return out;
}

Nullclines::Nullclines(const RateParameters& params)
    : e0_(params.e0),
      s0_(params.s0),
      km_(params.michaelis_constant()),
      ks_(params.dissociation_constant()) {
    params.validate();
}

double Nullclines::c_nullcline(double s) const {
    if (s < 0.0) throw DomainError("c_nullcline requires s >= 0");
    if (s == 0.0) return 0.0;
    return e0_ * s / (km_ + s);
}

double Nullclines::s_nullcline(double s) const {
    if (s < 0.0) throw DomainError("s_nullcline requires s >= 0");
    if (s == 0.0) return 0.0;
    return e0_ * s / (ks_ + s);
}

void Nullclines::check_p(double p) const {
    if (!(p >= 0.0 && p <= s0_)) {
        std::ostringstream os;
        os << "p = " << p << " outside [0, s0 = " << s0_ << "]";
        throw DomainError(os.str());
    }
}

double Nullclines::h_minus(double p) const {
    check_p(p);
    return h_minus_unchecked(p);
}

double Nullclines::h_plus(double p) const {
    check_p(p);
    return h_plus_unchecked(p);
}

double Nullclines::dh_minus_dp(double p) const {
    check_p(p);
    return dh_minus_dp_unchecked(p);
}

double Nullclines::h_minus_unchecked(double p) const {
    const double q = s0_ - p;
    const double a = e0_ + km_ + q;
    const double root = std::sqrt(complex_discriminant(e0_, km_, q));
    if (a + root == 0.0) return 0.0;
    return 2.0 * e0_ * q / (a + root);
}

double Nullclines::h_plus_unchecked(double p) const {
    const double q = s0_ - p;
    const double a = e0_ + km_ + q;
    return 0.5 * (a + std::sqrt(complex_discriminant(e0_, km_, q)));
}

double Nullclines::dh_minus_dp_unchecked(double p) const {
    // dh^-/dq = (sqrt(D) - (a - 2 e0)) / (2 sqrt(D)), with
    // D - (a - 2 e0)^2 = 4 e0 K_M used to avoid cancellation.
    const double q = s0_ - p;
    const double a = e0_ + km_ + q;
    const double root = std::sqrt(complex_discriminant(e0_, km_, q));
    const double shifted = a - 2.0 * e0_;
    double numer;
    if (shifted > 0.0)
        numer = 4.0 * e0_ * km_ / (root + shifted);
    else
        numer = root - shifted;
    if (root == 0.0) return -0.5;  // K_M = 0, q = e0: corner of the critical set
    return -numer / (2.0 * root);
}

double theta_fn(double c, const RateParameters& params) {
    Nullclines nc(params);
    return c - nc.h_plus_unchecked(params.s0 - c);
}

DimensionlessGroups dimensionless_groups(const RateParameters& params) {
    const DerivedConstants dc = derive_constants(params);
    const double km = dc.K_M;
    const double e0 = params.e0;
    const double s0 = params.s0;
    const double k_off = params.k_off;
    const double k_cat = params.k_cat;

    DimensionlessGroups g;
    g.eps_SS = e0 / (km + s0);
    g.eta = ratio_or_inf(e0, km);
    g.eps_star = km / e0;
    g.eps_SM = g.eps_star + s0 / e0;
    g.sigma = ratio_or_inf(s0, km);
    if (k_cat == 0.0) {
        g.kappa = kInf;
        g.nu = 0.0;
        g.nu_tilde = 0.0;
        g.alpha = 1.0;
    } else {
        g.kappa = k_off / k_cat;
        g.nu = k_cat / (k_off + k_cat);
        g.nu_tilde = ratio_or_inf(k_cat, k_off);
        g.alpha = k_off / (k_off + k_cat);
    }
    g.beta = km / (km + s0);
    g.mu = s0 / (km + s0);
    g.ell = s0 / e0;

    const Timescales ts = timescales(params);
    g.eps_ratio = ts.t_D == kInf ? 0.0 : ts.t_C / ts.t_D;

    const double gap = e0 - dc.lambda;  // > 0 whenever K_M > 0
    if (km > 0.0 && gap > 0.0) {
        g.eps_under = km / gap;
        g.eps_tilde = dc.K_S / gap;
    } else {
        // K_M -> 0 limits: eps_under -> max(0, (s0 - e0) / e0).
        g.eps_under = s0 > e0 ? (s0 - e0) / e0 : 0.0;
        g.eps_tilde = g.alpha * g.eps_under;
    }

    if (k_cat == 0.0)
        g.eps_T = 0.0;
    else if (ts.t_Cstar == kInf)
        g.eps_T = kInf;
    else
        g.eps_T = ts.t_Cstar / ts.t_P;

    const double eta_frac = std::isinf(g.eta) ? 1.0 : g.eta / (1.0 + g.eta);
    const double under_frac = g.eps_under / (1.0 + g.eps_under);
    g.eps_D = (dc.lambda / s0) * g.nu * under_frac;
    g.eps_L = eta_frac * g.nu * under_frac;
    g.eps_LT = km == 0.0
                   ? 0.0
                   : eta_frac * g.nu * 2.0 * km / (km + std::sqrt(km * km + 4.0 * e0 * km));
    g.theta_ext = std::isinf(g.sigma) ? 1.0 : g.sigma / (g.alpha + g.sigma);

    g.degenerate = km == 0.0 || k_cat == 0.0 || ts.degenerate;
    return g;
}

Timescales timescales(const RateParameters& params) {
    const DerivedConstants dc = derive_constants(params);
    const double e0 = params.e0;
    const double s0 = params.s0;
    const double k1 = params.k1;
    const double k_cat = params.k_cat;

    Timescales ts;
    ts.t_C = 1.0 / (k1 * (s0 + dc.K_M));
    ts.t_D = ratio_or_inf(dc.K_M + s0, dc.V);
    const double root = std::sqrt(complex_discriminant(e0, dc.K_M, s0));
    ts.t_Cstar = ratio_or_inf(1.0, k1 * root);
    ts.t_P = ratio_or_inf(s0, k_cat * dc.lambda);
    if (s0 <= e0)
        ts.t_ell = 0.0;
    else
        ts.t_ell = ratio_or_inf(s0 - e0, k_cat * e0);
    ts.t_slow = ratio_or_inf(1.0, k_cat);
    ts.degenerate = std::isinf(ts.t_D) || std::isinf(ts.t_Cstar) || std::isinf(ts.t_P) ||
                    std::isinf(ts.t_ell) || std::isinf(ts.t_slow);
    return ts;
}

TimeChart::TimeChart(const RateParameters& params)
    : scales_(timescales(params)), groups_(dimensionless_groups(params)), k_cat_(params.k_cat) {}

double TimeChart::tau(double t) const { return t / scales_.t_C; }
double TimeChart::slow_T(double t) const { return groups_.eps_SS * tau(t); }
double TimeChart::T_bar(double t) const { return t / scales_.t_D; }
double TimeChart::T_tilde(double t) const { return k_cat_ * t; }
double TimeChart::T_z(double t) const { return t / scales_.t_P; }
double TimeChart::tau_star(double t) const {
    return T_tilde(t) / (groups_.eps_star * groups_.nu);
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::Valid: return "valid";
        case Verdict::Marginal: return "marginal";
        case Verdict::Invalid: return "invalid";
    }
    return "invalid";
}

const RegimeEntry& RegimeReport::at(std::string_view approximation) const {
    for (const auto& e : entries)
        if (e.approximation == approximation) return e;
    throw std::out_of_range("no regime entry named " + std::string(approximation));
}

RegimeReport classify_regime(const DimensionlessGroups& groups, RegimeThresholds thresholds) {
    if (!(thresholds.valid > 0.0 && thresholds.valid < thresholds.marginal))
        throw InvalidParameters("regime thresholds must satisfy 0 < valid < marginal");

    auto judge = [&](double value) {
        if (value <= thresholds.valid) return Verdict::Valid;
        if (value <= thresholds.marginal) return Verdict::Marginal;
        return Verdict::Invalid;
    };
    auto entry = [&](std::string name, std::string qualifier, double value, std::string note) {
        return RegimeEntry{std::move(name), std::move(qualifier), value, thresholds.valid,
                           judge(value), std::move(note)};
    };

    RegimeReport report;
    report.thresholds = thresholds;
    report.entries.push_back(entry("sQSSA", "eta", groups.eta, ""));
    report.entries.push_back(entry("rQSSA", "eps_under", groups.eps_under, ""));
    std::ostringstream ext;
    ext << "requires eps_SS and beta of order one; eps_SS=" << groups.eps_SS
        << ", beta=" << groups.beta;
    report.entries.push_back(entry("extended", "nu", groups.nu, ext.str()));
    report.entries.push_back(entry("tQSSA", "eps_LT", groups.eps_LT, ""));
    return report;
}

}  // namespace mmqss
