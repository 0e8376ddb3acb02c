#pragma once

/**
 * @file core.hpp
 * @brief Reaction parameterization for the Michaelis--Menten mechanism
 *        S + E <-> C -> E + P and every derived constant built from it.
 *
 * All quantities are dimensional unless the field name says otherwise.
 * Degenerate parameter sets (k_cat = 0 or K_M = 0) never throw here: the
 * affected fields become exact +inf or 0 and a `degenerate` flag is raised so
 * that critical-manifold studies can zero Tikhonov--Fenichel parameters.
 */

#include <string>
#include <string_view>
#include <vector>

namespace mmqss {

/// The five dimensional inputs that define one reaction instance.
struct RateParameters {
    double k1 = 1.0;     ///< association rate, 1/(concentration*time)
    double k_off = 1.0;  ///< dissociation rate k_{-1}, 1/time
    double k_cat = 1.0;  ///< catalytic rate k_2, 1/time
    double e0 = 1.0;     ///< total enzyme
    double s0 = 1.0;     ///< initial substrate

    /// Throws InvalidParameters unless k1 > 0, k_off >= 0, k_cat >= 0,
    /// e0 > 0, s0 > 0 and all values are finite.
    void validate() const;

    double michaelis_constant() const { return (k_off + k_cat) / k1; }
    double dissociation_constant() const { return k_off / k1; }

    /// Copy with K_M rescaled to `km` while k1 and the ratio k_off/k_cat are kept.
    RateParameters with_michaelis_constant(double km) const;
};

struct DerivedConstants {
    double K_M = 0.0;     ///< (k_off + k_cat) / k1
    double K_S = 0.0;     ///< k_off / k1
    double V = 0.0;       ///< k_cat * e0
    double lambda = 0.0;  ///< sup of c along the reaction, h^-(0)
};

DerivedConstants derive_constants(const RateParameters& params);

/// (e0 + K_M + q)^2 - 4 e0 q written without cancellation, q = s0 - p.
double complex_discriminant(double e0, double km, double q);

/// Nullclines of the mass-action system in the (s,c) and (p,c) planes.
class Nullclines {
public:
    explicit Nullclines(const RateParameters& params);

    /// c-nullcline in (s,c): e0 s / (K_M + s).
    double c_nullcline(double s) const;
    /// s-nullcline in (s,c): e0 s / (K_S + s).
    double s_nullcline(double s) const;
    /// Smaller root of c^2 - (e0+K_M+s0-p) c + e0 (s0-p); the c-nullcline
    /// in (p,c). Throws DomainError unless 0 <= p <= s0.
    double h_minus(double p) const;
    double h_plus(double p) const;
    double dh_minus_dp(double p) const;

    /// Unchecked versions, continuous extensions of the formulas for p
    /// slightly outside [0, s0] (used inside integrators).
    double h_minus_unchecked(double p) const;
    double h_plus_unchecked(double p) const;
    double dh_minus_dp_unchecked(double p) const;

private:
    void check_p(double p) const;

    double e0_, s0_, km_, ks_;
};

/// theta(c) = c - h^+(s0 - c), the sharpened contraction factor.
double theta_fn(double c, const RateParameters& params);

struct DimensionlessGroups {
    double eps_SS = 0.0;
    double eta = 0.0;
    double eps_star = 0.0;
    double eps_SM = 0.0;
    double sigma = 0.0;
    double kappa = 0.0;
    double nu = 0.0;
    double nu_tilde = 0.0;
    double beta = 0.0;
    double mu = 0.0;
    double alpha = 0.0;
    double ell = 0.0;
    double eps_ratio = 0.0;
    double eps_under = 0.0;
    double eps_tilde = 0.0;
    double eps_T = 0.0;
    double eps_D = 0.0;
    double eps_L = 0.0;
    double eps_LT = 0.0;
    double theta_ext = 0.0;
    bool degenerate = false;  ///< some field is an explicit +inf / limit value
};

DimensionlessGroups dimensionless_groups(const RateParameters& params);

struct Timescales {
    double t_C = 0.0;
    double t_D = 0.0;
    double t_Cstar = 0.0;
    double t_P = 0.0;
    double t_ell = 0.0;
    double t_slow = 0.0;
    bool degenerate = false;
};

Timescales timescales(const RateParameters& params);

/// Rescaled clocks used throughout the analysis, all as functions of
/// dimensional time t.
class TimeChart {
public:
    explicit TimeChart(const RateParameters& params);

    double tau(double t) const;        ///< t / t_C
    double slow_T(double t) const;     ///< eps_SS * tau
    double T_bar(double t) const;      ///< t / t_D
    double T_tilde(double t) const;    ///< k_cat * t
    double T_z(double t) const;        ///< t / t_P
    double tau_star(double t) const;   ///< T_tilde / (eps_star * nu)

private:
    Timescales scales_;
    DimensionlessGroups groups_;
    double k_cat_;
};

enum class Verdict { Valid, Marginal, Invalid };

std::string_view to_string(Verdict v);

struct RegimeThresholds {
    double valid = 0.1;
    double marginal = 0.3;
};

struct RegimeEntry {
    std::string approximation;  ///< "sQSSA", "rQSSA", "extended", "tQSSA"
    std::string qualifier;      ///< name of the governing small parameter
    double value = 0.0;
    double threshold = 0.0;     ///< the `valid` cutoff
    Verdict verdict = Verdict::Invalid;
    std::string note;
};

struct RegimeReport {
    std::vector<RegimeEntry> entries;
    RegimeThresholds thresholds;

    /// Throws std::out_of_range for an unknown approximation name.
    const RegimeEntry& at(std::string_view approximation) const;
};

/// Pure threshold comparison of each approximation's qualifier.
RegimeReport classify_regime(const DimensionlessGroups& groups,
                             RegimeThresholds thresholds = {});

}  // namespace mmqss
