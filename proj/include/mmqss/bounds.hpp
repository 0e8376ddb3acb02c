#pragma once

// Energy-method error envelopes A e^{-r t} + B and their numerical check
// along computed trajectories.

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmqss/core.hpp"
#include "mmqss/ode.hpp"

namespace mmqss {

enum class EnvelopeKind {
    SUBSTRATE_CONSERVATION,
    SQSSA_ENSLAVEMENT,
    RQSSA_DISSIPATION,
    TQSSA_NULLCLINE,
    TQSSA_LIMSUP_TIGHT,
    TQSSA_PRACTICE,
    GENERIC,
};

std::string_view to_string(EnvelopeKind kind);
EnvelopeKind parse_envelope_kind(std::string_view name);
/// The six named (non-generic) kinds.
const std::vector<EnvelopeKind>& named_envelope_kinds();

struct Envelope {
    EnvelopeKind kind = EnvelopeKind::GENERIC;
    std::string quantity;  ///< human-readable description of the bounded quantity
    double A = 0.0;
    double r = 0.0;  ///< 1/time
    double B = 0.0;
    /// A priori bound on |quantity|; B above it makes the envelope vacuous.
    double range = std::numeric_limits<double>::infinity();
    bool vacuous = false;

    double eps_D = std::numeric_limits<double>::quiet_NaN();
    double eps_L = std::numeric_limits<double>::quiet_NaN();
    double eps_LT = std::numeric_limits<double>::quiet_NaN();
    /// Kind-specific numbers (alternative offsets, contractivity constants).
    std::map<std::string, double> extras;
    std::optional<RateParameters> params;

    double operator()(double t) const;
};

Envelope envelope(EnvelopeKind kind, const RateParameters& params);

/// Signed value of the envelope's quantity at a mass-action state.
double envelope_quantity(EnvelopeKind kind, const MMState& x, const RateParameters& params);

struct GronwallSpec {
    double zeta = 0.0;
    double sup_dh = 0.0;
    double sup_xdot = 0.0;
    double eps = 1.0;
    double z0 = 0.0;

    void validate() const;
};

/// |z|(T) <= z0 e^{-zeta T / (2 eps)} + eps sup_dh sup_xdot / zeta.
Envelope generic_gronwall(const GronwallSpec& spec);

/// Constants of the (p, c) tQSSA problem in dimensional time (eps = 1):
/// zeta_T, max|dh^-/dp| = e0/(K_M+e0), sup|dp/dt| = k2 lambda, z0 = lambda.
GronwallSpec tqssa_gronwall_spec(const RateParameters& params);

struct BoundReport {
    bool holds = false;
    double max_violation = 0.0;  ///< magnitude of the most negative margin, 0 if none
    double slack = 0.0;
    double floor = 0.0;  ///< slack * env.range, the absolute part of the tolerance
    std::vector<double> times;
    std::vector<double> quantity;
    std::vector<double> bound;
    std::vector<double> margin;
    std::optional<double> limsup_estimate;
    double tail_start = std::numeric_limits<double>::quiet_NaN();
};

using QuantityFn = std::function<double(const MMState&)>;

/// Samples every recorded step plus `log_samples` log-spaced interpolated
/// times; margin = env(t)(1 + slack) + slack * env.range - |quantity(t)|.
BoundReport verify(const Trajectory& traj, const Envelope& env, double slack = 1e-6,
                   std::size_t log_samples = 400);
BoundReport verify(const Trajectory& traj, const Envelope& env, const QuantityFn& quantity,
                   double slack = 1e-6, std::size_t log_samples = 400);

/// max |quantity| over the last tail_fraction of the trajectory's span.
/// Throws WindowTooShort unless the window starts at or after 5/r.
double estimate_limsup(const Trajectory& traj, const Envelope& env, double tail_fraction = 0.2);
double estimate_limsup(const Trajectory& traj, const Envelope& env, const QuantityFn& quantity,
                       double tail_fraction = 0.2);

}  // namespace mmqss
