#pragma once

/**
 * @file ode.hpp
 * @brief Adaptive integration of the mass-action system and of arbitrary
 *        small right-hand sides (reduced models, scalar test problems).
 *
 * Two embedded schemes are provided:
 *  - Dormand--Prince 5(4), explicit, FSAL;
 *  - a five-stage L-stable SDIRK of order 4 with an embedded order-3
 *    solution, Newton iterations on (I - h*gamma*J).
 * `Method::Auto` starts explicitly and hands over to the implicit scheme once
 * the step the controller asks for times the spectral radius of the Jacobian
 * leaves the explicit stability interval.
 */

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmqss/core.hpp"

namespace mmqss {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct OdeSystem {
    std::size_t dim = 0;
    std::function<void(double t, const Vector& y, Vector& dydt)> rhs;
    /// Optional analytic Jacobian; forward differences are used otherwise.
    std::function<void(double t, const Vector& y, Matrix& jac)> jacobian;
};

enum class Method { Auto, ExplicitAdaptive, ImplicitAdaptive };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

struct IntegratorConfig {
    double rtol = 1e-8;
    double atol = 1e-10;
    Method method = Method::Auto;
    double max_step = std::numeric_limits<double>::infinity();
    /// Record every accepted step (plus the output grid, if any). When false
    /// and an output grid is given, only the grid samples are recorded.
    bool dense_output = true;
    /// Optional sample times inside (t0, t1]; the integrator lands on each.
    std::vector<double> output_times;
    double initial_step = 0.0;  ///< 0 selects the step automatically
    std::size_t max_steps = 20'000'000;
    /// Reject steps that push a component below -atol (concentrations).
    bool enforce_nonnegative = false;

    void validate() const;
};

struct TrajectoryMeta {
    std::string model;
    std::vector<std::string> labels;
    std::optional<RateParameters> params;
    double rtol = 0.0;
    double atol = 0.0;
    Method requested = Method::Auto;
    std::string method_used;
    std::size_t steps = 0;
    std::size_t rejected = 0;
    std::size_t explicit_steps = 0;
    std::size_t implicit_steps = 0;
    double stiffness_switch_time = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, std::string> notes;
};

class Trajectory {
public:
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> derivatives;
    TrajectoryMeta meta;

    std::size_t size() const { return times.size(); }
    std::size_t dim() const { return states.empty() ? 0 : static_cast<std::size_t>(states.front().size()); }

    /// Cubic Hermite interpolation between recorded samples.
    Vector interpolate(double t) const;
    std::vector<double> component(std::size_t index) const;
    /// Index of the component named `label` in meta.labels, if present.
    std::optional<std::size_t> index_of(std::string_view label) const;
};

/// Integrates `system` from (t0, y0) to t1 under `config`.
Trajectory integrate(const OdeSystem& system, const Vector& y0, double t0, double t1,
                     const IntegratorConfig& config);

// ---------------------------------------------------------------------------
// Mass-action Michaelis--Menten system.

struct MMState {
    double s = 0.0;
    double c = 0.0;
    double p = 0.0;

    /// Free enzyme, e0 - c; never stored.
    double free_enzyme(double e0) const { return e0 - c; }
};

struct MMDerivative {
    double ds = 0.0;
    double dc = 0.0;
    double dp = 0.0;
};

MMDerivative mass_action_rhs(const MMState& state, const RateParameters& params);

/// Three-dimensional (s, c, p) system with analytic Jacobian.
OdeSystem mass_action_system(const RateParameters& params);

/// Integrates mass action from `initial` (default (s0, 0, 0)) over [0, t_end].
Trajectory simulate_mass_action(const RateParameters& params, double t_end,
                                IntegratorConfig config = {},
                                std::optional<MMState> initial = std::nullopt);

/// End-of-transient marker: time of the interior maximum of c, or, for a
/// monotone c, the first time |dc/dt| drops below rtol * max|dc/dt|.
double detect_transient_end(const Trajectory& traj, std::optional<double> rtol = std::nullopt);

/// `t,s,c,p,e` with 17 significant digits; `traj` must carry s, c, p.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double e0);

/// Formats a double with 17 significant digits ("inf"/"-inf"/"nan" otherwise).
std::string format_double(double value);

}  // namespace mmqss
