#pragma once

// Reduced (quasi-steady-state) models of the Michaelis--Menten mechanism and
// the geometric probes used to judge them.

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmqss/core.hpp"
#include "mmqss/ode.hpp"

namespace mmqss {

enum class ReducedModelKind { SQSSA_S, SQSSA_P, TQSSA, TQSSA_PRACTICE, EXTENDED, EQSSA_SEGEL, RQSSA };

std::string_view to_string(ReducedModelKind kind);
ReducedModelKind parse_reduced_kind(std::string_view name);
const std::vector<ReducedModelKind>& all_reduced_kinds();

/// True when the model evolves s (false: it evolves p).
bool integrates_substrate(ReducedModelKind kind);
/// Segel--Slemrod's extended form is kept only as a baseline.
bool historical_refuted(ReducedModelKind kind);

/// Right-hand side of the one-dimensional reduced model at `x` (s or p).
/// Throws DomainError outside [0, s0].
double reduced_rhs(ReducedModelKind kind, double x, const RateParameters& params);

/// The same right-hand side as an OdeSystem. Slight overshoots of [0, s0]
/// produced inside a step are evaluated with the analytic continuation of the
/// formulas (which points back into the interval).
OdeSystem reduced_system(ReducedModelKind kind, const RateParameters& params);

/// Canonical starting value: s0 or 0, (sqrt(2)-1) s0 for EQSSA_SEGEL and the
/// Riccati base point s* for EXTENDED.
double reduced_initial_state(ReducedModelKind kind, const RateParameters& params);

/// Full (s, c, p) state implied by the reduced variable.
MMState reconstruct_state(ReducedModelKind kind, double x, const RateParameters& params);

struct ReducedStart {
    double t0 = 0.0;
    std::optional<double> x0;  ///< defaults to reduced_initial_state
};

/// Integrates the reduced model over [start.t0, t_end] and returns a
/// trajectory with reconstructed s, c, p components.
Trajectory simulate_reduced(ReducedModelKind kind, const RateParameters& params, double t_end,
                            IntegratorConfig config = {}, ReducedStart start = {});

enum class ClosedFormKind { RQSSA_P, INNER_LAYER };

/// RQSSA_P: s0 (1 - exp(-k2 t)); INNER_LAYER: eps_SS s0 (1 - exp(-t / t_C)).
double closed_form(ClosedFormKind kind, double t, const RateParameters& params);

struct RiccatiBasePoint {
    double mu = 0.0;
    double s_bar = 0.0;  ///< dimensionless, s / s0
    double c_bar = 0.0;  ///< dimensionless, c / (eps_SS s0)
    double s = 0.0;
    double c = 0.0;
};

/// Stable equilibrium of dc/dtau = 1 - 2c + mu c^2 and the matching substrate.
RiccatiBasePoint riccati_base_point(const RateParameters& params);
/// Same, for a given mu in [0, 1].
RiccatiBasePoint riccati_base_point(double mu);

// ---------------------------------------------------------------------------
// Invariance equation in the (s, c) plane.

struct ManifoldGraph {
    std::function<double(double)> h;
    std::function<double(double)> dh;  ///< optional; centered differences otherwise
};

ManifoldGraph c_nullcline_graph(const RateParameters& params);
ManifoldGraph s_nullcline_graph(const RateParameters& params);

struct InvarianceResidual {
    std::vector<double> s;
    /// g - h' f in concentration / time.
    std::vector<double> residual;
    /// residual / (k1 e0 s0): the same quantity in the (s/s0, c/(eps_SS s0), t/t_C) chart.
    std::vector<double> scaled;

    double sup() const;
    double sup_scaled() const;
};

InvarianceResidual invariance_residual(const ManifoldGraph& manifold, const RateParameters& params,
                                       const std::vector<double>& s_grid);

struct RefinementResult {
    std::vector<double> s;
    /// iterates[0] is h0 on the grid, iterates[n] the n-th refinement.
    std::vector<std::vector<double>> iterates;
    /// Sup of |scaled residual| for each iterate.
    std::vector<double> sup_residuals;
    bool diverged = false;
};

/// Roussel--Fraser functional iteration h <- (k1 e0 s - h' f(s, h)) / (k1 (s + K_M))
/// on a fixed grid. Stops early when the residual grows twice in a row.
RefinementResult refine_manifold(const ManifoldGraph& h0, const RateParameters& params, int n_iter,
                                 const std::vector<double>& s_grid);

// ---------------------------------------------------------------------------
// Critical sets and the transcritical point.

enum class Tfp { KOFF_AND_KCAT, K1, E0, KCAT };

std::string_view to_string(Tfp tfp);
Tfp parse_tfp(std::string_view name);

struct CriticalVertex {
    double x = 0.0;
    double y = 0.0;
    double margin = 0.0;  ///< < 0 attracting, > 0 repelling
};

struct CriticalComponent {
    std::string label;
    std::vector<CriticalVertex> vertices;
};

struct CriticalSetDescription {
    Tfp tfp = Tfp::KOFF_AND_KCAT;
    std::string x_name;
    std::string y_name;
    double ell = 0.0;
    std::vector<CriticalComponent> components;
    std::vector<CriticalVertex> singular_points;
};

/// Critical set of the fast subsystem obtained by zeroing the chosen
/// Tikhonov--Fenichel parameter(s). KOFF_AND_KCAT uses (p/s0, c/s0) with
/// ell = s0/e0; the others use dimensional (s, c) on [0, s0].
CriticalSetDescription critical_set(const RateParameters& params, Tfp tfp, std::size_t samples = 101);

/// d/dc^ [(1 - ell c^)(1 - c^ - p^)] at (p^, c^).
double hyperbolicity_margin(double p_bar, double c_hat, const RateParameters& params);

struct NormalForm {
    double a = 1.0;
    double b = -1.0;
    /// Quadratic Taylor coefficients of the fast vector field at (0, 1), u = 1 - c^.
    double taylor_a = 0.0;
    double taylor_b = 0.0;
};

/// du/dtau* = a p^ u + b u^2 at the transcritical point; requires e0 = s0.
NormalForm normal_form_coefficients(const RateParameters& params);

}  // namespace mmqss
