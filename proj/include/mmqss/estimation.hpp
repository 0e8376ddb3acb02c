#pragma once

// Progress-curve synthesis and reduced-model parameter estimation.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmqss/core.hpp"
#include "mmqss/reductions.hpp"

namespace mmqss {

struct ProgressCurve {
    std::vector<double> times;
    std::vector<double> p;
    std::optional<double> e0;
    std::optional<double> s0;
    double noise_sd = 0.0;
    std::optional<std::uint64_t> seed;

    /// Throws InvalidParameters unless times are strictly increasing and all
    /// values are finite.
    void validate() const;
};

/// p(t) from a reference mass-action run (rtol 1e-10) plus N(0, noise_sd)
/// drawn independently per sample index, so results depend only on `seed`.
ProgressCurve synthesize(const RateParameters& params, const std::vector<double>& sample_times,
                         double noise_sd = 0.0, std::uint64_t seed = 0);

/// Reads a `t,p` CSV with header. Throws IoError / InvalidParameters.
ProgressCurve read_progress_curve(std::istream& in);
ProgressCurve read_progress_curve(const std::string& path);
void write_progress_curve(std::ostream& out, const ProgressCurve& curve);

// Parameter names understood by the fitter: k1, koff, kcat, e0, s0, KM, V.
// Each model needs a subset of the derived set {kcat, KM, V, e0, s0}:
//   RQSSA          kcat, s0          p = s0 (1 - exp(-kcat t))
//   SQSSA_P        V, KM, s0
//   TQSSA          kcat, KM, e0, s0
//   TQSSA_PRACTICE kcat, KM, e0, s0
// kcat may come from V / e0, V from kcat e0 and KM from (koff + kcat) / k1.

struct FreeParameter {
    std::string name;
    double initial = 1.0;
    double lower = 0.0;  ///< exclusive when 0
    double upper = std::numeric_limits<double>::infinity();
};

struct FitSpec {
    ReducedModelKind model = ReducedModelKind::RQSSA;
    std::vector<FreeParameter> free;
    std::map<std::string, double> fixed;
    double step_tol = 1e-10;  ///< relative parameter change
    double grad_tol = 1e-12;  ///< scaled gradient relative to the residual sum
    int max_iterations = 200;
    double ode_tol = 1e-10;
    std::vector<double> weights;  ///< per-point, empty for unweighted
    RegimeThresholds thresholds;

    void validate() const;
};

struct FitResult {
    ReducedModelKind model = ReducedModelKind::RQSSA;
    std::map<std::string, double> estimates;  ///< free parameters
    std::map<std::string, double> resolved;   ///< every derived value used by the model
    std::vector<double> residuals;            ///< data - model (weighted)
    double ssr = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string termination;
    std::vector<double> ssr_history;  ///< accepted steps, starting at the guess
    double condition_number = 0.0;    ///< of the relative-sensitivity Jacobian
    std::vector<std::string> warnings;
    std::optional<RegimeReport> regime;
    std::optional<RateParameters> regime_params;
};

/// Model p at `times` for a complete set of named values.
std::vector<double> evaluate_model(ReducedModelKind model, const std::map<std::string, double>& values,
                                   const std::vector<double>& times, double ode_tol = 1e-10);

FitResult fit(const ProgressCurve& curve, const FitSpec& spec);

}  // namespace mmqss
