"""Michaelis-Menten quasi-steady-state reductions, error envelopes and
progress-curve fitting."""

from ._core import (
    Error,
    RateParameters,
    Trajectory,
    classify_regime,
    closed_form_rqssa,
    derive_constants,
    detect_transient_end,
    dimensionless_groups,
    envelope,
    envelope_kinds,
    fit,
    generic_gronwall,
    h_minus,
    h_plus,
    hyperbolicity_margin,
    invariance_residual,
    normal_form_coefficients,
    reduced_kinds,
    reduced_rhs,
    refine_manifold,
    riccati_base_point,
    simulate,
    simulate_reduced,
    synthesize,
    timescales,
    verify,
)

# Parameter sets of the reference figures.
PRESETS = {
    "fig-final": RateParameters(k1=20.0, k_off=10.0, k_cat=10.0, e0=10.0, s0=1000.0),
    "fig-21-left": RateParameters(k1=0.1, k_off=10.0, k_cat=10.0, e0=1.0, s0=20.0),
    "fig-21-right": RateParameters(k1=1.0, k_off=1.0, k_cat=0.01, e0=2.02, s0=1.01),
    "fig-eqssa": RateParameters(k1=10.0, k_off=10.0, k_cat=0.01, e0=2.001, s0=1.0),
}

__all__ = [name for name in dir() if not name.startswith("_")]
