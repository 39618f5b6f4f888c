"""Numerical checks of the gate's mathematical guarantees.

Three executable facts:

* the grid maximum of tau*sigma(tau) never exceeds 1/(e*alpha), the
  closed-form unconstrained maximum of tau*exp(-alpha*tau) at tau=1/alpha
  (the cosine factor only lowers it);
* the convergence-bound arithmetic: with step size c/sqrt(T) the three
  terms are F_gap/(c sqrt(T)), L c sigma^2 / (2 sqrt(T)) and
  L c G / (e alpha sqrt(T)), the last depending on alpha alone;
* the per-step norm identity: every gated-Adam update satisfies
  ||step||_inf <= eta * sigma_t * rho_t with rho_t the max bias-corrected
  ratio, which the audit re-checks record by record.

The bound comparison runs only where L and F_gap are exact (the quadratic
task); G and sigma^2 are empirical sup-estimates from the trace and are
labeled as such. rho <= 1 is measured, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gate import StalenessGate, gate_curve
from .simulator import Trace

STEP_BOUND_REL_TOL = 1e-12

__all__ = ["TheoryInputs", "max_tau_sigma", "bound_terms", "audit_run", "STEP_BOUND_REL_TOL"]


@dataclass(frozen=True)
class TheoryInputs:
    """Constants feeding the bound: all positive, horizon a positive integer."""

    l_smooth: float
    grad_bound: float
    sigma_sq: float
    step_const: float
    horizon: int
    f_gap: float

    def __post_init__(self):
        for name in ("l_smooth", "grad_bound", "sigma_sq", "step_const", "f_gap"):
            if not (getattr(self, name) > 0.0):
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not (isinstance(self.horizon, int) and self.horizon >= 1):
            raise ValueError(f"horizon must be an integer >= 1, got {self.horizon}")


def max_tau_sigma(gate: StalenessGate, grid_step: float = 1e-3) -> tuple[float, float]:
    """Grid-search (argmax, max) of tau*sigma(tau).

    The grid covers [0, max(2*tau_cut, 4/alpha)], which contains the
    unconstrained argmax 1/alpha whenever alpha > 0. Pure exponential
    decay with alpha = 0 has unbounded tau*sigma and is rejected.
    """
    if not (0.0 < grid_step <= 1e-3):
        raise ValueError(f"grid_step must be in (0, 1e-3], got {grid_step}")
    hi = 0.0
    if not gate.infinite_cutoff:
        hi = 2.0 * gate.tau_cut
    if gate.alpha > 0.0:
        hi = max(hi, 4.0 / gate.alpha)
    elif gate.infinite_cutoff:
        raise ValueError("tau*sigma is unbounded for alpha=0 with no cutoff")
    taus = np.arange(0.0, hi + grid_step, grid_step)
    values = taus * gate_curve(gate, taus)
    best = int(np.argmax(values))
    return float(taus[best]), float(values[best])


def bound_terms(inputs: TheoryInputs, alpha: float) -> tuple[float, float, float]:
    """(optimization, noise, staleness) terms of the rate bound.

    Each scales as 1/sqrt(T); only the staleness term depends on alpha,
    through the 1/(e*alpha) envelope of tau*sigma(tau).
    """
    if not (alpha > 0.0):
        raise ValueError(f"alpha must be > 0, got {alpha}")
    sqrt_t = math.sqrt(inputs.horizon)
    opt = inputs.f_gap / (inputs.step_const * sqrt_t)
    noise = inputs.l_smooth * inputs.step_const * inputs.sigma_sq / (2.0 * sqrt_t)
    staleness = inputs.l_smooth * inputs.step_const * inputs.grad_bound / (math.e * alpha * sqrt_t)
    return opt, noise, staleness


def audit_run(trace: Trace) -> dict:
    """Audit a gated-Adam trace: norm identity, rho statistics, bound check.

    Requires the per-record fields the simulator writes for the Adam
    family (sigma, rho, step norms). Reports, per applied step, whether
    ||step||_inf <= eta*sigma*rho held to STEP_BOUND_REL_TOL relative, the
    fraction of steps with rho <= 1, the mean gate weight over all
    consumed steps, and (when exact gradients were traced) the
    sigma-weighted mean squared gradient norm next to the bound's
    right-hand side evaluated with empirical G and sigma^2 estimates.
    """
    records = trace.records
    if not records:
        raise ValueError("audit_run needs a non-empty trace")
    applied = [rec for rec in records if rec.applied]
    if any(rec.rho is None for rec in applied):
        raise ValueError("trace lacks Adam ratio maxima; audit_run only covers the gated-Adam family")

    violations = 0
    for rec in applied:
        bound = (trace.eta * rec.sigma) * rec.rho
        if rec.step_inf_norm > bound * (1.0 + STEP_BOUND_REL_TOL):
            violations += 1

    rhos = [rec.rho for rec in applied]
    sigma_bar = float(np.mean([rec.sigma for rec in records]))
    report: dict = {
        "steps": len(records),
        "applied_steps": len(applied),
        "step_bound_violations": violations,
        "step_bound_rel_tol": STEP_BOUND_REL_TOL,
        "rho_max": max(rhos) if rhos else None,
        "rho_le_one_frac": (sum(1 for x in rhos if x <= 1.0) / len(rhos)) if rhos else None,
        "sigma_bar": sigma_bar,
        "weighted_grad_norm_avg": None,
        "bound": None,
    }

    if all(rec.grad_norm_sq is not None for rec in records):
        weighted = float(np.mean([rec.sigma * rec.grad_norm_sq for rec in records]))
        report["weighted_grad_norm_avg"] = weighted
        if (
            trace.l_smooth is not None
            and trace.f_gap is not None
            and trace.f_gap > 0.0
            and trace.alpha > 0.0
        ):
            horizon = len(records)
            c = trace.eta * math.sqrt(horizon)
            g_est = math.sqrt(max(rec.grad_norm_sq for rec in records))
            sigma_sq_est = max(rec.delta_norm_sq for rec in records)
            inputs = TheoryInputs(
                l_smooth=trace.l_smooth,
                grad_bound=g_est,
                sigma_sq=sigma_sq_est,
                step_const=c,
                horizon=horizon,
                f_gap=trace.f_gap,
            )
            opt, noise, staleness = bound_terms(inputs, trace.alpha)
            rhs = opt + noise + staleness
            report["bound"] = {
                "optimization_term": opt,
                "noise_term": noise,
                "staleness_term": staleness,
                "rhs": rhs,
                "lhs": weighted,
                "holds": weighted <= rhs,
                "step_const": c,
                "grad_bound_estimate": g_est,
                "sigma_sq_estimate": sigma_sq_est,
                "cutoff_covers_argmax": trace.tau_cut >= 1.0 / trace.alpha,
            }
    return report
