"""Self-contained property suite behind the `verify` CLI subcommand.

Each check exercises one contract the rest of the lab leans on: gate
identities, the plain-Adam reduction, drop totality, run determinism,
the step-norm audit, quantization round-trips, and gradient correctness.
All checks are fast enough to run on every build.
"""

from __future__ import annotations

import math

import numpy as np

from .config import RunConfig
from .gate import StalenessGate, gate_curve, staleness_weight
from .harness import serialize_result
from .objective import MlpRegressionObjective, QuadraticObjective, finite_diff_check
from .optim import AdamMoments, OuterConfig, cgad_step
from .simulator import FragmentPartition, dequantize_payload, quantize_payload, run_experiment
from .theory import audit_run

__all__ = ["run_all_checks", "ALL_CHECKS"]

VERIFY_ALPHAS = (0.025, 0.05, 0.1, 0.2, 0.4)


def check_gate_identities():
    for alpha in VERIFY_ALPHAS:
        g = StalenessGate(alpha, 32.0)
        if staleness_weight(0.0, g) != 1.0:
            return False, f"sigma(0) != 1 at alpha={alpha}"
        if staleness_weight(32.0, g) != 0.0 or staleness_weight(33.0, g) != 0.0:
            return False, f"sigma not exactly 0 at/past the cutoff at alpha={alpha}"
        taus = np.arange(0.0, 64.0 + 1e-2, 1e-2)
        curve = gate_curve(g, taus)
        if np.any(curve < 0.0) or np.any(curve > 1.0):
            return False, f"sigma left [0,1] at alpha={alpha}"
        if np.any(np.diff(curve) > 1e-15):
            return False, f"sigma not nonincreasing at alpha={alpha}"
        peak = float(np.max(taus * curve))
        limit = 1.0 / (math.e * alpha)
        if peak > limit + 1e-12:
            return False, f"max tau*sigma {peak} exceeds 1/(e*alpha) {limit} at alpha={alpha}"
    flat = StalenessGate(0.0, math.inf)
    if any(staleness_weight(t, flat) != 1.0 for t in (0.0, 1.0, 7.5, 1000.0)):
        return False, "alpha=0 with no cutoff is not identically 1"
    return True, f"identities hold for alpha in {VERIFY_ALPHAS}"


def _reference_adam(params, grads, eta, beta1, beta2, eps):
    p = params.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        ratio = (m / (1.0 - beta1**t)) / (np.sqrt(v / (1.0 - beta2**t)) + eps)
        p = p - eta * ratio
    return p


def check_adam_reduction():
    rng = np.random.default_rng(7)
    params = rng.standard_normal(16)
    grads = [rng.standard_normal(16) for _ in range(100)]
    cfg = OuterConfig.for_method("cgad")
    state = AdamMoments.zeros(16)
    p = params.copy()
    for g in grads:
        p, state, _ = cgad_step(p, g, 0.0, state, cfg)
    ref = _reference_adam(params, grads, cfg.eta, cfg.beta1, cfg.beta2, cfg.epsilon)
    if not np.array_equal(p, ref):
        return False, f"100 tau=0 steps drifted from plain Adam by {np.max(np.abs(p - ref))}"
    return True, "100 tau=0 steps bit-identical to plain Adam"


def check_drop_totality():
    rng = np.random.default_rng(11)
    params = rng.standard_normal(8)
    cfg = OuterConfig.for_method("cgad")
    state = AdamMoments.zeros(8)
    fresh = rng.standard_normal(8)
    stale = rng.standard_normal(8)

    p1, s1, info = cgad_step(params, stale, 33.0, state, cfg)
    if info.applied or s1.t != 0 or not (np.array_equal(p1, params) and np.array_equal(s1.m, state.m)):
        return False, "a dropped update touched state"
    p1, s1, _ = cgad_step(p1, fresh, 0.0, s1, cfg)
    p2, s2, _ = cgad_step(params, fresh, 0.0, state, cfg)
    if not (np.array_equal(p1, p2) and s1.t == s2.t and np.array_equal(s1.m, s2.m)
            and np.array_equal(s1.v, s2.v)):
        return False, "a step after a drop differs from the no-drop step"
    return True, "dropped updates change nothing, including the step counter"


def _small_config(method="cgad", delay=None, rounds=20, quantize=False, extra=None):
    raw = {
        "version": 1,
        "objective": {"kind": "quadratic", "dimension": 12, "spectrum_lo": 0.5,
                      "spectrum_hi": 4.0, "rotation_seed": 5, "noise_scale": 0.05},
        "workers": 2,
        "inner_steps": 4,
        "rounds": rounds,
        "batch_size": 8,
        "eval_batch_size": 32,
        "method": method,
        "delay": delay or {"kind": "fixed", "tau": 0},
        "quantize_queue": quantize,
        "master_seed": 321,
    }
    if extra:
        raw.update(extra)
    return RunConfig.from_dict(raw)


def check_determinism():
    cfg = _small_config(delay={"kind": "uniform_int", "lo": 0, "hi": 6})
    first = serialize_result(run_experiment(cfg))
    second = serialize_result(run_experiment(_small_config(delay={"kind": "uniform_int", "lo": 0, "hi": 6})))
    if first != second:
        return False, "two runs of the same config serialized differently"
    return True, "repeated run serialized byte-identically"


def check_step_norm_audit():
    cfg = _small_config(delay={"kind": "fixed", "tau": 4}, rounds=64)
    result = run_experiment(cfg)
    report = audit_run(result.trace)
    if report["step_bound_violations"] != 0:
        return False, f"{report['step_bound_violations']} step-norm bound violations"
    return True, (f"0 violations over {report['applied_steps']} steps; "
                  f"rho<=1 in {report['rho_le_one_frac']:.1%} of them")


def check_quantization():
    rng = np.random.default_rng(23)
    partition = FragmentPartition.even_split(64, 4)
    for trial in range(1000):
        grad = rng.standard_normal(64) * 10.0 ** rng.integers(-3, 3)
        qp = quantize_payload(grad, partition)
        back = dequantize_payload(qp, partition)
        for f, (start, end) in enumerate(partition.boundaries):
            err = np.max(np.abs(back[start:end] - grad[start:end]))
            if err > qp.scales[f] / 2.0 + 1e-15:
                return False, f"round-trip error {err} above half a scale on trial {trial}"
    zeros = np.zeros(64)
    qp = quantize_payload(zeros, partition)
    if np.any(qp.codes != 0) or np.any(qp.scales != 0.0) or np.any(dequantize_payload(qp, partition) != 0.0):
        return False, "all-zero payload did not round-trip exactly"
    return True, "1000 random payloads within half a scale per element"


def check_gradients():
    quad = QuadraticObjective(dimension=10, spectrum_lo=0.5, spectrum_hi=5.0, rotation_seed=2)
    mlp = MlpRegressionObjective(layer_sizes=[4, 8, 1], teacher_seed=3)
    rng = np.random.default_rng(31)
    for trial in range(3):
        params = rng.standard_normal(quad.dim)
        batch = quad.draw_batch(rng, 8)
        ok, err = finite_diff_check(quad, params, batch, 1e-8)
        if not ok:
            return False, f"quadratic gradient check failed with error {err}"
        params = mlp.init_params(int(rng.integers(1 << 30)))
        batch = mlp.draw_batch(rng, 8)
        ok, err = finite_diff_check(mlp, params, batch, 1e-5)
        if not ok:
            return False, f"mlp gradient check failed with error {err}"
    return True, "quadratic within 1e-8, mlp within 1e-5 of central differences"


ALL_CHECKS = [
    ("gate identities", check_gate_identities),
    ("plain-Adam reduction", check_adam_reduction),
    ("drop totality", check_drop_totality),
    ("run determinism", check_determinism),
    ("step-norm audit", check_step_norm_audit),
    ("int8 queue round-trip", check_quantization),
    ("gradient correctness", check_gradients),
]


def run_all_checks(log=print) -> bool:
    all_ok = True
    for name, fn in ALL_CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, don't crash the suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok = all_ok and ok
        log(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
