"""Run/sweep configuration: parsing, strict validation, canonical hashing.

Configs are plain JSON with an explicit schema version. Validation is
strict (unknown keys are errors, all problems reported with field paths)
and resolution fills every default, so two configs that mean the same
thing canonicalize to the same dict and hash to the same digest. The
config hash excludes the master seed: a result file is named by
(hash, seed) and the hash identifies the experimental cell.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any

from .optim import ADAM_FAMILY, METHODS, InnerConfig, OuterConfig
from .seeding import derive_seed

CONFIG_VERSION = 1

__all__ = [
    "ConfigError",
    "RunConfig",
    "resolve_config",
    "config_hash",
    "canonical_json",
    "load_run_config",
    "expand_sweep",
]


class ConfigError(ValueError):
    """All validation problems for one config, each tagged with its field path."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in self.errors))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(resolved: dict) -> str:
    hashed = {k: v for k, v in resolved.items() if k != "master_seed"}
    return hashlib.sha256(canonical_json(hashed).encode("utf-8")).hexdigest()


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def error(self, path: str, msg: str):
        self.errors.append(f"{path}: {msg}")

    def require_keys(self, d: dict, path: str, required: set[str], optional: set[str]):
        for key in d:
            if key not in required and key not in optional:
                self.error(f"{path}.{key}" if path else key, "unknown key")
        for key in required:
            if key not in d:
                self.error(f"{path}.{key}" if path else key, "missing required key")

    def num(self, d, key, path, *, integer=False, lo=None, hi=None, lo_open=False, hi_open=False, default=None):
        if key not in d:
            return default
        val = d[key]
        full = f"{path}.{key}" if path else key
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.error(full, f"expected a number, got {val!r}")
            return default
        if integer and not (isinstance(val, int) or float(val).is_integer()):
            self.error(full, f"expected an integer, got {val!r}")
            return default
        if lo is not None and (val <= lo if lo_open else val < lo):
            self.error(full, f"must be {'>' if lo_open else '>='} {lo}, got {val}")
            return default
        if hi is not None and (val >= hi if hi_open else val > hi):
            self.error(full, f"must be {'<' if hi_open else '<='} {hi}, got {val}")
            return default
        return int(val) if integer else float(val)

    def choice(self, d, key, path, choices, default=None):
        if key not in d:
            return default
        val = d[key]
        full = f"{path}.{key}" if path else key
        if val not in choices:
            self.error(full, f"expected one of {sorted(choices)}, got {val!r}")
            return default
        return val

    def boolean(self, d, key, path, default=False):
        if key not in d:
            return default
        val = d[key]
        if not isinstance(val, bool):
            self.error(f"{path}.{key}" if path else key, f"expected true/false, got {val!r}")
            return default
        return val


def _objective_dim(spec: dict) -> int | None:
    kind = spec.get("kind")
    if kind in ("quadratic", "rosenbrock_sum"):
        d = spec.get("dimension")
        return d if isinstance(d, int) else None
    if kind == "mlp_regression":
        sizes = spec.get("layer_sizes")
        if isinstance(sizes, list) and len(sizes) >= 2 and all(isinstance(s, int) and s >= 1 for s in sizes):
            return sum(sizes[i + 1] * sizes[i] + sizes[i + 1] for i in range(len(sizes) - 1))
    return None


def _resolve_objective(raw: dict, chk: _Checker) -> dict:
    kind = chk.choice(raw, "kind", "objective", {"quadratic", "rosenbrock_sum", "mlp_regression"})
    if kind is None:
        if "kind" not in raw:
            chk.error("objective.kind", "missing required key")
        return dict(raw)
    out: dict = {"kind": kind}
    if kind == "quadratic":
        chk.require_keys(raw, "objective", {"kind", "dimension", "spectrum_lo", "spectrum_hi", "rotation_seed"},
                         {"noise_scale", "init_scale"})
        out["dimension"] = chk.num(raw, "dimension", "objective", integer=True, lo=1)
        out["spectrum_lo"] = chk.num(raw, "spectrum_lo", "objective", lo=0, lo_open=True)
        out["spectrum_hi"] = chk.num(raw, "spectrum_hi", "objective", lo=0, lo_open=True)
        out["rotation_seed"] = chk.num(raw, "rotation_seed", "objective", integer=True, default=0)
        out["noise_scale"] = chk.num(raw, "noise_scale", "objective", lo=0, default=0.1)
        out["init_scale"] = chk.num(raw, "init_scale", "objective", lo=0, lo_open=True, default=1.0)
        if (out["spectrum_lo"] is not None and out["spectrum_hi"] is not None
                and out["spectrum_lo"] > out["spectrum_hi"]):
            chk.error("objective.spectrum_lo", "must be <= spectrum_hi")
    elif kind == "rosenbrock_sum":
        chk.require_keys(raw, "objective", {"kind", "dimension"}, {"noise_scale", "init_scale"})
        out["dimension"] = chk.num(raw, "dimension", "objective", integer=True, lo=2)
        out["noise_scale"] = chk.num(raw, "noise_scale", "objective", lo=0, default=0.0)
        out["init_scale"] = chk.num(raw, "init_scale", "objective", lo=0, lo_open=True, default=1.0)
    else:
        chk.require_keys(raw, "objective", {"kind", "layer_sizes"}, {"teacher_seed", "teacher_scale", "init_scale"})
        sizes = raw.get("layer_sizes")
        if not (isinstance(sizes, list) and len(sizes) >= 2
                and all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in sizes)):
            chk.error("objective.layer_sizes", f"expected a list of >= 2 positive integers, got {sizes!r}")
        else:
            out["layer_sizes"] = list(sizes)
        out["teacher_seed"] = chk.num(raw, "teacher_seed", "objective", integer=True, default=0)
        out["teacher_scale"] = chk.num(raw, "teacher_scale", "objective", lo=0, lo_open=True, default=1.0)
        out["init_scale"] = chk.num(raw, "init_scale", "objective", lo=0, lo_open=True, default=1.0)
    return out


def _resolve_delay(raw: dict, chk: _Checker) -> dict:
    kind = chk.choice(raw, "kind", "delay", {"fixed", "uniform_int", "exponential"})
    if kind is None:
        if "kind" not in raw:
            chk.error("delay.kind", "missing required key")
        return dict(raw)
    out: dict = {"kind": kind}
    if kind == "fixed":
        chk.require_keys(raw, "delay", {"kind", "tau"}, set())
        out["tau"] = chk.num(raw, "tau", "delay", integer=True, lo=0)
    elif kind == "uniform_int":
        chk.require_keys(raw, "delay", {"kind"}, {"lo", "hi"})
        out["lo"] = chk.num(raw, "lo", "delay", integer=True, lo=0, default=0)
        out["hi"] = chk.num(raw, "hi", "delay", integer=True, lo=0, default=16)
        if out["lo"] is not None and out["hi"] is not None and out["lo"] > out["hi"]:
            chk.error("delay.lo", "must be <= hi")
    else:
        chk.require_keys(raw, "delay", {"kind"}, {"rate", "tau_max"})
        out["rate"] = chk.num(raw, "rate", "delay", lo=0, lo_open=True, default=0.25)
        out["tau_max"] = chk.num(raw, "tau_max", "delay", integer=True, lo=0, default=16)
    return out


# alpha/tau_cut pins per method: None means the field is free.
_GATE_PINS = {
    "adam": (0.0, None),
    "adam_decay": (None, math.inf),
    "sdm": (None, math.inf),
}
_UNGATED = tuple(m for m in METHODS if m not in ADAM_FAMILY and m != "sdm")


def _resolve_outer(raw: dict, method: str, chk: _Checker) -> dict:
    chk.require_keys(raw, "outer", set(),
                     {"eta", "beta1", "beta2", "epsilon", "mu", "alpha", "tau_cut",
                      "gate_placement", "buffer_period"})
    adam_family = method in ADAM_FAMILY
    out = {
        "eta": chk.num(raw, "eta", "outer", lo=0, lo_open=True, default=1e-3 if adam_family else 0.7),
        "beta1": chk.num(raw, "beta1", "outer", lo=0, hi=1, hi_open=True, default=0.9),
        "beta2": chk.num(raw, "beta2", "outer", lo=0, hi=1, hi_open=True, default=0.95),
        "epsilon": chk.num(raw, "epsilon", "outer", lo=0, lo_open=True, default=1e-8),
        "mu": chk.num(raw, "mu", "outer", lo=0, hi=1, hi_open=True, default=0.9),
        "gate_placement": chk.choice(raw, "gate_placement", "outer", {"before", "after"}, default="before"),
        "buffer_period": chk.num(raw, "buffer_period", "outer", integer=True, lo=1, default=4),
    }

    alpha = chk.num(raw, "alpha", "outer", lo=0, default=None)
    tau_cut = None
    if "tau_cut" in raw:
        val = raw["tau_cut"]
        if val is None:
            tau_cut = math.inf
        else:
            tau_cut = chk.num(raw, "tau_cut", "outer", lo=0, lo_open=True)

    if method in _UNGATED:
        if alpha is not None and alpha != 0.0:
            chk.error("outer.alpha", f"method {method!r} takes no gate; alpha must be omitted or 0")
        if "tau_cut" in raw and tau_cut != math.inf:
            chk.error("outer.tau_cut", f"method {method!r} takes no gate; tau_cut must be omitted or null")
        alpha, tau_cut = 0.0, math.inf
    else:
        pin = _GATE_PINS.get(method)
        if pin is not None:
            pin_alpha, pin_cut = pin
            if pin_alpha is not None:
                if alpha is not None and alpha != pin_alpha:
                    chk.error("outer.alpha", f"method {method!r} pins alpha to {pin_alpha}")
                alpha = pin_alpha
            if pin_cut is not None:
                if "tau_cut" in raw and tau_cut != pin_cut:
                    chk.error("outer.tau_cut", f"method {method!r} pins tau_cut to null (no cutoff)")
                tau_cut = pin_cut
        if alpha is None:
            alpha = 0.2
        if "tau_cut" not in raw and tau_cut is None:
            tau_cut = math.inf if method in ("adam_decay", "sdm") else 32.0
    out["alpha"] = alpha
    out["tau_cut"] = None if (tau_cut is None or math.isinf(tau_cut)) else tau_cut
    return out


def _resolve_inner(raw: dict, chk: _Checker) -> dict:
    chk.require_keys(raw, "inner", set(), {"lr", "beta1", "beta2", "epsilon", "weight_decay"})
    return {
        "lr": chk.num(raw, "lr", "inner", lo=0, lo_open=True, default=3e-4),
        "beta1": chk.num(raw, "beta1", "inner", lo=0, hi=1, hi_open=True, default=0.9),
        "beta2": chk.num(raw, "beta2", "inner", lo=0, hi=1, hi_open=True, default=0.95),
        "epsilon": chk.num(raw, "epsilon", "inner", lo=0, lo_open=True, default=1e-8),
        "weight_decay": chk.num(raw, "weight_decay", "inner", lo=0, default=0.0),
    }


def resolve_config(raw: dict) -> dict:
    """Validate a raw config mapping and return the canonical resolved dict.

    Raises ConfigError listing every problem with its field path.
    Resolution is idempotent: resolving a resolved dict is a no-op.
    """
    chk = _Checker()
    if not isinstance(raw, dict):
        raise ConfigError(["config: expected a JSON object"])
    chk.require_keys(
        raw, "",
        {"version", "objective", "method", "delay"},
        {"workers", "inner_steps", "rounds", "batch_size", "eval_batch_size",
         "outer", "inner", "fragments", "quantize_queue", "master_seed"},
    )
    version = chk.num(raw, "version", "", integer=True)
    if version is not None and version != CONFIG_VERSION:
        chk.error("version", f"unsupported config version {version}; this build reads {CONFIG_VERSION}")

    method = chk.choice(raw, "method", "", set(METHODS))
    objective = _resolve_objective(raw.get("objective", {}), chk) if isinstance(raw.get("objective"), dict) else None
    if objective is None and "objective" in raw:
        chk.error("objective", "expected a JSON object")
    delay = _resolve_delay(raw.get("delay", {}), chk) if isinstance(raw.get("delay"), dict) else None
    if delay is None and "delay" in raw:
        chk.error("delay", "expected a JSON object")

    outer_raw = raw.get("outer", {})
    if not isinstance(outer_raw, dict):
        chk.error("outer", "expected a JSON object")
        outer_raw = {}
    inner_raw = raw.get("inner", {})
    if not isinstance(inner_raw, dict):
        chk.error("inner", "expected a JSON object")
        inner_raw = {}
    outer = _resolve_outer(outer_raw, method, chk) if method else dict(outer_raw)
    inner = _resolve_inner(inner_raw, chk)

    frag_raw = raw.get("fragments", {})
    if not isinstance(frag_raw, dict):
        chk.error("fragments", "expected a JSON object")
        frag_raw = {}
    chk.require_keys(frag_raw, "fragments", set(), {"count", "budget"})
    frag_count = chk.num(frag_raw, "count", "fragments", integer=True, lo=1, default=1)
    frag_budget = chk.num(frag_raw, "budget", "fragments", integer=True, lo=1, default=frag_count)
    if frag_count is not None and frag_budget is not None and frag_budget > frag_count:
        chk.error("fragments.budget", f"must be <= fragments.count ({frag_count}), got {frag_budget}")
    dim = _objective_dim(objective or {})
    if dim is not None and frag_count is not None and frag_count > dim:
        chk.error("fragments.count", f"must be <= parameter dimension ({dim}), got {frag_count}")

    resolved = {
        "version": CONFIG_VERSION,
        "objective": objective,
        "workers": chk.num(raw, "workers", "", integer=True, lo=1, default=4),
        "inner_steps": chk.num(raw, "inner_steps", "", integer=True, lo=1, default=8),
        "rounds": chk.num(raw, "rounds", "", integer=True, lo=1, default=200),
        "batch_size": chk.num(raw, "batch_size", "", integer=True, lo=1, default=32),
        "eval_batch_size": chk.num(raw, "eval_batch_size", "", integer=True, lo=1, default=256),
        "method": method,
        "outer": outer,
        "inner": inner,
        "delay": delay,
        "fragments": {"count": frag_count, "budget": frag_budget},
        "quantize_queue": chk.boolean(raw, "quantize_queue", "", default=False),
        "master_seed": chk.num(raw, "master_seed", "", integer=True, default=0),
    }
    if chk.errors:
        raise ConfigError(chk.errors)
    return resolved


@dataclass
class RunConfig:
    """Fully validated run description; the unit the simulator executes."""

    resolved: dict
    objective: dict
    workers: int
    inner_steps: int
    rounds: int
    batch_size: int
    eval_batch_size: int
    method: str
    outer: OuterConfig
    inner: InnerConfig
    delay: dict
    fragment_count: int
    fragment_budget: int
    quantize_queue: bool
    master_seed: int

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        resolved = resolve_config(raw)
        o = resolved["outer"]
        tau_cut = math.inf if o["tau_cut"] is None else float(o["tau_cut"])
        outer = OuterConfig.for_method(
            resolved["method"],
            eta=o["eta"], beta1=o["beta1"], beta2=o["beta2"], epsilon=o["epsilon"], mu=o["mu"],
            alpha=o["alpha"], tau_cut=tau_cut,
            gate_placement=o["gate_placement"], buffer_period=o["buffer_period"],
        )
        i = resolved["inner"]
        inner = InnerConfig(lr=i["lr"], beta1=i["beta1"], beta2=i["beta2"],
                            epsilon=i["epsilon"], weight_decay=i["weight_decay"])
        return cls(
            resolved=resolved,
            objective=resolved["objective"],
            workers=resolved["workers"],
            inner_steps=resolved["inner_steps"],
            rounds=resolved["rounds"],
            batch_size=resolved["batch_size"],
            eval_batch_size=resolved["eval_batch_size"],
            method=resolved["method"],
            outer=outer,
            inner=inner,
            delay=resolved["delay"],
            fragment_count=resolved["fragments"]["count"],
            fragment_budget=resolved["fragments"]["budget"],
            quantize_queue=resolved["quantize_queue"],
            master_seed=resolved["master_seed"],
        )

    @property
    def hash(self) -> str:
        return config_hash(self.resolved)


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return RunConfig.from_dict(raw)


def _set_path(d: dict, dotted: str, value):
    parts = dotted.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([f"{dotted}: cannot descend into non-object"])
    node[parts[-1]] = value


def expand_sweep(spec: dict) -> list[tuple[dict, RunConfig]]:
    """Expand a sweep spec into (cell description, RunConfig) pairs.

    Axes are crossed in their listed order. The "seed" axis maps each value
    to a derived master seed (digest of the base seed and the value), so
    adding or reordering other axes never reshuffles a cell's randomness,
    and the same seed value pairs runs across methods. Every cell is
    validated before anything runs.
    """
    chk = _Checker()
    if not isinstance(spec, dict):
        raise ConfigError(["sweep: expected a JSON object"])
    chk.require_keys(spec, "", {"version", "base", "axes"}, {"jobs"})
    version = chk.num(spec, "version", "", integer=True)
    if version is not None and version != CONFIG_VERSION:
        chk.error("version", f"unsupported sweep version {version}; this build reads {CONFIG_VERSION}")
    chk.num(spec, "jobs", "", integer=True, lo=1, default=1)
    base = spec.get("base")
    if not isinstance(base, dict):
        chk.error("base", "expected a JSON object (a run config)")
    axes = spec.get("axes")
    if not isinstance(axes, dict) or not axes:
        chk.error("axes", "expected a non-empty JSON object of axis lists")
        axes = {}
    for name, values in axes.items():
        if not isinstance(values, list) or not values:
            chk.error(f"axes.{name}", "expected a non-empty list")
    if chk.errors:
        raise ConfigError(chk.errors)

    names = list(axes.keys())
    cells: list[tuple[dict, RunConfig]] = []
    errors: list[str] = []

    def rec(idx: int, assignment: dict):
        if idx == len(names):
            raw = json.loads(json.dumps(base))
            seed_val = None
            for name, value in assignment.items():
                if name == "seed":
                    seed_val = value
                elif name == "method":
                    raw["method"] = value
                elif name == "delay":
                    raw["delay"] = value
                else:
                    _set_path(raw, name, value)
            if seed_val is not None:
                base_master = raw.get("master_seed", 0)
                raw["master_seed"] = derive_seed(base_master, "seed", seed_val)
            label = canonical_json(assignment)
            try:
                cfg = RunConfig.from_dict(raw)
            except ConfigError as exc:
                errors.extend(f"cell {label} -> {e}" for e in exc.errors)
                return
            cells.append(({"assignment": assignment, "seed_value": seed_val}, cfg))
            return
        for value in axes[names[idx]]:
            rec(idx + 1, {**assignment, names[idx]: value})

    rec(0, {})
    if errors:
        raise ConfigError(errors)
    return cells
