"""Run configuration: one JSON or YAML file describing the game and run parameters.

Matrices are row-major nested lists, scalars for 1x1, or a list of steps+1
per-node matrices for time-varying coefficients. Jump coefficients (F, G1,
G2) given as a single value apply to every mark; one value per mark goes
under {"per_mark": [v_1, ..., v_K]}.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .follower import COND_CAP
from .model import CostSpec, FiniteMarks, ModelSpec, TimeGrid, UnitJump, as_mark_samples, as_node_samples, \
    validate_model
from .verify import DEGENERATION_TOL, LINEAR_TOL, RESIDUAL_FACTOR, SE_MULT

DEFAULT_TOLERANCES = {
    "se_mult": SE_MULT,
    "residual_factor": RESIDUAL_FACTOR,
    "linear_system": LINEAR_TOL,
    "degeneration": DEGENERATION_TOL,
    "cond_cap": COND_CAP,
}
CASES = ("auto", "case1", "case2")


class ConfigError(ValueError):
    """Bad configuration; the message starts with the offending field path."""

    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


@dataclass
class RunConfig:
    model: ModelSpec
    costs: CostSpec
    case: str = "auto"
    paths: int = 10_000
    seed: int = 0
    workers: int = 1
    out: Path = Path("lqstackel_out")
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    u1: Any = 1.0  # deterministic leader control for the follower tests
    v: Any = 1.0  # perturbation direction
    eps: float = 0.1


def _get(tree: dict, key: str, path: str, default=None, required=False):
    if not isinstance(tree, dict):
        raise ConfigError(path, "expected a mapping")
    if key not in tree:
        if required:
            raise ConfigError(f"{path}.{key}" if path else key, "missing")
        return default
    return tree[key]


def _int(value, path: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return int(value)


def _float(value, path: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if not np.isfinite(out):
        raise ConfigError(path, "must be finite")
    return out


def _array(value, path: str) -> np.ndarray:
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "not a numeric array (ragged or non-numeric entries)") from None


def _node(value, shape, steps, path):
    try:
        return as_node_samples(_array(value, path), shape, steps, path)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, "dimension mismatch, " + str(exc).split(": ", 1)[-1]) from None


def _mark(value, shape, steps, K, path):
    if isinstance(value, dict):
        per = _get(value, "per_mark", path, required=True)
        if not isinstance(per, list) or len(per) != K:
            raise ConfigError(f"{path}.per_mark", f"expected a list of {K} entries")
        return np.stack([_node(v, shape, steps, f"{path}.per_mark[{k}]") for k, v in enumerate(per)])
    try:
        return as_mark_samples(_array(value, path), shape, steps, K, path)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, "dimension mismatch, " + str(exc).split(": ", 1)[-1]) from None


def parse_config(tree: dict) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "expected a mapping")
    dims = _get(tree, "dimensions", "", required=True)
    n = _int(_get(dims, "n", "dimensions", required=True), "dimensions.n", 1)
    m1 = _int(_get(dims, "m1", "dimensions", required=True), "dimensions.m1", 1)
    m2 = _int(_get(dims, "m2", "dimensions", required=True), "dimensions.m2", 1)

    g = _get(tree, "grid", "", required=True)
    try:
        grid = TimeGrid(_float(_get(g, "t0", "grid", 0.0), "grid.t0"),
                        _float(_get(g, "T", "grid", required=True), "grid.T"),
                        _int(_get(g, "steps", "grid", required=True), "grid.steps", 1))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("grid", str(exc)) from None

    j = _get(tree, "jumps", "", {"type": "unit", "intensity": 1.0})
    kind = _get(j, "type", "jumps", required=True)
    try:
        if kind in ("unit", "UnitJump"):
            jumps = UnitJump(_float(_get(j, "intensity", "jumps", required=True), "jumps.intensity"))
        elif kind in ("finite", "FiniteMarks"):
            jumps = FiniteMarks(tuple(_array(_get(j, "marks", "jumps", required=True), "jumps.marks").ravel()),
                                tuple(_array(_get(j, "weights", "jumps", required=True), "jumps.weights").ravel()))
        else:
            raise ConfigError("jumps.type", f"unknown jump type {kind!r} (use 'unit' or 'finite')")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("jumps", str(exc)) from None
    K, N = len(jumps.weights), grid.steps

    dyn = _get(tree, "dynamics", "", {})
    shapes = {"A": (n, n), "B1": (n, m1), "B2": (n, m2), "C": (n, n), "D1": (n, m1), "D2": (n, m2)}
    coef = {}
    for name, shape in shapes.items():
        coef[name] = _node(_get(dyn, name, "dynamics", 0.0 if shape == (1, 1) else np.zeros(shape)),
                           shape, N, f"dynamics.{name}")
    for name, shape in {"F": (n, n), "G1": (n, m1), "G2": (n, m2)}.items():
        coef[name] = _mark(_get(dyn, name, "dynamics", np.zeros(shape)), shape, N, K, f"dynamics.{name}")
    a = _array(_get(tree, "initial_state", "", np.zeros(n)), "initial_state").ravel()
    if a.shape != (n,):
        raise ConfigError("initial_state", f"dimension mismatch, expected {n} entries, got {a.size}")
    model = ModelSpec(n=n, m1=m1, m2=m2, grid=grid, jumps=jumps, a=a, **coef)

    cst = _get(tree, "costs", "", {})
    node_w = {"Q1": (n, n), "Q2": (n, n), "R1": (m1, m1), "R2": (m2, m2)}
    weights = {k: _node(_get(cst, k, "costs", np.zeros(s)), s, N, f"costs.{k}") for k, s in node_w.items()}
    for k in ("M1", "M2"):
        M = _array(_get(cst, k, "costs", np.zeros((n, n))), f"costs.{k}")
        M = M.reshape(1, 1) if M.ndim == 0 and n == 1 else M
        if M.shape != (n, n):
            raise ConfigError(f"costs.{k}", f"dimension mismatch, expected {(n, n)}, got {M.shape}")
        weights[k] = M
    costs = CostSpec(**weights)

    report = validate_model(model, costs)
    if report.errors:
        first = report.errors[0]
        raise ConfigError(first.split(":", 1)[0], first.split(":", 1)[1].strip())

    cfg = RunConfig(model=model, costs=costs)
    mc = _get(tree, "monte_carlo", "", {})
    cfg.paths = _int(_get(mc, "paths", "monte_carlo", cfg.paths), "monte_carlo.paths", 2)
    cfg.seed = _int(_get(mc, "seed", "monte_carlo", cfg.seed), "monte_carlo.seed", 0)
    cfg.workers = _int(_get(mc, "workers", "monte_carlo", cfg.workers), "monte_carlo.workers", 1)
    cfg.case = _get(tree, "case", "", "auto")
    if cfg.case not in CASES:
        raise ConfigError("case", f"must be one of {CASES}, got {cfg.case!r}")
    tol = _get(tree, "tolerances", "", {})
    cfg.tolerances = set_tolerances(cfg.tolerances, tol)
    fol = _get(tree, "follower_test", "", {})
    cfg.u1 = _array(_get(fol, "u1", "follower_test", 1.0), "follower_test.u1")
    cfg.v = _array(_get(fol, "v", "follower_test", 1.0), "follower_test.v")
    cfg.eps = _float(_get(fol, "eps", "follower_test", 0.1), "follower_test.eps")
    return cfg


def set_tolerances(base: dict, overrides: dict) -> dict:
    if not isinstance(overrides, dict):
        raise ConfigError("tolerances", "expected a mapping")
    out = dict(base)
    for k, v in overrides.items():
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"tolerances.{k}", f"unknown tolerance (known: {sorted(DEFAULT_TOLERANCES)})")
        val = _float(v, f"tolerances.{k}")
        if val <= 0:
            raise ConfigError(f"tolerances.{k}", f"must be positive, got {val}")
        out[k] = val
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from None
    try:
        tree = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from None
    cfg = parse_config(tree)
    cfg.out = Path(os.environ.get("LQSTACKEL_OUT", "lqstackel_out"))
    return cfg
