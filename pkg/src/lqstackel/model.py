"""Game data: time grid, jump measure, dynamics coefficients and cost weights.

Coefficients are stored as per-node samples on a uniform grid and evaluated
between nodes by linear interpolation. Jump coefficients carry a leading
mark axis; the Levy measure is a finite list of (mark, weight) pairs so that
every mark integral is an exact weighted sum.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SYM_RTOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.t0) or not np.isfinite(self.T) or not self.t0 < self.T:
            raise ValueError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def time(self, i: int) -> float:
        return self.t0 + i * self.dt

    def locate(self, s: float) -> tuple[int, float]:
        """Return (i, theta) with s = s_i + theta*dt, 0 <= theta <= 1, i < steps."""
        u = (s - self.t0) / self.dt
        i = int(np.floor(u))
        i = min(max(i, 0), self.steps - 1)
        return i, u - i

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.steps * factor)


@dataclass(frozen=True)
class UnitJump:
    """Poisson process with jumps of unit size and the given intensity."""

    intensity: float

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValueError(f"intensity must be positive, got {self.intensity}")

    @property
    def marks(self) -> tuple[float, ...]:
        return (1.0,)

    @property
    def weights(self) -> tuple[float, ...]:
        return (float(self.intensity),)


@dataclass(frozen=True)
class FiniteMarks:
    """Discrete Levy measure: mark e_k arrives with intensity w_k per unit time."""

    marks: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "marks", tuple(float(e) for e in self.marks))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.marks) == 0 or len(self.marks) != len(self.weights):
            raise ValueError("marks and weights must be non-empty and of equal length")
        if any(not w > 0 for w in self.weights):
            raise ValueError("all mark weights must be positive")
        if len(set(self.marks)) != len(self.marks):
            raise ValueError("marks must be distinct")


JumpSpec = UnitJump | FiniteMarks


class Coefficients(NamedTuple):
    """Dynamics coefficients at a single time; jump entries are per mark."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    F: np.ndarray  # (K, n, n)
    G1: np.ndarray  # (K, n, m1)
    G2: np.ndarray  # (K, n, m2)
    weights: np.ndarray  # (K,)


class Weights(NamedTuple):
    Q1: np.ndarray
    Q2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    M1: np.ndarray
    M2: np.ndarray




def as_node_samples(value, shape: tuple[int, int], steps: int, name: str = "value") -> np.ndarray:
    """Broadcast a constant matrix (or per-node list) to an array (steps+1, *shape)."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.shape == shape:
        return np.broadcast_to(arr, (steps + 1, *shape)).copy()
    if arr.shape == (steps + 1, *shape):
        return arr.copy()
    if arr.ndim == 1 and arr.shape[0] == steps + 1 and shape == (1, 1):
        return arr.reshape(steps + 1, 1, 1).copy()
    raise ValueError(
        f"{name}: expected shape {shape} or {(steps + 1, *shape)}, got {arr.shape}"
    )


def as_mark_samples(value, shape: tuple[int, int], steps: int, n_marks: int, name: str = "value") -> np.ndarray:
    """Broadcast jump coefficients to (K, steps+1, *shape).

    Accepts a single matrix shared by all marks, one matrix per mark, or
    per-mark per-node samples.
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.shape == shape or arr.shape == (steps + 1, *shape) and n_marks != steps + 1:
        one = as_node_samples(arr, shape, steps, name)
        return np.broadcast_to(one, (n_marks, *one.shape)).copy()
    if arr.ndim == 1 and arr.shape[0] == n_marks and shape == (1, 1):
        arr = arr.reshape(n_marks, 1, 1)
    if arr.shape[:1] == (n_marks,):
        return np.stack([as_node_samples(a, shape, steps, f"{name}[{k}]") for k, a in enumerate(arr)])
    raise ValueError(
        f"{name}: expected shape {shape}, {(n_marks, *shape)} or "
        f"{(n_marks, steps + 1, *shape)}, got {arr.shape}"
    )


@dataclass(frozen=True)
class ModelSpec:
    """Controlled linear jump diffusion with deterministic node-sampled coefficients."""

    n: int
    m1: int
    m2: int
    grid: TimeGrid
    jumps: JumpSpec
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    F: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    a: np.ndarray

    @classmethod
    def build(cls, n, m1, m2, grid, jumps, *, A=None, B1=None, B2=None, C=None,
              D1=None, D2=None, F=None, G1=None, G2=None, a=None) -> "ModelSpec":
        """Assemble from constants or per-node samples; omitted coefficients are zero."""
        N, K = grid.steps, len(jumps.weights)

        def node(v, shape, name):
            return as_node_samples(np.zeros(shape) if v is None else v, shape, N, name)

        def mark(v, shape, name):
            return as_mark_samples(np.zeros(shape) if v is None else v, shape, N, K, name)

        a = np.zeros(n) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
        if a.shape != (n,):
            raise ValueError(f"initial_state: expected shape {(n,)}, got {a.shape}")
        return cls(
            n=n, m1=m1, m2=m2, grid=grid, jumps=jumps,
            A=node(A, (n, n), "A"), B1=node(B1, (n, m1), "B1"), B2=node(B2, (n, m2), "B2"),
            C=node(C, (n, n), "C"), D1=node(D1, (n, m1), "D1"), D2=node(D2, (n, m2), "D2"),
            F=mark(F, (n, n), "F"), G1=mark(G1, (n, m1), "G1"), G2=mark(G2, (n, m2), "G2"),
            a=a,
        )

    @property
    def n_marks(self) -> int:
        return len(self.jumps.weights)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.jumps.weights, dtype=float)

    def at(self, s: float) -> Coefficients:
        i, th = self.grid.locate(s)
        if th == 0.0:
            return self.at_node(i)
        if th == 1.0:
            return self.at_node(i + 1)
        lo, hi = self.at_node(i), self.at_node(i + 1)
        return Coefficients(*((1.0 - th) * x + th * y for x, y in zip(lo[:-1], hi[:-1])), lo.weights)

    def at_node(self, i: int) -> Coefficients:
        return Coefficients(
            self.A[i], self.B1[i], self.B2[i], self.C[i], self.D1[i], self.D2[i],
            self.F[:, i], self.G1[:, i], self.G2[:, i], self.weights,
        )

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    def is_jump_free(self) -> bool:
        return not (np.any(self.F) or np.any(self.G1) or np.any(self.G2))


@dataclass(frozen=True)
class CostSpec:
    """Symmetric (possibly indefinite) weights; Q and R are node-sampled."""

    Q1: np.ndarray
    Q2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    M1: np.ndarray
    M2: np.ndarray

    @classmethod
    def build(cls, model: ModelSpec, *, Q1=None, Q2=None, R1=None, R2=None, M1=None, M2=None) -> "CostSpec":
        n, m1, m2, N = model.n, model.m1, model.m2, model.grid.steps

        def node(v, shape, name):
            return as_node_samples(np.zeros(shape) if v is None else v, shape, N, name)

        def const(v, shape, name):
            arr = np.zeros(shape) if v is None else np.asarray(v, dtype=float)
            if arr.ndim == 0 and shape == (1, 1):
                arr = arr.reshape(1, 1)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            return arr

        return cls(
            Q1=node(Q1, (n, n), "Q1"), Q2=node(Q2, (n, n), "Q2"),
            R1=node(R1, (m1, m1), "R1"), R2=node(R2, (m2, m2), "R2"),
            M1=const(M1, (n, n), "M1"), M2=const(M2, (n, n), "M2"),
        )

    def at(self, grid: TimeGrid, s: float) -> Weights:
        i, th = grid.locate(s)
        if th == 0.0:
            return self.at_node(i)
        if th == 1.0:
            return self.at_node(i + 1)
        lo, hi = self.at_node(i), self.at_node(i + 1)
        return Weights(*((1.0 - th) * x + th * y for x, y in zip(lo[:4], hi[:4])), self.M1, self.M2)

    def at_node(self, i: int) -> Weights:
        return Weights(self.Q1[i], self.Q2[i], self.R1[i], self.R2[i], self.M1, self.M2)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    case1_eligible: bool = False
    case2_eligible: bool = False
    convexity_sufficient: bool = False

    @property
    def accepted(self) -> bool:
        return not self.errors

    @property
    def leader_solvable(self) -> bool:
        return self.case1_eligible or self.case2_eligible


def _is_symmetric(M: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(M))))
    return bool(np.max(np.abs(M - np.swapaxes(M, -1, -2)), initial=0.0) <= SYM_RTOL * scale)


def _min_eig(M: np.ndarray) -> float:
    M = np.asarray(M)
    sym = 0.5 * (M + np.swapaxes(M, -1, -2))
    return float(np.min(np.linalg.eigvalsh(sym))) if sym.size else 0.0


def case1_eligible(model: ModelSpec) -> bool:
    # a jump-free model does not see its jump measure, so any measure collapses to one mark
    return isinstance(model.jumps, UnitJump) or model.is_jump_free()


def case2_eligible(model: ModelSpec) -> bool:
    return not np.any(model.G2)


def validate_model(model: ModelSpec, costs: CostSpec) -> ValidationReport:
    """Check shapes, finiteness, weight symmetry and leader-case eligibility.

    Never raises; every problem is collected into the report.
    """
    rep = ValidationReport()
    n, m1, m2 = model.n, model.m1, model.m2
    N, K = model.grid.steps, model.n_marks
    expected = {
        "dynamics.A": (model.A, (N + 1, n, n)), "dynamics.B1": (model.B1, (N + 1, n, m1)),
        "dynamics.B2": (model.B2, (N + 1, n, m2)), "dynamics.C": (model.C, (N + 1, n, n)),
        "dynamics.D1": (model.D1, (N + 1, n, m1)), "dynamics.D2": (model.D2, (N + 1, n, m2)),
        "dynamics.F": (model.F, (K, N + 1, n, n)), "dynamics.G1": (model.G1, (K, N + 1, n, m1)),
        "dynamics.G2": (model.G2, (K, N + 1, n, m2)), "initial_state": (model.a, (n,)),
        "costs.Q1": (costs.Q1, (N + 1, n, n)), "costs.Q2": (costs.Q2, (N + 1, n, n)),
        "costs.R1": (costs.R1, (N + 1, m1, m1)), "costs.R2": (costs.R2, (N + 1, m2, m2)),
        "costs.M1": (costs.M1, (n, n)), "costs.M2": (costs.M2, (n, n)),
    }
    shapes_ok = True
    for name, (arr, shape) in expected.items():
        arr = np.asarray(arr)
        if arr.shape != shape:
            rep.errors.append(f"{name}: dimension mismatch, expected {shape}, got {arr.shape}")
            shapes_ok = False
        elif not np.all(np.isfinite(arr)):
            rep.errors.append(f"{name}: non-finite entries")
    if not shapes_ok:
        return rep

    for name in ("Q1", "Q2", "R1", "R2", "M1", "M2"):
        if not _is_symmetric(getattr(costs, name)):
            rep.errors.append(f"costs.{name}: nonsymmetric weight")

    rep.case1_eligible = case1_eligible(model)
    rep.case2_eligible = case2_eligible(model)
    if not rep.case1_eligible:
        rep.warnings.append("Case I ineligible: jumps are not of unit size")
    if not rep.case2_eligible:
        rep.warnings.append("Case II ineligible: G2 is nonzero for some mark")
    if not rep.leader_solvable:
        rep.warnings.append("leader unsolvable: marked jumps with G2 != 0 have no explicit feedback form")

    rep.convexity_sufficient = bool(
        _min_eig(costs.Q1) >= 0 and _min_eig(costs.M1) >= 0
        and _min_eig(costs.R1) >= 0 and _min_eig(costs.R2) > 0
    )
    return rep


def strip_jumps(model: ModelSpec) -> ModelSpec:
    """Copy with every jump coefficient zeroed; the jump measure itself is kept."""
    return model.replace(
        F=np.zeros_like(model.F), G1=np.zeros_like(model.G1), G2=np.zeros_like(model.G2)
    )


def _resample(samples: np.ndarray, factor: int, axis: int) -> np.ndarray:
    """Piecewise-linear resampling of node samples onto a grid refined by `factor`."""
    x = np.moveaxis(samples, axis, 0)
    th = (np.arange(factor) / factor).reshape(1, factor, *([1] * (x.ndim - 1)))
    mid = x[:-1, None] * (1.0 - th) + x[1:, None] * th
    out = np.concatenate([mid.reshape(-1, *x.shape[1:]), x[-1:]], axis=0)
    return np.moveaxis(out, 0, axis)


def refine_problem(model: ModelSpec, costs: CostSpec, factor: int = 2) -> tuple[ModelSpec, CostSpec]:
    """Same game on a grid with `factor` times as many steps (coefficients unchanged as functions)."""
    grid = model.grid.refine(factor)
    m = model.replace(
        grid=grid,
        **{k: _resample(getattr(model, k), factor, 0) for k in ("A", "B1", "B2", "C", "D1", "D2")},
        **{k: _resample(getattr(model, k), factor, 1) for k in ("F", "G1", "G2")},
    )
    c = dataclasses.replace(costs, **{k: _resample(getattr(costs, k), factor, 0) for k in ("Q1", "Q2", "R1", "R2")})
    return m, c
