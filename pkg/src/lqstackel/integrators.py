"""Fixed-step RK4 marching of matrix ODEs on a shared uniform grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUp
from .model import TimeGrid

__all__ = ["BlowUp", "GridFunction", "integrate_backward", "integrate_forward"]

Field = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridFunction:
    """Matrix (or vector) samples at every grid node.

    If node derivatives are attached, evaluation between nodes uses cubic
    Hermite interpolation; otherwise it is linear.
    """

    grid: TimeGrid
    values: np.ndarray
    derivs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"expected {self.grid.steps + 1} node values, got {self.values.shape[0]}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.values[i]

    def __call__(self, s: float) -> np.ndarray:
        i, th = self.grid.locate(s)
        if th == 0.0:
            return self.values[i]
        if th == 1.0:
            return self.values[i + 1]
        y0, y1 = self.values[i], self.values[i + 1]
        if self.derivs is None:
            return (1.0 - th) * y0 + th * y1
        h = self.grid.dt
        d0, d1 = self.derivs[i], self.derivs[i + 1]
        t2, t3 = th * th, th * th * th
        return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + th) * h * d0
                + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * d1)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check(value: np.ndarray, s: float, what: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise BlowUp(s, what)
    return value


def _march(rhs: Field, start: np.ndarray, grid: TimeGrid, backward: bool,
           post_step: Optional[Callable[[np.ndarray], np.ndarray]]) -> GridFunction:
    N, dt = grid.steps, grid.dt
    h = -dt if backward else dt
    values = np.empty((N + 1, *np.shape(start)))
    derivs = np.empty_like(values)
    order = range(N, 0, -1) if backward else range(0, N)
    i0 = N if backward else 0
    values[i0] = _check(np.array(start, dtype=float), grid.time(i0), "initial data")
    for i in order:
        j = i - 1 if backward else i + 1
        s = grid.time(i)
        y = values[i]
        k1 = _check(rhs(s, y), s, "stage 1")
        derivs[i] = k1
        k2 = _check(rhs(s + h / 2, y + h / 2 * k1), s + h / 2, "stage 2")
        k3 = _check(rhs(s + h / 2, y + h / 2 * k2), s + h / 2, "stage 3")
        k4 = _check(rhs(grid.time(j), y + h * k3), grid.time(j), "stage 4")
        y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if post_step is not None:
            y_new = post_step(y_new)
        values[j] = _check(y_new, grid.time(j), "step result")
    i_last = 0 if backward else N
    derivs[i_last] = _check(rhs(grid.time(i_last), values[i_last]), grid.time(i_last), "final rhs")
    return GridFunction(grid, values, derivs)


def integrate_backward(rhs: Field, terminal: np.ndarray, grid: TimeGrid,
                       post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> GridFunction:
    """Solve dM/ds = rhs(s, M), M(T) = terminal, marching from T down to t0.

    Node derivatives rhs(s_i, M_i) are kept on the result (they come for free
    as the first RK4 stage). Raises BlowUp on any non-finite stage.
    """
    return _march(rhs, terminal, grid, True, post_step)


def integrate_forward(rhs: Field, initial: np.ndarray, grid: TimeGrid,
                      post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> GridFunction:
    """Solve dM/ds = rhs(s, M), M(t0) = initial, marching from t0 up to T."""
    return _march(rhs, initial, grid, False, post_step)
