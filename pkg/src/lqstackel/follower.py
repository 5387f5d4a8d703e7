"""Follower's LQ problem: integro-Riccati solve, feedback law, cost certificate.

All coefficients are deterministic, so the martingale parts of the Riccati
and adjoint equations vanish and both become backward ODEs on the grid.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import SingularGain
from .integrators import GridFunction, integrate_backward
from .model import Coefficients, CostSpec, ModelSpec

COND_CAP = 1e12


def condition(M: np.ndarray) -> float:
    if M.shape == (1, 1):
        return 1.0 if M[0, 0] != 0.0 else float("inf")
    return float(np.linalg.cond(M)) if M.size else 1.0


def checked_solve(M: np.ndarray, rhs: np.ndarray, which: str, s: float, cap: float = COND_CAP) -> np.ndarray:
    """Solve M X = rhs after a condition-number check."""
    cond = condition(M)
    if not np.isfinite(cond) or cond > cap:
        raise SingularGain(which, s, cond)
    if M.shape == (1, 1):
        return rhs / M[0, 0]
    return np.linalg.solve(M, rhs)


class FollowerGains(NamedTuple):
    Rhat2: np.ndarray  # m2 x m2
    Shat2: np.ndarray  # n x m2
    Shat1: np.ndarray  # m2 x m1


class HatCoefficients(NamedTuple):
    """Closed-loop coefficients of the follower's rational reaction; per-mark entries lead with K."""

    Ahat: np.ndarray
    Bhat2: np.ndarray
    Hhat2: np.ndarray
    Khat2: np.ndarray  # (K, n, n)
    Bhat1: np.ndarray
    Chat: np.ndarray
    Htilde2: np.ndarray
    Ktilde2: np.ndarray  # (K, n, n)
    Dhat1: np.ndarray
    Fhat: np.ndarray  # (K, n, n)
    Kbar2: np.ndarray  # (K, K, n, n)
    Ghat1: np.ndarray  # (K, n, m1)
    Hhat1: np.ndarray  # m1 x n
    Khat1: np.ndarray  # (K, m1, n)


def _tr(X: np.ndarray) -> np.ndarray:
    return np.swapaxes(X, -1, -2)


def mark_sum(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """sum_k w_k X[k]."""
    return (w @ X.reshape(len(w), -1)).reshape(X.shape[1:])


def gains_from_coefficients(P: np.ndarray, c: Coefficients, R2: np.ndarray) -> FollowerGains:
    w = c.weights
    G2t = _tr(c.G2)
    Rhat2 = R2 + c.D2.T @ P @ c.D2 + mark_sum(w, G2t @ P @ c.G2)
    Shat2 = (c.B2.T @ P + c.D2.T @ P @ c.C + mark_sum(w, G2t @ P @ c.F)).T
    Shat1 = c.D2.T @ P @ c.D1 + mark_sum(w, G2t @ P @ c.G1)
    return FollowerGains(Rhat2, Shat2, Shat1)


def follower_gains(P: np.ndarray, model: ModelSpec, costs: CostSpec, s: float,
                   cond_cap: float = COND_CAP) -> FollowerGains:
    """R2hat, S2hat, S1hat at time s for a given Riccati value P.

    Raises SingularGain when R2hat exceeds the condition cap.
    """
    g = gains_from_coefficients(P, model.at(s), costs.at(model.grid, s).R2)
    cond = condition(g.Rhat2)
    if not cond <= cond_cap:
        raise SingularGain("Rhat2", s, cond)
    return g


def hat_coefficients(P: np.ndarray, c: Coefficients, g: FollowerGains, s: float,
                     cond_cap: float = COND_CAP) -> HatCoefficients:
    Rinv = checked_solve(g.Rhat2, np.eye(g.Rhat2.shape[0]), "Rhat2", s, cond_cap)
    B2, D2, G2 = c.B2, c.D2, c.G2
    RS2t = Rinv @ g.Shat2.T  # m2 x n
    RS1 = Rinv @ g.Shat1  # m2 x m1
    G2t = _tr(G2)
    return HatCoefficients(
        Ahat=c.A - B2 @ RS2t,
        Bhat2=-B2 @ Rinv @ B2.T,
        Hhat2=-B2 @ Rinv @ D2.T,
        Khat2=-B2 @ Rinv @ G2t,
        Bhat1=c.B1 - B2 @ RS1,
        Chat=c.C - D2 @ RS2t,
        Htilde2=-D2 @ Rinv @ D2.T,
        Ktilde2=-D2 @ Rinv @ G2t,
        Dhat1=c.D1 - D2 @ RS1,
        Fhat=c.F - G2 @ RS2t,
        Kbar2=-np.einsum("kij,jl,mnl->kmin", G2, Rinv, G2),
        Ghat1=c.G1 - G2 @ RS1,
        Hhat1=(c.C.T @ P @ c.D1 + P @ c.B1 - g.Shat2 @ RS1).T,
        Khat1=_tr(_tr(c.F) @ P @ c.G1),
    )


def riccati_rhs(P: np.ndarray, c: Coefficients, Q2: np.ndarray, R2: np.ndarray, s: float,
                cond_cap: float = COND_CAP) -> np.ndarray:
    """dP/ds of the follower's integro-Riccati equation."""
    g = gains_from_coefficients(P, c, R2)
    jump = mark_sum(c.weights, _tr(c.F) @ P @ c.F)
    quad = g.Shat2 @ checked_solve(g.Rhat2, g.Shat2.T, "Rhat2", s, cond_cap)
    return -(c.A.T @ P + P @ c.A + Q2 + c.C.T @ P @ c.C + jump - quad)


class FollowerSolution:
    """Solved follower Riccati equation plus node tables of gains and hat coefficients.

    The node tables are assembled on first access.
    """

    def __init__(self, model: ModelSpec, costs: CostSpec, P: GridFunction, cond_cap: float = COND_CAP):
        self.model, self.costs, self.P, self.cond_cap = model, costs, P, cond_cap
        self._tables = None
        self._cache: dict = {}

    @property
    def grid(self):
        return self.model.grid

    def _build_tables(self):
        gains, hats = [], []
        for i in range(self.grid.steps + 1):
            c = self.model.at_node(i)
            g = gains_from_coefficients(self.P[i], c, self.costs.R2[i])
            gains.append(g)
            hats.append(hat_coefficients(self.P[i], c, g, self.grid.time(i), self.cond_cap))
        self._tables = (gains, hats)

    @property
    def gains(self) -> list[FollowerGains]:
        if self._tables is None:
            self._build_tables()
        return self._tables[0]

    @property
    def hats(self) -> list[HatCoefficients]:
        if self._tables is None:
            self._build_tables()
        return self._tables[1]

    def P_at(self, s: float) -> np.ndarray:
        P = self.P(s)
        return 0.5 * (P + P.T)

    def at(self, s: float) -> tuple[FollowerGains, HatCoefficients]:
        """Gains and hat coefficients at any s in [t0, T] (Hermite-interpolated P)."""
        i, th = self.grid.locate(s)
        if th == 0.0:
            return self.gains[i], self.hats[i]
        if th == 1.0:
            return self.gains[i + 1], self.hats[i + 1]
        hit = self._cache.get(s)
        if hit is None:
            P = self.P_at(s)
            c = self.model.at(s)
            g = gains_from_coefficients(P, c, self.costs.at(self.grid, s).R2)
            hit = (g, hat_coefficients(P, c, g, s, self.cond_cap))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[s] = hit
        return hit


def solve_follower_isrde(model: ModelSpec, costs: CostSpec, cond_cap: float = COND_CAP) -> FollowerSolution:
    """Integrate the follower Riccati equation backward from P(T) = M2.

    P is re-symmetrized after every step. Raises BlowUp or SingularGain.
    """
    grid = model.grid

    def rhs(s, P):
        w = costs.at(grid, s)
        return riccati_rhs(P, model.at(s), w.Q2, w.R2, s, cond_cap)

    def symmetrize(P):
        return 0.5 * (P + P.T)

    P = integrate_backward(rhs, costs.M2.copy(), grid, post_step=symmetrize)
    return FollowerSolution(model, costs, P, cond_cap)


class FollowerFeedback(NamedTuple):
    """Multipliers of the follower's optimal control.

    u2 = Kx x + Kf_B2 phi + Kf_D2 theta + sum_k Kf_G2[k] psi_k + Kf_S1 u1,
    where every multiplier already carries the factor -R2hat^{-1} (and the
    mark weight for Kf_G2).
    """

    Kx: np.ndarray
    Kf_B2: np.ndarray
    Kf_D2: np.ndarray
    Kf_G2: np.ndarray
    Kf_S1: np.ndarray


def follower_feedback_gain(sol: FollowerSolution, s: float) -> FollowerFeedback:
    g, _ = sol.at(s)
    c = sol.model.at(s)
    Rinv = checked_solve(g.Rhat2, np.eye(g.Rhat2.shape[0]), "Rhat2", s, sol.cond_cap)
    return FollowerFeedback(
        Kx=-Rinv @ g.Shat2.T,
        Kf_B2=-Rinv @ c.B2.T,
        Kf_D2=-Rinv @ c.D2.T,
        Kf_G2=-np.einsum("k,ij,klj->kil", c.weights, Rinv, c.G2),
        Kf_S1=-Rinv @ g.Shat1,
    )


def control_path(u1, grid, m1: int) -> np.ndarray:
    """Normalize a deterministic leader control to node samples of shape (steps+1, m1)."""
    arr = np.asarray(u1, dtype=float)
    if arr.ndim == 0:
        arr = np.full((grid.steps + 1, m1), float(arr))
    elif arr.shape == (m1,):
        arr = np.broadcast_to(arr, (grid.steps + 1, m1)).copy()
    elif arr.shape == (grid.steps + 1,) and m1 == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (grid.steps + 1, m1):
        raise ValueError(f"u1: expected shape {(grid.steps + 1, m1)}, got {arr.shape}")
    return arr


def solve_follower_phi(model: ModelSpec, costs: CostSpec, sol: FollowerSolution, u1) -> GridFunction:
    """Backward solve of the follower's affine adjoint term phi with phi(T) = 0."""
    grid = model.grid
    u = GridFunction(grid, control_path(u1, grid, model.m1))
    w = model.weights

    def rhs(s, phi):
        _, h = sol.at(s)
        us = u(s)
        return -(h.Ahat.T @ phi + h.Hhat1.T @ us + np.einsum("k,kji,j->i", w, h.Khat1, us))

    return integrate_backward(rhs, np.zeros(model.n), grid)


def certificate_integrand(sol: FollowerSolution, u1: np.ndarray, phi: np.ndarray, i: int) -> float:
    c = sol.model.at_node(i)
    P = sol.P[i]
    g = sol.gains[i]
    w = c.weights
    u = u1[i]
    f = c.B2.T @ phi[i] + g.Shat1 @ u
    val = u @ (c.D1.T @ P @ c.D1) @ u
    val += sum(w[k] * u @ (c.G1[k].T @ P @ c.G1[k]) @ u for k in range(len(w)))
    val += 2.0 * u @ (c.B1.T @ phi[i])
    val -= f @ np.linalg.solve(g.Rhat2, f)
    return float(val)


def follower_cost_certificate(model: ModelSpec, costs: CostSpec, sol: FollowerSolution, u1,
                              phi: GridFunction, a=None) -> float:
    """Optimal follower cost for a fixed deterministic leader control (trapezoidal quadrature)."""
    grid = model.grid
    a = model.a if a is None else np.asarray(a, dtype=float)
    u = control_path(u1, grid, model.m1)
    vals = np.array([certificate_integrand(sol, u, phi.values, i) for i in range(grid.steps + 1)])
    integral = grid.dt * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    return float(a @ sol.P[0] @ a + 2.0 * a @ phi[0] + integral)
