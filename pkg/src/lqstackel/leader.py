"""Leader's problem on the 2n-dimensional augmented state.

The follower's rational reaction turns the leader's problem into a coupled
forward-backward system in X = [x; beta], Y = [alpha; phi]. With Y = Pcal X
the martingale coefficients (Z, K) become linear maps of X, and Pcal solves a
nonsymmetric integro-Riccati equation. Two backends produce those maps:
case 1 (a single unit-size jump mark) and case 2 (G2 = 0, any finite marks).
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import LeaderIneligible, SingularBlock
from .follower import COND_CAP, FollowerSolution, HatCoefficients, _tr, checked_solve, condition, mark_sum
from .integrators import GridFunction, integrate_backward
from .model import CostSpec, ModelSpec, case1_eligible, case2_eligible

# Above this condition number the Schur-complement block inverse is replaced by a dense solve.
SCHUR_COND = 1e8


def _diag(X: np.ndarray) -> np.ndarray:
    Z = np.zeros_like(X)
    return np.block([[X, Z], [Z, X]])


def _anti(X: np.ndarray) -> np.ndarray:
    Z = np.zeros_like(X)
    return np.block([[Z, X], [X, Z]])


def _top(X: np.ndarray) -> np.ndarray:
    return np.concatenate([X, np.zeros_like(X)], axis=-2)


def _right(X: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros_like(X), X], axis=-1)


def _per_mark(f, X: np.ndarray) -> np.ndarray:
    return np.stack([f(x) for x in X])


class AugBlocks(NamedTuple):
    """Augmented coefficients at one time; per-mark entries lead with K (Kbar with K, K)."""

    A: np.ndarray
    B2: np.ndarray
    Hhat: np.ndarray
    Khat: np.ndarray
    B1: np.ndarray
    C: np.ndarray
    Htilde: np.ndarray
    Ktilde: np.ndarray
    D1: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    Kbar: np.ndarray
    G1: np.ndarray
    H1: np.ndarray
    K1: np.ndarray
    M1: np.ndarray
    R1: np.ndarray
    weights: np.ndarray


def augment_blocks(h: HatCoefficients, Q1: np.ndarray, R1: np.ndarray, M1: np.ndarray,
                   weights: np.ndarray) -> AugBlocks:
    n = h.Ahat.shape[0]
    Kbar = np.stack([np.stack([_anti(x) for x in row]) for row in h.Kbar2])
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = Q1
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = M1
    return AugBlocks(
        A=_diag(h.Ahat), B2=_anti(h.Bhat2), Hhat=_anti(h.Hhat2), Khat=_per_mark(_anti, h.Khat2),
        B1=_top(h.Bhat1), C=_diag(h.Chat), Htilde=_anti(h.Htilde2), Ktilde=_per_mark(_anti, h.Ktilde2),
        D1=_top(h.Dhat1), F=_per_mark(_diag, h.Fhat), Q=Q, Kbar=Kbar, G1=_top(h.Ghat1),
        H1=_right(h.Hhat1), K1=_right(h.Khat1), M1=M, R1=np.asarray(R1, dtype=float),
        weights=np.asarray(weights, dtype=float),
    )


class AugmentedModel(NamedTuple):
    grid: object
    nodes: list  # AugBlocks per grid node


def augment_at(model: ModelSpec, costs: CostSpec, fsol: FollowerSolution, s: float) -> AugBlocks:
    _, h = fsol.at(s)
    w = costs.at(model.grid, s)
    return augment_blocks(h, w.Q1, w.R1, costs.M1, model.weights)


def augment(model: ModelSpec, costs: CostSpec, fsol: FollowerSolution) -> AugmentedModel:
    grid = model.grid
    nodes = [augment_blocks(fsol.hats[i], costs.Q1[i], costs.R1[i], costs.M1, model.weights)
             for i in range(grid.steps + 1)]
    return AugmentedModel(grid, nodes)


class LeaderMaps(NamedTuple):
    """State maps shared by both cases: Z = Zmap X, K(e_k) = Kmap[k] X, u1 = -K1 X."""

    Zmap: np.ndarray
    Kmap: np.ndarray  # (K, 2n, 2n)
    K1: np.ndarray


class Case1Gains(NamedTuple):
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    B11: np.ndarray
    B12: np.ndarray
    B21: np.ndarray
    B22: np.ndarray
    Ahat11: np.ndarray
    Ahat12: np.ndarray
    Ahat21: np.ndarray
    Ahat22: np.ndarray
    R1cal: np.ndarray
    H1cal: np.ndarray
    F11: np.ndarray
    F12: np.ndarray
    F21: np.ndarray
    F22: np.ndarray
    path: str  # "schur" or "dense"
    max_cond: float


class Case2Gains(NamedTuple):
    Rhat1cal: np.ndarray
    Bhat1cal: np.ndarray
    F1: np.ndarray
    F2: np.ndarray  # (K, 2n, 2n)
    max_cond: float


def _unit_mark(aug: AugBlocks) -> tuple[float, int]:
    """Intensity and mark index for case 1.

    A jump-free multi-mark model is folded onto its first mark: every jump
    block is zero, so only the total intensity matters.
    """
    return float(aug.weights.sum()), 0


def _cond_guard(M: np.ndarray, which: str, s: float, cap: float) -> float:
    c = condition(M)
    if not c <= cap:
        raise SingularBlock(which, s, c)
    return c


def case1_gains(Pcal: np.ndarray, aug: AugBlocks, lam: Optional[float] = None, s: float = 0.0,
                cond_cap: float = COND_CAP, schur_cond: float = SCHUR_COND) -> Case1Gains:
    """Block linear system for (Z, K), its inverse, and R1cal, H1cal."""
    default_lam, k = _unit_mark(aug)
    lam = default_lam if lam is None else float(lam)
    P = Pcal
    d = P.shape[0]
    I = np.eye(d)
    Kh, Kt, Kb, F, G1, K1 = aug.Khat[k], aug.Ktilde[k], aug.Kbar[k, k], aug.F[k], aug.G1[k], aug.K1[k]
    A11 = I - P @ aug.Htilde
    A12 = -lam * P @ Kt
    A21 = -P @ Kt.T
    A22 = I - lam * P @ Kb
    B11 = P @ aug.C + P @ aug.Hhat.T @ P
    B12 = P @ aug.D1
    B21 = P @ (F + Kh.T @ P)
    B22 = P @ G1

    big = np.block([[A11, A12], [A21, A22]])
    c11 = _cond_guard(A11, "A11", s, cond_cap)
    c22 = _cond_guard(A22, "A22", s, cond_cap)
    A11i, A22i = np.linalg.inv(A11), np.linalg.inv(A22)
    S1 = A11 - A12 @ A22i @ A21
    S2 = A22 - A21 @ A11i @ A12
    cs1 = _cond_guard(S1, "A11-A12*A22^-1*A21", s, cond_cap)
    cs2 = _cond_guard(S2, "A22-A21*A11^-1*A12", s, cond_cap)
    cbig = _cond_guard(big, "A", s, cond_cap)
    worst = max(c11, c22, cs1, cs2, cbig)
    if worst <= schur_cond:
        Ah11 = np.linalg.inv(S1)
        Ah22 = np.linalg.inv(S2)
        Ah12 = -A11i @ A12 @ Ah22
        Ah21 = -A22i @ A21 @ Ah11
        path = "schur"
    else:
        inv = np.linalg.inv(big)
        Ah11, Ah12, Ah21, Ah22 = inv[:d, :d], inv[:d, d:], inv[d:, :d], inv[d:, d:]
        path = "dense"

    F11 = Ah11 @ B11 + Ah12 @ B21
    F12 = Ah11 @ B12 + Ah12 @ B22
    F21 = Ah21 @ B11 + Ah22 @ B21
    F22 = Ah21 @ B12 + Ah22 @ B22
    R1cal = aug.R1 + aug.D1.T @ F12 + lam * G1.T @ F22
    H1cal = aug.B1.T @ P + aug.H1 + lam * K1 + aug.D1.T @ F11 + lam * G1.T @ F21
    return Case1Gains(A11, A12, A21, A22, B11, B12, B21, B22, Ah11, Ah12, Ah21, Ah22,
                      R1cal, H1cal, F11, F12, F21, F22, path, worst)


def case1_maps(g: Case1Gains, n_marks: int, s: float, cond_cap: float = COND_CAP) -> LeaderMaps:
    K1 = checked_solve(g.R1cal, g.H1cal, "R1cal", s, cond_cap)
    Kmap = g.F21 - g.F22 @ K1
    return LeaderMaps(g.F11 - g.F12 @ K1, np.broadcast_to(Kmap, (n_marks, *Kmap.shape)).copy(), K1)


def case2_gains(Pcal: np.ndarray, aug: AugBlocks, s: float = 0.0, cond_cap: float = COND_CAP) -> Case2Gains:
    """Gains of the G2 = 0 backend (all jump coupling blocks vanish)."""
    P = Pcal
    w = aug.weights
    M = np.eye(P.shape[0]) - P @ aug.Htilde
    cm = _cond_guard(M, "I-P*Htilde", s, cond_cap)
    base = P @ aug.C + P @ aug.Hhat.T @ P
    MinvP = np.linalg.solve(M, P)
    Minvbase = np.linalg.solve(M, base)
    G1t = _tr(aug.G1)
    Rhat = aug.R1 + aug.D1.T @ MinvP @ aug.D1 + mark_sum(w, G1t @ P @ aug.G1)
    Bhat = (aug.B1.T @ P + aug.H1 + mark_sum(w, aug.K1) + aug.D1.T @ Minvbase
            + mark_sum(w, G1t @ P @ aug.F))
    K1 = checked_solve(Rhat, Bhat, "Rhat1cal", s, cond_cap)
    F1 = Minvbase - MinvP @ aug.D1 @ K1
    F2 = P @ aug.F - P @ aug.G1 @ K1
    return Case2Gains(Rhat, Bhat, F1, F2, cm)


def case2_maps(g: Case2Gains, s: float, cond_cap: float = COND_CAP) -> LeaderMaps:
    K1 = checked_solve(g.Rhat1cal, g.Bhat1cal, "Rhat1cal", s, cond_cap)
    return LeaderMaps(g.F1, g.F2, K1)


def leader_drift(P: np.ndarray, aug: AugBlocks, maps: LeaderMaps) -> np.ndarray:
    """dPcal/ds given the state maps (same form for both cases)."""
    w = aug.weights
    jump = mark_sum(w, (_tr(aug.F) + P @ aug.Khat) @ maps.Kmap)
    lin = (aug.H1.T + mark_sum(w, _tr(aug.K1)) + P @ aug.B1) @ maps.K1
    return -(aug.A.T @ P + P @ aug.A + aug.Q + P @ aug.B2 @ P
             + (aug.C.T + P @ aug.Hhat) @ maps.Zmap + jump - lin)


class ClosedLoop(NamedTuple):
    """dX = A X ds + C X dB + sum_k F[k] X dNtilde_k."""

    A: np.ndarray
    C: np.ndarray
    F: np.ndarray  # (K, 2n, 2n)


def closed_loop(P: np.ndarray, aug: AugBlocks, maps: LeaderMaps) -> ClosedLoop:
    w = aug.weights
    Zm, Km, K1 = maps.Zmap, maps.Kmap, maps.K1
    Acl = aug.A + aug.B2 @ P + aug.Hhat @ Zm + mark_sum(w, aug.Khat @ Km) - aug.B1 @ K1
    Ccl = aug.C + aug.Hhat.T @ P + aug.Htilde @ Zm + mark_sum(w, aug.Ktilde @ Km) - aug.D1 @ K1
    Kb_sum = np.einsum("j,kjab,jbc->kac", w, aug.Kbar, Km)
    Fcl = aug.F + _tr(aug.Khat) @ P + _tr(aug.Ktilde) @ Zm + Kb_sum - aug.G1 @ K1
    return ClosedLoop(Acl, Ccl, Fcl)


Gains = Union[Case1Gains, Case2Gains]


class LeaderSolution:
    """Solved leader equation with per-node gains, state maps and closed-loop matrices."""

    def __init__(self, case: int, model: ModelSpec, costs: CostSpec, follower: FollowerSolution,
                 Pcal: GridFunction, cond_cap: float = COND_CAP):
        self.case, self.model, self.costs, self.follower = case, model, costs, follower
        self.Pcal, self.cond_cap = Pcal, cond_cap
        self.aug = augment(model, costs, follower)
        self.gains: list[Gains] = []
        self.maps: list[LeaderMaps] = []
        self.closed: list[ClosedLoop] = []
        for i, blk in enumerate(self.aug.nodes):
            g, m = _gains_and_maps(case, self.Pcal[i], blk, model.n_marks, model.grid.time(i), cond_cap)
            self.gains.append(g)
            self.maps.append(m)
            self.closed.append(closed_loop(self.Pcal[i], blk, m))

    @property
    def grid(self):
        return self.model.grid

    def rhs(self, s: float, P: np.ndarray) -> np.ndarray:
        blk = augment_at(self.model, self.costs, self.follower, s)
        _, m = _gains_and_maps(self.case, P, blk, self.model.n_marks, s, self.cond_cap)
        return leader_drift(P, blk, m)

    def inverse_paths(self) -> list[str]:
        return [g.path if isinstance(g, Case1Gains) else "direct" for g in self.gains]


def _gains_and_maps(case: int, P: np.ndarray, blk: AugBlocks, n_marks: int, s: float,
                    cond_cap: float) -> tuple[Gains, LeaderMaps]:
    if case == 1:
        g = case1_gains(P, blk, None, s, cond_cap)
        return g, case1_maps(g, n_marks, s, cond_cap)
    g = case2_gains(P, blk, s, cond_cap)
    return g, case2_maps(g, s, cond_cap)


def _solve(case: int, model: ModelSpec, costs: CostSpec, fsol: FollowerSolution,
           cond_cap: float) -> LeaderSolution:
    n_marks = model.n_marks

    def rhs(s, P):
        blk = augment_at(model, costs, fsol, s)
        _, m = _gains_and_maps(case, P, blk, n_marks, s, cond_cap)
        return leader_drift(P, blk, m)

    n = model.n
    M1 = np.zeros((2 * n, 2 * n))
    M1[:n, :n] = costs.M1
    Pcal = integrate_backward(rhs, M1, model.grid)
    return LeaderSolution(case, model, costs, fsol, Pcal, cond_cap)


def solve_leader_isrde_case1(model: ModelSpec, costs: CostSpec, fsol: FollowerSolution,
                             cond_cap: float = COND_CAP) -> LeaderSolution:
    """Backward RK4 of the case-1 leader equation; no symmetrization of Pcal."""
    if not case1_eligible(model):
        raise LeaderIneligible("leader ineligible for case 1: needs a single unit-jump mark or no jumps")
    return _solve(1, model, costs, fsol, cond_cap)


def solve_leader_isrde_case2(model: ModelSpec, costs: CostSpec, fsol: FollowerSolution,
                             cond_cap: float = COND_CAP) -> LeaderSolution:
    """Backward RK4 of the case-2 leader equation (requires G2 = 0)."""
    if not case2_eligible(model):
        raise LeaderIneligible("leader ineligible for case 2: G2 must vanish for every mark")
    return _solve(2, model, costs, fsol, cond_cap)


def solve_leader(model: ModelSpec, costs: CostSpec, fsol: FollowerSolution, case: str = "auto",
                 cond_cap: float = COND_CAP) -> LeaderSolution:
    """Dispatch on case in {"auto", "case1", "case2"}; auto prefers case 2 when both apply."""
    if case == "case1":
        return solve_leader_isrde_case1(model, costs, fsol, cond_cap)
    if case == "case2":
        return solve_leader_isrde_case2(model, costs, fsol, cond_cap)
    if case != "auto":
        raise ValueError(f"unknown case {case!r}")
    if case2_eligible(model):
        return solve_leader_isrde_case2(model, costs, fsol, cond_cap)
    if case1_eligible(model):
        return solve_leader_isrde_case1(model, costs, fsol, cond_cap)
    raise LeaderIneligible("leader ineligible: marked jumps with G2 != 0 fit neither case")


def leader_optimal_cost(sol: LeaderSolution, a=None) -> float:
    n = sol.model.n
    a = sol.model.a if a is None else np.asarray(a, dtype=float)
    return float(a @ sol.Pcal[0][:n, :n] @ a)
