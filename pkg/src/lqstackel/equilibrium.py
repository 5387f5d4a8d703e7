"""State-feedback Stackelberg pair as gain tables on the augmented state X = [x; beta]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .follower import FollowerSolution, checked_solve, mark_sum
from .leader import LeaderSolution
from .model import TimeGrid


@dataclass(frozen=True)
class FeedbackPair:
    """u1 = -K1(s) X, u2 = -K2(s) X; tables hold one gain per grid node."""

    case: int
    grid: TimeGrid
    K1: np.ndarray  # (steps+1, m1, 2n)
    K2: np.ndarray  # (steps+1, m2, 2n)

    def gains_at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        i, th = self.grid.locate(s)
        if th == 0.0:
            return self.K1[i], self.K2[i]
        if th == 1.0:
            return self.K1[i + 1], self.K2[i + 1]
        return ((1 - th) * self.K1[i] + th * self.K1[i + 1],
                (1 - th) * self.K2[i] + th * self.K2[i + 1])


def follower_gain_row(fsol: FollowerSolution, lsol: LeaderSolution, i: int) -> np.ndarray:
    """K2 at node i, composing the follower law with phi, theta, psi read off the leader maps."""
    n = fsol.model.n
    c = fsol.model.at_node(i)
    g = fsol.gains[i]
    maps = lsol.maps[i]
    lower = slice(n, 2 * n)
    phi = lsol.Pcal[i][lower]  # [0 I] Pcal
    theta = maps.Zmap[lower]
    psi = maps.Kmap[:, lower]  # (K, n, 2n)
    rhs = np.concatenate([g.Shat2.T, np.zeros_like(g.Shat2.T)], axis=1)
    rhs = rhs + c.B2.T @ phi + c.D2.T @ theta - g.Shat1 @ maps.K1
    if lsol.case == 1 or np.any(c.G2):
        rhs = rhs + mark_sum(c.weights, np.swapaxes(c.G2, -1, -2) @ psi)
    return checked_solve(g.Rhat2, rhs, "Rhat2", fsol.grid.time(i), fsol.cond_cap)


def synthesize(fsol: FollowerSolution, lsol: LeaderSolution) -> FeedbackPair:
    if fsol.grid != lsol.grid:
        raise ValueError("follower and leader solutions live on different grids")
    N = fsol.grid.steps
    K1 = np.stack([lsol.maps[i].K1 for i in range(N + 1)])
    K2 = np.stack([follower_gain_row(fsol, lsol, i) for i in range(N + 1)])
    if not (np.all(np.isfinite(K1)) and np.all(np.isfinite(K2))):
        raise FloatingPointError("non-finite equilibrium gain")
    return FeedbackPair(lsol.case, fsol.grid, K1, K2)


def evaluate_controls(pair: FeedbackPair, s: float, X) -> tuple[np.ndarray, np.ndarray]:
    K1, K2 = pair.gains_at(s)
    X = np.asarray(X, dtype=float)
    return -K1 @ X, -K2 @ X
