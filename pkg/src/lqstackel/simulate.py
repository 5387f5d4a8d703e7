"""Euler-Maruyama Monte Carlo for linear jump diffusions with quadratic costs.

Every simulated system is linear in its state y: dy = A y ds + C y dB +
sum_k F_k y dNtilde_k, with controls u1 = U1 y, u2 = U2 y and x = y[:n].
Affine systems carry a constant last coordinate equal to 1.

Noise for path i is drawn from its own Philox stream keyed by (seed, i), and
all arithmetic is elementwise across paths, so every path is bit-identical no
matter how paths are batched or spread over workers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .equilibrium import FeedbackPair
from .follower import FollowerSolution, control_path
from .integrators import GridFunction
from .leader import LeaderSolution
from .model import CostSpec, ModelSpec, TimeGrid


def path_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(base_seed), int(index)])))


@dataclass(frozen=True)
class LinearDynamics:
    grid: TimeGrid
    weights: np.ndarray
    A: np.ndarray  # (N+1, d, d)
    C: np.ndarray  # (N+1, d, d)
    F: np.ndarray  # (K, N+1, d, d)
    U1: np.ndarray  # (N+1, m1, d)
    U2: np.ndarray  # (N+1, m2, d)
    y0: np.ndarray
    n: int  # x = y[:n]

    @property
    def dim(self) -> int:
        return self.y0.shape[0]


class Noise(NamedTuple):
    seed: int
    index: np.ndarray  # (P,)
    dB: np.ndarray  # (P, N)
    dN: np.ndarray  # (P, N, K) jump counts


def draw_noise(grid: TimeGrid, weights, seed: int, indices: Sequence[int]) -> Noise:
    w = np.asarray(weights, dtype=float)
    N, dt = grid.steps, grid.dt
    sq = math.sqrt(dt)
    dB = np.empty((len(indices), N))
    dN = np.empty((len(indices), N, len(w)))
    for r, i in enumerate(indices):
        rng = path_rng(seed, i)
        dB[r] = rng.standard_normal(N) * sq
        dN[r] = rng.poisson(w * dt, size=(N, len(w)))
    return Noise(int(seed), np.asarray(indices, dtype=np.int64), dB, dN)


def _matvec(M: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """M @ y for every row y of Y, summed left to right so results do not depend on batch size."""
    out = np.zeros((Y.shape[0], M.shape[0]))
    for r in range(M.shape[0]):
        acc = out[:, r]
        for c in range(M.shape[1]):
            if M[r, c] != 0.0:
                acc += M[r, c] * Y[:, c]
    return out


def propagate(dyn: LinearDynamics, noise: Noise) -> np.ndarray:
    """States of shape (P, N+1, d) under the Euler scheme with compensated jumps."""
    N, dt = dyn.grid.steps, dyn.grid.dt
    w = dyn.weights
    P = noise.dB.shape[0]
    Y = np.empty((P, N + 1, dyn.dim))
    Y[:, 0] = dyn.y0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(N):
            y = Y[:, i]
            nxt = y + _matvec(dyn.A[i], y) * dt
            nxt += _matvec(dyn.C[i], y) * noise.dB[:, i, None]
            for k in range(len(w)):
                nxt += _matvec(dyn.F[k, i], y) * (noise.dN[:, i, k] - w[k] * dt)[:, None]
            Y[:, i + 1] = nxt
    return Y


@dataclass(frozen=True)
class SimulatedPath:
    times: np.ndarray
    states: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    dB: np.ndarray
    dN: np.ndarray
    J1: float
    J2: float


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray
    index: np.ndarray
    seed: int
    states: np.ndarray  # (P, N+1, d)
    u1: np.ndarray  # (P, N+1, m1)
    u2: np.ndarray  # (P, N+1, m2)
    dB: np.ndarray
    dN: np.ndarray
    J1: np.ndarray  # (P,)
    J2: np.ndarray
    aborted: np.ndarray  # (P,) bool

    def __len__(self) -> int:
        return self.states.shape[0]

    def path(self, r: int) -> SimulatedPath:
        return SimulatedPath(self.times, self.states[r], self.u1[r], self.u2[r], self.dB[r], self.dN[r],
                             float(self.J1[r]), float(self.J2[r]))

    def jump_counts(self) -> np.ndarray:
        return self.dN.sum(axis=1)


def _controls(U: np.ndarray, Y: np.ndarray) -> np.ndarray:
    out = np.empty((Y.shape[0], Y.shape[1], U.shape[1]))
    for i in range(Y.shape[1]):
        out[:, i] = _matvec(U[i], Y[:, i])
    return out


def _quad(M: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.sum(V * _matvec(M, V), axis=1)


def accumulate_costs(x: np.ndarray, u1: np.ndarray, u2: np.ndarray, costs: CostSpec,
                     dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Left-rectangle running costs plus terminal costs; x is (P, N+1, n)."""
    N = x.shape[1] - 1
    J1 = np.zeros(x.shape[0])
    J2 = np.zeros(x.shape[0])
    for i in range(N):
        J1 += (_quad(costs.Q1[i], x[:, i]) + _quad(costs.R1[i], u1[:, i])) * dt
        J2 += (_quad(costs.Q2[i], x[:, i]) + _quad(costs.R2[i], u2[:, i])) * dt
    J1 += _quad(costs.M1, x[:, N])
    J2 += _quad(costs.M2, x[:, N])
    return J1, J2


def simulate(dyn: LinearDynamics, costs: CostSpec, noise: Noise) -> PathEnsemble:
    Y = propagate(dyn, noise)
    with np.errstate(over="ignore", invalid="ignore"):
        u1, u2 = _controls(dyn.U1, Y), _controls(dyn.U2, Y)
        J1, J2 = accumulate_costs(Y[:, :, :dyn.n], u1, u2, costs, dyn.grid.dt)
    bad = ~np.all(np.isfinite(Y.reshape(Y.shape[0], -1)), axis=1)
    if bad.any():
        first = noise.index[np.argmax(bad)]
        warnings.warn(f"{int(bad.sum())} path(s) became non-finite (first: path {int(first)}); "
                      "excluded from estimates", RuntimeWarning, stacklevel=2)
        J1 = np.where(bad, np.nan, J1)
        J2 = np.where(bad, np.nan, J2)
    return PathEnsemble(dyn.grid.nodes, noise.index, noise.seed, Y, u1, u2, noise.dB, noise.dN, J1, J2, bad)


def chunk_ranges(count: int, workers: int) -> list[range]:
    size = max(1, -(-count // max(1, workers)))
    return [range(a, min(count, a + size)) for a in range(0, count, size)]


def run_ensemble(dyn: LinearDynamics, costs: CostSpec, count: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Simulate paths 0..count-1; the result is independent of `workers`."""

    def job(idx: range) -> PathEnsemble:
        return simulate(dyn, costs, draw_noise(dyn.grid, dyn.weights, seed, idx))

    parts = run_chunks(job, chunk_ranges(count, workers), workers)
    return _concat(parts)


def run_chunks(job, chunks, workers):
    if workers <= 1 or len(chunks) == 1:
        return [job(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, chunks))


def _concat(parts: list[PathEnsemble]) -> PathEnsemble:
    if len(parts) == 1:
        return parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return PathEnsemble(parts[0].times, cat("index"), parts[0].seed, cat("states"), cat("u1"), cat("u2"),
                        cat("dB"), cat("dN"), cat("J1"), cat("J2"), cat("aborted"))


# --- system builders -------------------------------------------------------

def closed_loop_dynamics(lsol: LeaderSolution, pair: FeedbackPair, a=None) -> LinearDynamics:
    """Augmented closed loop on X = [x; beta] with X(t0) = [a; 0]."""
    model = lsol.model
    n = model.n
    a = model.a if a is None else np.asarray(a, dtype=float)
    A = np.stack([cl.A for cl in lsol.closed])
    C = np.stack([cl.C for cl in lsol.closed])
    F = np.stack([cl.F for cl in lsol.closed], axis=1)
    return LinearDynamics(model.grid, model.weights, A, C, F, -pair.K1, -pair.K2,
                          np.concatenate([a, np.zeros(n)]), n)


def _affine_lift(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[[M, b], [0, 0]] per node; M (N+1, n, n), b (N+1, n)."""
    N1, n = M.shape[0], M.shape[1]
    out = np.zeros((N1, n + 1, n + 1))
    out[:, :n, :n] = M
    out[:, :n, n] = b
    return out


def follower_dynamics(model: ModelSpec, fsol: FollowerSolution, u1, phi: GridFunction,
                      v=None, eps: float = 0.0, a=None) -> LinearDynamics:
    """Original state equation with a deterministic leader control u1 and the follower
    playing its optimal feedback plus eps * v. State y = [x; 1]."""
    grid = model.grid
    n, m1, m2, N = model.n, model.m1, model.m2, grid.steps
    a = model.a if a is None else np.asarray(a, dtype=float)
    u = control_path(u1, grid, m1)
    vv = np.zeros((N + 1, m2)) if v is None else control_path(v, grid, m2)
    Kx = np.empty((N + 1, m2, n))
    k0 = np.empty((N + 1, m2))
    for i in range(N + 1):
        g = fsol.gains[i]
        c = model.at_node(i)
        Rinv = np.linalg.inv(g.Rhat2)
        Kx[i] = -Rinv @ g.Shat2.T
        k0[i] = -Rinv @ (c.B2.T @ phi[i] + g.Shat1 @ u[i]) + eps * vv[i]

    def lift(X, Y1, Y2):
        # coefficient of x and the constant term of X x + Y1 u1 + Y2 u2
        M = X + Y2 @ Kx
        b = np.einsum("nij,nj->ni", Y1, u) + np.einsum("nij,nj->ni", Y2, k0)
        return _affine_lift(M, b)

    A = lift(model.A, model.B1, model.B2)
    C = lift(model.C, model.D1, model.D2)
    F = np.stack([lift(model.F[k], model.G1[k], model.G2[k]) for k in range(model.n_marks)])
    U1 = np.zeros((N + 1, m1, n + 1))
    U1[:, :, n] = u
    U2 = np.concatenate([Kx, k0[:, :, None]], axis=2)
    return LinearDynamics(grid, model.weights, A, C, F, U1, U2, np.concatenate([a, [1.0]]), n)


def sample_closed_loop_path(lsol: LeaderSolution, pair: FeedbackPair, a=None, seed: int = 0,
                            index: int = 0) -> SimulatedPath:
    dyn = closed_loop_dynamics(lsol, pair, a)
    return simulate(dyn, lsol.costs, draw_noise(dyn.grid, dyn.weights, seed, [index])).path(0)


def sample_follower_perturbed_path(model: ModelSpec, costs: CostSpec, fsol: FollowerSolution, u1,
                                   phi: GridFunction, v, eps: float, a=None, seed: int = 0,
                                   index: int = 0) -> SimulatedPath:
    dyn = follower_dynamics(model, fsol, u1, phi, v, eps, a)
    return simulate(dyn, costs, draw_noise(dyn.grid, dyn.weights, seed, [index])).path(0)


# --- estimates -------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    se: float
    count: int
    seed: int


def estimate(values, seed: int = 0) -> MonteCarloEstimate:
    """Mean and standard error with correctly rounded sums (order independent); NaNs are dropped."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if n < 2:
        raise ValueError("need at least two finite samples")
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return MonteCarloEstimate(mean, math.sqrt(var / n), n, int(seed))


def monte_carlo(sampler: Callable[[np.random.Generator], float], count: int, base_seed: int,
                workers: int = 1) -> MonteCarloEstimate:
    """Estimate E[sampler(rng)] with rng keyed by (base_seed, index)."""
    if count < 2:
        raise ValueError("count must be at least 2")

    def job(idx: range) -> list[float]:
        return [float(sampler(path_rng(base_seed, i))) for i in idx]

    parts = run_chunks(job, chunk_ranges(count, workers), workers)
    return estimate([v for p in parts for v in p], base_seed)
