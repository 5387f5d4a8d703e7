import numpy as np
import pytest

from lqstackel.follower import solve_follower_phi
from lqstackel.model import CostSpec, ModelSpec, TimeGrid, UnitJump, FiniteMarks
from lqstackel.simulate import (LinearDynamics, accumulate_costs, closed_loop_dynamics, draw_noise, estimate,
                                follower_dynamics, monte_carlo, propagate, run_ensemble,
                                sample_closed_loop_path, sample_follower_perturbed_path, simulate)
from lqstackel.verify import scheme_expected_costs


def dyn1(grid, A=0.0, C=0.0, F=0.0, y0=1.0, weights=(1.0,)):
    N = grid.steps
    full = lambda v: np.full((N + 1, 1, 1), float(v))  # noqa: E731
    w = np.asarray(weights, float)
    return LinearDynamics(grid, w, full(A), full(C), np.stack([full(F)] * len(w)),
                          np.zeros((N + 1, 1, 1)), np.zeros((N + 1, 1, 1)), np.array([float(y0)]), 1)


def unit_costs(grid, **kw):
    m = ModelSpec.build(1, 1, 1, grid, UnitJump(1.0))
    return CostSpec.build(m, **kw)


def test_zero_dynamics_constant_path(case1):
    m, c, f, L, pair = case1
    zero = LinearDynamics(m.grid, m.weights, np.zeros((101, 2, 2)), np.zeros((101, 2, 2)), np.zeros((1, 101, 2, 2)),
                          np.zeros((101, 1, 2)), np.zeros((101, 1, 2)), np.array([1.0, 0.0]), 1)
    ens = run_ensemble(zero, c, 5, seed=1)
    assert np.all(ens.states == np.array([1.0, 0.0]))


def test_compensated_jumps_are_martingale():
    g = TimeGrid(0.0, 1.0, 50)
    N = g.steps
    # dx = 1 * (dN - lambda dt): affine lift y = [x; 1]
    A = np.zeros((N + 1, 2, 2))
    F = np.zeros((1, N + 1, 2, 2))
    F[0, :, 0, 1] = 1.0
    dyn = LinearDynamics(g, np.array([2.0]), A, A.copy(), F, np.zeros((N + 1, 1, 2)), np.zeros((N + 1, 1, 2)),
                         np.array([0.0, 1.0]), 1)
    m = ModelSpec.build(1, 1, 1, g, UnitJump(2.0))
    ens = run_ensemble(dyn, CostSpec.build(m), 10_000, seed=11)
    est = estimate(ens.states[:, -1, 0])
    assert abs(est.mean) <= 3 * est.se
    assert ens.jump_counts().mean() == pytest.approx(2.0, rel=0.05)


def test_drift_only_exponential():
    for steps in (100, 200):
        g = TimeGrid(0.0, 1.0, steps)
        x = propagate(dyn1(g, A=1.0), draw_noise(g, [1.0], 0, [0]))[0, -1, 0]
        assert abs(x - np.e) <= 2.0 * g.dt * np.e
    assert x == pytest.approx((1 + g.dt) ** steps, rel=1e-13)


def test_reconstruction_from_stored_noise(case1):
    m, c, f, L, pair = case1
    p = sample_closed_loop_path(L, pair, seed=5, index=17)
    A = np.stack([cl.A for cl in L.closed])
    C = np.stack([cl.C for cl in L.closed])
    F = np.stack([cl.F for cl in L.closed])
    X = p.states[0].copy()
    dt = m.grid.dt
    for i in range(m.grid.steps):
        jump = sum((F[i, k] @ X) * (p.dN[i, k] - m.weights[k] * dt) for k in range(m.n_marks))
        X = X + A[i] @ X * dt + C[i] @ X * p.dB[i] + jump
        assert np.allclose(X, p.states[i + 1], rtol=1e-12, atol=1e-14)
    assert np.array_equal(p.u1[5], -pair.K1[5] @ p.states[5])
    assert np.array_equal(p.states[0], [1.0, 0.0])


def test_batch_and_worker_invariance(case2):
    m, c, f, L, pair = case2
    dyn = closed_loop_dynamics(L, pair)
    a = run_ensemble(dyn, c, 40, seed=3, workers=1)
    b = run_ensemble(dyn, c, 40, seed=3, workers=4)
    single = simulate(dyn, c, draw_noise(m.grid, m.weights, 3, [29]))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.J1, b.J1) and np.array_equal(a.J2, b.J2)
    assert np.array_equal(single.states[0], a.states[29]) and single.J1[0] == a.J1[29]
    assert estimate(a.J1, 3) == estimate(b.J1, 3)
    assert a.dN.shape == (40, 100, 2)


def test_accumulate_cost_examples():
    g = TimeGrid(0.0, 1.0, 10)
    x = np.full((1, 11, 1), 2.0)
    u = np.zeros((1, 11, 1))
    J1, _ = accumulate_costs(x, u, u, unit_costs(g, M1=1.0), g.dt)
    assert J1[0] == 4.0
    J1, J2 = accumulate_costs(np.zeros((1, 11, 1)), u, u, unit_costs(g, Q1=1, Q2=1, R1=1, R2=1, M1=1, M2=1), g.dt)
    assert J1[0] == 0.0 and J2[0] == 0.0
    J1, _ = accumulate_costs(x, u, u, unit_costs(g, Q1=1.0), g.dt)
    assert J1[0] == pytest.approx(4.0, abs=1e-12)


def test_nonfinite_path_is_flagged():
    g = TimeGrid(0.0, 1.0, 20)
    dyn = dyn1(g, A=1e200)
    with pytest.warns(RuntimeWarning, match="non-finite"):
        ens = simulate(dyn, unit_costs(g, M1=1.0), draw_noise(g, [1.0], 0, [0, 1]))
    assert ens.aborted.all() and np.all(np.isnan(ens.J1))


def test_perturbed_path_examples(case1):
    m, c, f, _, _ = case1
    phi = solve_follower_phi(m, c, f, 1.0)
    base = sample_follower_perturbed_path(m, c, f, 1.0, phi, 1.0, 0.0, seed=2, index=4)
    zero_v = sample_follower_perturbed_path(m, c, f, 1.0, phi, 0.0, 0.3, seed=2, index=4)
    assert np.array_equal(base.states, zero_v.states) and base.J2 == zero_v.J2
    assert np.all(base.states[:, 1] == 1.0)
    moved = sample_follower_perturbed_path(m, c, f, 1.0, phi, 1.0, 0.3, seed=2, index=4)
    assert moved.u2[0, 0] - base.u2[0, 0] == pytest.approx(0.3)  # same state at t0, control shifted by eps*v
    assert not np.array_equal(moved.states, base.states)


def test_scheme_expectation_matches_mc(case1):
    m, c, f, L, pair = case1
    dyn = closed_loop_dynamics(L, pair)
    ens = run_ensemble(dyn, c, 4000, seed=9)
    e1, e2 = estimate(ens.J1), estimate(ens.J2)
    m1, m2 = scheme_expected_costs(dyn, c)
    assert abs(e1.mean - m1) <= 4 * e1.se and abs(e2.mean - m2) <= 4 * e2.se


def test_follower_dynamics_affine_state(two_state_case1):
    m, c, f, _, _ = two_state_case1
    phi = solve_follower_phi(m, c, f, 0.5)
    dyn = follower_dynamics(m, f, 0.5, phi)
    assert dyn.dim == 3 and dyn.n == 2 and np.array_equal(dyn.y0, [1.0, -0.5, 1.0])
    assert not np.any(dyn.A[:, 2]) and np.all(dyn.U1[:, 0, 2] == 0.5)


def test_monte_carlo_examples():
    five = monte_carlo(lambda rng: 5.0, 100, 0)
    assert five.mean == 5.0 and five.se == 0.0 and five.count == 100
    a = monte_carlo(lambda rng: rng.standard_normal(), 10_000, 42)
    b = monte_carlo(lambda rng: rng.standard_normal(), 10_000, 42, workers=3)
    assert a == b
    assert abs(a.mean) <= 3 * 0.01
    with pytest.raises(ValueError):
        monte_carlo(lambda rng: 1.0, 1, 0)


def test_estimate_drops_nan_and_is_order_free():
    x = np.random.default_rng(0).standard_normal(1001)
    assert estimate(x) == estimate(x[::-1])
    assert estimate(np.append(x, np.nan)).count == 1001


def test_finite_marks_draws_per_mark():
    g = TimeGrid(0.0, 1.0, 1000)
    marks = FiniteMarks((0.5, 1.5), (0.5, 3.0))
    n = draw_noise(g, marks.weights, 1, range(200))
    means = n.dN.sum(axis=1).mean(axis=0)
    assert means == pytest.approx([0.5, 3.0], rel=0.15)
