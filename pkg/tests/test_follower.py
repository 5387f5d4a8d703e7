import numpy as np
import pytest

from lqstackel.errors import SingularGain
from lqstackel.follower import (follower_cost_certificate, follower_feedback_gain, follower_gains,
                                gains_from_coefficients, solve_follower_isrde, solve_follower_phi)
from lqstackel.model import CostSpec, ModelSpec, TimeGrid, UnitJump, strip_jumps

from conftest import two_state
from oracles import backward_scalar


def scalar(steps=100, jumps=None, costs=None, **coef):
    g = TimeGrid(0.0, 1.0, steps)
    m = ModelSpec.build(1, 1, 1, g, jumps or UnitJump(1.0), **coef)
    w = dict(R2=1.0, M2=1.0)
    w.update(costs or {})
    return m, CostSpec.build(m, **w)


def test_gains_hand_values():
    m, _ = scalar(D2=1.0, G2=1.0, jumps=UnitJump(2.0))
    g = gains_from_coefficients(np.array([[3.0]]), m.at_node(0), np.eye(1))
    assert g.Rhat2[0, 0] == pytest.approx(10.0)
    m, _ = scalar(B2=1.0)
    g = gains_from_coefficients(np.array([[5.0]]), m.at_node(0), np.eye(1))
    assert g.Shat2[0, 0] == pytest.approx(5.0)
    m, _ = scalar(B2=1.0, C=0.7, F=0.3)
    g = gains_from_coefficients(np.array([[2.0]]), m.at_node(0), np.eye(1))
    assert g.Rhat2[0, 0] == 1.0


def test_singular_rhat2_raises():
    m, c = scalar(B2=1.0, costs=dict(R2=0.0))
    with pytest.raises(SingularGain) as exc:
        follower_gains(np.zeros((1, 1)), m, c, 0.3)
    assert exc.value.which == "Rhat2" and exc.value.time == 0.3


def test_closed_form_riccati():
    m, c = scalar(steps=1000, B2=1.0)
    sol = solve_follower_isrde(m, c)
    assert sol.P[0][0, 0] == pytest.approx(0.5, abs=1e-8)
    assert np.array_equal(sol.P[1000], c.M2)


def test_linear_riccati_without_control():
    m, c = scalar(steps=50, costs=dict(Q2=0.7, M2=2.0))
    sol = solve_follower_isrde(m, c)
    assert np.allclose(sol.P.values[:, 0, 0], 2.0 + 0.7 * (1.0 - m.grid.nodes), atol=1e-12)


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_jump_riccati_against_reference(lam):
    m, c = scalar(steps=1000, B2=1.0, G2=1.0, jumps=UnitJump(lam))
    sol = solve_follower_isrde(m, c)
    ref = backward_scalar(lambda s, p: p * p / (1 + lam * p), 1.0, nodes=m.grid.nodes)
    assert np.max(np.abs(sol.P.values[:, 0, 0] - ref)) <= 1e-8


def test_symmetry_and_psd(two_state_case1):
    _, _, f, _, _ = two_state_case1
    P = f.P.values
    assert np.max(np.abs(P - np.swapaxes(P, 1, 2))) <= 1e-10
    assert min(np.linalg.eigvalsh(p).min() for p in P) >= -1e-8


def test_no_jump_reduction_matches_zeroed_jumps():
    m, c = two_state(steps=40)
    stripped = strip_jumps(m)
    a = solve_follower_isrde(stripped, c).P.values
    b = solve_follower_isrde(stripped.replace(jumps=UnitJump(5.0)), c).P.values
    assert np.max(np.abs(a - b)) <= 1e-10


def test_feedback_gain_examples():
    m, c = scalar(B2=4.0, D2=1.0)
    sol = solve_follower_isrde(m, c)
    fb = follower_feedback_gain(sol, 1.0)  # P(T) = 1, so Rhat2 = 2 and Shat2 = 4
    assert fb.Kx[0, 0] == pytest.approx(-2.0)
    m, c = scalar()
    fb = follower_feedback_gain(solve_follower_isrde(m, c), 0.5)
    assert fb.Kx[0, 0] == 0.0


def test_phi_examples():
    m, c = scalar(steps=20, B1=1.0, costs=dict(Q2=0.0))
    sol = solve_follower_isrde(m, c)
    phi = solve_follower_phi(m, c, sol, 1.0)
    assert np.allclose(phi.values[:, 0], 1.0 - m.grid.nodes, atol=1e-13)
    assert phi[0][0] == pytest.approx(1.0)
    assert np.array_equal(phi[20], [0.0])
    assert not np.any(solve_follower_phi(m, c, sol, 0.0).values)
    m, c = two_state(steps=30)
    sol = solve_follower_isrde(m, c)
    p1 = solve_follower_phi(m, c, sol, np.sin(m.grid.nodes)).values
    p2 = solve_follower_phi(m, c, sol, 2 * np.sin(m.grid.nodes)).values
    assert np.allclose(p2, 2 * p1, rtol=1e-13, atol=1e-15)


def test_certificate_trivial_cases(two_state_case1):
    m, c, f, _, _ = two_state_case1
    phi0 = solve_follower_phi(m, c, f, 0.0)
    assert follower_cost_certificate(m, c, f, 0.0, phi0, a=np.zeros(2)) == 0.0
    a = np.array([0.3, -1.2])
    assert follower_cost_certificate(m, c, f, 0.0, phi0, a=a) == pytest.approx(a @ f.P[0] @ a, abs=1e-15)


def test_certificate_converges_under_refinement():
    vals = []
    for steps in (50, 100, 200):
        m, c = two_state(steps=steps)
        f = solve_follower_isrde(m, c)
        vals.append(follower_cost_certificate(m, c, f, 1.0, solve_follower_phi(m, c, f, 1.0)))
    d1, d2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert d2 < d1 / 3  # second-order trapezoid error
