import numpy as np
import pytest

from lqstackel.equilibrium import synthesize
from lqstackel.follower import solve_follower_isrde
from lqstackel.leader import solve_leader
from lqstackel.model import CostSpec, FiniteMarks, ModelSpec, TimeGrid, UnitJump

REF = dict(A=0.1, B1=1.0, B2=1.0, C=0.2, D1=0.1, D2=0.1, a=[1.0])
UNIT_WEIGHTS = dict(Q1=1.0, Q2=1.0, R1=1.0, R2=1.0, M1=1.0, M2=1.0)


def scalar_case1(steps=100):
    g = TimeGrid(0.0, 1.0, steps)
    m = ModelSpec.build(1, 1, 1, g, UnitJump(1.0), F=0.2, G1=0.1, G2=0.2, **REF)
    return m, CostSpec.build(m, **UNIT_WEIGHTS)


def scalar_case2(steps=100):
    g = TimeGrid(0.0, 1.0, steps)
    m = ModelSpec.build(1, 1, 1, g, FiniteMarks((0.5, 1.5), (0.5, 1.0)),
                        F=[0.1, 0.3], G1=[0.05, 0.15], G2=0.0, **REF)
    return m, CostSpec.build(m, **UNIT_WEIGHTS)


def two_state(steps=60, jumps=None, with_jumps=True):
    g = TimeGrid(0.0, 1.0, steps)
    jumps = jumps or UnitJump(0.8)
    extra = {}
    if with_jumps:
        extra = dict(F=[[0.2, 0.0], [0.1, 0.1]], G1=[[0.1], [0.0]], G2=[[0.0], [0.15]])
    m = ModelSpec.build(
        2, 1, 1, g, jumps,
        A=[[0.1, 0.2], [0.0, -0.1]], B1=[[1.0], [0.0]], B2=[[0.0], [1.0]],
        C=[[0.2, 0.0], [0.1, 0.1]], D1=[[0.1], [0.0]], D2=[[0.0], [0.1]], a=[1.0, -0.5], **extra)
    c = CostSpec.build(m, Q1=[[1.0, 0.0], [0.0, 0.5]], Q2=[[0.5, 0.1], [0.1, 1.0]], R1=1.0, R2=1.0,
                       M1=np.eye(2), M2=[[1.0, 0.0], [0.0, 0.5]])
    return m, c


def solve_all(m, c, case="auto"):
    f = solve_follower_isrde(m, c)
    L = solve_leader(m, c, f, case)
    return f, L, synthesize(f, L)


@pytest.fixture(scope="session")
def case1():
    m, c = scalar_case1()
    return (m, c, *solve_all(m, c))


@pytest.fixture(scope="session")
def case2():
    m, c = scalar_case2()
    return (m, c, *solve_all(m, c))


@pytest.fixture(scope="session")
def two_state_case1():
    m, c = two_state()
    return (m, c, *solve_all(m, c))


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; the line is printed even if an assert fails."""

    def record(number: int, ok: bool, text: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
