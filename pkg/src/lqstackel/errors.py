"""Exceptions raised by the solvers; each carries the first offending time."""

from __future__ import annotations

import numpy as np


class BlowUp(ArithmeticError):
    """A non-finite value appeared while integrating."""

    def __init__(self, time: float, detail: str = ""):
        self.time = float(time)
        msg = f"non-finite value at s={self.time:.6g}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class SingularGain(np.linalg.LinAlgError):
    """A gain matrix that must be inverted is numerically singular."""

    def __init__(self, which: str, time: float, cond: float = float("inf")):
        self.which, self.time, self.cond = which, float(time), float(cond)
        super().__init__(f"{which} singular at s={self.time:.6g} (cond={self.cond:.3g})")


class SingularBlock(SingularGain):
    """One of the block invertibility conditions of the leader equation fails."""


class LeaderIneligible(ValueError):
    """The model fits neither leader case (marked jumps with G2 != 0)."""
