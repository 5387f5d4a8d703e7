"""LQ leader-follower (Stackelberg) games driven by jump diffusions."""

from .equilibrium import FeedbackPair, evaluate_controls, synthesize
from .errors import BlowUp, LeaderIneligible, SingularBlock, SingularGain
from .follower import solve_follower_isrde, solve_follower_phi, follower_cost_certificate
from .leader import leader_optimal_cost, solve_leader, solve_leader_isrde_case1, solve_leader_isrde_case2
from .model import CostSpec, FiniteMarks, ModelSpec, TimeGrid, UnitJump, strip_jumps, validate_model

__version__ = "0.1.0"

__all__ = [
    "BlowUp", "CostSpec", "FeedbackPair", "FiniteMarks", "LeaderIneligible", "ModelSpec", "SingularBlock",
    "SingularGain", "TimeGrid", "UnitJump", "evaluate_controls", "follower_cost_certificate",
    "leader_optimal_cost", "solve_follower_isrde", "solve_follower_phi", "solve_leader",
    "solve_leader_isrde_case1", "solve_leader_isrde_case2", "strip_jumps", "synthesize", "validate_model",
]
