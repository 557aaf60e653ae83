"""
Reward and punishment functions for the rank search

Errors are percentages on a 0-100 scale; both reward shapes depend on it.
"""

import math
from dataclasses import dataclass

from core.errors import ContractViolation, InvalidBaseline, ValidationError

CONSERVATIVE = 'conservative'
AGGRESSIVE = 'aggressive'

DEFAULT_PUNISH_SLOPE = 100.0
DEFAULT_PUNISH_OFFSET = 10.0


def reward_conservative(w, w_b):
    """-exp(w - w_b): exponential emphasis on small error differences"""
    return -math.exp(w - w_b)


def reward_aggressive(w, w_b):
    """-exp(sqrt(w / w_b)): flatter shape for large error ranges"""
    if not w_b > 0:
        raise InvalidBaseline(f"baseline error must be positive, got {w_b}")
    if w < 0:
        raise ContractViolation(f"error must be non-negative, got {w}")
    return -math.exp(math.sqrt(w / w_b))


def punish(delta_a, slope=DEFAULT_PUNISH_SLOPE, offset=DEFAULT_PUNISH_OFFSET):
    """Linear penalty for schemes short of the target speedup by delta_a"""
    if delta_a < 0:
        raise ContractViolation(f"punish called with negative speedup shortfall {delta_a}")
    return -slope * delta_a - offset


@dataclass(frozen=True)
class RewardConfig:
    mode: str
    baseline_error: float
    target_speedup: float
    punish_slope: float = DEFAULT_PUNISH_SLOPE
    punish_offset: float = DEFAULT_PUNISH_OFFSET

    def __post_init__(self):
        if self.mode not in (CONSERVATIVE, AGGRESSIVE):
            raise ValidationError(f"reward mode must be '{CONSERVATIVE}' or '{AGGRESSIVE}', got '{self.mode}'")
        if not self.baseline_error > 0:
            raise InvalidBaseline(f"baseline error must be positive, got {self.baseline_error}")
        if not self.target_speedup > 1:
            raise ValidationError(f"target speedup must exceed 1, got {self.target_speedup}")

    def reward(self, w):
        if self.mode == AGGRESSIVE:
            return reward_aggressive(w, self.baseline_error)
        return reward_conservative(w, self.baseline_error)

    def punish(self, speedup):
        """Penalty for a scheme whose estimated speedup missed the target"""
        return punish(self.target_speedup - speedup, self.punish_slope, self.punish_offset)
