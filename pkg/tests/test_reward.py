"""
Unit tests for core.reward
"""

import math
import unittest

from core.errors import ContractViolation, InvalidBaseline, ValidationError
from core.reward import AGGRESSIVE, CONSERVATIVE, RewardConfig, punish, reward_aggressive, reward_conservative


class TestRewardShapes(unittest.TestCase):
    """Reward and punishment values"""

    def test_conservative(self):
        self.assertAlmostEqual(reward_conservative(12.0, 12.0), -1.0)
        self.assertAlmostEqual(reward_conservative(13.0, 12.0), -math.e)
        self.assertAlmostEqual(reward_conservative(11.0, 12.0), -1.0 / math.e)

    def test_aggressive(self):
        self.assertAlmostEqual(reward_aggressive(12.0, 12.0), -math.e)
        self.assertAlmostEqual(reward_aggressive(0.0, 12.0), -1.0)
        self.assertAlmostEqual(reward_aggressive(48.0, 12.0), -math.e ** 2)

    def test_aggressive_contract(self):
        with self.assertRaises(InvalidBaseline):
            reward_aggressive(1.0, 0.0)
        with self.assertRaises(ContractViolation):
            reward_aggressive(-1.0, 10.0)

    def test_punish(self):
        self.assertAlmostEqual(punish(0.0), -10.0)
        self.assertAlmostEqual(punish(0.2), -30.0)
        self.assertAlmostEqual(punish(1.0), -110.0)
        with self.assertRaises(ContractViolation):
            punish(-0.1)

    def test_rewards_decrease_with_error(self):
        for shape in (reward_conservative, reward_aggressive):
            values = [shape(w, 10.0) for w in (0.0, 5.0, 10.0, 20.0, 40.0)]
            self.assertTrue(all(a > b for a, b in zip(values, values[1:])))
            self.assertTrue(all(v < 0 for v in values))


class TestRewardConfig(unittest.TestCase):
    """Configured reward"""

    def test_dispatch(self):
        self.assertAlmostEqual(RewardConfig(CONSERVATIVE, 10.0, 1.5).reward(10.0), -1.0)
        self.assertAlmostEqual(RewardConfig(AGGRESSIVE, 10.0, 1.5).reward(10.0), -math.e)

    def test_punish_uses_target(self):
        config = RewardConfig(CONSERVATIVE, 10.0, 1.5)
        self.assertAlmostEqual(config.punish(1.3), -30.0)

    def test_validation(self):
        with self.assertRaises(ValidationError):
            RewardConfig('greedy', 10.0, 1.5)
        with self.assertRaises(InvalidBaseline):
            RewardConfig(CONSERVATIVE, 0.0, 1.5)
        with self.assertRaises(ValidationError):
            RewardConfig(CONSERVATIVE, 10.0, 1.0)


if __name__ == '__main__':
    unittest.main()
