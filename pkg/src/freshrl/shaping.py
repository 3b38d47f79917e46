"""Shaping rewards from ensemble predictions, combined with the env reward.

r_a fires when the taken action matches the ensemble's predicted best
action and the action confidence clears 1 - beta_a; r_s fires when the
next state is predicted good with state confidence above 1 - beta_s.  The
combined reward is r_e + lambda_a * r_a + lambda_s * r_s.  When two
consecutive observations are nearly identical (a cycle), the ensemble
contribution is negated so loitering cannot farm shaping reward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class ShapingConfig:
    beta_a: float = 1.0
    beta_s: float = 0.02
    lambda_a: float = 0.2
    lambda_s: float = 0.1
    cycle_distance_threshold: float = 1e-6
    clip_env_reward: bool = True

    def __post_init__(self):
        for name in ("beta_a", "beta_s", "lambda_a", "lambda_s",
                     "cycle_distance_threshold"):
            if not np.isfinite(getattr(self, name)):
                raise UsageError(f"{name} must be finite")
        if not 0.0 <= self.beta_a <= 1.0 or not 0.0 <= self.beta_s <= 1.0:
            raise UsageError("beta thresholds must be in [0, 1]")
        if self.lambda_a < 0 or self.lambda_s < 0:
            raise UsageError("lambda weights must be nonnegative")
        if self.cycle_distance_threshold < 0:
            raise UsageError("cycle_distance_threshold must be nonnegative")


def clip_reward(r_e: float) -> float:
    """Sign clipping to {-1, 0, 1}."""
    return float(np.sign(r_e))


def action_shaping(fnn, obs, action: int, config: ShapingConfig) -> int:
    best, _ = fnn.pred_action(obs)
    if int(action) != best:
        return 0
    return 1 if fnn.confidence_action(obs) > 1.0 - config.beta_a else 0


def state_shaping(fnn, next_obs, config: ShapingConfig) -> int:
    if fnn.pred_state(next_obs) != 1:
        return 0
    return 1 if fnn.confidence_state(next_obs) > 1.0 - config.beta_s else 0


def detect_cycle(obs, prev_obs, config: ShapingConfig) -> bool:
    a = np.asarray(obs, dtype=np.float64)
    b = np.asarray(prev_obs, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"observation shapes differ: {a.shape} vs {b.shape}")
    return bool(np.max(np.abs(a - b)) < config.cycle_distance_threshold)


def shaped_reward(r_e: float, r_a: int, r_s: int, config: ShapingConfig,
                  cycle_detected: bool = False) -> float:
    if cycle_detected:
        return r_e - (config.lambda_a * r_a + config.lambda_s * r_s)
    return r_e + config.lambda_a * r_a + config.lambda_s * r_s
