"""Scripted stand-in for the human reviewer.

Grades actions against the environment's exact optimal policy and states
against a quantile of discounted optimal values along optimal play.  Label
noise (random flips), not-sure responses, per-trajectory skipping, and a
session budget make it a configurable automation of a real operator.

Every call consumes exactly two draws from the seeded stream (one flip
draw, one not-sure draw), so label sequences are reproducible position by
position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import solve
from .envs.base import Environment
from .errors import ConfigError, UsageError

GOOD, BAD, NOT_SURE = "good", "bad", "not_sure"


@dataclass
class OracleConfig:
    error_rate: float = 0.05
    not_sure_rate: float = 0.1
    skip_after: int | None = None        # labels per trajectory before skipping
    session_budget: int = 100            # labels per session
    state_good_quantile: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.error_rate < 1.0 or not 0.0 <= self.not_sure_rate < 1.0:
            raise UsageError("error_rate and not_sure_rate must be in [0, 1)")
        if self.error_rate + self.not_sure_rate >= 1.0:
            raise UsageError("error_rate + not_sure_rate must be < 1")
        if not 0.0 < self.state_good_quantile < 1.0:
            raise UsageError("state_good_quantile must be in (0, 1)")


class FeedbackOracle:
    """Labels observations/actions for one environment layout."""

    def __init__(self, env: Environment, config: OracleConfig, gamma: float = 0.99):
        self.env_id = env.env_id
        self.config = config
        try:
            self.solution = solve(env, gamma)
        except ConfigError:
            raise ConfigError(
                f"environment {env.env_id!r} has no exact solver; "
                "the scripted oracle cannot label it") from None
        scores = self.solution.scores_along_optimal_play()
        self.state_threshold = float(np.quantile(scores, config.state_good_quantile))
        self._rng = np.random.default_rng(config.seed)

    def _apply_noise(self, base: str) -> str:
        flip = self._rng.random() < self.config.error_rate
        not_sure = self._rng.random() < self.config.not_sure_rate
        if not_sure:
            return NOT_SURE
        if flip:
            return GOOD if base == BAD else BAD
        return base

    def label_action(self, obs: np.ndarray, action: int) -> str:
        base = GOOD if int(action) == self.solution.optimal_action(obs) else BAD
        return self._apply_noise(base)

    def label_state(self, obs: np.ndarray) -> str:
        base = GOOD if self.solution.state_score(obs) > self.state_threshold else BAD
        return self._apply_noise(base)
