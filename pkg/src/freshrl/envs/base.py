"""Environment abstraction: MDP metadata, step results, and symbolic renders.

Environments expose low-dimensional observation vectors to the agent and
RenderFrame grids to the human reviewer.  Dynamics are deterministic given
the layout seed passed to reset(); all randomness lives in the per-seed
layout (pin positions, gate placement).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


@dataclass
class MdpSpec:
    observation_dim: int
    action_count: int
    action_names: list[str]
    max_episode_steps: int

    def __post_init__(self):
        if self.action_count < 2:
            raise UsageError("action_count must be >= 2")
        if self.observation_dim < 1 or self.max_episode_steps < 1:
            raise UsageError("observation_dim and max_episode_steps must be >= 1")
        if len(self.action_names) != self.action_count:
            raise UsageError("need one name per action")


@dataclass
class RenderFrame:
    """Row-major grid of integer cell codes plus a legend and caption."""

    width: int
    height: int
    cells: np.ndarray  # int8, length width*height
    legend: dict[int, str]
    caption: str

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int8).reshape(-1)
        if self.cells.size != self.width * self.height:
            raise UsageError("cells length must equal width*height")
        present = set(int(c) for c in np.unique(self.cells))
        missing = present - set(self.legend)
        if missing:
            raise UsageError(f"cell codes {sorted(missing)} missing from legend")

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "cells": [int(c) for c in self.cells],
            "legend": {str(k): v for k, v in self.legend.items()},
            "caption": self.caption,
        }


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    terminal: bool
    render: RenderFrame


class Environment:
    """Base class: deterministic dynamics, seeded layout, bounded episodes."""

    env_id: str = ""
    spec: MdpSpec

    def __init__(self):
        self._terminal = True
        self._steps = 0

    # -- subclass hooks -------------------------------------------------
    def _do_reset(self, seed: int) -> None:
        raise NotImplementedError

    def _do_step(self, action: int) -> tuple[float, bool]:
        """Apply the action, return (reward, terminal)."""
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def render(self) -> RenderFrame:
        raise NotImplementedError

    # -- public API -----------------------------------------------------
    def reset(self, seed: int) -> tuple[np.ndarray, RenderFrame]:
        self._do_reset(int(seed))
        self._terminal = False
        self._steps = 0
        return self.observe(), self.render()

    def step(self, action: int) -> StepResult:
        if self._terminal:
            raise UsageError("step() after terminal state; call reset()")
        action = int(action)
        if not 0 <= action < self.spec.action_count:
            raise UsageError(f"action {action} out of range [0, {self.spec.action_count})")
        reward, terminal = self._do_step(action)
        self._steps += 1
        if self._steps >= self.spec.max_episode_steps:
            terminal = True
        self._terminal = terminal
        return StepResult(self.observe(), float(reward), terminal, self.render())

    @property
    def steps_taken(self) -> int:
        return self._steps
