"""AimLine: a 1-D aiming game with a one-round reward delay.

The cursor moves along a line of positions; each round has a hidden pin.
Firing scores max(0, 10 - 2*|pos - pin|) immediately, but hitting the pin
exactly (a strike) earns a +5 bonus that is only paid out when the *next*
round settles.  Rounds proceed: aim (move/noop until fire), then a single
settlement step that pays the previous round's strike bonus.  A strike in
the final round appends one extra settlement step so the bonus is never
lost.

The agent's observation hides the pin until the round's fire; the render
shown to a human reviewer always displays it.
"""
from __future__ import annotations

import numpy as np

from .base import Environment, MdpSpec, RenderFrame

AIM, SETTLE = 0, 1
NOOP, UP, DOWN, FIRE = 0, 1, 2, 3

STRIKE_BONUS = 5.0


class AimLine(Environment):
    env_id = "aimline"

    def __init__(self, n_positions: int = 10, n_rounds: int = 10,
                 max_episode_steps: int | None = None):
        super().__init__()
        self.n_positions = n_positions
        self.n_rounds = n_rounds
        if max_episode_steps is None:
            max_episode_steps = (n_positions + 2) * n_rounds + 40
        self.spec = MdpSpec(
            observation_dim=5,
            action_count=4,
            action_names=["noop", "up", "down", "fire"],
            max_episode_steps=max_episode_steps,
        )
        self.pins: np.ndarray = np.zeros(n_rounds, dtype=np.int64)
        self.layout_seed = 0
        self.round = 0
        self.phase = AIM
        self.pos = 0
        self.pending_bonus = False
        self.strike = False

    def _do_reset(self, seed: int) -> None:
        self.layout_seed = seed
        rng = np.random.default_rng(seed)
        self.pins = rng.integers(0, self.n_positions, size=self.n_rounds)
        self.round = 0
        self.phase = AIM
        self.pos = self.n_positions // 2
        self.pending_bonus = False
        self.strike = False

    def _round_score(self) -> float:
        pin = int(self.pins[self.round])
        return max(0.0, 10.0 - 2.0 * abs(self.pos - pin))

    def _do_step(self, action: int) -> tuple[float, bool]:
        if self.round >= self.n_rounds:
            # extra settlement step after a final-round strike
            self.pending_bonus = False
            return STRIKE_BONUS, True
        if self.phase == AIM:
            if action == UP:
                self.pos = min(self.n_positions - 1, self.pos + 1)
            elif action == DOWN:
                self.pos = max(0, self.pos - 1)
            elif action == FIRE:
                reward = self._round_score()
                self.strike = self.pos == int(self.pins[self.round])
                self.phase = SETTLE
                return reward, False
            return 0.0, False
        # settlement: pays the previous round's strike bonus, then advances
        reward = STRIKE_BONUS if self.pending_bonus else 0.0
        self.pending_bonus = self.strike
        self.strike = False
        if self.round == self.n_rounds - 1:
            self.round = self.n_rounds
            # a final-round strike needs one extra step so its bonus is paid
            return reward, not self.pending_bonus
        self.round += 1
        self.phase = AIM
        return reward, False

    def observe(self) -> np.ndarray:
        if self.phase == SETTLE:
            pin_norm = int(self.pins[min(self.round, self.n_rounds - 1)]) / (self.n_positions - 1)
        else:
            pin_norm = -1.0
        return np.array([
            self.pos / (self.n_positions - 1),
            self.round / self.n_rounds,
            float(self.phase),
            1.0 if self.pending_bonus else 0.0,
            pin_norm,
        ], dtype=np.float64)

    def render(self) -> RenderFrame:
        cells = np.zeros((2, self.n_positions), dtype=np.int8)
        cells[0, self.pos] = 1
        cells[1, int(self.pins[min(self.round, self.n_rounds - 1)])] = 2
        if self.round >= self.n_rounds:
            caption = "final bonus settlement" if self.pending_bonus else "game over"
        else:
            caption = (f"round {self.round + 1}/{self.n_rounds} · "
                       f"{'aim' if self.phase == AIM else 'settle'}"
                       + (" · bonus pending" if self.pending_bonus else ""))
        return RenderFrame(
            width=self.n_positions, height=2, cells=cells,
            legend={0: "empty", 1: "cursor", 2: "pin"}, caption=caption,
        )

    # internal state snapshots for exhaustive search
    def _snapshot(self):
        return (self.round, self.phase, self.pos, self.pending_bonus,
                self.strike, self._terminal, self._steps)

    def _restore(self, snap) -> None:
        (self.round, self.phase, self.pos, self.pending_bonus,
         self.strike, self._terminal, self._steps) = snap
