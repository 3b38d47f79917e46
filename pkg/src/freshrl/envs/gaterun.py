"""GateRun: a fixed-length downhill run where all reward arrives at the end.

The agent descends one row per step and steers left/right to pass through
gates placed on fixed rows (per-seed layout).  Nothing is paid along the
way; the terminal step delivers 25 * gates_passed - height, so the credit
for every gate is deferred to the end of the episode.
"""
from __future__ import annotations

import numpy as np

from .base import Environment, MdpSpec, RenderFrame

NOOP, LEFT, RIGHT = 0, 1, 2

GATE_REWARD = 25.0


class GateRun(Environment):
    env_id = "gaterun"

    def __init__(self, width: int = 15, height: int = 40, n_gates: int = 5,
                 max_episode_steps: int | None = None):
        super().__init__()
        self.width = width
        self.height = height
        self.n_gates = n_gates
        if max_episode_steps is None:
            max_episode_steps = height + 20
        self.spec = MdpSpec(
            observation_dim=5,
            action_count=3,
            action_names=["noop", "left", "right"],
            max_episode_steps=max_episode_steps,
        )
        self.gate_rows: np.ndarray = np.zeros(n_gates, dtype=np.int64)
        self.gate_centers: np.ndarray = np.zeros(n_gates, dtype=np.int64)
        self.gate_halfwidths: np.ndarray = np.zeros(n_gates, dtype=np.int64)
        self.layout_seed = 0
        self.row = 0
        self.col = 0
        self.gates_passed = 0
        self._track: np.ndarray | None = None

    def _do_reset(self, seed: int) -> None:
        self.layout_seed = seed
        rng = np.random.default_rng(seed)
        band = max(1, (self.height - 4) // self.n_gates)
        rows, centers, halfwidths = [], [], []
        for i in range(self.n_gates):
            lo = 2 + i * band
            hi = min(lo + band, self.height - 1)
            rows.append(int(rng.integers(lo, hi)))
            hw = int(rng.integers(1, 3))
            halfwidths.append(hw)
            centers.append(int(rng.integers(hw, self.width - hw)))
        self.gate_rows = np.array(rows, dtype=np.int64)
        self.gate_centers = np.array(centers, dtype=np.int64)
        self.gate_halfwidths = np.array(halfwidths, dtype=np.int64)
        self.row = 0
        self.col = self.width // 2
        self.gates_passed = 0
        self._track = None

    def gate_at_row(self, row: int) -> int | None:
        hits = np.nonzero(self.gate_rows == row)[0]
        return int(hits[0]) if hits.size else None

    def _do_step(self, action: int) -> tuple[float, bool]:
        if action == LEFT:
            self.col = max(0, self.col - 1)
        elif action == RIGHT:
            self.col = min(self.width - 1, self.col + 1)
        self.row += 1
        g = self.gate_at_row(self.row)
        if g is not None and abs(self.col - int(self.gate_centers[g])) <= int(self.gate_halfwidths[g]):
            self.gates_passed += 1
        if self.row == self.height - 1:
            return GATE_REWARD * self.gates_passed - self.height, True
        return 0.0, False

    def next_gate_index(self) -> int | None:
        ahead = np.nonzero(self.gate_rows > self.row)[0]
        return int(ahead[0]) if ahead.size else None

    def observe(self) -> np.ndarray:
        g = self.next_gate_index()
        if g is None:
            offset, hw = 0.0, 0.0
        else:
            offset = (int(self.gate_centers[g]) - self.col) / (self.width - 1)
            hw = int(self.gate_halfwidths[g]) / (self.width - 1)
        return np.array([
            self.row / (self.height - 1),
            self.col / (self.width - 1),
            offset,
            hw,
            self.gates_passed / self.n_gates,
        ], dtype=np.float64)

    def render(self) -> RenderFrame:
        if self._track is None:
            track = np.zeros((self.height, self.width), dtype=np.int8)
            for r, c, hw in zip(self.gate_rows, self.gate_centers, self.gate_halfwidths):
                track[r, :] = 2
                track[r, c - hw:c + hw + 1] = 3
            self._track = track
        cells = self._track.copy()
        cells[self.row, self.col] = 1
        return RenderFrame(
            width=self.width, height=self.height, cells=cells,
            legend={0: "empty", 1: "skier", 2: "barrier", 3: "gate"},
            caption=f"row {self.row + 1}/{self.height} · gates {self.gates_passed}/{self.n_gates}",
        )

    def _snapshot(self):
        return (self.row, self.col, self.gates_passed, self._terminal, self._steps)

    def _restore(self, snap) -> None:
        self.row, self.col, self.gates_passed, self._terminal, self._steps = snap
