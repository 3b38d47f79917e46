"""Replay buffer for trajectories and the append-only feedback buffer.

The replay buffer stores whole trajectories (for review sessions) while
serving uniform transition batches for TD updates.  Eviction is
oldest-first and always removes whole trajectories.  The feedback buffer
is append-only; each record carries a bootstrap mask deciding how many
times each ensemble head sees it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .envs.base import RenderFrame
from .errors import UsageError


@dataclass
class Step:
    observation: np.ndarray
    action: int
    env_reward: float
    next_observation: np.ndarray
    terminal: bool
    render: RenderFrame
    next_render: RenderFrame
    # shaping values memoized per feedback-network snapshot (internal)
    _shape_version: int = -1
    _r_a: int = 0
    _r_s: int = 0
    _cycle: int = -1
    _pred_best: int = -1


@dataclass
class Trajectory:
    trajectory_id: int
    steps: list[Step]
    episode_index: int

    @property
    def total_return(self) -> float:
        return float(sum(s.env_reward for s in self.steps))

    def __post_init__(self):
        if self.steps:
            if not self.steps[-1].terminal or any(s.terminal for s in self.steps[:-1]):
                raise UsageError("exactly the last step of a trajectory must be terminal")


class ReplayBuffer:
    """Trajectory store with a step capacity and uniform batch sampling.

    A flat step list with a moving front offset keeps batch sampling O(batch)
    while eviction stays whole-trajectory, oldest-first.
    """

    def __init__(self, capacity_steps: int = 50_000):
        self.capacity_steps = capacity_steps
        self.trajectories: list[Trajectory] = []
        self._flat: list[Step] = []
        self._front = 0

    @property
    def size_steps(self) -> int:
        return len(self._flat) - self._front

    def add_trajectory(self, trajectory: Trajectory) -> None:
        self.trajectories.append(trajectory)
        self._flat.extend(trajectory.steps)
        while self.size_steps > self.capacity_steps and len(self.trajectories) > 1:
            evicted = self.trajectories.pop(0)
            self._front += len(evicted.steps)
        if self._front > len(self._flat) // 2:
            self._flat = self._flat[self._front:]
            self._front = 0

    def trajectory_ids(self) -> list[int]:
        return [t.trajectory_id for t in self.trajectories]

    def sample_trajectory_for_feedback(self, already_reviewed: set[int]) -> Trajectory | None:
        """Highest-return unreviewed trajectory; ties go to the lowest id.

        Returns None when everything is reviewed (the caller ends the
        session).
        """
        candidates = [t for t in self.trajectories
                      if t.trajectory_id not in already_reviewed]
        if not candidates:
            return None
        return min(candidates, key=lambda t: (-t.total_return, t.trajectory_id))

    def sample_transition_batch(self, batch_size: int,
                                rng: np.random.Generator) -> list[Step] | None:
        """Uniform without replacement across all stored steps, or None."""
        size = self.size_steps
        if batch_size > size:
            return None
        chosen: list[int] = []
        seen: set[int] = set()
        while len(chosen) < batch_size:
            i = int(rng.integers(0, size))
            if i not in seen:
                seen.add(i)
                chosen.append(i)
        return [self._flat[self._front + i] for i in chosen]


# ---------------------------------------------------------------------------
# Feedback records
# ---------------------------------------------------------------------------

GOOD, BAD = 1, 0


@dataclass
class FeedbackRecord:
    target: str                      # "state" or "action"
    observation: np.ndarray
    action: int | None               # present iff target == "action"
    label: int                       # 1 good, 0 bad
    mask: np.ndarray                 # per-head training counts
    source: str                      # "human" or "oracle"
    created_at_episode: int

    def __post_init__(self):
        if self.target not in ("state", "action"):
            raise UsageError(f"bad target {self.target!r}")
        if (self.action is None) != (self.target == "state"):
            raise UsageError("action must be present iff target == 'action'")
        if self.label not in (GOOD, BAD):
            raise UsageError("label must be 0 (bad) or 1 (good)")
        self.mask = np.asarray(self.mask, dtype=np.int64)
        if np.any(self.mask < 0):
            raise UsageError("mask entries must be >= 0")

    def to_json(self) -> dict:
        record = {
            "target": self.target,
            "obs": [float(x) for x in self.observation],
            "label": self.label,
            "mask": [int(m) for m in self.mask],
            "source": self.source,
            "episode": self.created_at_episode,
        }
        if self.target == "action":
            record["action"] = int(self.action)
        return record

    @classmethod
    def from_json(cls, record: dict) -> "FeedbackRecord":
        return cls(
            target=record["target"],
            observation=np.array(record["obs"], dtype=np.float64),
            action=record.get("action"),
            label=int(record["label"]),
            mask=np.array(record["mask"], dtype=np.int64),
            source=record["source"],
            created_at_episode=int(record["episode"]),
        )


class FeedbackBuffer:
    """Append-only record list plus a new-since-last-retrain counter."""

    def __init__(self):
        self.records: list[FeedbackRecord] = []
        self.new_since_update = 0

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: FeedbackRecord) -> int:
        if not isinstance(record, FeedbackRecord):
            raise UsageError("expected a FeedbackRecord")
        self.records.append(record)
        self.new_since_update += 1
        return self.new_since_update

    def reset_new_counter(self) -> None:
        self.new_since_update = 0

    def bootstrap_view(self, head_index: int, target: str, n_heads: int) -> list[FeedbackRecord]:
        """Records for one head, repeated per their mask counts."""
        if not 0 <= head_index < n_heads:
            raise UsageError(f"head index {head_index} out of range for {n_heads} heads")
        view = []
        for r in self.records:
            if r.target != target:
                continue
            if len(r.mask) != n_heads:
                raise UsageError(
                    f"mask length {len(r.mask)} does not match head count {n_heads}")
            view.extend([r] * int(r.mask[head_index]))
        return view

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json()) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "FeedbackBuffer":
        buf = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    buf.records.append(FeedbackRecord.from_json(json.loads(line)))
        return buf


# ---------------------------------------------------------------------------
# Bootstrap mask sampling
# ---------------------------------------------------------------------------

class MaskSampler:
    """Samples integer bootstrap masks from a named distribution.

    bernoulli:p   entries are 1 with probability p, else 0
    exp:rate      entries are Exp(mean=1/rate) draws under stochastic
                  rounding, which keeps the configured mean exactly while
                  yielding integer counts
    """

    def __init__(self, spec: str, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        kind, _, arg = spec.partition(":")
        if kind == "bernoulli":
            self.p = float(arg) if arg else 0.5
            if not 0.0 <= self.p <= 1.0:
                raise UsageError("bernoulli mask probability must be in [0, 1]")
            self._draw = self._bernoulli
        elif kind == "exp":
            self.rate = float(arg) if arg else 1.0
            if self.rate <= 0:
                raise UsageError("exponential mask rate must be positive")
            self._draw = self._exponential
        else:
            raise UsageError(f"unknown masking distribution {spec!r}")

    def _bernoulli(self, k: int) -> np.ndarray:
        return (self.rng.random(k) < self.p).astype(np.int64)

    def _exponential(self, k: int) -> np.ndarray:
        w = self.rng.exponential(scale=1.0 / self.rate, size=k)
        low = np.floor(w)
        return (low + (self.rng.random(k) < (w - low))).astype(np.int64)

    def sample(self, k: int) -> np.ndarray:
        return self._draw(k)
