"""Double DQN learner on the shaped reward.

The online network picks the next-state action, the target network prices
it (double Q-learning), and the target is refreshed to a byte-identical
copy of the online network every sync_period updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError
from .nnet import Network, build_mlp, save_network_bytes

Q_HIDDEN = (64, 64)


@dataclass
class ExplorationSchedule:
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_steps: int = 20_000

    def __post_init__(self):
        if not (0.0 <= self.epsilon_start <= 1.0 and 0.0 <= self.epsilon_end <= 1.0):
            raise UsageError("epsilon bounds must be in [0, 1]")

    def value(self, step: int) -> float:
        if step >= self.decay_steps:
            return self.epsilon_end
        frac = step / max(1, self.decay_steps)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class QNetworkPair:
    def __init__(self, observation_dim: int, n_actions: int, seed: int = 0,
                 sync_period: int = 500):
        rng = np.random.default_rng(seed)
        dims = [observation_dim, *Q_HIDDEN, n_actions]
        self.online = build_mlp(dims, rng)
        self.target = self.online.copy()
        self.sync_period = sync_period
        self.n_actions = n_actions

    def sync(self) -> None:
        self.target = self.online.copy()

    def in_sync(self) -> bool:
        return save_network_bytes(self.online) == save_network_bytes(self.target)


def select_action(q: QNetworkPair, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise UsageError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(0, q.n_actions))
    values = q.online.forward(np.asarray(obs, dtype=np.float64)[None, :])[0]
    return int(np.argmax(values))


def double_q_target(q: QNetworkPair, reward: float, next_obs: np.ndarray,
                    terminal: bool, gamma: float) -> float:
    """y = r, or r + gamma * Q_target(s', argmax_a Q_online(s', a))."""
    if terminal:
        return float(reward)
    x = np.asarray(next_obs, dtype=np.float64)[None, :]
    best = int(np.argmax(q.online.forward(x)[0]))
    return float(reward + gamma * q.target.forward(x)[0, best])


def double_q_targets_batch(q: QNetworkPair, rewards: np.ndarray,
                           next_obs: np.ndarray, terminals: np.ndarray,
                           gamma: float) -> np.ndarray:
    online_next = q.online.forward(next_obs)
    best = online_next.argmax(axis=1)
    target_next = q.target.forward(next_obs)
    rows = np.arange(len(rewards))
    return rewards + gamma * (1.0 - terminals) * target_next[rows, best]


def td_update(q: QNetworkPair, observations: np.ndarray, actions: np.ndarray,
              targets: np.ndarray, learning_rate: float) -> float:
    """One SGD step on the mean squared TD error of the online network.

    Returns the pre-step loss.
    """
    out = q.online.forward(observations, mode="train")
    rows = np.arange(len(actions))
    q_sa = out[rows, actions]
    errors = q_sa - targets
    loss = float(np.mean(errors ** 2))
    if not np.isfinite(loss):
        raise NumericError("non-finite TD loss")
    grad = np.zeros_like(out)
    grad[rows, actions] = 2.0 * errors / len(actions)
    q.online.backward(grad)
    q.online.sgd_step(learning_rate)
    return loss
