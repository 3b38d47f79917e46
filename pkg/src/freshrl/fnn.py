"""Ensemble feedback network: shared trunk, bootstrapped heads, confidences.

A shared trunk maps observations to features; K_a softmax heads predict
which action is best and K_s sigmoid heads predict whether a state is
good.  Each head trains only on its bootstrap view of the feedback buffer
(mask counts), which spreads the heads apart and lets their disagreement
serve as an uncertainty signal: confidence is 1 minus the sample standard
deviation of the per-head predictions.
"""
from __future__ import annotations

import struct

import numpy as np

from .buffers import FeedbackBuffer
from .errors import NumericError, UsageError
from .nnet import (
    BatchNorm,
    Dense,
    Network,
    Relu,
    Sigmoid,
    Softmax,
    build_mlp,
    load_network,
    save_network_bytes,
)

FNN_MAGIC = b"FRSHFNN1"
LOG_FLOOR = 1e-12

TRUNK_WIDTH = 64
HEAD_WIDTHS = (64, 32)


def action_loss(probs: np.ndarray, labeled_action: int, label: int) -> float:
    """Cross-entropy against a positive or negative action label.

    label=1 charges -log f[a]; label=0 charges -log(sum of the other
    entries), so a negative label pushes mass onto every other action.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or not 0 <= labeled_action < probs.size:
        raise UsageError("need a probability vector and an in-range action")
    if not np.all(np.isfinite(probs)) or abs(probs.sum() - 1.0) > 1e-6:
        raise NumericError("action head output is not a probability distribution")
    if label == 1:
        return float(-np.log(max(probs[labeled_action], LOG_FLOOR)))
    others = probs.sum() - probs[labeled_action]
    return float(-np.log(max(others, LOG_FLOOR)))


def state_loss(g: float, label: int) -> float:
    """Binary cross-entropy on the goodness probability of a state."""
    g = min(max(float(g), LOG_FLOOR), 1.0 - LOG_FLOOR)
    return float(-label * np.log(g) - (1 - label) * np.log(1.0 - g))


def _action_loss_batch(probs: np.ndarray, actions: np.ndarray,
                       labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and its gradient w.r.t. the head output."""
    n = probs.shape[0]
    rows = np.arange(n)
    picked = probs[rows, actions]
    others = probs.sum(axis=1) - picked
    losses = np.where(labels == 1,
                      -np.log(np.maximum(picked, LOG_FLOOR)),
                      -np.log(np.maximum(others, LOG_FLOOR)))
    grad = np.zeros_like(probs)
    pos = labels == 1
    grad[rows[pos], actions[pos]] = -1.0 / np.maximum(picked[pos], LOG_FLOOR)
    neg = ~pos
    grad[neg, :] = (-1.0 / np.maximum(others[neg], LOG_FLOOR))[:, None]
    grad[rows[neg], actions[neg]] = 0.0
    return float(losses.mean()), grad / n


def _state_loss_batch(g: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    g = np.clip(g, LOG_FLOOR, 1.0 - LOG_FLOOR)
    losses = -labels * np.log(g) - (1 - labels) * np.log(1.0 - g)
    grad = np.where(labels == 1, -1.0 / g, 1.0 / (1.0 - g))
    return float(losses.mean()), grad / g.size


class EnsembleFnn:
    def __init__(self, observation_dim: int, n_actions: int,
                 k_action: int = 10, k_state: int = 10, seed: int = 0,
                 confidence_method: str = "std"):
        if k_action < 1 or k_state < 1:
            raise UsageError("head counts must be >= 1")
        if confidence_method not in ("std", "modal"):
            raise UsageError("confidence_method must be 'std' or 'modal'")
        self.observation_dim = observation_dim
        self.n_actions = n_actions
        self.k_action = k_action
        self.k_state = k_state
        self.seed = seed
        self.confidence_method = confidence_method
        rng = np.random.default_rng(seed)
        self.trunk = build_mlp([observation_dim, TRUNK_WIDTH, TRUNK_WIDTH], rng)
        self.action_heads = [self._head(n_actions, "softmax", rng)
                             for _ in range(k_action)]
        self.state_heads = [self._head(1, "sigmoid", rng) for _ in range(k_state)]

    @staticmethod
    def _head(out_dim: int, output: str, rng: np.random.Generator) -> Network:
        w1, w2 = HEAD_WIDTHS
        layers = [
            Dense(TRUNK_WIDTH, w1, rng), BatchNorm(w1), Relu(w1),
            Dense(w1, w2, rng), BatchNorm(w2), Relu(w2),
            Dense(w2, out_dim, rng),
            Softmax(out_dim) if output == "softmax" else Sigmoid(out_dim),
        ]
        return Network(layers)

    # -- inference ------------------------------------------------------
    def _as_batch(self, obs) -> np.ndarray:
        x = np.asarray(obs, dtype=np.float64)
        return x[None, :] if x.ndim == 1 else x

    def action_probs(self, obs) -> np.ndarray:
        """Per-head action distributions, shape (k_action, B, |A|)."""
        feats = self.trunk.forward(self._as_batch(obs))
        return np.stack([h.forward(feats) for h in self.action_heads])

    def state_probs(self, obs) -> np.ndarray:
        """Per-head goodness probabilities, shape (k_state, B)."""
        feats = self.trunk.forward(self._as_batch(obs))
        return np.stack([h.forward(feats)[:, 0] for h in self.state_heads])

    def pred_action_batch(self, obs) -> tuple[np.ndarray, np.ndarray]:
        mean = self.action_probs(obs).mean(axis=0)
        return mean.argmax(axis=1), mean

    def pred_action(self, obs) -> tuple[int, np.ndarray]:
        best, mean = self.pred_action_batch(obs)
        return int(best[0]), mean[0]

    def pred_state_batch(self, obs) -> np.ndarray:
        return (self.state_probs(obs).mean(axis=0) > 0.5).astype(np.int64)

    def pred_state(self, obs) -> int:
        return int(self.pred_state_batch(obs)[0])

    def _confidence(self, per_head: np.ndarray) -> np.ndarray:
        """1 - dispersion of the per-head integer predictions (K, B)."""
        k = per_head.shape[0]
        if self.confidence_method == "modal":
            agree = np.zeros(per_head.shape[1])
            for b in range(per_head.shape[1]):
                counts = np.bincount(per_head[:, b])
                agree[b] = counts.max() / k
            return agree
        if k == 1:
            return np.ones(per_head.shape[1])
        return 1.0 - per_head.std(axis=0, ddof=1)

    def confidence_action_batch(self, obs) -> np.ndarray:
        per_head = self.action_probs(obs).argmax(axis=2)
        return self._confidence(per_head)

    def confidence_action(self, obs) -> float:
        return float(self.confidence_action_batch(obs)[0])

    def confidence_state_batch(self, obs) -> np.ndarray:
        per_head = (self.state_probs(obs) > 0.5).astype(np.int64)
        return self._confidence(per_head)

    def confidence_state(self, obs) -> float:
        return float(self.confidence_state_batch(obs)[0])

    # -- training ---------------------------------------------------------
    def train(self, buffer: FeedbackBuffer, epochs: int, rng: np.random.Generator,
              batch_size: int = 32, learning_rate: float = 1e-3) -> dict | None:
        """SGD over every head's bootstrap view; trunk learns from all heads.

        Returns per-head mean losses from the final epoch, or None when the
        buffer holds nothing to train on (not ready).
        """
        if len(buffer) == 0:
            return None
        views = {
            ("action", j): buffer.bootstrap_view(j, "action", self.k_action)
            for j in range(self.k_action)
        }
        views.update({
            ("state", j): buffer.bootstrap_view(j, "state", self.k_state)
            for j in range(self.k_state)
        })
        if all(len(v) == 0 for v in views.values()):
            return None

        report = {}
        for epoch in range(epochs):
            for (target, j), view in views.items():
                if not view:
                    report[(target, j)] = None
                    continue
                head = (self.action_heads if target == "action" else self.state_heads)[j]
                order = rng.permutation(len(view))
                losses = []
                for start in range(0, len(view), batch_size):
                    batch = [view[i] for i in order[start:start + batch_size]]
                    losses.append(self._train_batch(head, target, j, batch, learning_rate))
                report[(target, j)] = float(np.mean(losses))
        return {f"{t}_head_{j}": v for (t, j), v in report.items()}

    def _train_batch(self, head: Network, target: str, j: int,
                     batch: list, learning_rate: float) -> float:
        X = np.stack([r.observation for r in batch])
        labels = np.array([r.label for r in batch], dtype=np.int64)
        if len(batch) == 1:
            # batchnorm needs two rows; a duplicate keeps the mean loss intact
            X = np.vstack([X, X])
            labels = np.tile(labels, 2)
            batch = batch * 2
        feats = self.trunk.forward(X, mode="train")
        out = head.forward(feats, mode="train")
        if target == "action":
            actions = np.array([r.action for r in batch], dtype=np.int64)
            loss, grad = _action_loss_batch(out, actions, labels)
        else:
            loss, grad = _state_loss_batch(out[:, 0], labels)
            grad = grad[:, None]
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss on {target} head {j}")
        feat_grad = head.backward(grad)
        self.trunk.backward(feat_grad)
        head.sgd_step(learning_rate)
        self.trunk.sgd_step(learning_rate)
        return loss

    # -- persistence ------------------------------------------------------
    def to_bytes(self) -> bytes:
        method = 0 if self.confidence_method == "std" else 1
        chunks = [FNN_MAGIC,
                  struct.pack("<IIIIqB", self.k_action, self.k_state,
                              self.n_actions, self.observation_dim,
                              self.seed, method)]
        for net in [self.trunk, *self.action_heads, *self.state_heads]:
            blob = save_network_bytes(net)
            chunks.append(struct.pack("<I", len(blob)))
            chunks.append(blob)
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EnsembleFnn":
        if blob[:8] != FNN_MAGIC:
            raise UsageError("not an ensemble checkpoint (bad magic)")
        k_a, k_s, n_actions, obs_dim, seed, method = struct.unpack_from("<IIIIqB", blob, 8)
        fnn = cls(obs_dim, n_actions, k_a, k_s, seed=seed,
                  confidence_method="std" if method == 0 else "modal")
        offset = 8 + struct.calcsize("<IIIIqB")
        nets = []
        for _ in range(1 + k_a + k_s):
            (length,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            nets.append(load_network(blob[offset:offset + length]))
            offset += length
        fnn.trunk = nets[0]
        fnn.action_heads = nets[1:1 + k_a]
        fnn.state_heads = nets[1 + k_a:]
        return fnn

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EnsembleFnn":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def snapshot(self) -> "EnsembleFnn":
        """Immutable copy for inference while training continues elsewhere."""
        return EnsembleFnn.from_bytes(self.to_bytes())
