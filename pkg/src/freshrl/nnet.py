"""Minimal dense-network substrate: forward, reverse-mode gradients, SGD.

Everything is float64.  The layer menu is fixed (dense, relu, batchnorm,
softmax, sigmoid) and softmax/sigmoid only make sense as terminal layers.
Training losses are computed by callers on the network output; backward()
starts from the upstream gradient of the scalar loss with respect to that
output.

Checkpoints are a little-endian binary format with magic "FRSHNET1" and
round-trip bit-exactly.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import NumericError, UsageError

MAGIC = b"FRSHNET1"

_KIND_CODES = {"dense": 0, "relu": 1, "batchnorm": 2, "softmax": 3, "sigmoid": 4}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    kind = "dense"

    def __init__(self, input_dim: int, output_dim: int, rng: np.random.Generator | None = None):
        self.input_dim = input_dim
        self.output_dim = output_dim
        if rng is None:
            weights = np.zeros((input_dim, output_dim))
        else:
            weights = glorot_uniform(input_dim, output_dim, rng)
        self.weight = Param(weights)
        self.bias = Param(np.zeros(output_dim))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        if mode == "train":
            self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.weight.grad += self._x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value.T


class Relu:
    kind = "relu"

    def __init__(self, dim: int):
        self.input_dim = self.output_dim = dim
        self._mask = None

    def params(self):
        return []

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        if mode == "train":
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._mask


class BatchNorm:
    """Per-feature normalization.

    Train mode normalizes with batch statistics (biased variance) and folds
    them into the running estimates as
        running <- momentum * running + (1 - momentum) * batch.
    Eval mode is a pure function of the running statistics.
    """

    kind = "batchnorm"

    def __init__(self, dim: int, momentum: float = 0.9, epsilon: float = 1e-5):
        self.input_dim = self.output_dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Param(np.ones(dim))
        self.beta = Param(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        if mode == "train":
            if x.shape[0] < 2:
                raise UsageError("batchnorm train mode needs a batch of >= 2 rows")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            x_hat = (x - mean) * inv_std
            self._cache = (x_hat, inv_std)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            x_hat = (x - self.running_mean) * inv_std
        return x_hat * self.gamma.value + self.beta.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x_hat, inv_std = self._cache
        self.gamma.grad += (grad * x_hat).sum(axis=0)
        self.beta.grad += grad.sum(axis=0)
        g = grad * self.gamma.value
        return inv_std * (g - g.mean(axis=0) - x_hat * (g * x_hat).mean(axis=0))


class Softmax:
    kind = "softmax"

    def __init__(self, dim: int):
        self.input_dim = self.output_dim = dim
        self._y = None

    def params(self):
        return []

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=1, keepdims=True)
        if mode == "train":
            self._y = y
        return y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        y = self._y
        return y * (grad - (grad * y).sum(axis=1, keepdims=True))


class Sigmoid:
    kind = "sigmoid"

    def __init__(self, dim: int):
        self.input_dim = self.output_dim = dim
        self._y = None

    def params(self):
        return []

    def forward(self, x: np.ndarray, mode: str) -> np.ndarray:
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        if mode == "train":
            self._y = y
        return y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._y * (1.0 - self._y)


class Network:
    """An ordered stack of layers with a single in-flight training batch."""

    def __init__(self, layers: list):
        for a, b in zip(layers, layers[1:]):
            if a.output_dim != b.input_dim:
                raise UsageError(
                    f"layer dims mismatch: {a.kind}({a.output_dim}) -> {b.kind}({b.input_dim})")
        for layer in layers[:-1]:
            if layer.kind in ("softmax", "sigmoid"):
                raise UsageError(f"{layer.kind} is only valid as the terminal layer")
        self.layers = layers
        self._trained_forward = False

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise UsageError(f"expected batch of shape (B, {self.input_dim}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite values in network input")
        for layer in self.layers:
            x = layer.forward(x, mode)
        if mode == "train":
            self._trained_forward = True
        return x

    def backward(self, upstream_grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads; returns the gradient w.r.t. the input."""
        if not self._trained_forward:
            raise UsageError("backward() requires a preceding forward() in train mode")
        g = np.asarray(upstream_grad, dtype=np.float64)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grads(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def sgd_step(self, learning_rate: float) -> None:
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                if not np.all(np.isfinite(p.grad)):
                    raise NumericError(f"non-finite gradient in layer {i} ({layer.kind})")
                p.value -= learning_rate * p.grad
        self.zero_grads()
        self._trained_forward = False

    def copy(self) -> "Network":
        return load_network(save_network_bytes(self))


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_network_bytes(net: Network) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        chunks.append(struct.pack("<BII", _KIND_CODES[layer.kind],
                                  layer.input_dim, layer.output_dim))
        if layer.kind == "dense":
            chunks.append(_pack_array(layer.weight.value))
            chunks.append(_pack_array(layer.bias.value))
        elif layer.kind == "batchnorm":
            chunks.append(_pack_array(layer.gamma.value))
            chunks.append(_pack_array(layer.beta.value))
            chunks.append(_pack_array(layer.running_mean))
            chunks.append(_pack_array(layer.running_var))
            chunks.append(struct.pack("<dd", layer.momentum, layer.epsilon))
    return b"".join(chunks)


def load_network(blob: bytes) -> Network:
    if blob[:8] != MAGIC:
        raise UsageError("not a network checkpoint (bad magic)")
    offset = 8
    (n_layers,) = struct.unpack_from("<I", blob, offset)
    offset += 4

    def take_floats(n):
        nonlocal offset
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy()
        offset += 8 * n
        return a

    layers = []
    for _ in range(n_layers):
        code, in_dim, out_dim = struct.unpack_from("<BII", blob, offset)
        offset += 9
        kind = _CODE_KINDS[code]
        if kind == "dense":
            layer = Dense(in_dim, out_dim)
            layer.weight.value = take_floats(in_dim * out_dim).reshape(in_dim, out_dim)
            layer.bias.value = take_floats(out_dim)
            layer.weight.grad = np.zeros_like(layer.weight.value)
        elif kind == "batchnorm":
            layer = BatchNorm(in_dim)
            layer.gamma.value = take_floats(in_dim)
            layer.beta.value = take_floats(in_dim)
            layer.running_mean = take_floats(in_dim)
            layer.running_var = take_floats(in_dim)
            layer.momentum, layer.epsilon = struct.unpack_from("<dd", blob, offset)
            offset += 16
        elif kind == "relu":
            layer = Relu(in_dim)
        elif kind == "softmax":
            layer = Softmax(in_dim)
        else:
            layer = Sigmoid(in_dim)
        layers.append(layer)
    return Network(layers)


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_network_bytes(net))


def load_network_file(path) -> Network:
    with open(path, "rb") as fh:
        return load_network(fh.read())


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_mlp(dims: list[int], rng: np.random.Generator, *,
              output: str | None = None, hidden_batchnorm: bool = False) -> Network:
    """Dense/relu stack through dims, optional batchnorm, optional head."""
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        layers.append(Dense(d_in, d_out, rng))
        last = i == len(dims) - 2
        if not last:
            if hidden_batchnorm:
                layers.append(BatchNorm(d_out))
            layers.append(Relu(d_out))
    if output == "softmax":
        layers.append(Softmax(dims[-1]))
    elif output == "sigmoid":
        layers.append(Sigmoid(dims[-1]))
    return Network(layers)
