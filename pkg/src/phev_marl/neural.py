"""Small dense networks with hand-written backprop and an Adam optimiser.

Inputs may be a single vector or a (batch, features) array; gradients from a
batch forward are summed over the batch, so callers scale ``dloss_dy`` by the
batch size for mean losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1

_ACT = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, y: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, y: 1.0 - y * y),
    "identity": (lambda z: z, lambda z, y: np.ones_like(z)),
}


class TrainingError(RuntimeError):
    pass


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    @classmethod
    def init(cls, layer_sizes, hidden_activation="relu", output_activation="identity", seed=0) -> "Mlp":
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer widths must be positive, got {sizes}")
        for act in (hidden_activation, output_activation):
            if act not in _ACT:
                raise ValueError(f"unknown activation {act!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, weights, biases, hidden_activation, output_activation)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.hidden_activation, self.output_activation)

    def _act(self, layer: int) -> str:
        return self.output_activation if layer == len(self.weights) - 1 else self.hidden_activation

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"expected input width {self.layer_sizes[0]}, got {h.shape[1]}")
        cache = [h]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = _ACT[self._act(k)][0](z)
            cache.append((z, h))
        return (h[0] if single else h), (single, cache)

    def backward(self, cache, dloss_dy):
        """Parameter gradients (same order as ``params``) and the input gradient."""
        single, layers = cache
        g = np.asarray(dloss_dy, dtype=float)
        g = g[None, :] if single else g
        if len(layers) != len(self.weights) + 1 or g.shape != layers[-1][1].shape:
            raise ValueError("cache does not match this network or the upstream gradient")
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            z, y = layers[k + 1]
            g = g * _ACT[self._act(k)][1](z, y)
            h_prev = layers[0] if k == 0 else layers[k][1]
            grads[2 * k] = g.T @ h_prev
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k]
        return grads, (g[0] if single else g)

    # checkpoint ----------------------------------------------------------

    def to_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {
            f"{prefix}layer_sizes": np.array(self.layer_sizes, dtype=np.int64),
            f"{prefix}activations": np.array([self.hidden_activation, self.output_activation]),
        }
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{k}"] = w
            out[f"{prefix}b{k}"] = b
        return out

    @classmethod
    def from_arrays(cls, data, prefix: str = "") -> "Mlp":
        sizes = tuple(int(s) for s in data[f"{prefix}layer_sizes"])
        hidden, output = (str(a) for a in data[f"{prefix}activations"])
        n = len(sizes) - 1
        weights = [np.array(data[f"{prefix}W{k}"]) for k in range(n)]
        biases = [np.array(data[f"{prefix}b{k}"]) for k in range(n)]
        return cls(sizes, weights, biases, hidden, output)

    def save(self, path) -> None:
        np.savez(path, version=np.int64(CHECKPOINT_VERSION), **self.to_arrays())

    @classmethod
    def load(cls, path) -> "Mlp":
        with np.load(path) as data:
            if int(data["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
            return cls.from_arrays(data)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, net: Mlp, grads) -> None:
        """In-place bias-corrected Adam update of ``net``'s parameters."""
        params = net.params
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ValueError("gradient shapes do not match the network parameters")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingError("non-finite gradient")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def to_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {f"{prefix}hyper": np.array([self.lr, self.beta1, self.beta2, self.eps]),
               f"{prefix}step": np.int64(self.step_count), f"{prefix}n": np.int64(len(self.m))}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m{k}"] = m
            out[f"{prefix}v{k}"] = v
        return out

    @classmethod
    def from_arrays(cls, data, prefix: str = "") -> "Adam":
        lr, b1, b2, eps = (float(x) for x in data[f"{prefix}hyper"])
        n = int(data[f"{prefix}n"])
        return cls(lr, b1, b2, eps, int(data[f"{prefix}step"]),
                   [np.array(data[f"{prefix}m{k}"]) for k in range(n)],
                   [np.array(data[f"{prefix}v{k}"]) for k in range(n)])
