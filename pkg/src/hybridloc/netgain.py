"""Feedforward approximator for the UAV antenna gain.

A plain numpy multilayer perceptron: forward pass, exact reverse-mode
gradient of the weighted squared-residual loss, Adam updates and JSON
checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .citymap import GeometryError

LAYER_SIZES = (4, 60, 60, 40, 40, 1)
ACTIVATIONS = ("tanh", "tanh", "relu", "relu", "linear")

_ACT = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "linear": lambda z: z,
}


@dataclass
class GainNetwork:
    weights: list[np.ndarray]  # layer i maps (.., rows) -> (.., cols)
    biases: list[np.ndarray]
    activations: list[str]
    meta: dict = field(default_factory=dict)
    history: list[tuple[int, float, float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weights {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[0]} mismatches previous layer")
            if a not in _ACT:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, seed: int = 0, sizes=LAYER_SIZES, activations=ACTIVATIONS) -> "GainNetwork":
        """Scaled-uniform (Glorot) weights, zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs, list(activations), meta={"seed": seed})

    @classmethod
    def zeros(cls, sizes=LAYER_SIZES, activations=ACTIVATIONS) -> "GainNetwork":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]], list(activations))

    def copy(self) -> "GainNetwork":
        return GainNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           list(self.activations), dict(self.meta), list(self.history))

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def cast(self, dtype) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return ([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def __call__(self, x):
        return forward(self, x)

    # -- checkpoints ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"rows": int(w.shape[0]), "cols": int(w.shape[1]),
                 "weights": w.ravel().tolist(), "bias": b.tolist(), "activation": a}
                for w, b, a in zip(self.weights, self.biases, self.activations)
            ],
            "meta": {k: self.meta.get(k) for k in ("trained_on", "seed", "epochs")},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GainNetwork":
        ws, bs, acts = [], [], []
        for layer in data["layers"]:
            ws.append(np.array(layer["weights"], dtype=np.float64).reshape(layer["rows"], layer["cols"]))
            bs.append(np.array(layer["bias"], dtype=np.float64))
            acts.append(layer["activation"])
        return cls(ws, bs, acts, meta=dict(data.get("meta") or {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "GainNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def features(pose, candidate, receiver_height: float = 0.0) -> np.ndarray:
    """Network input [dx/d, dy/d, dz/d, psi] with d the UAV-to-candidate distance."""
    v = np.asarray(pose.position, dtype=float)
    delta = np.array([v[0] - candidate[0], v[1] - candidate[1], v[2] - receiver_height])
    d = float(np.linalg.norm(delta))
    if d == 0.0:
        raise GeometryError("UAV and candidate coincide")
    return np.append(delta / d, pose.heading)


def _offsets(uav, users, receiver_height):
    users = np.asarray(users, dtype=float).reshape(-1, 2)
    dx = uav[None, :, 0] - users[:, None, 0]
    dy = uav[None, :, 1] - users[:, None, 1]
    dz = np.broadcast_to(uav[None, :, 2] - receiver_height, dx.shape)
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    if np.any(d == 0):
        raise GeometryError("UAV and candidate coincide")
    return dx, dy, dz, d


def batch_features(uav: np.ndarray, heading: np.ndarray, users: np.ndarray,
                   receiver_height: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Features and distances for every (user, pose) pair.

    ``uav`` (N, 3), ``heading`` (N,), ``users`` (P, 2) -> features (P, N, 4)
    and distances (P, N).
    """
    dx, dy, dz, d = _offsets(uav, users, receiver_height)
    x = np.stack([dx / d, dy / d, dz / d, np.broadcast_to(heading, dx.shape)], axis=-1)
    return x, d


def forward(net: GainNetwork, x, dtype=None):
    """Evaluate the network on one input (4,) or a batch (..., 4)."""
    x = np.asarray(x)
    if dtype is None:
        ws, bs = net.weights, net.biases
        h = x.astype(np.float64, copy=False)
    else:
        ws, bs = net.cast(dtype)
        h = x.astype(dtype, copy=False)
    for w, b, act in zip(ws, bs, net.activations):
        h = h @ w
        h += b
        if act == "tanh":
            np.tanh(h, out=h)
        elif act == "relu":
            np.maximum(h, 0, out=h)
    out = h[..., 0]
    return float(out) if out.ndim == 0 else out


def _forward_cache(net: GainNetwork, x: np.ndarray):
    pre, post = [], [x]
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w + b
        h = _ACT[act](z)
        pre.append(z)
        post.append(h)
    return pre, post


def gradient(net: GainNetwork, x, target, weights=None) -> tuple[float, list[np.ndarray]]:
    """Loss sum_i w_i (target_i - net(x_i))^2 and its gradient.

    Gradients are returned in ``net.params()`` order (W0, b0, W1, b1, ...).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    w_res = np.ones_like(target) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    pre, post = _forward_cache(net, x)
    r = target - post[-1][:, 0]
    loss = float(np.sum(w_res * r * r))
    delta = (-2.0 * w_res * r)[:, None]
    grads: list[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        act = net.activations[i]
        if act == "tanh":
            delta = delta * (1.0 - post[i + 1] ** 2)
        elif act == "relu":
            delta = delta * (pre[i] > 0)
        grads.append(delta.sum(axis=0))
        grads.append(post[i].T @ delta)
        if i:
            delta = delta @ net.weights[i].T
    grads.reverse()
    # reversed order is (W0, b0, W1, b1, ...)
    return loss, grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
