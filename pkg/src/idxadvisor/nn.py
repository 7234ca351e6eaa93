"""Small dense networks with hand-written backpropagation.

Inputs may be a single vector ``(d,)`` or a batch ``(n, d)``. ``backward``
returns the exact gradient of ``sum(upstream * forward(x))``, so callers
fold any batch averaging into ``upstream``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Mlp:
    layer_dims: list[int]
    activations: list[str]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.activations) != len(self.layer_dims) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if not self.weights:
            rng = np.random.default_rng(self.rng_seed)
            for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match layer_dims")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> Mlp:
        return Mlp(list(self.layer_dims), list(self.activations),
                   [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.rng_seed)

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def arch(self) -> dict:
        return {"layer_dims": list(self.layer_dims), "activations": list(self.activations)}


def forward(net: Mlp, x: np.ndarray, cache: list | None = None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != net.layer_dims[0]:
        raise ValueError(f"input has size {a.shape[-1]}, expected {net.layer_dims[0]}")
    for w, b, name in zip(net.weights, net.biases, net.activations):
        z = a @ w + b
        out = _act(name, z)
        if cache is not None:
            cache.append((a, z, out))
        a = out
    return a


def backward(net: Mlp, x: np.ndarray, upstream: np.ndarray, cache: list | None = None):
    """Return ``(grads, input_grad)``; ``grads`` alternates weight, bias per layer."""
    if cache is None:
        cache = []
        forward(net, x, cache)
    g = np.asarray(upstream, dtype=float)
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    for i in range(len(net.weights) - 1, -1, -1):
        a_in, z, out = cache[i]
        dz = g * _act_grad(net.activations[i], z, out)
        if dz.ndim == 1:
            grads[2 * i] = np.outer(a_in, dz)
            grads[2 * i + 1] = dz.copy()
        else:
            grads[2 * i] = a_in.T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ net.weights[i].T
    return grads, g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 3e-4, **kw) -> AdamState:
        return cls(net.zero_grads(), net.zero_grads(), lr, **kw)


def adam_step(net: Mlp, grads: list[np.ndarray], state: AdamState) -> None:
    """One Adam descent step, in place on ``net`` and ``state``."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    if target.layer_dims != online.layer_dims:
        raise ValueError("architectures differ")
    for pt, po in zip(target.params, online.params):
        pt *= 1.0 - tau
        pt += tau * po


def to_checkpoint(net: Mlp) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "arch": net.arch(),
        "params": [p.ravel().tolist() for p in net.params],
    }


def from_checkpoint(data: dict) -> Mlp:
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    dims = data["arch"]["layer_dims"]
    acts = data["arch"]["activations"]
    flat = data["params"]
    ws, bs = [], []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        ws.append(np.asarray(flat[2 * i], dtype=float).reshape(a, b))
        bs.append(np.asarray(flat[2 * i + 1], dtype=float).reshape(b))
    return Mlp(list(dims), list(acts), ws, bs)


def save_net(net: Mlp, path) -> None:
    Path(path).write_text(json.dumps(to_checkpoint(net)))


def load_net(path) -> Mlp:
    return from_checkpoint(json.loads(Path(path).read_text()))


def gradient_check(net: Mlp, seed: int = 0, h: float = 1e-5, per_tensor: int = 48,
                   floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks up to ``per_tensor`` random coordinates of every parameter tensor
    plus the input gradient, for the scalar loss ``r . forward(x)``.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=net.layer_dims[0])
    r = rng.normal(size=net.layer_dims[-1])

    def loss() -> float:
        return float(r @ forward(net, x))

    grads, gx = backward(net, x, r)
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        coords = rng.choice(flat_p.size, size=min(per_tensor, flat_p.size), replace=False)
        for c in coords:
            old = flat_p[c]
            flat_p[c] = old + h
            up = loss()
            flat_p[c] = old - h
            down = loss()
            flat_p[c] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - flat_g[c]) / max(abs(num) + abs(flat_g[c]), floor))
    coords = rng.choice(x.size, size=min(per_tensor, x.size), replace=False)
    for c in coords:
        old = x[c]
        x[c] = old + h
        up = loss()
        x[c] = old - h
        down = loss()
        x[c] = old
        num = (up - down) / (2 * h)
        worst = max(worst, abs(num - gx[c]) / max(abs(num) + abs(gx[c]), floor))
    return worst
