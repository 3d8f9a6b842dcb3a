"""Small dense feedforward networks with hand-written backpropagation.

Inputs are batched row-wise: ``x`` has shape ``(n, in_dim)`` (a 1-D vector is
treated as a batch of one).  Randomness comes from seeded Philox streams so
that every run is reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteActivation, ShapeMismatch, ValidationError

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")
LN2 = np.log(2.0)


def make_rng(seed, *stream) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional sub-stream path."""
    if stream:
        ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(s) for s in stream]])
    else:
        ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    return np.random.Generator(np.random.Philox(ss))


def sample_noise(dim: int, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """Standard Gaussian noise: a ``dim`` vector, or ``(n, dim)`` when ``n`` is given."""
    if dim < 1:
        raise ValidationError(f"noise dimension must be >= 1, got {dim}")
    if n is None:
        return rng.standard_normal(dim)
    return rng.standard_normal((n, dim))


@dataclass(eq=False)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64).ravel()
        if self.b.shape[0] != self.W.shape[0]:
            raise DimensionMismatch(f"bias length {self.b.shape[0]} != weight rows {self.W.shape[0]}")

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


@dataclass(eq=False)
class Network:
    layers: List[Layer]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        for layer in self.layers[:-1]:
            if layer.activation == "softmax":
                raise ValidationError("softmax is only allowed as the final activation")
        for layer in self.layers:
            if not (np.all(np.isfinite(layer.W)) and np.all(np.isfinite(layer.b))):
                raise ValidationError("network parameters must be finite")

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)

    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out

    def copy(self) -> "Network":
        return Network([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers], dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weights": l.W.tolist(), "bias": l.b.tolist(), "activation": l.activation}
                for l in self.layers
            ],
            **{k: v for k, v in self.meta.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        layers = [Layer(np.array(l["weights"]), np.array(l["bias"]), l["activation"]) for l in d["layers"]]
        meta = {k: v for k, v in d.items() if k != "layers"}
        return cls(layers, meta)


def init_network(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator, meta=None) -> Network:
    """He initialisation for relu layers, Xavier for all others; zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValidationError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        if act == "relu":
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
        layers.append(Layer(rng.standard_normal((fan_out, fan_in)) * std, np.zeros(fan_out), act))
    return Network(layers, dict(meta or {}))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if act == "softmax":
        return softmax(z)
    return z


def forward(net: Network, x):
    """Evaluate ``net``; returns ``(output, cache)`` with cache entries ``(input, z, a)``."""
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.shape[1] != net.in_dim:
        raise DimensionMismatch(f"input width {a.shape[1]} != network input {net.in_dim}")
    cache = []
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        out = _activate(z, layer.activation)
        if not np.all(np.isfinite(out)):
            raise NonFiniteActivation(f"non-finite activation in {layer.activation} layer")
        cache.append((a, z, out))
        a = out
    return (a[0] if squeeze else a), {"layers": cache, "squeeze": squeeze}


def backward(net: Network, cache, loss_grad, from_logits: bool = False):
    """Backpropagate ``loss_grad`` (w.r.t. the output, or the final pre-activation
    when ``from_logits``).  Returns ``(grads, input_grad)`` with ``grads`` ordered
    like ``net.params()``.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if cache["squeeze"] and g.ndim == 1:
        g = g[None, :]
    entries = cache["layers"]
    if len(entries) != len(net.layers):
        raise DimensionMismatch("cache does not belong to this network")
    if g.shape != entries[-1][2].shape:
        raise DimensionMismatch(f"loss gradient shape {g.shape} != output shape {entries[-1][2].shape}")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in, z, a_out = entries[i]
        if i == len(net.layers) - 1 and from_logits:
            dz = g
        elif layer.activation == "relu":
            dz = g * (z > 0)
        elif layer.activation == "sigmoid":
            dz = g * a_out * (1.0 - a_out)
        elif layer.activation == "softmax":
            dz = a_out * (g - (g * a_out).sum(axis=1, keepdims=True))
        else:
            dz = g
        grads[2 * i] = dz.T @ a_in
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ layer.W
    return grads, (g[0] if cache["squeeze"] else g)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy in bits and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n = logits.shape[0]
    lsm = log_softmax(logits)
    loss = -lsm[np.arange(n), labels].mean() / LN2
    grad = np.exp(lsm)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / (n * LN2)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState):
    """In-place bias-corrected Adam update; returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state disagree in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter shape {p.shape} != gradient shape {np.shape(g)}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
