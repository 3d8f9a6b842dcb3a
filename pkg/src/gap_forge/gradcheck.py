"""Central finite-difference checks of the analytic gradients.

Errors are reported as ``|a - n| / max(|a| + |n|, floor)`` over whole gradient
vectors, where ``a`` is analytic and ``n`` numeric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import Network, backward, forward, init_network, make_rng, softmax_cross_entropy
from .probability import Alphabet, JointDistribution, Mechanism, mutual_information, push_through
from .solver import mi_gradient

THRESHOLD = 1e-5
_FLOOR = 1e-7


@dataclass(frozen=True)
class GradcheckReport:
    neural_max_error: float
    mi_max_error: float
    neural_points: int
    mi_points: int

    @property
    def passed(self) -> bool:
        return self.neural_max_error < THRESHOLD and self.mi_max_error < THRESHOLD


def _rel(a: np.ndarray, n: np.ndarray) -> float:
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), _FLOOR))


_ARCHS = [
    ([6, 8, 3], ["relu", "identity"]),
    ([5, 7, 7, 2], ["sigmoid", "relu", "softmax"]),
    ([4, 6, 5, 4, 3, 2], ["relu", "relu", "relu", "relu", "softmax"]),  # five weight layers
    ([7, 9, 9, 2], ["relu", "relu", "identity"]),
    ([3, 4], ["sigmoid"]),
]


def _network_loss(net: Network, x, target, labels):
    out, cache = forward(net, x)
    if net.layers[-1].activation == "softmax":
        logits = cache["layers"][-1][1]
        loss, g = softmax_cross_entropy(logits, labels)
        return loss, cache, g, True
    return float((out * target).sum()), cache, target, False


def neural_errors(seed: int = 0, points: int = 100, h: float = 1e-6, corrupt: bool = False):
    """Per-point relative errors of ``backward`` (parameters and inputs)."""
    rng = make_rng(seed, 101)
    errors = []
    for i in range(points):
        sizes, acts = _ARCHS[i % len(_ARCHS)]
        net = init_network(sizes, acts, rng)
        for layer in net.layers:
            layer.b += rng.normal(0, 0.3, layer.b.shape)
        x = rng.standard_normal((3, sizes[0]))
        target = rng.standard_normal((3, sizes[-1]))
        labels = rng.integers(0, sizes[-1], 3)
        _, cache, g, from_logits = _network_loss(net, x, target, labels)
        grads, dx = backward(net, cache, g, from_logits=from_logits)
        analytic = np.concatenate([gr.ravel() for gr in grads] + [dx.ravel()])
        if corrupt:
            analytic = analytic * (1.0 + 1e-2)
        numeric = []
        for p in net.params() + [x]:
            flat = p.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                fp = _network_loss(net, x, target, labels)[0]
                flat[k] = old - h
                fm = _network_loss(net, x, target, labels)[0]
                flat[k] = old
                numeric.append((fp - fm) / (2 * h))
        errors.append(_rel(analytic, np.array(numeric)))
    return errors


def _random_instance(rng):
    nx, ny = rng.integers(2, 5, size=2)
    k = int(rng.integers(2, 5))
    p = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    j = JointDistribution(Alphabet.of_size(nx), Alphabet.of_size(ny), p)
    q = rng.dirichlet(np.ones(k), size=(nx, ny))
    q = 0.8 * q + 0.2 / k  # keep away from the boundary so +-h stays feasible
    return j, Mechanism(j.x_alphabet, j.y_alphabet, Alphabet.of_size(k), q)


def mi_errors(seed: int = 0, points: int = 100, h: float = 1e-6, corrupt: bool = False):
    """Per-point relative errors of ``mi_gradient`` in the simplex tangent space.

    Each row's gradient is compared along the directions ``e_a - e_last``, which
    keep every row a distribution.
    """
    rng = make_rng(seed, 202)
    errors = []
    for _ in range(points):
        j, m = _random_instance(rng)
        g = mi_gradient(j, m)
        if corrupt:
            g = g * (1.0 + 1e-2)
        nx, ny, k = m.q.shape
        analytic, numeric = [], []
        for x in range(nx):
            for y in range(ny):
                for a in range(k - 1):
                    analytic.append(g[x, y, a] - g[x, y, k - 1])
                    vals = []
                    for s in (h, -h):
                        q = np.array(m.q)
                        q[x, y, a] += s
                        q[x, y, k - 1] -= s
                        mm = Mechanism(m.x_alphabet, m.y_alphabet, m.xhat_alphabet, q)
                        vals.append(mutual_information(push_through(j, mm)))
                    numeric.append((vals[0] - vals[1]) / (2 * h))
        errors.append(_rel(np.array(analytic), np.array(numeric)))
    return errors


def run(seed: int = 0, points: int = 100, corrupt: bool = False) -> GradcheckReport:
    ne = neural_errors(seed, points, corrupt=corrupt)
    me = mi_errors(seed, points, corrupt=corrupt)
    return GradcheckReport(max(ne), max(me), len(ne), len(me))
