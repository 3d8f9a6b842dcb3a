"""Data-driven privatizer training against a learned adversary.

The privatizer network maps ``(enc(x), onehot(y), noise)`` to a continuous
output ``v``.  For categorical ``X`` the released symbol is
``argmax(v / temperature + gumbel)``, so ``softmax(v / temperature)`` are
exactly the release probabilities ("quantization probabilities"); the expected
Hamming distortion of a row is ``1 - softmax(v / temperature)[x]``.  For real-valued
``X`` the output is released as is and distortion is squared error.

Training alternates ``adversary_steps_per_round`` adversary updates with one
privatizer update on ``-adversary_loss + rho * max(0, distortion - budget)^2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, NonFiniteActivation, NonFiniteLoss, ValidationError
from .neural import (
    AdamState,
    Layer,
    Network,
    adam_step,
    backward,
    forward,
    init_network,
    make_rng,
    sample_noise,
    softmax,
    softmax_cross_entropy,
)
from .probability import Alphabet, Mechanism

log = logging.getLogger(__name__)

PATTERNS = ("combine", "additive")
ESTIMATORS = ("straight-through", "expected")

# rng sub-stream ids
_SPLIT, _PRIV_INIT, _ADV_INIT, _TRAIN, _FRESH_INIT, _FRESH_RELEASE, _FRESH_TRAIN = range(7)


@dataclass(frozen=True)
class PrivatizerArch:
    """``combine`` feeds input and noise through one deep net (default four hidden
    layers, five weight layers); ``additive`` adds a generated perturbation to the
    encoded input (default two hidden layers, three weight layers)."""

    pattern: str = "combine"
    hidden_widths: Tuple[int, ...] = ()
    noise_dim: int = 4

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValidationError(f"unknown privatizer pattern {self.pattern!r}; expected one of {PATTERNS}")
        widths = tuple(int(w) for w in self.hidden_widths) or (
            (32, 32, 32, 32) if self.pattern == "combine" else (32, 32)
        )
        if any(w < 1 for w in widths):
            raise ValidationError("hidden widths must be positive")
        if self.noise_dim < 1:
            raise ValidationError("noise_dim must be positive")
        object.__setattr__(self, "hidden_widths", widths)


@dataclass(frozen=True)
class TrainingConfig:
    budget: float = 0.0
    adversary_steps_per_round: int = 5
    batch_size: int = 128
    rounds: int = 2000
    lr_privatizer: float = 1e-3
    lr_adversary: float = 1e-3
    penalty_init: float = 10.0
    penalty_growth: float = 2.0
    seed: int = 0
    penalty_max: float = 1e4
    penalty_every: int = 10
    running_average: float = 0.9
    temperature: float = 0.25
    estimator: str = "straight-through"
    release: str = "sample"
    adversary_hidden: Tuple[int, ...] = (16,)
    fresh_adversary_steps: int = 3000
    fresh_lr: float = 1e-2
    holdout_fraction: float = 0.2
    samples_per_cell: int = 20000
    lr_final_fraction: float = 1.0
    x_alphabet: Optional[Tuple[str, ...]] = None
    y_alphabet: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not (self.budget >= 0 and math.isfinite(self.budget)):
            raise ValidationError("budget must be a finite number >= 0")
        for name in ("batch_size", "rounds", "fresh_adversary_steps", "samples_per_cell", "penalty_every"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if int(self.adversary_steps_per_round) < 0:
            raise ValidationError("adversary_steps_per_round must be >= 0")
        for name in ("lr_privatizer", "lr_adversary", "fresh_lr"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not (self.penalty_init > 0 and self.penalty_growth > 0 and self.penalty_max >= self.penalty_init):
            raise ValidationError("penalty settings must be positive with penalty_max >= penalty_init")
        if not self.temperature > 0:
            raise ValidationError("temperature must be > 0")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}")
        if self.release not in ("sample", "argmax"):
            raise ValidationError("release must be 'sample' or 'argmax'")
        if not 0 < self.lr_final_fraction <= 1:
            raise ValidationError("lr_final_fraction must lie in (0, 1]")
        if not 0 < self.holdout_fraction < 1:
            raise ValidationError("holdout_fraction must lie in (0, 1)")
        if not 0 <= self.running_average < 1:
            raise ValidationError("running_average must lie in [0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "adversary_hidden", tuple(int(w) for w in self.adversary_hidden))
        for name in ("x_alphabet", "y_alphabet"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(str(s) for s in v))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adversary_hidden"] = list(self.adversary_hidden)
        for name in ("x_alphabet", "y_alphabet"):
            if d[name] is not None:
                d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Dataset:
    """Rows ``(x, y)``: ``x`` holds symbol indices (categorical) or real vectors."""

    x: np.ndarray
    y: np.ndarray
    x_alphabet: Optional[Alphabet] = None
    y_alphabet: Optional[Alphabet] = None

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y, dtype=np.int64).ravel()
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionMismatch("x and y must have the same number of rows")
        if self.y.shape[0] < 1:
            raise ValidationError("dataset must contain at least one row")
        self._discrete = self.x.ndim == 1 and (np.issubdtype(self.x.dtype, np.integer) or self.x_alphabet is not None)
        if self._discrete:
            if not np.all(np.mod(self.x, 1) == 0):
                raise ValidationError("categorical x must hold integer symbol indices")
            self.x = self.x.astype(np.int64)
            if self.x_alphabet is None:
                self.x_alphabet = Alphabet.of_size(int(self.x.max()) + 1)
            if np.any(self.x < 0) or np.any(self.x >= self.x_alphabet.size):
                raise ValidationError("x index outside the x alphabet")
        else:
            self.x = np.array(self.x, dtype=np.float64, ndmin=2)
            if self.x.ndim != 2:
                raise DimensionMismatch("real-valued x must be a 2-D array of row vectors")
            if not np.all(np.isfinite(self.x)):
                raise ValidationError("x must be finite")
        if self.y_alphabet is None:
            self.y_alphabet = Alphabet.of_size(int(self.y.max()) + 1)
        if np.any(self.y < 0) or np.any(self.y >= self.y_alphabet.size):
            raise ValidationError("y index outside the y alphabet")

    @property
    def discrete(self) -> bool:
        return self._discrete

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def x_dim(self) -> int:
        return self.x_alphabet.size if self.discrete else self.x.shape[1]

    @property
    def y_dim(self) -> int:
        return self.y_alphabet.size

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.x_alphabet, self.y_alphabet)

    def encode_x(self, idx=None) -> np.ndarray:
        x = self.x if idx is None else self.x[idx]
        if self.discrete:
            return np.eye(self.x_alphabet.size)[x]
        return np.asarray(x, dtype=np.float64)

    def encode_y(self, idx=None) -> np.ndarray:
        y = self.y if idx is None else self.y[idx]
        return np.eye(self.y_alphabet.size)[y]


@dataclass(eq=False)
class TrainedGAP:
    privatizer: Network
    final_adversary: Network
    history: List[Tuple[float, float, float]]
    config: TrainingConfig
    arch: PrivatizerArch
    accuracy: Optional[float] = None
    distortion: Optional[float] = None


def split_indices(n: int, cfg: TrainingConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded train/held-out split (held-out fraction from the config)."""
    perm = make_rng(cfg.seed, _SPLIT).permutation(n)
    n_hold = min(max(int(round(n * cfg.holdout_fraction)), 1), n - 1) if n > 1 else 0
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def make_privatizer(data: Dataset, arch: PrivatizerArch, cfg: TrainingConfig, rng=None) -> Network:
    rng = rng if rng is not None else make_rng(cfg.seed, _PRIV_INIT)
    i_dim = data.x_dim + data.y_dim + arch.noise_dim
    sizes = [i_dim, *arch.hidden_widths, data.x_dim]
    acts = ["relu"] * len(arch.hidden_widths) + ["identity"]
    net = init_network(sizes, acts, rng)
    if arch.pattern == "additive":
        # start from a small perturbation so the initial release is near the identity
        net.layers[-1].W *= 0.1
    net.meta = {
        "role": "privatizer",
        "arch": {"pattern": arch.pattern, "hidden_widths": list(arch.hidden_widths), "noise_dim": arch.noise_dim},
        "x_dim": data.x_dim,
        "y_dim": data.y_dim,
        "discrete": bool(data.discrete),
        "temperature": cfg.temperature,
        "release": cfg.release,
        "seed": int(cfg.seed),
    }
    return net


def privatizer_network(
    layers: Sequence[Layer],
    x_dim: int,
    y_dim: int,
    noise_dim: int,
    pattern: str = "combine",
    discrete: bool = True,
    temperature: float = 1.0,
    release: str = "sample",
    seed: int = 0,
) -> Network:
    """Wrap hand-built layers as a privatizer taking ``[enc(x), onehot(y), noise]``."""
    PrivatizerArch(pattern, tuple(l.out_dim for l in layers[:-1]) or (1,), noise_dim)
    net = Network(list(layers))
    if net.in_dim != x_dim + y_dim + noise_dim or net.out_dim != x_dim:
        raise DimensionMismatch("privatizer layers must map x_dim + y_dim + noise_dim inputs to x_dim outputs")
    net.meta = {
        "role": "privatizer",
        "arch": {"pattern": pattern, "hidden_widths": [l.out_dim for l in layers[:-1]], "noise_dim": noise_dim},
        "x_dim": x_dim,
        "y_dim": y_dim,
        "discrete": bool(discrete),
        "temperature": float(temperature),
        "release": release,
        "seed": int(seed),
    }
    return net


def make_adversary(in_dim: int, y_dim: int, hidden: Sequence[int], rng, seed: int = 0) -> Network:
    sizes = [in_dim, *hidden, y_dim]
    acts = ["relu"] * len(hidden) + ["softmax"]
    net = init_network(sizes, acts, rng)
    net.meta = {"role": "adversary", "arch": {"hidden_widths": list(hidden)}, "seed": int(seed)}
    return net


def _priv_meta(priv: Network):
    m = priv.meta
    try:
        return m["arch"]["pattern"], int(m["x_dim"]), int(m["y_dim"]), int(m["arch"]["noise_dim"]), bool(m["discrete"]), float(m["temperature"])
    except KeyError as e:
        raise ValidationError(f"privatizer network is missing metadata {e.args[0]!r}") from None


def privatizer_forward(priv: Network, x_enc: np.ndarray, y_enc: np.ndarray, noise: np.ndarray):
    """Continuous privatizer output ``v`` and the forward cache."""
    pattern, x_dim, y_dim, noise_dim, _, _ = _priv_meta(priv)
    if x_enc.shape[1] != x_dim or y_enc.shape[1] != y_dim or noise.shape[1] != noise_dim:
        raise DimensionMismatch("privatizer input encodings do not match the network")
    inp = np.hstack([x_enc, y_enc, noise])
    out, cache = forward(priv, inp)
    if pattern == "additive":
        out = out + x_enc
    return out, cache


def _gumbel(rng, shape):
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))


def release(priv: Network, x_enc, y_enc, rng) -> np.ndarray:
    """Draw released values: one-hot symbols for categorical X, reals otherwise."""
    _, _, _, noise_dim, discrete, temp = _priv_meta(priv)
    n = x_enc.shape[0]
    z = sample_noise(noise_dim, rng, n)
    v, _ = privatizer_forward(priv, x_enc, y_enc, z)
    if not discrete:
        return v
    logits = v / temp
    if priv.meta.get("release", "sample") == "sample":
        logits = logits + _gumbel(rng, logits.shape)
    return np.eye(v.shape[1])[np.argmax(logits, axis=1)]


def _check_finite(value, what, round_index, grads=()):
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteLoss(f"{what} became non-finite at round {round_index}", round_index)


def empirical_loss(priv: Network, adv: Network, batch: Dataset, rng) -> float:
    """Mean adversary cross-entropy (bits) on privatized rows of ``batch``."""
    xhat = release(priv, batch.encode_x(), batch.encode_y(), rng)
    if xhat.shape[1] != adv.in_dim:
        raise DimensionMismatch("adversary input width does not match the privatizer output")
    probs, _ = forward(adv, xhat)
    p = probs[np.arange(batch.n), batch.y]
    return float(-np.mean(np.log2(np.maximum(p, 1e-300))))


def _adversary_loss_grad(adv: Network, xhat, y):
    _, cache = forward(adv, xhat)
    logits = cache["layers"][-1][1]
    loss, dlogits = softmax_cross_entropy(logits, y)
    grads, dx = backward(adv, cache, dlogits, from_logits=True)
    return loss, grads, dx


def _batch(data: Dataset, idx_pool, cfg: TrainingConfig, rng):
    b = min(cfg.batch_size, len(idx_pool))
    return idx_pool[rng.integers(0, len(idx_pool), size=b)]


def adversary_round(priv, adv, data: Dataset, cfg: TrainingConfig, rng, state: Optional[AdamState] = None, idx_pool=None, round_index=0):
    """``adversary_steps_per_round`` Adam steps on the adversary with the privatizer
    frozen.  Returns ``(adv, state)``."""
    if state is None:
        state = AdamState.for_params(adv.params(), lr=cfg.lr_adversary)
    pool = np.arange(data.n) if idx_pool is None else idx_pool
    for _ in range(int(cfg.adversary_steps_per_round)):
        idx = _batch(data, pool, cfg, rng)
        xhat = release(priv, data.encode_x(idx), data.encode_y(idx), rng)
        loss, grads, _ = _adversary_loss_grad(adv, xhat, data.y[idx])
        _check_finite(loss, "adversary loss", round_index, grads)
        adam_step(adv.params(), grads, state)
    return adv, state


def _privatizer_objective(priv, adv, data: Dataset, idx, cfg: TrainingConfig, rho, z, gumbel, estimator):
    """Penalised privatizer objective and gradient w.r.t. its parameters.

    Returns ``(objective, adversary_loss_bits, distortion, grads)``.
    """
    _, _, _, _, discrete, temp = _priv_meta(priv)
    x_enc = data.encode_x(idx)
    y_enc = data.encode_y(idx)
    y = data.y[idx]
    n = len(idx)
    v, cache = privatizer_forward(priv, x_enc, y_enc, z)
    if discrete:
        s = softmax(v / temp)
        k = v.shape[1]
        if estimator == "expected":
            # exact expectation over released symbols
            probs, _ = forward(adv, np.eye(k))
            ce = -np.log2(np.maximum(probs[:, y].T, 1e-300))  # (n, k)
            adv_loss = float((s * ce).sum(axis=1).mean())
            ds = ce / n
        else:
            hard = np.eye(k)[np.argmax(v / temp + gumbel, axis=1)]
            adv_loss, _, dh = _adversary_loss_grad(adv, hard, y)
            ds = dh
        dist_rows = 1.0 - (s * x_enc).sum(axis=1)
        dist = float(dist_rows.mean())
        viol = max(0.0, dist - cfg.budget)
        ds = -ds - (2.0 * rho * viol / n) * x_enc
        dv = s * (ds - (ds * s).sum(axis=1, keepdims=True)) / temp
    else:
        adv_loss, _, dxhat = _adversary_loss_grad(adv, v, y)
        diff = v - x_enc
        dist = float((diff * diff).sum(axis=1).mean())
        viol = max(0.0, dist - cfg.budget)
        dv = -dxhat + (2.0 * rho * viol) * (2.0 * diff / n)
    objective = -adv_loss + rho * viol * viol
    grads, _ = backward(priv, cache, dv)
    return objective, adv_loss, dist, grads


def privatizer_round(priv, adv, data: Dataset, cfg: TrainingConfig, rho: float, rng, state: Optional[AdamState] = None, idx_pool=None, round_index=0):
    """One Adam step on the privatizer with the adversary frozen.

    Returns ``(priv, batch_distortion, adversary_loss_bits, state)``.
    """
    if state is None:
        state = AdamState.for_params(priv.params(), lr=cfg.lr_privatizer)
    _, x_dim, _, noise_dim, _, _ = _priv_meta(priv)
    pool = np.arange(data.n) if idx_pool is None else idx_pool
    idx = _batch(data, pool, cfg, rng)
    z = sample_noise(noise_dim, rng, len(idx))
    gumbel = _gumbel(rng, (len(idx), x_dim))
    with np.errstate(over="ignore", invalid="ignore"):
        obj, adv_loss, dist, grads = _privatizer_objective(priv, adv, data, idx, cfg, rho, z, gumbel, cfg.estimator)
    _check_finite(obj, "privatizer objective", round_index, grads)
    adam_step(priv.params(), grads, state)
    return priv, dist, adv_loss, state


def train(data: Dataset, arch: PrivatizerArch, cfg: TrainingConfig) -> TrainedGAP:
    """Alternate adversary and privatizer updates for ``cfg.rounds`` rounds on the
    training split, then measure leakage with a fresh adversary on held-out rows."""
    train_idx, _ = split_indices(data.n, cfg)
    priv = make_privatizer(data, arch, cfg)
    adv = make_adversary(data.x_dim, data.y_dim, cfg.adversary_hidden, make_rng(cfg.seed, _ADV_INIT), cfg.seed)
    rng = make_rng(cfg.seed, _TRAIN)
    adv_state = AdamState.for_params(adv.params(), lr=cfg.lr_adversary)
    priv_state = AdamState.for_params(priv.params(), lr=cfg.lr_privatizer)
    rho = cfg.penalty_init
    running = None
    history = []
    for r in range(cfg.rounds):
        scale = lr_scale(r, cfg)
        adv_state.lr = cfg.lr_adversary * scale
        priv_state.lr = cfg.lr_privatizer * scale
        try:
            adversary_round(priv, adv, data, cfg, rng, adv_state, train_idx, r)
            _, dist, adv_loss, _ = privatizer_round(priv, adv, data, cfg, rho, rng, priv_state, train_idx, r)
        except NonFiniteActivation as e:
            raise NonFiniteLoss(f"training diverged at round {r}: {e}", r) from None
        running = dist if running is None else cfg.running_average * running + (1 - cfg.running_average) * dist
        history.append((float(adv_loss), float(dist), float(rho)))
        if (r + 1) % cfg.penalty_every == 0 and running > cfg.budget:
            rho = min(rho * cfg.penalty_growth, cfg.penalty_max)
    result = TrainedGAP(priv, adv, history, cfg, arch)
    result.accuracy = evaluate_fresh_adversary(priv, data, cfg)
    result.distortion = achieved_distortion(priv, data, cfg)
    log.info("trained %s privatizer: accuracy=%.4f distortion=%.4f", arch.pattern, result.accuracy, result.distortion)
    return result


def lr_scale(round_index: int, cfg: TrainingConfig) -> float:
    """Cosine decay from 1 to ``lr_final_fraction`` over the run."""
    f = cfg.lr_final_fraction
    if f == 1.0 or cfg.rounds <= 1:
        return 1.0
    return f + (1.0 - f) * 0.5 * (1.0 + math.cos(math.pi * round_index / (cfg.rounds - 1)))


def running_average_distortion(history, cfg: TrainingConfig, start: int = 0) -> List[float]:
    out = []
    running = None
    for _, dist, _ in history:
        running = dist if running is None else cfg.running_average * running + (1 - cfg.running_average) * dist
        out.append(running)
    return out[start:]


def evaluate_fresh_adversary(priv: Network, data: Dataset, cfg: TrainingConfig, return_adversary: bool = False):
    """Train a new adversary on privatized training rows and report its hard-decision
    accuracy on privatized held-out rows."""
    train_idx, hold_idx = split_indices(data.n, cfg)
    rel_rng = make_rng(cfg.seed, _FRESH_RELEASE)
    xhat_train = release(priv, data.encode_x(train_idx), data.encode_y(train_idx), rel_rng)
    xhat_hold = release(priv, data.encode_x(hold_idx), data.encode_y(hold_idx), rel_rng)
    y_train, y_hold = data.y[train_idx], data.y[hold_idx]
    adv = make_adversary(xhat_train.shape[1], data.y_dim, cfg.adversary_hidden, make_rng(cfg.seed, _FRESH_INIT), cfg.seed)
    state = AdamState.for_params(adv.params(), lr=cfg.fresh_lr)
    rng = make_rng(cfg.seed, _FRESH_TRAIN)
    b = min(cfg.batch_size, len(train_idx))
    for step in range(cfg.fresh_adversary_steps):
        sel = rng.integers(0, len(train_idx), size=b)
        loss, grads, _ = _adversary_loss_grad(adv, xhat_train[sel], y_train[sel])
        _check_finite(loss, "fresh adversary loss", step, grads)
        adam_step(adv.params(), grads, state)
    probs, _ = forward(adv, xhat_hold)
    acc = float(np.mean(np.argmax(probs, axis=1) == y_hold))
    return (acc, adv) if return_adversary else acc


def empirical_mechanism(priv: Network, x_alphabet: Alphabet, y_alphabet: Alphabet, samples_per_cell: int, seed: int) -> Mechanism:
    """Monte Carlo estimate of ``q[x, y, xhat]`` for a categorical privatizer."""
    _, x_dim, y_dim, _, discrete, _ = _priv_meta(priv)
    if not discrete:
        raise ValidationError("empirical_mechanism needs a privatizer over a categorical X")
    if samples_per_cell < 1:
        raise ValidationError("samples_per_cell must be >= 1")
    if x_dim != x_alphabet.size or y_dim != y_alphabet.size:
        raise DimensionMismatch("alphabets do not match the privatizer encodings")
    q = np.zeros((x_dim, y_dim, x_dim))
    ex, ey = np.eye(x_dim), np.eye(y_dim)
    for x in range(x_dim):
        for y in range(y_dim):
            rng = make_rng(seed, x, y)
            rel = release(priv, np.repeat(ex[x][None], samples_per_cell, 0), np.repeat(ey[y][None], samples_per_cell, 0), rng)
            q[x, y] = rel.sum(axis=0) / samples_per_cell
    return Mechanism(x_alphabet, y_alphabet, x_alphabet, q)


def achieved_distortion(priv: Network, data: Dataset, cfg: TrainingConfig) -> float:
    """Expected distortion of the released data over the whole dataset.

    Categorical X: Hamming distortion of the Monte Carlo mechanism, weighted by
    the empirical joint.  Real X: mean squared error of one release per row.
    """
    if data.discrete:
        from .data_io import empirical_joint
        from .probability import DistortionMeasure, expected_distortion

        mech = empirical_mechanism(priv, data.x_alphabet, data.y_alphabet, cfg.samples_per_cell, cfg.seed)
        return expected_distortion(empirical_joint(data, data.x_alphabet, data.y_alphabet), mech, DistortionMeasure("hamming"))
    xhat = release(priv, data.encode_x(), data.encode_y(), make_rng(cfg.seed, _FRESH_RELEASE))
    return float(((xhat - data.encode_x()) ** 2).sum(axis=1).mean())
