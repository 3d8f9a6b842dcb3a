"""Finite-alphabet probability primitives.

Joint tables are indexed ``p[x, y]`` and channels ``q[x, y, xhat]``.  All
information quantities are in bits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MassNotOne,
    MissingEmbedding,
    NegativeMass,
    UnknownSymbol,
    ValidationError,
)

PROB_TOL = 1e-9
CLAMP_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _clamp_tiny_negatives(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a[(a < 0) & (a >= -CLAMP_TOL)] = 0.0
    return a


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple

    def __post_init__(self):
        syms = tuple(str(s) for s in self.symbols)
        if not syms:
            raise ValidationError("alphabet must contain at least one symbol")
        if len(set(syms)) != len(syms):
            raise ValidationError(f"alphabet symbols must be distinct: {syms}")
        object.__setattr__(self, "symbols", syms)

    @classmethod
    def of_size(cls, n: int, prefix: str = "") -> "Alphabet":
        return cls(tuple(f"{prefix}{i}" for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.symbols)

    def index(self, symbol) -> int:
        try:
            return self.symbols.index(str(symbol))
        except ValueError:
            raise UnknownSymbol(f"symbol {symbol!r} not in alphabet {self.symbols}") from None

    def __len__(self):
        return len(self.symbols)


def _default_alphabet(n: int) -> Alphabet:
    return Alphabet.of_size(n)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Validated probability table ``p[x, y]``."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    p: np.ndarray

    def __post_init__(self):
        p = _clamp_tiny_negatives(self.p)
        if p.ndim != 2 or p.shape != (self.x_alphabet.size, self.y_alphabet.size):
            raise DimensionMismatch(
                f"table shape {p.shape} does not match alphabets "
                f"({self.x_alphabet.size}, {self.y_alphabet.size})"
            )
        if not np.all(np.isfinite(p)):
            raise ValidationError("joint table contains non-finite entries")
        if np.any(p < 0):
            idx = tuple(int(i) for i in np.argwhere(p < 0)[0])
            raise NegativeMass(f"negative probability {p[idx]} at cell {idx}")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise MassNotOne(f"probabilities sum to {total!r}, expected 1")
        object.__setattr__(self, "p", _frozen(p))

    @property
    def shape(self):
        return self.p.shape

    def __eq__(self, other):
        if not isinstance(other, JointDistribution):
            return NotImplemented
        return (
            self.x_alphabet == other.x_alphabet
            and self.y_alphabet == other.y_alphabet
            and np.array_equal(self.p, other.p)
        )


@dataclass(frozen=True, eq=False)
class Mechanism:
    """Stochastic channel ``q[x, y, xhat]``; each ``(x, y)`` row is a distribution."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    xhat_alphabet: Alphabet
    q: np.ndarray

    def __post_init__(self):
        q = _clamp_tiny_negatives(self.q)
        expected = (self.x_alphabet.size, self.y_alphabet.size, self.xhat_alphabet.size)
        if q.shape != expected:
            raise DimensionMismatch(f"channel shape {q.shape} does not match alphabets {expected}")
        if not np.all(np.isfinite(q)):
            raise ValidationError("channel contains non-finite entries")
        if np.any(q < 0) or np.any(q > 1 + PROB_TOL):
            idx = tuple(int(i) for i in np.argwhere((q < 0) | (q > 1 + PROB_TOL))[0])
            raise ValidationError(f"channel entry {q[idx]} outside [0, 1] at {idx}")
        sums = q.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
        if bad.size:
            x, y = (int(i) for i in bad[0])
            raise MassNotOne(f"channel row (x={x}, y={y}) sums to {sums[x, y]!r}", )
        object.__setattr__(self, "q", _frozen(np.minimum(q, 1.0)))

    @classmethod
    def identity(cls, x_alphabet: Alphabet, y_alphabet: Alphabet) -> "Mechanism":
        nx, ny = x_alphabet.size, y_alphabet.size
        q = np.zeros((nx, ny, nx))
        for x in range(nx):
            q[x, :, x] = 1.0
        return cls(x_alphabet, y_alphabet, x_alphabet, q)

    @classmethod
    def constant(cls, x_alphabet, y_alphabet, xhat: int = 0, xhat_alphabet=None) -> "Mechanism":
        xhat_alphabet = xhat_alphabet or x_alphabet
        q = np.zeros((x_alphabet.size, y_alphabet.size, xhat_alphabet.size))
        q[:, :, xhat] = 1.0
        return cls(x_alphabet, y_alphabet, xhat_alphabet, q)

    @classmethod
    def uniform(cls, x_alphabet, y_alphabet, xhat_alphabet=None) -> "Mechanism":
        xhat_alphabet = xhat_alphabet or x_alphabet
        k = xhat_alphabet.size
        q = np.full((x_alphabet.size, y_alphabet.size, k), 1.0 / k)
        return cls(x_alphabet, y_alphabet, xhat_alphabet, q)

    def __eq__(self, other):
        if not isinstance(other, Mechanism):
            return NotImplemented
        return (
            self.x_alphabet == other.x_alphabet
            and self.y_alphabet == other.y_alphabet
            and self.xhat_alphabet == other.xhat_alphabet
            and np.array_equal(self.q, other.q)
        )


@dataclass(frozen=True, eq=False)
class DistortionMeasure:
    """Distortion ``d(xhat, x)``.

    ``kind`` is ``"hamming"``, ``"squared-error"`` (needs ``embedding``,
    symbol -> real) or ``"custom"`` (needs ``table[xhat][x]``).
    """

    kind: str = "hamming"
    embedding: Optional[dict] = None
    table: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        kind = {"squared": "squared-error"}.get(self.kind, self.kind)
        if kind not in ("hamming", "squared-error", "custom"):
            raise ValidationError(f"unknown distortion kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "custom":
            if self.table is None:
                raise ValidationError("custom distortion requires a table")
            t = np.asarray(self.table, dtype=np.float64)
            if t.ndim != 2 or np.any(t < 0) or not np.all(np.isfinite(t)):
                raise ValidationError("custom distortion table must be a finite non-negative matrix")
            object.__setattr__(self, "table", _frozen(t))

    def matrix(self, x_alphabet: Alphabet, xhat_alphabet: Alphabet) -> np.ndarray:
        """Return ``d[xhat, x]`` for the given alphabets."""
        if self.kind == "hamming":
            if xhat_alphabet != x_alphabet:
                raise DimensionMismatch("hamming distortion requires xhat_alphabet == x_alphabet")
            return 1.0 - np.eye(x_alphabet.size)
        if self.kind == "squared-error":
            if not self.embedding:
                raise MissingEmbedding("squared-error distortion needs a symbol embedding")
            try:
                ex = np.array([float(self.embedding[s]) for s in x_alphabet.symbols])
                eh = np.array([float(self.embedding[s]) for s in xhat_alphabet.symbols])
            except KeyError as e:
                raise MissingEmbedding(f"no embedding for symbol {e.args[0]!r}") from None
            return (eh[:, None] - ex[None, :]) ** 2
        t = self.table
        if t.shape != (xhat_alphabet.size, x_alphabet.size):
            raise DimensionMismatch(
                f"custom distortion table shape {t.shape} != ({xhat_alphabet.size}, {x_alphabet.size})"
            )
        return np.array(t)


def validate_joint(p, x_alphabet: Optional[Alphabet] = None, y_alphabet: Optional[Alphabet] = None) -> JointDistribution:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise DimensionMismatch(f"joint table must be 2-D, got shape {p.shape}")
    x_alphabet = x_alphabet or _default_alphabet(p.shape[0])
    y_alphabet = y_alphabet or _default_alphabet(p.shape[1])
    return JointDistribution(x_alphabet, y_alphabet, p)


def marginal(j: JointDistribution, axis: str) -> np.ndarray:
    """Marginal of ``X`` (first axis) or ``Y`` (second axis)."""
    axis = axis.upper()
    if axis == "X":
        return j.p.sum(axis=1)
    if axis == "Y":
        return j.p.sum(axis=0)
    raise ValueError(f"axis must be 'X' or 'Y', got {axis!r}")


def _check_compatible(j: JointDistribution, m: Mechanism):
    if j.x_alphabet != m.x_alphabet or j.y_alphabet != m.y_alphabet:
        raise DimensionMismatch("joint and mechanism alphabets disagree on X or Y")


def push_through(j: JointDistribution, m: Mechanism) -> JointDistribution:
    """Joint of ``(g(X, Y), Y)``: ``P(xhat, y) = sum_x P(x, y) q[x, y, xhat]``."""
    _check_compatible(j, m)
    out = np.einsum("xy,xyh->hy", j.p, m.q)
    return JointDistribution(m.xhat_alphabet, j.y_alphabet, out)


def entropy(row: Sequence[float]) -> float:
    p = np.asarray(row, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum()) + 0.0


def mutual_information(j: JointDistribution) -> float:
    value = entropy(marginal(j, "X")) + entropy(marginal(j, "Y")) - entropy(j.p)
    return max(value, 0.0)


def conditional_entropy(j: JointDistribution) -> float:
    """``H(Y | X)`` for a joint indexed ``[x, y]``."""
    return max(entropy(j.p) - entropy(marginal(j, "X")), 0.0)


def expected_distortion(j: JointDistribution, m: Mechanism, d: DistortionMeasure) -> float:
    _check_compatible(j, m)
    dmat = d.matrix(m.x_alphabet, m.xhat_alphabet)
    return float(np.einsum("xy,xyh,hx->", j.p, m.q, dmat))


def distortion_coefficients(j: JointDistribution, d: DistortionMeasure, xhat_alphabet: Optional[Alphabet] = None) -> np.ndarray:
    """``c[x, y, xhat] = P(x, y) d(xhat, x)`` so that distortion is ``sum(c * q)``."""
    xhat_alphabet = xhat_alphabet or j.x_alphabet
    dmat = d.matrix(j.x_alphabet, xhat_alphabet)
    return j.p[:, :, None] * dmat.T[:, None, :]
