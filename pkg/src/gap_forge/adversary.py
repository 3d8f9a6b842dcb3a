"""Optimal adversaries on a released joint ``P(xhat, y)`` and their losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfiniteLoss, LossStrategyMismatch, ValidationError
from .probability import (
    PROB_TOL,
    JointDistribution,
    Mechanism,
    marginal,
    mutual_information,
    push_through,
)

LOSS_KINDS = ("zero-one", "log")


@dataclass(frozen=True)
class LossFunction:
    kind: str

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")


ZERO_ONE = LossFunction("zero-one")
LOG_LOSS = LossFunction("log")


def as_loss(loss) -> LossFunction:
    return loss if isinstance(loss, LossFunction) else LossFunction(str(loss))


@dataclass(frozen=True, eq=False)
class AdversaryStrategy:
    """A hard rule (``hard_rule[xhat] -> y`` index) or a soft rule ``soft_rule[xhat, y]``."""

    kind: str
    hard_rule: Optional[np.ndarray] = None
    soft_rule: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "hard":
            if self.hard_rule is None or self.soft_rule is not None:
                raise ValidationError("hard strategy needs hard_rule and no soft_rule")
            rule = np.asarray(self.hard_rule, dtype=np.int64)
            if rule.ndim != 1 or np.any(rule < 0):
                raise ValidationError("hard_rule must be a 1-D array of label indices")
            rule.setflags(write=False)
            object.__setattr__(self, "hard_rule", rule)
        elif self.kind == "soft":
            if self.soft_rule is None or self.hard_rule is not None:
                raise ValidationError("soft strategy needs soft_rule and no hard_rule")
            r = np.array(self.soft_rule, dtype=np.float64)
            if r.ndim != 2 or np.any(r < -PROB_TOL) or np.any(r > 1 + PROB_TOL):
                raise ValidationError("soft_rule entries must lie in [0, 1]")
            if np.any(np.abs(r.sum(axis=1) - 1.0) > PROB_TOL):
                raise ValidationError("soft_rule rows must sum to 1")
            r = np.clip(r, 0.0, 1.0)
            r.setflags(write=False)
            object.__setattr__(self, "soft_rule", r)
        else:
            raise ValidationError(f"strategy kind must be 'hard' or 'soft', got {self.kind!r}")

    def __eq__(self, other):
        if not isinstance(other, AdversaryStrategy) or self.kind != other.kind:
            return NotImplemented if not isinstance(other, AdversaryStrategy) else False
        a = self.hard_rule if self.kind == "hard" else self.soft_rule
        b = other.hard_rule if other.kind == "hard" else other.soft_rule
        return np.array_equal(a, b)


def map_rule(out_joint: JointDistribution) -> AdversaryStrategy:
    """MAP guess per released symbol; ties go to the lowest label index."""
    # np.argmax returns the first maximal index
    return AdversaryStrategy("hard", hard_rule=np.argmax(out_joint.p, axis=1))


def posterior_rule(out_joint: JointDistribution) -> AdversaryStrategy:
    """Posterior beliefs ``P(y | xhat)``; zero-mass rows fall back to the Y-marginal."""
    p = out_joint.p
    row_mass = p.sum(axis=1, keepdims=True)
    prior = marginal(out_joint, "Y")
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(row_mass > 0, p / np.where(row_mass > 0, row_mass, 1.0), prior[None, :])
    return AdversaryStrategy("soft", soft_rule=r)


def expected_loss(out_joint: JointDistribution, s: AdversaryStrategy, loss) -> float:
    """Expected loss in probability units (zero-one) or bits (log)."""
    loss = as_loss(loss)
    p = out_joint.p
    if loss.kind == "zero-one":
        if s.kind != "hard":
            raise LossStrategyMismatch("zero-one loss applies to hard strategies only")
        rule = s.hard_rule
        if rule.shape[0] != p.shape[0] or np.any(rule >= p.shape[1]):
            raise ValidationError("hard rule does not fit the released joint")
        correct = p[np.arange(p.shape[0]), rule].sum()
        return float(1.0 - correct)
    if s.kind != "soft":
        raise LossStrategyMismatch("log loss applies to soft strategies only")
    r = s.soft_rule
    if r.shape != p.shape:
        raise ValidationError(f"soft rule shape {r.shape} != released joint shape {p.shape}")
    positive = p > 0
    if np.any(positive & (r <= 0)):
        xh, y = (int(i) for i in np.argwhere(positive & (r <= 0))[0])
        raise InfiniteLoss(f"zero belief on outcome (xhat={xh}, y={y}) with positive mass")
    return float(-(p[positive] * np.log2(r[positive])).sum()) + 0.0


def map_accuracy(out_joint: JointDistribution) -> float:
    return float(out_joint.p.max(axis=1).sum())


def leakage(j: JointDistribution, m: Mechanism, loss) -> float:
    """Optimal adversary's performance: MAP accuracy (zero-one) or MI in bits (log)."""
    loss = as_loss(loss)
    out = push_through(j, m)
    if loss.kind == "zero-one":
        return map_accuracy(out)
    return mutual_information(out)
