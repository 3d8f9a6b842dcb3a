import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gap_forge.adversary import (
    LOG_LOSS,
    ZERO_ONE,
    AdversaryStrategy,
    LossFunction,
    expected_loss,
    leakage,
    map_accuracy,
    map_rule,
    posterior_rule,
)
from gap_forge.errors import InfiniteLoss, LossStrategyMismatch, ValidationError
from gap_forge.probability import Alphabet, Mechanism, conditional_entropy, entropy, marginal, push_through, validate_joint

from conftest import joint_and_mechanism, joints

B = Alphabet.of_size(2)


def test_map_rule_examples(canonical):
    np.testing.assert_array_equal(map_rule(canonical).hard_rule, [0, 1])
    prod = validate_joint(np.outer([0.5, 0.5], [0.7, 0.3]))
    np.testing.assert_array_equal(map_rule(prod).hard_rule, [0, 0])
    tie = validate_joint(np.full((2, 2), 0.25))
    np.testing.assert_array_equal(map_rule(tie).hard_rule, [0, 0])


def test_posterior_rule_examples(canonical):
    np.testing.assert_allclose(posterior_rule(canonical).soft_rule, [[0.8, 0.2], [0.2, 0.8]])
    prod = validate_joint(np.outer([0.2, 0.8], [0.7, 0.3]))
    np.testing.assert_allclose(posterior_rule(prod).soft_rule, [[0.7, 0.3], [0.7, 0.3]])
    zero_row = validate_joint([[0.5, 0.5], [0, 0]])
    np.testing.assert_allclose(posterior_rule(zero_row).soft_rule, [[0.5, 0.5], [0.5, 0.5]])


def test_expected_loss_examples(canonical):
    assert expected_loss(canonical, map_rule(canonical), ZERO_ONE) == pytest.approx(0.2)
    uniform = AdversaryStrategy("soft", soft_rule=np.full((2, 2), 0.5))
    assert expected_loss(canonical, uniform, LOG_LOSS) == pytest.approx(1.0)
    assert expected_loss(canonical, posterior_rule(canonical), LOG_LOSS) == pytest.approx(conditional_entropy(canonical))


def test_infinite_loss_and_mismatch(canonical):
    sure = AdversaryStrategy("soft", soft_rule=[[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InfiniteLoss):
        expected_loss(canonical, sure, LOG_LOSS)
    with pytest.raises(LossStrategyMismatch):
        expected_loss(canonical, map_rule(canonical), LOG_LOSS)
    with pytest.raises(LossStrategyMismatch):
        expected_loss(canonical, posterior_rule(canonical), ZERO_ONE)


def test_strategy_validation():
    with pytest.raises(ValidationError):
        AdversaryStrategy("hard")
    with pytest.raises(ValidationError):
        AdversaryStrategy("soft", soft_rule=[[0.6, 0.6]])
    with pytest.raises(ValidationError):
        AdversaryStrategy("hard", hard_rule=[0], soft_rule=[[1.0]])
    with pytest.raises(ValidationError):
        LossFunction("hinge")


def test_leakage_examples(canonical):
    assert leakage(canonical, Mechanism.identity(B, B), "zero-one") == pytest.approx(0.8)
    const = Mechanism.constant(B, B)
    assert leakage(canonical, const, "zero-one") == pytest.approx(0.5)
    assert leakage(canonical, const, "log") == pytest.approx(0.0, abs=1e-12)
    q = np.zeros((2, 2, 2))
    q[:, 0, 0] = q[:, 1, 1] = 1.0
    assert leakage(canonical, Mechanism(B, B, B, q), "zero-one") == pytest.approx(1.0)


def _all_hard_rules(k, ny):
    return itertools.product(range(ny), repeat=k)


@given(joints())
def test_map_rule_beats_every_hard_rule(out):
    best = expected_loss(out, map_rule(out), ZERO_ONE)
    k, ny = out.shape
    for rule in _all_hard_rules(k, ny):
        assert expected_loss(out, AdversaryStrategy("hard", hard_rule=rule), ZERO_ONE) >= best


@given(joints(), st.data())
def test_posterior_rule_gibbs(out, data):
    k, ny = out.shape
    w = np.array(data.draw(st.lists(st.floats(1e-3, 1.0), min_size=k * ny, max_size=k * ny))).reshape(k, ny)
    s = AdversaryStrategy("soft", soft_rule=w / w.sum(axis=1, keepdims=True))
    assert expected_loss(out, posterior_rule(out), LOG_LOSS) <= expected_loss(out, s, LOG_LOSS) + 1e-12


@given(joint_and_mechanism())
def test_leakage_ranges_and_soft_identity(jm):
    j, m = jm
    py = marginal(j, "Y")
    z = leakage(j, m, "zero-one")
    assert py.max() - 1e-9 <= z <= 1 + 1e-9
    lg = leakage(j, m, "log")
    assert -1e-9 <= lg <= entropy(py) + 1e-9
    out = push_through(j, m)
    assert lg == pytest.approx(entropy(py) - expected_loss(out, posterior_rule(out), LOG_LOSS), abs=1e-9)


@given(joints(), st.floats(0.1, 100.0))
def test_map_rule_scale_invariant(out, c):
    # scaling the joint (equivalently the gain per correct guess) leaves the argmax alone
    scaled = out.p * c
    np.testing.assert_array_equal(np.argmax(scaled, axis=1), map_rule(out).hard_rule)
    assert map_accuracy(out) == pytest.approx(out.p.max(axis=1).sum())
