import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gap_forge.adversary import leakage
from gap_forge.errors import Infeasible, TooLarge, ValidationError
from gap_forge.neural import make_rng
from gap_forge.probability import Alphabet, DistortionMeasure, Mechanism, validate_joint
from gap_forge.solver import (
    SolverConfig,
    brute_force_oracle,
    map_subgradient,
    mi_gradient,
    min_distortion,
    parse_budget_range,
    solve,
    solve_map_gap,
    solve_mi_gap,
    tradeoff_curve,
)

from conftest import random_joint
from references import ref_map, ref_mi

H = DistortionMeasure("hamming")
B = Alphabet.of_size(2)


def cfg(budget, **kw):
    return SolverConfig(budget=budget, **kw)


# MAP optimum is 0.8 - D up to D = 0.3, then 0.5; MI values come from the
# conic reference solver
CANONICAL_MAP = {0.0: 0.8, 0.1: 0.7, 0.25: 0.55, 0.4: 0.5, 0.5: 0.5}
CANONICAL_MI = {0.0: 0.2780719051126377, 0.1: 0.1187091, 0.25: 0.0072255, 0.4: 0.0, 0.5: 0.0}


class TestCanonical:
    @pytest.mark.parametrize("D", sorted(CANONICAL_MAP))
    def test_map(self, canonical, D):
        s = solve_map_gap(canonical, H, cfg(D))
        assert s.converged
        assert s.leakage == pytest.approx(CANONICAL_MAP[D], abs=1e-6)
        assert s.achieved_distortion <= D + 1e-6

    @pytest.mark.parametrize("D", sorted(CANONICAL_MI))
    def test_mi(self, canonical, D):
        s = solve_mi_gap(canonical, H, cfg(D))
        assert s.converged
        assert s.leakage == pytest.approx(CANONICAL_MI[D], abs=1e-5)
        assert s.achieved_distortion <= D + 1e-6

    def test_zero_budget_is_identity(self, canonical):
        for loss in ("zero-one", "log"):
            s = solve(canonical, H, cfg(0.0), loss)
            assert s.mechanism == Mechanism.identity(B, B)

    def test_mi_optimum_flips_diagonal_cells(self, canonical):
        # for this symmetric joint the optimum flips x only when x == y, with probability D / 0.8
        q = solve_mi_gap(canonical, H, cfg(0.2)).mechanism.q
        assert q[0, 0, 1] == pytest.approx(0.25, abs=2e-3)
        assert q[1, 1, 0] == pytest.approx(0.25, abs=2e-3)
        assert q[0, 1, 1] == pytest.approx(0.0, abs=2e-3)

    def test_penalty_method_agrees(self, canonical):
        for loss, ref in (("zero-one", 0.7), ("log", CANONICAL_MI[0.1])):
            s = solve(canonical, H, cfg(0.1, method="penalty"), loss)
            assert s.leakage == pytest.approx(ref, abs=5e-3)
            assert s.achieved_distortion <= 0.1 + 1e-3

    def test_subgradient_map_is_close(self, canonical):
        s = solve_map_gap(canonical, H, cfg(0.1, map_method="subgradient"))
        assert s.leakage == pytest.approx(0.7, abs=5e-3)


def test_unreachable_budget_is_infeasible():
    j = validate_joint([[0.5, 0.5]])
    d = DistortionMeasure("custom", table=[[1.0], [2.0]])
    xa = Alphabet.of_size(2, "h")
    assert min_distortion(j, d, xa) == pytest.approx(1.0)
    with pytest.raises(Infeasible):
        solve_mi_gap(j, d, cfg(0.5), xhat_alphabet=xa)
    s = solve_mi_gap(j, d, cfg(1.0), xhat_alphabet=xa)
    assert s.achieved_distortion == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(budget=-1)
    with pytest.raises(ValidationError):
        SolverConfig(method="newton")
    with pytest.raises(ValidationError):
        SolverConfig(penalty_growth=1.0)


@pytest.mark.parametrize("seed", range(6))
def test_against_references(seed):
    rng = make_rng(seed, 7)
    nx, ny = (int(v) for v in rng.integers(2, 5, size=2))
    j = random_joint(rng, nx, ny)
    D = float(rng.random() * 0.5)
    Dm = 1.0 - np.eye(nx)
    s_map = solve_map_gap(j, H, cfg(D))
    assert s_map.leakage == pytest.approx(ref_map(j.p, Dm, D), abs=1e-6)
    pytest.importorskip("cvxpy")
    s_mi = solve_mi_gap(j, H, cfg(D))
    assert s_mi.leakage == pytest.approx(ref_mi(j.p, Dm, D), abs=2e-5)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.8))
def test_more_budget_never_hurts(seed, D):
    rng = make_rng(seed)
    j = random_joint(rng, 2, 3)
    for loss in ("zero-one", "log"):
        lo = solve(j, H, cfg(D), loss)
        hi = solve(j, H, cfg(D + 0.1), loss)
        assert hi.leakage <= lo.leakage + 1e-5
        assert lo.achieved_distortion <= D + 1e-6


def test_independent_joint_leaks_nothing_beyond_prior():
    j = validate_joint(np.outer([0.3, 0.7], [0.6, 0.4]))
    assert solve_map_gap(j, H, cfg(0.0)).leakage == pytest.approx(0.6)
    assert solve_mi_gap(j, H, cfg(0.0)).leakage == pytest.approx(0.0, abs=1e-12)


class TestGradients:
    def test_mi_gradient_directional(self, canonical):
        rng = make_rng(3)
        q = rng.dirichlet(np.ones(2), size=(2, 2))
        m = Mechanism(B, B, B, q)
        g = mi_gradient(canonical, m)
        u = rng.standard_normal(q.shape)
        u -= u.mean(axis=2, keepdims=True)
        h = 1e-6
        f = lambda qq: leakage(canonical, Mechanism(B, B, B, qq), "log")
        num = (f(q + h * u) - f(q - h * u)) / (2 * h)
        assert (g * u).sum() == pytest.approx(num, rel=1e-6)

    def test_map_subgradient_is_a_subgradient(self, canonical):
        rng = make_rng(4)
        m = Mechanism(B, B, B, rng.dirichlet(np.ones(2), size=(2, 2)))
        g = map_subgradient(canonical, m)
        f0 = leakage(canonical, m, "zero-one")
        for _ in range(50):
            other = Mechanism(B, B, B, rng.dirichlet(np.ones(2), size=(2, 2)))
            # convexity: f(q') >= f(q) + <g, q' - q>
            assert leakage(canonical, other, "zero-one") >= f0 + (g * (other.q - m.q)).sum() - 1e-12


class TestOracle:
    def test_canonical(self, canonical):
        o = brute_force_oracle(canonical, H, 0.25, 0.05, "zero-one")
        s = solve_map_gap(canonical, H, cfg(0.25))
        assert o.leakage >= s.leakage - 1e-9
        assert o.leakage - s.leakage <= o.resolution_bound + 1e-3
        assert o.achieved_distortion <= 0.25 + 1e-12

    def test_zero_budget_matches_pinned_value(self, canonical):
        assert brute_force_oracle(canonical, H, 0.0, 0.05, "log").leakage == pytest.approx(0.2780719051126377)
        assert brute_force_oracle(canonical, H, 0.0, 0.05, "zero-one").leakage == pytest.approx(0.8)

    def test_too_large(self):
        j = validate_joint(np.full((3, 3), 1 / 9))
        with pytest.raises(TooLarge):
            brute_force_oracle(j, H, 0.1, 1e-6, "log")

    def test_grid_must_divide_one(self, canonical):
        with pytest.raises(ValidationError):
            brute_force_oracle(canonical, H, 0.1, 0.3, "log")

    def test_oracle_never_beats_exact_solver(self):
        rng = make_rng(11)
        for _ in range(5):
            j = random_joint(rng, 2, 2)
            D = float(rng.random() * 0.4)
            for loss in ("zero-one", "log"):
                o = brute_force_oracle(j, H, D, 0.1, loss)
                s = solve(j, H, cfg(D), loss)
                assert s.leakage <= o.leakage + 1e-6


class TestCurve:
    def test_monotone_and_deterministic(self, canonical):
        budgets = parse_budget_range("0:0.5:0.05")
        assert len(budgets) == 11 and budgets[-1] == 0.5
        a = tradeoff_curve(canonical, H, budgets, SolverConfig(), parallel=1)
        b = tradeoff_curve(canonical, H, budgets, SolverConfig(), parallel=4)
        assert a == b
        for p1, p2 in zip(a, a[1:]):
            assert p2.leakage_zero_one <= p1.leakage_zero_one + 2e-3
            assert p2.leakage_log <= p1.leakage_log + 2e-3
        assert all(p.converged for p in a)

    def test_threads_env_cap(self, canonical, monkeypatch):
        monkeypatch.setenv("GAP_FORGE_THREADS", "1")
        pts = tradeoff_curve(canonical, H, [0.0, 0.5], SolverConfig(), parallel=8)
        assert [p.leakage_zero_one for p in pts] == pytest.approx([0.8, 0.5])

    def test_unsorted_budgets(self, canonical):
        with pytest.raises(ValidationError):
            tradeoff_curve(canonical, H, [0.2, 0.1], SolverConfig())

    @pytest.mark.parametrize("text", ["0.5:0:0.1", "0:1:0", "-0.1:0.2:0.1", "a:b:c", "0:1"])
    def test_bad_ranges(self, text):
        with pytest.raises(ValidationError):
            parse_budget_range(text)

    def test_range_inclusive(self):
        assert parse_budget_range("0:0.5:0.25") == [0.0, 0.25, 0.5]
        assert parse_budget_range("0:0.3:0.2") == [0.0, 0.2]
        assert parse_budget_range("0.1:0.1:1") == [0.1]
