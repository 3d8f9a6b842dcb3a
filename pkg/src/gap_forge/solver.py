"""Exact privatizer design for finite alphabets.

The privatizer's problem is a convex program over channel tables ``q[x, y, xhat]``:
minimise the optimal adversary's leakage (MAP accuracy or mutual information)
subject to ``E[d(xhat, x)] <= budget``.  Descent runs in ``gap_forge._kernels``;
this module builds the problem, validates inputs and packages results.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from .adversary import as_loss, leakage
from .errors import Infeasible, TooLarge, ValidationError
from .probability import (
    Alphabet,
    DistortionMeasure,
    JointDistribution,
    Mechanism,
    distortion_coefficients,
    expected_distortion,
    push_through,
)

MAX_GRID_EVALUATIONS = 10**8


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``method`` selects exact projection onto the feasible polytope
    (``"projection"``) or the quadratic-penalty route (``"penalty"``, which
    uses ``penalty_init``/``penalty_growth``).  ``map_method`` picks the
    smoothed-max descent or plain projected subgradient for the MAP objective.
    """

    budget: float = 0.0
    max_iters: int = 50_000
    step_size: float = 1.0
    penalty_init: float = 10.0
    penalty_growth: float = 2.0
    tolerance: float = 1e-6
    seed: int = 0
    stall_tolerance: float = 1e-8
    patience: int = 50
    method: str = "projection"
    map_method: str = "smoothed"

    def __post_init__(self):
        if not (self.budget >= 0 and math.isfinite(self.budget)):
            raise ValidationError(f"budget must be a finite number >= 0, got {self.budget}")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be positive")
        if not self.step_size > 0:
            raise ValidationError("step_size must be > 0")
        if not self.penalty_init > 0:
            raise ValidationError("penalty_init must be > 0")
        if not self.penalty_growth > 1:
            raise ValidationError("penalty_growth must be > 1")
        if not (self.tolerance > 0 and self.stall_tolerance > 0):
            raise ValidationError("tolerances must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.method not in ("projection", "penalty"):
            raise ValidationError(f"unknown method {self.method!r}")
        if self.map_method not in ("smoothed", "subgradient"):
            raise ValidationError(f"unknown map_method {self.map_method!r}")

    def with_budget(self, budget: float) -> "SolverConfig":
        return replace(self, budget=float(budget))


@dataclass(frozen=True, eq=False)
class MechanismSolution:
    mechanism: Mechanism
    leakage: float
    achieved_distortion: float
    iterations: int
    converged: bool
    loss: str = "log"
    budget: float = 0.0
    seed: int = 0
    resolution_bound: Optional[float] = None

    def __eq__(self, other):
        if not isinstance(other, MechanismSolution):
            return NotImplemented
        return (
            self.mechanism == other.mechanism
            and self.leakage == other.leakage
            and self.achieved_distortion == other.achieved_distortion
            and self.iterations == other.iterations
            and self.converged == other.converged
            and self.loss == other.loss
        )


@dataclass(frozen=True)
class TradeoffPoint:
    budget: float
    leakage_zero_one: float
    leakage_log: float
    achieved_distortion: float
    converged: bool = True


def _problem(j: JointDistribution, d: DistortionMeasure, xhat_alphabet: Optional[Alphabet]):
    xhat_alphabet = xhat_alphabet or j.x_alphabet
    C = distortion_coefficients(j, d, xhat_alphabet)
    return xhat_alphabet, C


def min_distortion(j: JointDistribution, d: DistortionMeasure, xhat_alphabet: Optional[Alphabet] = None) -> float:
    """Smallest achievable expected distortion (every row on its cheapest symbol)."""
    _, C = _problem(j, d, xhat_alphabet)
    return float(C.min(axis=2).sum())


def _check_feasible(j, d, xhat_alphabet, budget, tol):
    lowest = min_distortion(j, d, xhat_alphabet)
    if lowest > budget + tol:
        raise Infeasible(f"budget {budget} is below the minimum achievable distortion {lowest}")


def _finish(j, d, xhat_alphabet, Q, loss, budget, iterations, converged, cfg) -> MechanismSolution:
    nx, ny = j.shape
    k = xhat_alphabet.size
    q = np.clip(np.asarray(Q, dtype=np.float64).reshape(nx, ny, k), 0.0, 1.0)
    # rows carrying no mass are irrelevant to both objectives; pin them to their
    # cheapest output so the table is deterministic and distortion-minimal
    dmat = d.matrix(j.x_alphabet, xhat_alphabet)
    for x, y in np.argwhere(j.p == 0):
        q[x, y, :] = 0.0
        q[x, y, int(np.argmin(dmat[:, x]))] = 1.0
    q /= q.sum(axis=2, keepdims=True)
    m = Mechanism(j.x_alphabet, j.y_alphabet, xhat_alphabet, q)
    dist = expected_distortion(j, m, d)
    ok = bool(converged) and dist <= budget + cfg.tolerance
    return MechanismSolution(
        mechanism=m,
        leakage=leakage(j, m, loss),
        achieved_distortion=dist,
        iterations=int(iterations),
        converged=ok,
        loss=loss,
        budget=float(budget),
        seed=int(cfg.seed),
    )


def _solve(j, d, cfg: SolverConfig, loss: str, xhat_alphabet) -> MechanismSolution:
    xhat_alphabet, C = _problem(j, d, xhat_alphabet)
    _check_feasible(j, d, xhat_alphabet, cfg.budget, cfg.tolerance)
    nx, ny = j.shape
    k = xhat_alphabet.size
    R = nx * ny
    Cr = C.reshape(R, k)
    Q0 = np.full((R, k), 1.0 / k)
    if loss == "log":
        objective = _kernels.MI
    else:
        objective = _kernels.MAP_SMOOTH if cfg.map_method == "smoothed" else _kernels.MAP
    # a budget marginally below the cheapest table is rounding noise, not infeasibility
    budget = max(cfg.budget, float(Cr.min(axis=1).sum()))
    if cfg.method == "penalty":
        Q, iters, converged = _penalty_solve(j.p, Cr, budget, objective, cfg, Q0)
    else:
        Q, _, iters, converged = _kernels.pgd_solve(
            j.p, Cr, budget, objective, cfg.step_size, cfg.max_iters,
            cfg.stall_tolerance, cfg.patience, Q0,
        )
    return _finish(j, d, xhat_alphabet, Q, loss, cfg.budget, iters, converged, cfg)


def _penalty_solve(P, C, budget, objective, cfg: SolverConfig, Q0):
    """Quadratic penalty ``rho * max(0, distortion - budget)^2`` with geometric growth.

    Each outer round runs projected (sub)gradient descent on the penalised
    objective over the row simplices only; ``rho`` grows whenever the
    violation still exceeds the tolerance.
    """
    value_grad = _kernels.mi_value_grad if objective == _kernels.MI else _kernels.map_value_grad
    Q = _kernels.project_simplex_rows(Q0)
    rho = cfg.penalty_init
    total = 0
    per_round = max(cfg.max_iters // 20, 1)
    converged = False

    def penalised(Qc):
        f, G = value_grad(P, Qc)
        viol = float((C * Qc).sum()) - budget
        if viol > 0:
            f += rho * viol * viol
            G = G + 2.0 * rho * viol * C
        return f, G, viol

    while total < cfg.max_iters:
        f, G, viol = penalised(Q)
        alpha = cfg.step_size
        for t in range(1, per_round + 1):
            total += 1
            if objective == _kernels.MI:
                for _ in range(60):
                    Qn = _kernels.project_simplex_rows(Q - alpha * G)
                    fn, Gn, vn = penalised(Qn)
                    if fn <= f:
                        break
                    alpha *= 0.5
                alpha = min(alpha * 1.5, cfg.step_size)
            else:
                Qn = _kernels.project_simplex_rows(Q - (cfg.step_size / math.sqrt(t)) * G / max(np.linalg.norm(G), 1e-300))
                fn, Gn, vn = penalised(Qn)
            improvement = f - fn
            Q, f, G, viol = Qn, fn, Gn, vn
            if objective == _kernels.MI and 0 <= improvement < cfg.stall_tolerance:
                break
            if total >= cfg.max_iters:
                break
        if viol <= cfg.tolerance:
            converged = True
            break
        rho *= cfg.penalty_growth
    return Q, total, converged


def solve_mi_gap(j: JointDistribution, d: DistortionMeasure, cfg: SolverConfig, xhat_alphabet: Optional[Alphabet] = None) -> MechanismSolution:
    """Minimise ``I(xhat; Y)`` subject to the distortion budget."""
    return _solve(j, d, cfg, "log", xhat_alphabet)


def solve_map_gap(j: JointDistribution, d: DistortionMeasure, cfg: SolverConfig, xhat_alphabet: Optional[Alphabet] = None) -> MechanismSolution:
    """Minimise the MAP adversary's accuracy ``sum_xhat max_y P(xhat, y)``."""
    return _solve(j, d, cfg, "zero-one", xhat_alphabet)


def solve(j, d, cfg, loss, xhat_alphabet=None) -> MechanismSolution:
    loss = as_loss(loss).kind
    return _solve(j, d, cfg, loss, xhat_alphabet)


def mi_gradient(j: JointDistribution, m: Mechanism) -> np.ndarray:
    """``dI/dq[x, y, xhat] = P(x, y) log2(P(xhat | y) / P(xhat))`` with P(Y) held fixed."""
    out = push_through(j, m).p  # [xhat, y]
    py = out.sum(axis=0)
    ph = out.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (out / py[None, :]) / ph[:, None]
        logr = np.where((out > 0) & (ph[:, None] > 0), np.log2(ratio), 0.0)
    return j.p[:, :, None] * logr.T[None, :, :]


def map_subgradient(j: JointDistribution, m: Mechanism) -> np.ndarray:
    """Subgradient of the MAP accuracy using lowest-index tie-breaking."""
    out = push_through(j, m).p
    best = np.argmax(out, axis=1)
    g = np.zeros_like(m.q)
    for h, y in enumerate(best):
        g[:, y, h] = j.p[:, y]
    return g


def _grid_size(k: int, n: int) -> int:
    return math.comb(n + k - 1, k - 1)


def _neighbour_variation(j, m: Mechanism, loss: str, grid: float) -> float:
    """Largest objective change from moving one grid unit of mass within one row."""
    base = leakage(j, m, loss)
    q = m.q
    nx, ny, k = q.shape
    worst = 0.0
    for x in range(nx):
        for y in range(ny):
            for a in range(k):
                if q[x, y, a] < grid - 1e-12:
                    continue
                for b in range(k):
                    if a == b:
                        continue
                    qq = np.array(q)
                    qq[x, y, a] -= grid
                    qq[x, y, b] += grid
                    qq = np.clip(qq, 0.0, 1.0)
                    mm = Mechanism(m.x_alphabet, m.y_alphabet, m.xhat_alphabet, qq)
                    worst = max(worst, abs(leakage(j, mm, loss) - base))
    return worst


def brute_force_oracle(
    j: JointDistribution,
    d: DistortionMeasure,
    budget: float,
    grid: float,
    loss,
    xhat_alphabet: Optional[Alphabet] = None,
) -> MechanismSolution:
    """Exhaustive search over channels whose rows lie on the ``grid`` simplex lattice.

    ``resolution_bound`` on the result is the largest leakage change between the
    grid optimum and any single-step lattice neighbour, i.e. a local Lipschitz
    constant times the grid spacing.
    """
    loss = as_loss(loss).kind
    if not grid > 0 or grid > 1:
        raise ValidationError(f"grid spacing must lie in (0, 1], got {grid}")
    n = int(round(1.0 / grid))
    if abs(n * grid - 1.0) > 1e-9:
        raise ValidationError(f"grid spacing {grid} must divide 1")
    xhat_alphabet, C = _problem(j, d, xhat_alphabet)
    nx, ny = j.shape
    k = xhat_alphabet.size
    R = nx * ny
    count = _grid_size(k, n) ** R
    if count > MAX_GRID_EVALUATIONS:
        raise TooLarge(f"grid enumeration needs {count:.3g} evaluations (limit {MAX_GRID_EVALUATIONS:.0e})")
    objective = _kernels.MAP if loss == "zero-one" else _kernels.MI
    Q, f, n_feasible = _kernels.grid_search(j.p, C.reshape(R, k), float(budget), n, objective)
    if Q is None:
        raise Infeasible(f"no grid channel meets budget {budget}")
    cfg = SolverConfig(budget=float(budget))
    sol = _finish(j, d, xhat_alphabet, Q, loss, budget, n_feasible, True, cfg)
    bound = _neighbour_variation(j, sol.mechanism, loss, 1.0 / n)
    return replace(sol, resolution_bound=bound)


def _threads(parallel: Optional[int]) -> int:
    cap = os.environ.get("GAP_FORGE_THREADS")
    n = parallel if parallel is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(int(cap), 1))
    return max(int(n), 1)


def tradeoff_curve(
    j: JointDistribution,
    d: DistortionMeasure,
    budgets: Sequence[float],
    cfg: SolverConfig,
    parallel: Optional[int] = 1,
    xhat_alphabet: Optional[Alphabet] = None,
) -> List[TradeoffPoint]:
    """Optimal MAP and MI leakage at each budget (ascending).

    Points are independent, so they may be solved on several threads (the
    kernels release the GIL); the output does not depend on ``parallel``.
    """
    budgets = [float(b) for b in budgets]
    if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValidationError("budgets must be sorted ascending")

    def point(item):
        index, b = item
        c = replace(cfg, budget=b, seed=(int(cfg.seed) ^ index) & (2**64 - 1))
        s_map = _solve(j, d, c, "zero-one", xhat_alphabet)
        s_mi = _solve(j, d, c, "log", xhat_alphabet)
        return TradeoffPoint(
            budget=b,
            leakage_zero_one=s_map.leakage,
            leakage_log=s_mi.leakage,
            achieved_distortion=max(s_map.achieved_distortion, s_mi.achieved_distortion),
            converged=s_map.converged and s_mi.converged,
        )

    items = list(enumerate(budgets))
    workers = min(_threads(parallel), max(len(items), 1))
    if workers == 1:
        return [point(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(point, items))


def parse_budget_range(text: str) -> List[float]:
    """``START:END:STEP`` -> budgets, inclusive of END when STEP divides the range."""
    try:
        start, end, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise ValidationError(f"budget range must look like START:END:STEP, got {text!r}") from None
    if not step > 0:
        raise ValidationError("STEP must be > 0")
    if start > end:
        raise ValidationError("START must not exceed END")
    if start < 0:
        raise ValidationError("budgets must be >= 0")
    count = (end - start) / step
    n = math.floor(count + 1e-12)
    out = [start + i * step for i in range(n + 1)]
    if abs(count - round(count)) * step <= 1e-12 and out:
        out[-1] = end
    # decimal steps like 0.05 accumulate binary error; round to the step's precision
    return [round(b, 12) for b in out]
