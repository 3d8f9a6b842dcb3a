"""``gap-forge`` command line.

Every command prints one line of ``key=value`` pairs and exits with
0 (success), 1 (usage error), 2 (bad input), 3 (non-convergence) or
4 (internal check failure).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__, gradcheck
from .data_io import (
    fmt,
    load_config,
    load_dataset,
    load_distortion_table,
    load_joint,
    load_model,
    save_curve,
    save_history,
    save_model,
    save_solution,
)
from .errors import (
    DimensionMismatch,
    FileFormatError,
    GapForgeError,
    Infeasible,
    NonFiniteLoss,
    TooLarge,
    ValidationError,
)
from .probability import Alphabet, DistortionMeasure
from .solver import SolverConfig, brute_force_oracle, parse_budget_range, solve, tradeoff_curve

OK, USAGE, INPUT, NOT_CONVERGED, CHECK_FAILED = 0, 1, 2, 3, 4

log = logging.getLogger("gap_forge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE)


def _summary(**pairs) -> str:
    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return fmt(v)
        return str(v)

    return " ".join(f"{k}={val(v)}" for k, v in pairs.items())


def _budget(text: str) -> float:
    try:
        b = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"budget must be a number, got {text!r}") from None
    if not (math.isfinite(b) and b >= 0):
        raise argparse.ArgumentTypeError(f"budget must be a finite number >= 0, got {text!r}")
    return b


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _distortion(name: str, x_alphabet: Alphabet) -> DistortionMeasure:
    if name == "hamming":
        return DistortionMeasure("hamming")
    if name in ("squared", "squared-error"):
        try:
            emb = {s: float(s) for s in x_alphabet.symbols}
        except ValueError:
            raise ValidationError("squared distortion needs numeric X symbols to embed") from None
        return DistortionMeasure("squared-error", embedding=emb)
    if name.startswith("custom:"):
        return load_distortion_table(name[len("custom:"):], x_alphabet)
    raise UsageError(f"--distortion must be hamming, squared or custom:PATH, got {name!r}")


def _solver_config(path: Optional[str]) -> SolverConfig:
    return load_config(path, kind="solver") if path else SolverConfig()


def cmd_solve(args) -> int:
    j = load_joint(args.joint)
    d = _distortion(args.distortion, j.x_alphabet)
    cfg = _solver_config(args.config).with_budget(args.budget)
    sol = solve(j, d, cfg, args.loss)
    save_solution(sol, args.out)
    print(_summary(leakage=sol.leakage, distortion=sol.achieved_distortion, converged=sol.converged))
    return OK if sol.converged else NOT_CONVERGED


def cmd_curve(args) -> int:
    try:
        budgets = parse_budget_range(args.budgets)
    except ValidationError as e:
        raise UsageError(str(e)) from None
    j = load_joint(args.joint)
    d = _distortion(args.distortion, j.x_alphabet)
    cfg = _solver_config(args.config)
    points = tradeoff_curve(j, d, budgets, cfg, parallel=args.parallel)
    save_curve(points, args.out, seed=cfg.seed)
    ok = all(p.converged for p in points)
    print(_summary(points=len(points), converged=ok))
    return OK if ok else NOT_CONVERGED


def cmd_oracle(args) -> int:
    j = load_joint(args.joint)
    d = _distortion(args.distortion, j.x_alphabet)
    oracle = brute_force_oracle(j, d, args.budget, args.grid, args.loss)
    sol = solve(j, d, _solver_config(args.config).with_budget(args.budget), args.loss)
    gap = abs(sol.leakage - oracle.leakage)
    within = gap <= oracle.resolution_bound + 1e-3
    print(_summary(oracle_leakage=oracle.leakage, solver_leakage=sol.leakage, gap=gap, bound=oracle.resolution_bound, within_bound=within))
    if not sol.converged:
        return NOT_CONVERGED
    return OK if within else CHECK_FAILED


def _alphabet(symbols) -> Optional[Alphabet]:
    return Alphabet(tuple(symbols)) if symbols is not None else None


def cmd_train(args) -> int:
    from .trainer import PrivatizerArch, train

    cfg = replace(load_config(args.config, kind="training"), budget=args.budget)
    data = load_dataset(args.data, _alphabet(cfg.x_alphabet), _alphabet(cfg.y_alphabet))
    arch = PrivatizerArch(
        args.arch,
        tuple(args.hidden) if args.hidden else (),
        args.noise_dim,
    )
    model = train(data, arch, cfg)
    save_model(model, args.out)
    save_history(model.history, _history_path(args.out), seed=cfg.seed)
    print(_summary(accuracy=model.accuracy, distortion=model.distortion, rounds=len(model.history)))
    return OK


def _history_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".history.csv")


def cmd_eval(args) -> int:
    from .trainer import achieved_distortion, evaluate_fresh_adversary

    model = load_model(args.model)
    cfg = model.config
    data = load_dataset(args.data, _alphabet(cfg.x_alphabet), _alphabet(cfg.y_alphabet))
    meta = model.privatizer.meta
    if data.x_dim != meta.get("x_dim") or data.y_dim != meta.get("y_dim") or data.discrete != meta.get("discrete"):
        raise DimensionMismatch(
            f"model expects x_dim={meta.get('x_dim')} y_dim={meta.get('y_dim')}, data has x_dim={data.x_dim} y_dim={data.y_dim}"
        )
    acc = evaluate_fresh_adversary(model.privatizer, data, cfg)
    dist = achieved_distortion(model.privatizer, data, cfg)
    print(_summary(accuracy=acc, distortion=dist))
    return OK


def cmd_gradcheck(args) -> int:
    report = gradcheck.run(args.seed, args.points, corrupt=args.corrupt)
    print(_summary(
        neural_max_rel_error=report.neural_max_error,
        mi_max_rel_error=report.mi_max_error,
        points=report.neural_points,
        passed=report.passed,
    ))
    return OK if report.passed else CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gap-forge", description="Generative adversarial privacy: exact solvers and data-driven training.")
    p.add_argument("--version", action="version", version=f"gap-forge {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    losses = ("zero-one", "log")
    s = sub.add_parser("solve", help="solve for the optimal mechanism at one budget")
    s.add_argument("--joint", required=True, help="joint distribution CSV (x,y,p)")
    s.add_argument("--loss", required=True, choices=losses, help="adversary loss")
    s.add_argument("--distortion", default="hamming", help="hamming, squared or custom:PATH (CSV xhat,x,d)")
    s.add_argument("--budget", required=True, type=_budget, help="distortion budget D >= 0")
    s.add_argument("--config", help="solver config JSON")
    s.add_argument("--out", required=True, help="output mechanism solution JSON")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("curve", help="sweep the privacy-distortion tradeoff")
    c.add_argument("--joint", required=True, help="joint distribution CSV")
    c.add_argument("--budgets", required=True, help="START:END:STEP, inclusive of END")
    c.add_argument("--distortion", default="hamming", help="hamming, squared or custom:PATH")
    c.add_argument("--config", help="solver config JSON")
    c.add_argument("--out", required=True, help="output curve CSV")
    c.add_argument("--parallel", type=int, default=1, help="worker threads (capped by GAP_FORGE_THREADS)")
    c.set_defaults(func=cmd_curve)

    o = sub.add_parser("oracle", help="compare the solver with a brute-force grid search")
    o.add_argument("--joint", required=True, help="joint distribution CSV")
    o.add_argument("--budget", required=True, type=_budget, help="distortion budget D >= 0")
    o.add_argument("--grid", required=True, type=_positive_float, help="grid spacing dividing 1, e.g. 0.05")
    o.add_argument("--loss", required=True, choices=losses, help="adversary loss")
    o.add_argument("--distortion", default="hamming", help="hamming, squared or custom:PATH")
    o.add_argument("--config", help="solver config JSON")
    o.set_defaults(func=cmd_oracle)

    t = sub.add_parser("train", help="train a privatizer against an adversary on data")
    t.add_argument("--data", required=True, help="dataset CSV (x,y)")
    t.add_argument("--arch", required=True, choices=("combine", "additive"), help="privatizer pattern")
    t.add_argument("--budget", required=True, type=_budget, help="distortion budget D >= 0")
    t.add_argument("--config", required=True, help="training config JSON (holds the seed)")
    t.add_argument("--out", required=True, help="output model JSON; history goes to <stem>.history.csv")
    t.add_argument("--hidden", type=int, nargs="+", help="privatizer hidden widths")
    t.add_argument("--noise-dim", type=int, default=4, help="privatizer noise dimension")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="measure a trained privatizer with a fresh adversary")
    e.add_argument("--model", required=True, help="model JSON written by train")
    e.add_argument("--data", required=True, help="dataset CSV (x,y)")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--points", type=int, default=100, help="random points per suite")
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gap-forge: error: {e}", file=sys.stderr)
        return USAGE
    except NonFiniteLoss as e:
        print(f"gap-forge: error: {e}", file=sys.stderr)
        return NOT_CONVERGED
    except (ValidationError, FileFormatError, TooLarge, Infeasible, GapForgeError, OSError) as e:
        print(f"gap-forge: error: {e}", file=sys.stderr)
        return INPUT


if __name__ == "__main__":
    sys.exit(main())
