"""Synthetic data, empirical estimates and text file formats.

Every file written here starts with ``# gap-forge v<version> seed=<seed>``; JSON
files carry the same line under ``meta.comment``.  Writes are atomic: data goes
to a temporary file in the target directory which is then renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .adversary import AdversaryStrategy
from .errors import FileFormatError, GapForgeError, UnknownSymbol, ValidationError
from .neural import Network, make_rng
from .probability import Alphabet, JointDistribution, Mechanism
from .solver import MechanismSolution, SolverConfig, TradeoffPoint
from .trainer import Dataset, PrivatizerArch, TrainedGAP, TrainingConfig

SIG = 12


def header_line(seed: int = 0) -> str:
    return f"# gap-forge v{__version__} seed={int(seed)}"


def fmt(v: float) -> str:
    """Decimal text with 12 significant digits (``-0`` written as ``0``)."""
    s = format(float(v), f".{SIG}g")
    return "0" if s == "-0" else s


def _round(v: float) -> float:
    return float(fmt(v))


def _meta(seed: int, **extra) -> dict:
    return {"comment": header_line(seed), "producer": f"gap-forge v{__version__}", "seed": int(seed), **extra}


def atomic_write(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _read_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return fh.read()
    except FileNotFoundError:
        raise FileFormatError(path, "file not found") from None
    except UnicodeDecodeError as e:
        raise FileFormatError(path, "file is not valid UTF-8", offset=e.start) from None
    except OSError as e:
        raise FileFormatError(path, e.strerror or str(e)) from None


def _located(err: GapForgeError, path, where: str):
    """Re-raise a validation error with the file location prefixed."""
    cls = type(err)
    try:
        new = cls(f"{path}:{where}: {err}")
    except TypeError:
        new = ValidationError(f"{path}:{where}: {err}")
    return new


def _csv_rows(path, text: str):
    """Yield ``(line_number, fields)`` for non-comment, non-blank lines."""
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        yield lineno, [f.strip() for f in fields]


def _header_comments(text: str) -> List[str]:
    out = []
    for line in text.split("\n"):
        if line.startswith("#"):
            out.append(line)
        elif line.strip():
            break
    return out


def _seed_from_comments(comments: Sequence[str]) -> int:
    for c in comments:
        for tok in c.split():
            if tok.startswith("seed="):
                try:
                    return int(tok[5:])
                except ValueError:
                    pass
    return 0


def _csv_text(rows: Iterable[Sequence[str]], comments: Sequence[str]) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(c + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _float(path, lineno, token, what):
    try:
        v = float(token)
    except ValueError:
        raise FileFormatError(path, f"cannot parse {what} {token!r} as a number", line=lineno) from None
    if not math.isfinite(v):
        raise FileFormatError(path, f"{what} {token!r} is not finite", line=lineno)
    return v


# ---------------------------------------------------------------- datasets


def sample_dataset(j: JointDistribution, n: int, seed: int = 0) -> Dataset:
    """``n`` i.i.d. rows drawn by inverse CDF over the flattened joint."""
    if int(n) < 1:
        raise ValidationError("n must be >= 1")
    flat = j.p.ravel()
    cdf = np.cumsum(flat)
    cdf[-1] = 1.0
    u = make_rng(seed).random(int(n))
    cells = np.searchsorted(cdf, u, side="right")
    # zero-mass cells share a cdf value with their predecessor and are never hit
    cells = np.minimum(cells, flat.size - 1)
    ny = j.y_alphabet.size
    return Dataset(cells // ny, cells % ny, j.x_alphabet, j.y_alphabet)


def empirical_joint(data: Dataset, x_alphabet: Optional[Alphabet] = None, y_alphabet: Optional[Alphabet] = None) -> JointDistribution:
    """Cell frequencies of a categorical dataset."""
    if not data.discrete:
        raise ValidationError("empirical_joint needs categorical x")
    xa = x_alphabet or data.x_alphabet
    ya = y_alphabet or data.y_alphabet
    x = _reindex(data.x, data.x_alphabet, xa)
    y = _reindex(data.y, data.y_alphabet, ya)
    counts = np.zeros((xa.size, ya.size))
    np.add.at(counts, (x, y), 1.0)
    return JointDistribution(xa, ya, counts / data.n)


def _reindex(idx, src: Alphabet, dst: Alphabet):
    if src == dst:
        return idx
    table = np.array([dst.index(s) if s in dst.symbols else -1 for s in src.symbols])
    out = table[idx]
    if np.any(out < 0):
        missing = src.symbols[int(idx[np.argmax(out < 0)])]
        raise UnknownSymbol(f"symbol {missing!r} not in alphabet {dst.symbols}")
    return out


def save_dataset(data: Dataset, path, seed: int = 0) -> None:
    comments = [header_line(seed)]
    if data.discrete:
        xs = [data.x_alphabet.symbols[i] for i in data.x]
        comments.append("# x=categorical")
    else:
        xs = [";".join(repr(float(v)) for v in row) for row in data.x]
        comments.append("# x=real")
    ys = [data.y_alphabet.symbols[i] for i in data.y]
    atomic_write(path, _csv_text([("x", "y"), *zip(xs, ys)], comments))


def _natural(symbols):
    try:
        return sorted(symbols, key=lambda s: (float(s), s))
    except ValueError:
        return sorted(symbols)


def load_dataset(path, x_alphabet: Optional[Alphabet] = None, y_alphabet: Optional[Alphabet] = None) -> Dataset:
    """Read a dataset CSV.  Without explicit alphabets, symbols are sorted
    numerically when they all parse as numbers, else lexicographically."""
    text = _read_text(path)
    real = any(c.strip() == "# x=real" for c in _header_comments(text))
    rows = list(_csv_rows(path, text))
    if not rows or [f.lower() for f in rows[0][1]] != ["x", "y"]:
        raise FileFormatError(path, "expected header 'x,y'", line=rows[0][0] if rows else 1)
    body = rows[1:]
    if not body:
        raise FileFormatError(path, "dataset has no rows", line=rows[0][0])
    for lineno, f in body:
        if len(f) != 2:
            raise FileFormatError(path, f"expected 2 fields, got {len(f)}", line=lineno)
    ys = [f[1] for _, f in body]
    ya = y_alphabet or Alphabet(tuple(_natural(set(ys))))
    y_idx = []
    for (lineno, f) in body:
        try:
            y_idx.append(ya.index(f[1]))
        except UnknownSymbol as e:
            raise _located(e, path, lineno) from None
    if real:
        xv = []
        width = None
        for lineno, f in body:
            vec = [_float(path, lineno, t, "x component") for t in f[0].split(";")]
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise FileFormatError(path, f"x has {len(vec)} components, expected {width}", line=lineno)
            xv.append(vec)
        return Dataset(np.array(xv, dtype=np.float64), np.array(y_idx), None, ya)
    xa = x_alphabet or Alphabet(tuple(_natural({f[0] for _, f in body})))
    x_idx = []
    for (lineno, f) in body:
        try:
            x_idx.append(xa.index(f[0]))
        except UnknownSymbol as e:
            raise _located(e, path, lineno) from None
    return Dataset(np.array(x_idx, dtype=np.int64), np.array(y_idx), xa, ya)


# ---------------------------------------------------------------- joints


def joint_text(j: JointDistribution, seed: int = 0) -> str:
    rows = [("x", "y", "p")]
    for a, xs in enumerate(j.x_alphabet.symbols):
        for b, ys in enumerate(j.y_alphabet.symbols):
            rows.append((xs, ys, fmt(j.p[a, b])))
    return _csv_text(rows, [header_line(seed)])


def save_joint(j: JointDistribution, path, seed: int = 0) -> None:
    atomic_write(path, joint_text(j, seed))


def load_joint(path) -> JointDistribution:
    """Read a joint CSV.  Alphabets follow first appearance; every cell must
    appear exactly once."""
    text = _read_text(path)
    rows = list(_csv_rows(path, text))
    if not rows or [f.lower() for f in rows[0][1]] != ["x", "y", "p"]:
        raise FileFormatError(path, "expected header 'x,y,p'", line=rows[0][0] if rows else 1)
    xs, ys, cells = [], [], {}
    last = rows[0][0]
    for lineno, f in rows[1:]:
        if len(f) != 3:
            raise FileFormatError(path, f"expected 3 fields, got {len(f)}", line=lineno)
        x, y, token = f
        p = _float(path, lineno, token, "probability")
        if (x, y) in cells:
            raise FileFormatError(path, f"duplicate cell ({x}, {y})", line=lineno)
        if x not in xs:
            xs.append(x)
        if y not in ys:
            ys.append(y)
        cells[(x, y)] = (p, lineno)
        last = lineno
    if not cells:
        raise FileFormatError(path, "no probability rows", line=last)
    table = np.zeros((len(xs), len(ys)))
    for a, x in enumerate(xs):
        for b, y in enumerate(ys):
            if (x, y) not in cells:
                raise FileFormatError(path, f"missing cell ({x}, {y})", line=last)
            p, lineno = cells[(x, y)]
            if p < -1e-12:
                from .errors import NegativeMass

                raise NegativeMass(f"{path}:{lineno}: negative probability {p} for cell ({x}, {y})")
            table[a, b] = p
    try:
        return JointDistribution(Alphabet(tuple(xs)), Alphabet(tuple(ys)), table)
    except ValidationError as e:
        raise _located(e, path, last) from None


# ---------------------------------------------------------------- mechanisms


def mechanism_dict(m: Mechanism, seed: int = 0, **meta) -> dict:
    return {
        "meta": _meta(seed, **meta),
        "x_alphabet": list(m.x_alphabet.symbols),
        "y_alphabet": list(m.y_alphabet.symbols),
        "xhat_alphabet": list(m.xhat_alphabet.symbols),
        "q": [[[_round(v) for v in row] for row in plane] for plane in m.q],
    }


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def save_mechanism(m: Mechanism, path, seed: int = 0) -> None:
    atomic_write(path, _json_text(mechanism_dict(m, seed)))


def _load_json(path) -> dict:
    text = _read_text(path)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FileFormatError(path, e.msg, line=e.lineno, offset=e.pos) from None
    if not isinstance(obj, dict):
        raise FileFormatError(path, "top-level JSON value must be an object", line=1)
    return obj


def _require(path, obj, key, kind=None):
    if key not in obj:
        raise FileFormatError(path, f"missing key {key!r}")
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise FileFormatError(path, f"key {key!r} has the wrong type")
    return v


def mechanism_from_dict(obj: dict, path="<memory>") -> Mechanism:
    try:
        xa = Alphabet(tuple(_require(path, obj, "x_alphabet", list)))
        ya = Alphabet(tuple(_require(path, obj, "y_alphabet", list)))
        ha = Alphabet(tuple(_require(path, obj, "xhat_alphabet", list)))
    except ValidationError as e:
        if isinstance(e, FileFormatError):
            raise
        raise _located(e, path, "alphabets") from None
    q = _require(path, obj, "q", list)
    try:
        arr = np.array(q, dtype=np.float64)
    except (TypeError, ValueError):
        raise FileFormatError(path, "q must be a rectangular [x][y][xhat] numeric array") from None
    if arr.shape != (xa.size, ya.size, ha.size):
        raise FileFormatError(path, f"q has shape {arr.shape}, expected {(xa.size, ya.size, ha.size)}")
    try:
        return Mechanism(xa, ya, ha, arr)
    except ValidationError as e:
        raise _located(e, path, "q") from None


def load_mechanism(path) -> Mechanism:
    return mechanism_from_dict(_load_json(path), path)


def save_solution(sol: MechanismSolution, path) -> None:
    obj = mechanism_dict(
        sol.mechanism,
        sol.seed,
        loss=sol.loss,
        budget=_round(sol.budget),
        leakage=_round(sol.leakage),
        distortion=_round(sol.achieved_distortion),
        iterations=int(sol.iterations),
        converged=bool(sol.converged),
    )
    if sol.resolution_bound is not None:
        obj["meta"]["resolution_bound"] = _round(sol.resolution_bound)
    atomic_write(path, _json_text(obj))


def load_solution(path) -> MechanismSolution:
    obj = _load_json(path)
    m = mechanism_from_dict(obj, path)
    meta = _require(path, obj, "meta", dict)
    try:
        return MechanismSolution(
            m,
            float(meta["leakage"]),
            float(meta["distortion"]),
            int(meta["iterations"]),
            bool(meta["converged"]),
            str(meta.get("loss", "log")),
            float(meta.get("budget", 0.0)),
            int(meta.get("seed", 0)),
            meta.get("resolution_bound"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(path, f"bad solution meta: {e}") from None


# ---------------------------------------------------------------- strategies


def save_strategy(s: AdversaryStrategy, path, y_alphabet: Alphabet, seed: int = 0) -> None:
    if s.kind == "hard":
        rule = [y_alphabet.symbols[int(i)] for i in s.hard_rule]
    else:
        rule = [[_round(v) for v in row] for row in s.soft_rule]
    obj = {"meta": _meta(seed), "kind": s.kind, "y_alphabet": list(y_alphabet.symbols), "rule": rule}
    atomic_write(path, _json_text(obj))


def load_strategy(path):
    """Returns ``(strategy, y_alphabet)``."""
    obj = _load_json(path)
    kind = _require(path, obj, "kind", str)
    rule = _require(path, obj, "rule", list)
    ya = Alphabet(tuple(_require(path, obj, "y_alphabet", list)))
    try:
        if kind == "hard":
            return AdversaryStrategy("hard", hard_rule=[ya.index(s) for s in rule]), ya
        return AdversaryStrategy(kind, soft_rule=rule), ya
    except ValidationError as e:
        raise _located(e, path, "rule") from None


# ---------------------------------------------------------------- networks and models


def save_network(net: Network, path) -> None:
    """Weights are written with full float precision so reloaded networks
    reproduce outputs bit for bit."""
    d = net.to_dict()
    d.setdefault("seed", int(net.meta.get("seed", 0)))
    d.setdefault("arch", {})
    d["meta"] = _meta(d["seed"])
    atomic_write(path, _json_text(d))


def network_from_dict(d: dict, path="<memory>") -> Network:
    d = {k: v for k, v in d.items() if k != "meta"}
    try:
        return Network.from_dict(d)
    except (KeyError, TypeError) as e:
        raise FileFormatError(path, f"malformed network: {e}") from None
    except ValidationError as e:
        raise _located(e, path, "layers") from None


def load_network(path) -> Network:
    return network_from_dict(_load_json(path), path)


def model_dict(model: TrainedGAP) -> dict:
    cfg = model.config
    return {
        "meta": _meta(cfg.seed, accuracy=model.accuracy, distortion=model.distortion),
        "arch": {"pattern": model.arch.pattern, "hidden_widths": list(model.arch.hidden_widths), "noise_dim": model.arch.noise_dim},
        "config": cfg.to_dict(),
        "privatizer": model.privatizer.to_dict(),
        "final_adversary": model.final_adversary.to_dict(),
        "history": [list(h) for h in model.history],
    }


def save_model(model: TrainedGAP, path) -> None:
    atomic_write(path, _json_text(model_dict(model)))


def load_model(path) -> TrainedGAP:
    obj = _load_json(path)
    try:
        arch = PrivatizerArch(**_require(path, obj, "arch", dict))
        cfg = TrainingConfig.from_dict(_require(path, obj, "config", dict))
    except (TypeError, ValidationError) as e:
        raise FileFormatError(path, f"bad model header: {e}") from None
    priv = network_from_dict(_require(path, obj, "privatizer", dict), path)
    adv = network_from_dict(_require(path, obj, "final_adversary", dict), path)
    history = [tuple(float(v) for v in h) for h in obj.get("history", [])]
    meta = obj.get("meta", {})
    return TrainedGAP(priv, adv, history, cfg, arch, meta.get("accuracy"), meta.get("distortion"))


def save_history(history, path, seed: int = 0) -> None:
    rows = [("round", "adv_loss_bits", "distortion", "penalty")]
    rows += [(str(i), fmt(a), fmt(d), fmt(r)) for i, (a, d, r) in enumerate(history)]
    atomic_write(path, _csv_text(rows, [header_line(seed)]))


def load_history(path):
    rows = list(_csv_rows(path, _read_text(path)))
    if not rows or rows[0][1] != ["round", "adv_loss_bits", "distortion", "penalty"]:
        raise FileFormatError(path, "expected header 'round,adv_loss_bits,distortion,penalty'", line=rows[0][0] if rows else 1)
    out = []
    for lineno, f in rows[1:]:
        if len(f) != 4:
            raise FileFormatError(path, f"expected 4 fields, got {len(f)}", line=lineno)
        out.append(tuple(_float(path, lineno, t, name) for t, name in zip(f[1:], ("loss", "distortion", "penalty"))))
    return out


# ---------------------------------------------------------------- configs


def save_config(cfg, path) -> None:
    obj = {"meta": _meta(cfg.seed)}
    if isinstance(cfg, TrainingConfig):
        obj.update(cfg.to_dict())
    else:
        obj.update({f: getattr(cfg, f) for f in cfg.__dataclass_fields__})
    atomic_write(path, _json_text(obj))


def load_config(path, kind: str = "training"):
    """Read a ``TrainingConfig`` (``kind="training"``) or ``SolverConfig``;
    absent keys take their defaults."""
    obj = _load_json(path)
    obj.pop("meta", None)
    cls = TrainingConfig if kind == "training" else SolverConfig
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(obj) - known)
    if unknown:
        raise FileFormatError(path, f"unknown config keys: {', '.join(unknown)}")
    try:
        return cls(**obj) if kind != "training" else TrainingConfig.from_dict(obj)
    except TypeError as e:
        raise FileFormatError(path, f"bad config value: {e}") from None
    except ValidationError as e:
        raise _located(e, path, "config") from None


# ---------------------------------------------------------------- curves


CURVE_HEADER = ("budget", "leakage_zero_one", "leakage_log_bits", "achieved_distortion", "converged")


def curve_text(points: Sequence[TradeoffPoint], seed: int = 0) -> str:
    rows = [CURVE_HEADER]
    for p in points:
        rows.append((fmt(p.budget), fmt(p.leakage_zero_one), fmt(p.leakage_log), fmt(p.achieved_distortion), "true" if p.converged else "false"))
    return _csv_text(rows, [header_line(seed)])


def save_curve(points: Sequence[TradeoffPoint], path, seed: int = 0) -> None:
    atomic_write(path, curve_text(points, seed))


def load_curve(path) -> List[TradeoffPoint]:
    rows = list(_csv_rows(path, _read_text(path)))
    if not rows or tuple(rows[0][1]) != CURVE_HEADER:
        raise FileFormatError(path, "expected header " + ",".join(CURVE_HEADER), line=rows[0][0] if rows else 1)
    out = []
    for lineno, f in rows[1:]:
        if len(f) != 5:
            raise FileFormatError(path, f"expected 5 fields, got {len(f)}", line=lineno)
        nums = [_float(path, lineno, t, n) for t, n in zip(f[:4], CURVE_HEADER)]
        if f[4] not in ("true", "false"):
            raise FileFormatError(path, f"converged must be true/false, got {f[4]!r}", line=lineno)
        out.append(TradeoffPoint(*nums, converged=f[4] == "true"))
    return out


# ---------------------------------------------------------------- distortion tables


def load_distortion_table(path, x_alphabet: Alphabet, xhat_alphabet: Optional[Alphabet] = None):
    """Read a custom distortion CSV (header ``xhat,x,d``) into ``d[xhat, x]``."""
    from .probability import DistortionMeasure

    xhat_alphabet = xhat_alphabet or x_alphabet
    rows = list(_csv_rows(path, _read_text(path)))
    if not rows or [f.lower() for f in rows[0][1]] != ["xhat", "x", "d"]:
        raise FileFormatError(path, "expected header 'xhat,x,d'", line=rows[0][0] if rows else 1)
    table = np.full((xhat_alphabet.size, x_alphabet.size), np.nan)
    for lineno, f in rows[1:]:
        if len(f) != 3:
            raise FileFormatError(path, f"expected 3 fields, got {len(f)}", line=lineno)
        try:
            h, x = xhat_alphabet.index(f[0]), x_alphabet.index(f[1])
        except UnknownSymbol as e:
            raise _located(e, path, lineno) from None
        v = _float(path, lineno, f[2], "distortion")
        if v < 0:
            raise FileFormatError(path, f"distortion {v} is negative", line=lineno)
        table[h, x] = v
    if np.isnan(table).any():
        h, x = (int(i) for i in np.argwhere(np.isnan(table))[0])
        raise FileFormatError(path, f"missing entry for xhat={xhat_alphabet.symbols[h]!r}, x={x_alphabet.symbols[x]!r}")
    return DistortionMeasure("custom", table=table)
