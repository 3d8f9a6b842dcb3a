"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N wall time for each backend
and the speedup.  Both backends are run on identical inputs and their
objective values are checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from gap_forge import _kernels
from gap_forge.neural import make_rng
from gap_forge.probability import Alphabet, DistortionMeasure, JointDistribution
from gap_forge.solver import distortion_coefficients


def problem(nx, ny, seed=0):
    rng = make_rng(seed)
    p = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    j = JointDistribution(Alphabet.of_size(nx), Alphabet.of_size(ny), p)
    C = distortion_coefficients(j, DistortionMeasure("hamming"), j.x_alphabet)
    return j.p, C.reshape(nx * ny, nx), rng


def cases():
    P, C, rng = problem(6, 4)
    V = rng.standard_normal(C.shape)
    Q0 = np.full(C.shape, 1.0 / C.shape[1])
    yield "project_feasible 24x6", lambda m: m.project_feasible(V, C, 0.3)
    for name, obj in (("mi", _kernels.MI), ("map", _kernels.MAP_SMOOTH)):
        yield f"pgd_solve {name} 6x4", lambda m, obj=obj: m.pgd_solve(P, C, 0.3, obj, 0.5, 2000, 1e-10, 50, Q0)[1]
    Pb, Cb, _ = problem(2, 2, seed=1)
    yield "grid_search 2x2 h=0.05", lambda m: m.grid_search(Pb, Cb, 0.25, 20, _kernels.MI)[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = _kernels.implementations()
    if "cython" not in impls:
        print("compiled backend not built; only the fallback is available")
    names = list(impls)
    print(f"{'kernel':28s}" + "".join(f"{n:>12s}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, fn in cases():
        outs = [np.asarray(fn(impls[n])) for n in names]
        for o in outs[1:]:
            np.testing.assert_allclose(o, outs[0], atol=1e-6)
        times = [min(timeit.repeat(lambda: fn(impls[n]), number=1, repeat=args.repeat)) for n in names]
        row = f"{label:28s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
