"""Compare the compiled and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Prints one
line per kernel and problem size with the best time per call for each
backend and the speedup, then the same for a full projected Landweber step
on the default grid.
"""

import argparse
import timeit
from dataclasses import replace

import numpy as np

from aaoinv import kernels
from aaoinv.diagnostics import Grid1D, ManufacturedSpec, manufactured_problem
from aaoinv.landweber import landweber_step


def _cases(rng, rows, n):
    lo = rng.uniform(-1, 0, size=(rows, n))
    up = rng.uniform(-1, 0, size=(rows, n))
    di = 4.0 + rng.uniform(0, 1, size=(rows, n))
    v = rng.standard_normal((rows, n))
    return {
        "thomas_solve": lambda: kernels.thomas_solve(lo, di, up, v),
        "tridiag_matvec": lambda: kernels.tridiag_matvec(lo, di, up, v),
        "dirichlet_laplacian": lambda: kernels.dirichlet_laplacian(v, 1.0 / (n + 1)),
    }


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'size':>12}" + "".join(f"{b + ' [us]':>16}" for b in backends)
          + f"{'speedup':>10}")
    for rows, n in [(1, 63), (65, 63), (64, 255), (512, 255)]:
        cases = _cases(rng, rows, n)
        for name, fn in cases.items():
            times = {}
            for b in backends:
                kernels.set_backend(b)
                times[b] = best(fn, args.repeat, 200)
            sp = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{name:<22}{f'{rows}x{n}':>12}"
                  + "".join(f"{times[b] * 1e6:16.1f}" for b in backends) + f"{sp:10.2f}")

    problem, truth = manufactured_problem(ManufacturedSpec(), Grid1D(63, 64))
    problem = replace(problem, mode="linear_head")
    x = truth.point
    times = {}
    for b in backends:
        kernels.set_backend(b)
        times[b] = best(lambda: landweber_step(x, problem), args.repeat, 20)
    sp = times["python"] / times["compiled"] if "compiled" in times else float("nan")
    print(f"{'landweber_step':<22}{'63x64':>12}"
          + "".join(f"{times[b] * 1e6:16.1f}" for b in backends) + f"{sp:10.2f}")


if __name__ == "__main__":
    main()
