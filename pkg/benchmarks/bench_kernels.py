"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--repeat 3]

Kernel timings run in-process through ``kernels.get``; the end-to-end solve
runs once per backend in a subprocess because the backend is picked at import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mvhedge import kernels

SOLVE = """
import json, time
from mvhedge import hedgedp, kernels, market
from mvhedge.hedgedp import HedgeConstraints
p = market.MarketParams()
scen = market.simulate(p, market.TradingSchedule.uniform({dates}, p.maturity), {paths}, 1)
t0 = time.perf_counter()
_, rep = hedgedp.backward_cashflow(scen, p, HedgeConstraints(m_bar=1200, l_bar=1200))
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t0, "variance": rep.variance}}))
"""


def kernel_inputs(m, ncol, width, rng):
    ncell = 64
    cells = rng.integers(0, ncell, m).astype(np.intp)
    fc, dc = rng.normal(size=m), rng.normal(size=m)
    coef = rng.normal(size=(ncell, ncol, 3))
    prev = np.arange(ncol, dtype=np.intp)
    lo = np.maximum(prev - width, 0).astype(np.intp)
    hi = (np.minimum(prev + width, ncol - 1) + 1).astype(np.intp)
    p = rng.normal(size=(m, ncol))
    choice = rng.integers(0, ncol, (m, ncol)).astype(np.int32)
    s = rng.uniform(20000, 30000, m)
    return dict(cells=cells, fc=fc, dc=dc, coef=coef, lo=lo, hi=hi, center=prev, p=p, choice=choice, s=s,
                pos=np.arange(ncol) * 10.0, k=rng.integers(0, ncol, m).astype(np.intp))


def bench(backend, a, repeat, threads):
    g = lambda name: kernels.get(name, backend)
    m, ncol = a["p"].shape
    out_f = np.empty((m, ncol))
    out_i = np.empty((m, ncol), np.int32)
    row_i = np.empty(m, np.intp)
    lo_r, hi_r, c_r = a["lo"][a["k"]], a["hi"][a["k"]], a["center"][a["k"]]
    cases = {
        "cell_sums": lambda: g("cell_sums")(a["cells"], a["fc"], a["dc"], a["p"], 64),
        "predict_grid": lambda: g("predict_grid")(a["cells"], a["fc"], a["dc"], a["coef"], out_f, threads),
        "window_argmin": lambda: g("window_argmin")(a["p"], a["lo"], a["hi"], a["center"], out_i, threads),
        "rowwise_window_argmin": lambda: g("rowwise_window_argmin")(a["p"], lo_r, hi_r, c_r, row_i, threads),
        "gather_shift": lambda: g("gather_shift")(a["p"], a["choice"], a["pos"], a["pos"], a["s"], 0.01, out_f, threads),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def solve(backend, paths, dates):
    env = dict(os.environ, MVHEDGE_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", SOLVE.format(paths=paths, dates=dates)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--columns", type=int, default=121)
    ap.add_argument("--width", type=int, default=12, help="half-width of each move window, in grid steps")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=kernels.default_threads())
    ap.add_argument("--dates", type=int, default=4)
    args = ap.parse_args()

    try:
        kernels.get("cell_sums", "cython")
        backends = ["cython", "python"]
    except ImportError:
        print("compiled extension not built; timing the NumPy backend only")
        backends = ["python"]

    a = kernel_inputs(args.paths, args.columns, args.width, np.random.default_rng(0))
    times = {b: bench(b, a, args.repeat, args.threads) for b in backends}
    print(f"kernels: {args.paths} rows x {args.columns} columns, window +-{args.width}, {args.threads} thread(s)")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name in times[backends[0]]:
        row = f"{name:<24}" + "".join(f"{times[b][name] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'][name] / times['cython'][name]:>11.1f}x"
        print(row)

    print(f"\nfull solve: cashflow, {args.paths} paths, {args.dates} dates, move limit 1200 MW")
    runs = {b: solve(b, args.paths, args.dates) for b in backends}
    for b, r in runs.items():
        print(f"{b:<10} {r['seconds']:8.2f}s  variance {r['variance']:.6e}")
    if len(backends) == 2:
        print(f"speedup {runs['python']['seconds'] / runs['cython']['seconds']:.1f}x, "
              f"same variance: {runs['python']['variance'] == runs['cython']['variance']}")


if __name__ == "__main__":
    main()
