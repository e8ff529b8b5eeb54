"""End-to-end acceptance checks at the stated tolerances.

Each test records one ``criterion N: PASS|FAIL ...`` line, printed in the
pytest terminal summary. Set ``MVHEDGE_QUICK=1`` to skip the full-scale
400000-path check.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from mvhedge import analytic, evalsim, hedgedp, market, treedp
from mvhedge.analytic import AnalyticState
from mvhedge.hedgedp import HedgeConstraints
from mvhedge.market import MarketParams, TradingSchedule

P = MarketParams()
INF = HedgeConstraints.infinite_depth()
DEPTH = HedgeConstraints(m_bar=1200, l_bar=1200)


def within(got, want, rtol):
    return abs(got - want) <= rtol * abs(want)


def record(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    assert ok, line


def sched(n):
    return TradingSchedule.uniform(n, P.maturity)


def test_c01_analytic_benchmark(acceptance_log):
    t0 = time.perf_counter()
    v = analytic.optimal_residual_variance(P)
    sec = time.perf_counter() - t0
    ok = within(v, 7.8628e14, 1e-3) and sec < 1
    record(acceptance_log, 1, ok, f"optimal continuous variance {v:.5e} vs 7.8628e+14 "
                                  f"({v / 7.8628e14 - 1:+.3%}, tol 0.1%), {sec:.3f}s")


def test_c02_unhedged_variance(acceptance_log):
    t0 = time.perf_counter()
    scen = market.simulate(P, sched(8), 1_000_000, 2024)
    x = INF.initial_capital(P)
    v = evalsim.evaluate(evalsim.NoHedge(), scen, INF, x).variance
    sec = time.perf_counter() - t0
    ok = within(v, 1.114e15, 0.02) and sec < 30
    record(acceptance_log, 2, ok, f"unhedged variance {v:.4e} vs 1.114e+15 ({v / 1.114e15 - 1:+.2%}, tol 2%), {sec:.1f}s")


def test_c03_desk_scale_dp(acceptance_log):
    t0 = time.perf_counter()
    out = {}
    for algo in ("cashflow", "valuefn"):
        vals = []
        for r in range(10):
            scen = market.simulate(P, sched(8), 50_000, 100 + r)
            vals.append(hedgedp.SOLVERS[algo](scen, P, INF)[1].variance)
        out[algo] = (np.mean(vals), np.std(vals, ddof=1) / math.sqrt(10))
    sec = time.perf_counter() - t0
    cf, vf = out["cashflow"][0], out["valuefn"][0]
    ok = within(cf, 7.7126e14, 0.02) and within(vf, 7.8399e14, 0.02) and sec < 600
    record(acceptance_log, 3, ok,
           f"50000 paths x10: cashflow {cf:.4e} (+-{out['cashflow'][1]:.1e}) vs 7.7126e+14 ({cf / 7.7126e14 - 1:+.2%}); "
           f"valuefn {vf:.4e} (+-{out['valuefn'][1]:.1e}) vs 7.8399e+14 ({vf / 7.8399e14 - 1:+.2%}); tol 2%, {sec:.0f}s")


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("MVHEDGE_QUICK") == "1", reason="full-scale check disabled by MVHEDGE_QUICK")
def test_c04_full_scale(acceptance_log):
    t0 = time.perf_counter()
    vals, policy = [], None
    for r in range(10):
        scen = market.simulate(P, sched(8), 400_000, 200 + r)
        pol, rep = hedgedp.backward_cashflow(scen, P, INF)
        vals.append(rep.variance)
        policy = policy or pol
        del scen
    opt = float(np.mean(vals))
    fresh = market.simulate(P, sched(8), 1_000_000, 9999)
    x = INF.initial_capital(P)
    num = evalsim.evaluate(evalsim.Numerical(policy), fresh, INF, policy.x).variance
    ana = evalsim.evaluate(evalsim.AnalyticOptimal(P), fresh, INF, x).variance
    cla = evalsim.evaluate(evalsim.TangentDelta(P), fresh, INF, x).variance
    sec = time.perf_counter() - t0
    checks = [(opt, 7.851e14), (num, 7.853e14), (ana, 7.852e14), (cla, 8.157e14)]
    ok = all(within(g, w, 0.01) for g, w in checks)
    detail = "; ".join(f"{name} {g:.4e} vs {w:.4g} ({g / w - 1:+.2%})" for name, (g, w) in
                       zip(("optimizer x10", "numerical oos", "analytic", "classical"), checks))
    record(acceptance_log, 4, ok, f"400000 paths: {detail}; tol 1%, {sec:.0f}s")


def test_c05_finite_depth_saturation(acceptance_log):
    scen = market.simulate(P, sched(3), 400_000, 1)
    pol, _ = hedgedp.backward_cashflow(scen, P, DEPTH)
    fresh = market.simulate(P, sched(3), 1_000_000, 77)
    x = DEPTH.initial_capital(P)
    res = [evalsim.evaluate(s, fresh, DEPTH, pol.x if isinstance(s, evalsim.Numerical) else x, keep_paths=True)
           for s in (evalsim.Numerical(pol), evalsim.AnalyticOptimal(P), evalsim.TangentDelta(P))]
    same = all(np.array_equal(r.residuals, res[0].residuals) for r in res[1:])
    v = res[0].variance
    ok = same and within(v, 9.81158e14, 0.02)
    record(acceptance_log, 5, ok, f"identical residuals on all paths: {same}; variance {v:.5e} vs 9.81158e+14 "
                                  f"({v / 9.81158e14 - 1:+.2%}, tol 2%)")


def test_c06_correlation_sweep(acceptance_log):
    p = P.replace(rho=-0.6)
    scen = market.simulate(p, sched(8), 400_000, 1)
    pol, _ = hedgedp.backward_cashflow(scen, p, DEPTH)
    fresh = market.simulate(p, sched(8), 1_000_000, 606)
    x = DEPTH.initial_capital(p)
    res = [evalsim.evaluate(s, fresh, DEPTH, x, keep_paths=True)
           for s in (evalsim.Numerical(pol), evalsim.AnalyticOptimal(p), evalsim.TangentDelta(p))]
    sq = [r.residuals ** 2 for r in res]
    gaps = [(sq[b] - sq[a]).mean() / evalsim.standard_error(sq[b] - sq[a]) for a, b in ((0, 1), (1, 2))]
    want = (6.45161e14, 6.9845e14, 8.17449e14)
    got = [r.variance for r in res]
    ok = min(gaps) > 3 and all(within(g, w, 0.03) for g, w in zip(got, want))
    detail = ", ".join(f"{n} {g:.4e} ({g / w - 1:+.2%})" for n, g, w in zip(("numerical", "analytic", "classical"), got, want))
    record(acceptance_log, 6, ok, f"rho -0.6: {detail}; ordering gaps {gaps[0]:.0f} and {gaps[1]:.0f} standard errors")


def test_c07_oracle_equivalence(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    fails = {0.0: 0, 0.01: 0}
    worst = {0.0: 0.0, 0.01: 0.0}
    for _ in range(25):
        state = rng.bit_generator.state
        for lam in (0.0, 0.01):
            rng.bit_generator.state = state  # the same tree and grid for both cost rates
            tree, cons, x = treedp.random_case(rng, lam)
            out = treedp.check_oracle(tree, cons, x, rtol=1e-12)
            fails[lam] += not out["ok"]
            worst[lam] = max(worst[lam], abs(out["cashflow"] - out["exhaustive"]) / out["exhaustive"])
    sec = time.perf_counter() - t0
    ok = fails[0.0] == 0 and fails[0.01] == 0 and sec < 10
    record(acceptance_log, 7, ok, f"25 trees: lambda 0 mismatches {fails[0.0]} (worst {worst[0.0]:.1e}); "
                                  f"lambda 0.01 mismatches {fails[0.01]} (worst {worst[0.01]:.1e}); {sec:.1f}s")


def test_c08_replication_limit(acceptance_log):
    p = P.replace(sigma_d=0.0, d0=P.d_hat)
    scen = market.simulate(p, sched(8), 50_000, 8)
    unhedged = float(np.var(scen.payoff()))
    worst = max(hedgedp.SOLVERS[a](scen, p, INF)[1].variance for a in hedgedp.ALGOS)
    ok = worst <= 1e-10 * unhedged
    record(acceptance_log, 8, ok, f"largest DP variance / unhedged = {worst / unhedged:.2e} (limit 1e-10)")


def test_c09_derivative_checks(acceptance_log):
    worst = 0.0
    for t, d, f in itertools.product(np.linspace(0, 0.2, 5), np.linspace(6000, 12000, 5), np.linspace(30, 50, 5)):
        h = 1e-4 * f
        fd = (analytic.value(AnalyticState(t, d, f + h), P) - analytic.value(AnalyticState(t, d, f - h), P)) / (2 * h * P.hours)
        worst = max(worst, abs(fd / analytic.tangent_delta(AnalyticState(t, d, f), P) - 1))
    ratio = 0.0
    for rho in (0.0, 0.2, -0.2, 0.6, -0.6, 1.0, -1.0):
        q = P.replace(rho=rho)
        cur = analytic.classical_residual_variance(q)
        ratio = max(ratio, abs(analytic.optimal_residual_variance(q) - (1 - rho**2) * cur) / cur)
    ok = worst <= 1e-6 and ratio <= 1e-10
    record(acceptance_log, 9, ok, f"tangent delta FD error {worst:.1e} on 125 states; optimal/classical identity error {ratio:.1e}")


def test_c10_determinism(acceptance_log, tmp_path):
    same = True
    for algo in hedgedp.ALGOS:
        blobs, reps = [], []
        for threads in (1, 4):
            scen = market.simulate(P, sched(8), 50_000, 10, threads=threads)
            pol, rep = hedgedp.SOLVERS[algo](scen, P, DEPTH.replace(lam=0.01), threads=threads)
            path = tmp_path / f"{algo}_{threads}.npz"
            pol.save(path)
            blobs.append(path.read_bytes())
            reps.append(rep)
        same &= blobs[0] == blobs[1] and reps[0] == reps[1]
    record(acceptance_log, 10, same, f"policy files and reports bit-identical across 1 and 4 threads: {same}")
