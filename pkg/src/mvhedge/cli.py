"""Command-line entry point: ``mvhedge <command> [--config FILE] [flags]``.

Exit status is 0 on success, 1 when a check fails and 2 for invalid
configuration or arguments. Results are written to standard output as CSV.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from importlib import resources

import numpy as np

from . import analytic, evalsim, hedgedp, kernels, market, treedp
from .config import ConfigError, ExperimentConfig, emit_config, load_config
from .regress import TreeScenario


def _mesh(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"mesh must look like 8x8, got {text!r}") from None


def _depth(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinite") else float(text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment configuration file")
    p.add_argument("--emit-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("--paths", type=lambda v: int(float(v)))
    p.add_argument("--seed", type=int)
    p.add_argument("--dates", type=int, help="number of equally spaced hedging dates, both ends included")
    p.add_argument("--rho", type=float)
    p.add_argument("--depth", type=_depth, help="per-date trading limit in MW (inf for none)")
    p.add_argument("--xi", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--runs", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvhedge", description="Variance-optimal hedging of a load contract.")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: MVHEDGE_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="closed-form value and continuous-hedge variances")
    _common(p)

    p = sub.add_parser("optimize", help="run the backward regression solver")
    _common(p)
    p.add_argument("--algo", choices=hedgedp.ALGOS)
    p.add_argument("--mesh", type=_mesh)
    p.add_argument("--optimize-x", action="store_true", default=None)
    p.add_argument("--out", help="write the policy table of the last run here")

    p = sub.add_parser("evaluate", help="out-of-sample variance of hedging strategies")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--policy", help="policy table written by optimize")
    g.add_argument("--strategy", choices=("numerical", "analytic", "delta", "nohedge", "all"))
    p.add_argument("--algo", choices=hedgedp.ALGOS)
    p.add_argument("--mesh", type=_mesh)
    p.add_argument("--dump-trajectories", metavar="CSV")

    p = sub.add_parser("convergence", help="mesh and path-count sweeps of the solvers")
    _common(p)

    p = sub.add_parser("oracle-check", help="compare the tree recursion with exhaustive search")
    p.add_argument("--tree", help="oracle case JSON (default: the bundled two-date tree)")
    p.add_argument("--random", type=int, default=0, help="also check this many random trees")
    p.add_argument("--lambdas", default="0", help="comma-separated cost rates for random trees")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rtol", type=float, default=1e-12)
    return ap


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    rep = dataclasses.replace
    m, c, s, e, sched = cfg.market, cfg.constraints, cfg.solver, cfg.eval, cfg.schedule
    if getattr(args, "rho", None) is not None:
        m = m.replace(rho=args.rho)
    if getattr(args, "dates", None) is not None:
        sched = rep(sched, n_dates=args.dates, dates=None)
    if getattr(args, "depth", None) is not None:
        d = c.pos_max - c.pos_min if math.isinf(args.depth) else args.depth
        c = c.replace(m_bar=d, l_bar=d)
    if getattr(args, "xi", None) is not None:
        c = c.replace(xi=args.xi)
    if getattr(args, "lam", None) is not None:
        c = c.replace(lam=args.lam)
    if getattr(args, "algo", None):
        s = rep(s, algo=args.algo)
    if getattr(args, "mesh", None):
        s = rep(s, n_f=args.mesh[0], n_d=args.mesh[1])
    if getattr(args, "optimize_x", None):
        s = rep(s, optimize_x=True)
    evaluating = args.command == "evaluate"
    if args.paths is not None:
        e, s = (rep(e, paths=args.paths), s) if evaluating else (e, rep(s, paths=args.paths))
    if args.seed is not None:
        e, s = (rep(e, seed=args.seed), s) if evaluating else (e, rep(s, seed=args.seed))
    if args.runs is not None:
        e, s = (rep(e, runs=args.runs), s) if evaluating else (e, rep(s, runs=args.runs))
    if getattr(args, "strategy", None):
        names = ("numerical", "analytic", "delta", "nohedge") if args.strategy == "all" else (args.strategy,)
        e = rep(e, strategies=names)
    out = rep(cfg, market=m, schedule=sched, constraints=c, solver=s, eval=e)
    out.schedule.build(out.market.maturity).check(out.market)
    return out


def _rhos(cfg: ExperimentConfig, args) -> list[float | None]:
    if getattr(args, "rho", None) is None and cfg.sweep is not None and cfg.sweep.rho:
        return list(cfg.sweep.rho)
    return [None]


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _g(v: float) -> str:
    return repr(float(v))


def cmd_analytic(cfg: ExperimentConfig, args, threads: int) -> int:
    w = _writer()
    w.writerow(["rho", "value0", "var_classical", "var_optimal"])
    for rho in _rhos(cfg, args):
        p = cfg.market if rho is None else cfg.market.replace(rho=rho)
        v0 = analytic.value(analytic.AnalyticState(0.0, p.d0, p.f0), p)
        w.writerow([_g(p.rho), _g(v0), _g(analytic.classical_residual_variance(p)),
                    _g(analytic.optimal_residual_variance(p))])
    return 0


def _optimize(cfg: ExperimentConfig, seed: int, threads: int, params=None, paths=None, mesh=None, algo=None):
    p = params or cfg.market
    sched = cfg.schedule.build(p.maturity)
    scen = market.simulate(p, sched, paths or cfg.solver.paths, seed, threads)
    mesh = mesh or (cfg.solver.n_f, cfg.solver.n_d)
    return hedgedp.optimize(scen, p, cfg.constraints, algo or cfg.solver.algo, mesh,
                            cfg.solver.optimize_x, threads)


def cmd_optimize(cfg: ExperimentConfig, args, threads: int) -> int:
    w = _writer()
    w.writerow(["algo", "paths", "dates", "mesh", "nu0", "x", "variance", "seconds"])
    s = cfg.solver
    n_dates = cfg.schedule.build(cfg.market.maturity).n_steps + 1
    vals = []
    for r in range(s.runs):
        policy, rep, sec = _optimize(cfg, s.seed + r, threads)
        vals.append(rep.variance)
        w.writerow([rep.algo, rep.n_paths, n_dates, f"{s.n_f}x{s.n_d}", _g(rep.nu0), _g(rep.x_star),
                    _g(rep.variance), f"{sec:.3f}"])
        sys.stdout.flush()
    if args.out:
        policy.save(args.out)
    if len(vals) > 1:
        print(f"mean variance {np.mean(vals):.6e}, standard error {np.std(vals, ddof=1) / math.sqrt(len(vals)):.3e}",
              file=sys.stderr)
    return 0


def _strategy(name: str, params, policy):
    if name == "numerical":
        return evalsim.Numerical(policy)
    if name == "analytic":
        return evalsim.AnalyticOptimal(params)
    if name == "delta":
        return evalsim.TangentDelta(params)
    return evalsim.NoHedge()


def cmd_evaluate(cfg: ExperimentConfig, args, threads: int) -> int:
    w = _writer()
    rhos = _rhos(cfg, args)
    head = ["strategy", "paths", "seed", "variance", "mean_residual"]
    w.writerow((["rho"] if rhos != [None] else []) + head)
    e = cfg.eval
    for rho in rhos:
        policy = None
        if args.policy:
            policy = hedgedp.PolicyTable.load(args.policy)
            params, cons, sched = policy.params, policy.constraints, policy.schedule
            names = ("numerical",)
        else:
            params = cfg.market if rho is None else cfg.market.replace(rho=rho)
            cons, sched = cfg.constraints, cfg.schedule.build(params.maturity)
            names = e.strategies
            if "numerical" in names:
                policy, _, _ = _optimize(cfg, cfg.solver.seed, threads, params=params)
        x0 = cons.initial_capital(params)
        for r in range(e.runs):
            seed = e.seed + r
            scen = market.simulate(params, sched, e.paths, seed, threads)
            for name in names:
                strat = _strategy(name, params, policy)
                x = policy.x if name == "numerical" else x0
                res = evalsim.evaluate(strat, scen, cons, x, threads, keep_paths=bool(args.dump_trajectories))
                if args.dump_trajectories:
                    target = args.dump_trajectories
                    if len(names) > 1 or e.runs > 1 or len(rhos) > 1:
                        stem, dot, ext = target.rpartition(".")
                        tag = f"{name}_{seed}" + ("" if rho is None else f"_rho{rho:g}")
                        target = f"{stem}_{tag}.{ext}" if dot else f"{target}_{tag}"
                    evalsim.dump_trajectories(res, scen, target)
                row = [name, res.n_paths, seed, _g(res.variance), _g(res.mean_residual)]
                w.writerow(([_g(params.rho)] if rhos != [None] else []) + row)
                sys.stdout.flush()
    return 0


def cmd_convergence(cfg: ExperimentConfig, args, threads: int) -> int:
    from .config import ConvergenceConfig

    conv = cfg.convergence or ConvergenceConfig()
    w = _writer()
    w.writerow(["table", "algo", "mesh", "paths", "runs", "mean_variance", "std_error", "seconds"])
    runs = args.runs or conv.runs

    def sweep(table, algo, mesh, paths):
        t0 = time.perf_counter()
        vals = [_optimize(cfg, cfg.solver.seed + r, threads, paths=paths, mesh=(mesh, mesh), algo=algo)[1].variance
                for r in range(runs)]
        se = np.std(vals, ddof=1) / math.sqrt(runs) if runs > 1 else float("nan")
        w.writerow([table, algo, f"{mesh}x{mesh}", paths, runs, _g(np.mean(vals)), _g(se),
                    f"{time.perf_counter() - t0:.3f}"])
        sys.stdout.flush()

    for algo in conv.algos:
        for n in conv.meshes:
            sweep("mesh", algo, n, n * n * conv.samples_per_cell)
    for algo in conv.algos:
        for m in conv.paths:
            sweep("paths", algo, conv.mesh, m)
    return 0


def _bundled_tree() -> str:
    return str(resources.files("mvhedge") / "data" / "oracle_tree.json")


def load_oracle_case(path: str):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    tree = TreeScenario.from_json(obj["tree"])
    cons = hedgedp.HedgeConstraints(**obj.get("constraints", {}))
    x = obj.get("x")
    if x is None:
        x = float(tree.leaf_prob @ (tree.d[tree.leaves] * tree.f[tree.leaves]))
    return tree, cons, float(x)


def cmd_oracle(args, threads: int) -> int:
    w = _writer()
    w.writerow(["case", "lambda", "exhaustive", "cashflow", "valuefn", "ok"])
    cases = [("bundled" if not args.tree else args.tree, *load_oracle_case(args.tree or _bundled_tree()))]
    rng = np.random.default_rng(args.seed)
    lams = [float(v) for v in args.lambdas.split(",") if v.strip()]
    for j in range(args.random):
        for lam in lams:
            tree, cons, x = treedp.random_case(rng, lam)
            cases.append((f"random{j}", tree, cons, x))
    failed = 0
    for name, tree, cons, x in cases:
        out = treedp.check_oracle(tree, cons, x, args.rtol)
        failed += not out["ok"]
        w.writerow([name, _g(cons.lam), _g(out["exhaustive"]), _g(out["cashflow"]), _g(out["valuefn"]),
                    int(out["ok"])])
    if failed:
        print(f"{failed} of {len(cases)} oracle cases failed", file=sys.stderr)
    return 1 if failed else 0


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    threads = args.threads or kernels.default_threads()
    try:
        if args.command == "oracle-check":
            return cmd_oracle(args, threads)
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = apply_overrides(cfg, args)
        if args.emit_config:
            sys.stdout.write(emit_config(cfg))
            return 0
        handler = {"analytic": cmd_analytic, "optimize": cmd_optimize, "evaluate": cmd_evaluate,
                   "convergence": cmd_convergence}[args.command]
        return handler(cfg, args, threads)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
