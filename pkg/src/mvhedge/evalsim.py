"""Forward replay of hedging strategies on simulated paths.

A strategy emits a position on the grid at every trading date. The terminal
residual of a path is ``H - x - sum nu_i dS_i + lam * sum |nu_i - nu_{i-1}| S_i``
and the reported variance is its mean square, the quadratic hedging
objective at initial capital ``x``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

from . import analytic, kernels
from .hedgedp import HedgeConstraints, PolicyTable, PositionGrid, build_position_grids
from .market import MarketParams, ScenarioSet

_PATH_CHUNK = 65536


@dataclass(frozen=True)
class Numerical:
    policy: PolicyTable
    tag: str = "numerical"


@dataclass(frozen=True)
class AnalyticOptimal:
    params: MarketParams
    tag: str = "analytic"


@dataclass(frozen=True)
class TangentDelta:
    params: MarketParams
    tag: str = "delta"


@dataclass(frozen=True)
class NoHedge:
    tag: str = "nohedge"


@dataclass(frozen=True)
class FixedPosition:
    nu: float
    tag: str = "fixed"


Strategy = Union[Numerical, AnalyticOptimal, TangentDelta, NoHedge, FixedPosition]


@dataclass(frozen=True)
class EvalResult:
    variance: float
    mean_residual: float
    n_paths: int
    strategy: str
    positions: np.ndarray | None = None  # (paths, trading dates), MW
    residuals: np.ndarray | None = None

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("negative variance")


def round_half_away(x, xi: float):
    """Nearest multiple of ``xi``; halves go away from zero."""
    x = np.asarray(x, dtype=float)
    q = x / xi
    return np.sign(q) * np.floor(np.abs(q) + 0.5) * xi


def clip_to_constraints(desired, previous, constraints: HedgeConstraints, grid: np.ndarray | None = None):
    """Project a desired position onto the lattice, the per-date move limits and
    the global bounds (and the extent of ``grid`` when given)."""
    c = constraints
    pos = round_half_away(desired, c.xi)
    prev = np.asarray(previous, dtype=float)
    lo = np.maximum(prev - c.sell_steps * c.xi, math.ceil(c.pos_min / c.xi - 1e-9) * c.xi)
    hi = np.minimum(prev + c.buy_steps * c.xi, math.floor(c.pos_max / c.xi + 1e-9) * c.xi)
    if grid is not None:
        lo = np.maximum(lo, grid[0])
        hi = np.minimum(hi, grid[-1])
    out = np.minimum(np.maximum(pos, lo), hi)
    return float(out) if out.ndim == 0 else out


def _check_policy(policy: PolicyTable, constraints: HedgeConstraints, scen: ScenarioSet) -> None:
    if policy.constraints != constraints:
        raise ValueError("policy was built for different constraints")
    if len(policy.grid) != scen.schedule.n_steps:
        raise ValueError("policy and scenarios have different trading dates")
    if not np.allclose(policy.schedule.array(), scen.schedule.array(), rtol=0, atol=1e-12):
        raise ValueError("policy and scenarios have different schedules")


def _numerical_positions(policy: PolicyTable, scen: ScenarioSet, rows: slice, threads: int) -> np.ndarray:
    grid, c = policy.grid, policy.constraints
    n = scen.schedule.n_steps
    m = rows.stop - rows.start
    pos = np.empty((m, n))
    pos[:, 0] = policy.nu0
    k = np.full(m, int(round(policy.nu0 / grid.xi)), dtype=np.int64)
    for i in range(1, n):
        f = np.ascontiguousarray(scen.f[rows, i])
        d = np.ascontiguousarray(scen.d[rows, i])
        p = np.ascontiguousarray(policy.objective(i, f, d, threads))
        lo, hi, center = grid.windows(i, k, c.sell_steps, c.buy_steps)
        col = np.empty(m, dtype=np.intp)
        kernels.rowwise_window_argmin(p, lo, hi, center, col, threads)
        k = grid.levels[i][col]
        pos[:, i] = grid.positions(i)[col]
    return pos


def _rule_positions(strategy: Strategy, scen: ScenarioSet, rows: slice, cons: HedgeConstraints,
                    grid: PositionGrid) -> np.ndarray:
    t = scen.schedule.array()
    n = scen.schedule.n_steps
    m = rows.stop - rows.start
    pos = np.empty((m, n))
    prev = np.zeros(m)
    for i in range(n):
        if isinstance(strategy, (AnalyticOptimal, TangentDelta)):
            want = analytic.hedge_arrays(t[i], scen.d[rows, i], strategy.params,
                                         optimal=isinstance(strategy, AnalyticOptimal))
        elif isinstance(strategy, FixedPosition):
            want = np.full(m, strategy.nu)
        else:
            want = np.zeros(m)
        prev = clip_to_constraints(want, prev, cons, grid.positions(i))
        pos[:, i] = prev
    return pos


def residuals(scen: ScenarioSet, positions: np.ndarray, x: float, lam: float, rows: slice | None = None) -> np.ndarray:
    """Terminal residuals, accumulated backward in the same order as the solver."""
    rows = rows or slice(0, scen.n_paths)
    s = scen.s[rows]
    n = positions.shape[1]
    r = scen.payoff()[rows]
    for i in range(n - 1, -1, -1):
        prev = positions[:, i - 1] if i > 0 else np.zeros(len(r))
        ds = s[:, i + 1] - s[:, i]
        r = (r - positions[:, i] * ds) + (lam * np.abs(positions[:, i] - prev)) * s[:, i]
    return r - x


def evaluate(strategy: Strategy, scenarios: ScenarioSet, constraints: HedgeConstraints, x: float,
             threads: int | None = None, keep_paths: bool = False) -> EvalResult:
    """Replay ``strategy`` on ``scenarios`` and measure the residual mean square."""
    threads = threads or kernels.default_threads()
    m, n = scenarios.n_paths, scenarios.schedule.n_steps
    if isinstance(strategy, Numerical):
        _check_policy(strategy.policy, constraints, scenarios)
        grid = strategy.policy.grid
    else:
        grid = build_position_grids(constraints, n)
    pos_all = np.empty((m, n)) if keep_paths else None
    res = np.empty(m)
    for a in range(0, m, _PATH_CHUNK):
        rows = slice(a, min(a + _PATH_CHUNK, m))
        if isinstance(strategy, Numerical):
            pos = _numerical_positions(strategy.policy, scenarios, rows, threads)
        else:
            pos = _rule_positions(strategy, scenarios, rows, constraints, grid)
        res[rows] = residuals(scenarios, pos, x, constraints.lam, rows)
        if pos_all is not None:
            pos_all[rows] = pos
    return EvalResult(float(np.mean(res * res)), float(res.mean()), m, strategy.tag,
                      pos_all, res if keep_paths else None)


TRAJECTORY_HEADER = ["path", "date_index", "t", "F", "D", "position"]


def dump_trajectories(result: EvalResult, scenarios: ScenarioSet, path: str | Path) -> None:
    if result.positions is None:
        raise ValueError("evaluation was run without keep_paths")
    t = scenarios.schedule.array()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for j in range(result.n_paths):
            for i in range(result.positions.shape[1]):
                w.writerow([j, i, f"{t[i]:.17g}", f"{scenarios.f[j, i]:.17g}",
                            f"{scenarios.d[j, i]:.17g}", f"{result.positions[j, i]:.17g}"])


def multi_run(run: Callable[[int], float], n_runs: int, seed: int = 0) -> tuple[float, float]:
    """Mean and standard error of ``run(seed + r)`` over ``n_runs`` independent seeds."""
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    vals = np.array([run(seed + r) for r in range(n_runs)])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_runs))


def standard_error(values: np.ndarray) -> float:
    """Standard error of the mean of per-path values (for variance estimates pass squared residuals)."""
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / math.sqrt(len(values)))
