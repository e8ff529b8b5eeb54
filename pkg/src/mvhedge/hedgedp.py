"""Backward regression DP for variance-optimal hedging under depth limits.

Positions live on the lattice ``xi * k``. At date ``t_i`` the current stock
``nu_{i-1}`` ranges over ``Q_{i-1}`` and the new position over ``Q_i``. Three
solvers share one engine:

``cashflow``
    the residual of every path is tracked exactly and only the arg-min
    command comes from regressions.
``valuefn``
    regressed value and accumulated-risk surfaces are carried backward and the
    command minimises one-step conditional variance plus expected future risk.
``localrisk``
    as ``valuefn`` but the command minimises the one-step variance only.

For a fixed date the adjusted target of command ``l`` from stock ``k`` is
``z(nu) + lam |nu - k| S_i`` with ``nu = k + l``. The cost term is affine in F,
which is a regressor in every cell, so its fit is exact: the value model of
``(k, nu)`` is the value model of ``nu`` shifted by the cost and the
conditional-variance model does not depend on ``k``. Regressions are therefore
run once per new position ``nu`` and shared by all stock levels.
"""

from __future__ import annotations

import io
import json
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analytic, kernels
from .market import MarketParams, ScenarioSet, TradingSchedule
from .regress import CellBasis, CellPartition, cell_bounds, fit_partition, predict_cells

ALGOS = ("cashflow", "valuefn", "localrisk")
FORMAT_VERSION = 1
_CHUNK_BYTES = 64 * 2**20


@dataclass(frozen=True)
class HedgeConstraints:
    lam: float = 0.0
    m_bar: float = 12000.0
    l_bar: float = 12000.0
    xi: float = 100.0
    pos_min: float = 0.0
    pos_max: float = 12000.0
    x0: float | None = None  # None: analytic value of the claim at t = 0

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.lam < 0 or self.m_bar < 0 or self.l_bar < 0:
            raise ValueError("lam, m_bar and l_bar must be non-negative")
        if self.pos_min > self.pos_max:
            raise ValueError("pos_min exceeds pos_max")

    @classmethod
    def infinite_depth(cls, pos_min: float = 0.0, pos_max: float = 12000.0, **kw) -> "HedgeConstraints":
        span = pos_max - pos_min
        return cls(m_bar=span, l_bar=span, pos_min=pos_min, pos_max=pos_max, **kw)

    @property
    def sell_steps(self) -> int:
        return int(math.floor(self.m_bar / self.xi + 1e-9))

    @property
    def buy_steps(self) -> int:
        return int(math.floor(self.l_bar / self.xi + 1e-9))

    def replace(self, **changes) -> "HedgeConstraints":
        return HedgeConstraints(**{**asdict(self), **changes})

    def initial_capital(self, params: MarketParams) -> float:
        if self.x0 is not None:
            return float(self.x0)
        return analytic.value(analytic.AnalyticState(0.0, params.d0, params.f0), params)


@dataclass(frozen=True)
class PositionGrid:
    """Lattice indices ``Q_i`` per trading date ``i = 0 .. N-1``; positions are ``xi * k``."""

    xi: float
    levels: tuple[np.ndarray, ...]

    def positions(self, i: int) -> np.ndarray:
        return self.xi * self.levels[i].astype(float)

    def __len__(self) -> int:
        return len(self.levels)

    def index(self, i: int, k) -> np.ndarray:
        """Column of lattice index ``k`` in ``Q_i``."""
        return np.asarray(k) - self.levels[i][0]

    def windows(self, i: int, prev: np.ndarray, sell: int, buy: int):
        """Admissible column windows in ``Q_i`` for previous lattice indices ``prev``.

        Returns ``(lo, hi, center)`` column arrays with ``hi`` exclusive.
        """
        q = self.levels[i]
        prev = np.asarray(prev)
        lo = np.maximum(prev - sell, q[0]) - q[0]
        hi = np.minimum(prev + buy, q[-1]) - q[0] + 1
        center = prev - q[0]
        if np.any(hi <= lo):
            raise ValueError(f"no admissible command at date {i}")
        return lo.astype(np.intp), hi.astype(np.intp), center.astype(np.intp)


def build_position_grids(constraints: HedgeConstraints, n_dates: int) -> PositionGrid:
    """Reachable lattices ``Q_0 .. Q_{n_dates-1}`` clipped to the global stock bounds."""
    c = constraints
    s, b = c.sell_steps, c.buy_steps
    kmin = math.ceil(c.pos_min / c.xi - 1e-9)
    kmax = math.floor(c.pos_max / c.xi + 1e-9)
    levels = []
    for i in range(n_dates):
        lo, hi = max(-(i + 1) * s, kmin), min((i + 1) * b, kmax)
        if lo > hi:
            raise ValueError(f"empty position grid at date {i}")
        levels.append(np.arange(lo, hi + 1, dtype=np.int64))
    return PositionGrid(c.xi, tuple(levels))


@dataclass
class DatePolicy:
    """Stored regressions at one trading date ``t_i`` (``i >= 1``).

    ``var_coef`` and ``r_coef`` are indexed by (cell, column of ``Q_i``).
    ``value_coef`` is the value model of the uncharged target; the model for
    stock ``k`` adds ``lam * |nu - k| * hours`` to its F slope.
    """

    partition: CellPartition
    centers: np.ndarray
    value_coef: np.ndarray
    var_coef: np.ndarray
    r_coef: np.ndarray | None = None
    bounds: np.ndarray | None = None  # per cell (f_min, f_max, d_min, d_max) of the training states

    def clamp(self, cells: np.ndarray, f: np.ndarray, d: np.ndarray):
        """Pull states back into the training box of their cell so the affine
        fits are not extrapolated."""
        if self.bounds is None:
            return f, d
        b = self.bounds[cells]
        return np.clip(f, b[:, 0], b[:, 1]), np.clip(d, b[:, 2], b[:, 3])


@dataclass
class PolicyTable:
    algo: str
    params: MarketParams
    constraints: HedgeConstraints
    schedule: TradingSchedule
    mesh: tuple[int, int]
    seed: int
    n_paths: int
    grid: PositionGrid
    nu0: float
    x: float
    dates: dict[int, DatePolicy] = field(default_factory=dict)

    def objective(self, i: int, f: np.ndarray, d: np.ndarray, threads: int = 1) -> np.ndarray:
        """Arbitrage criterion (M x |Q_i|) at date ``i`` for states (f, d)."""
        dp = self.dates[i]
        cells = dp.partition.locate(f, d)
        f, d = dp.clamp(cells, f, d)
        p = predict_cells(cells, f, d, dp.centers, dp.var_coef, threads)
        if self.algo == "valuefn":
            p = p + predict_cells(cells, f, d, dp.centers, dp.r_coef, threads)
        return p

    def value_coefficients(self, i: int, k: int) -> np.ndarray:
        """Raw (a, b_f, b_d) value models at date ``i`` for stock lattice index ``k``,
        shape (cells, |Q_i|, 3); entries outside the command window are NaN."""
        dp = self.dates[i]
        lo, hi, _ = self.grid.windows(i, np.array([k]), self.constraints.sell_steps, self.constraints.buy_steps)
        c = dp.value_coef.copy()
        c[:, :, 0] -= c[:, :, 1] * dp.centers[:, None, 0] + c[:, :, 2] * dp.centers[:, None, 1]
        nu = self.grid.positions(i)
        c[:, :, 1] += self.constraints.lam * np.abs(nu - self.grid.xi * k) * self.params.hours
        mask = np.ones(len(nu), bool)
        mask[lo[0]:hi[0]] = False
        c[:, mask, :] = np.nan
        return c

    # --- persistence ---------------------------------------------------------

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "algo": self.algo,
            "params": asdict(self.params),
            "constraints": asdict(self.constraints),
            "schedule": list(self.schedule.dates),
            "mesh": list(self.mesh),
            "seed": self.seed,
            "n_paths": self.n_paths,
            "grid": {"xi": self.grid.xi, "first": [int(q[0]) for q in self.grid.levels],
                     "last": [int(q[-1]) for q in self.grid.levels]},
            "nu0": self.nu0,
            "x": self.x,
            "dates": sorted(self.dates),
        }

    def save(self, path: str | Path) -> None:
        """Zip container of ``header.json`` plus ``.npy`` arrays (readable by ``np.load``).

        Entry timestamps are fixed so identical policies give identical bytes.
        """
        arrays = {}
        for i, dp in self.dates.items():
            arrays[f"d{i}_f_breaks"] = dp.partition.f_breaks
            arrays[f"d{i}_d_breaks"] = dp.partition.d_breaks
            arrays[f"d{i}_centers"] = dp.centers
            arrays[f"d{i}_value"] = dp.value_coef
            arrays[f"d{i}_var"] = dp.var_coef
            arrays[f"d{i}_bounds"] = dp.bounds
            if dp.r_coef is not None:
                arrays[f"d{i}_r"] = dp.r_coef
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            _write_entry(zf, "header.json", json.dumps(self.header(), sort_keys=True, indent=1).encode())
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                _write_entry(zf, name + ".npy", buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "PolicyTable":
        with zipfile.ZipFile(path) as zf:
            head = json.loads(zf.read("header.json"))
            if head.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported policy format {head.get('format_version')}")

            def arr(name):
                return np.lib.format.read_array(io.BytesIO(zf.read(name + ".npy")))

            names = set(zf.namelist())
            cons = HedgeConstraints(**head["constraints"])
            g = head["grid"]
            grid = PositionGrid(g["xi"], tuple(np.arange(a, b + 1, dtype=np.int64)
                                               for a, b in zip(g["first"], g["last"])))
            n_f, n_d = head["mesh"]
            dates = {}
            for i in head["dates"]:
                db = arr(f"d{i}_d_breaks")
                part = CellPartition(n_f, n_d, arr(f"d{i}_f_breaks"), db)
                r = arr(f"d{i}_r") if f"d{i}_r.npy" in names else None
                dates[i] = DatePolicy(part, arr(f"d{i}_centers"), arr(f"d{i}_value"), arr(f"d{i}_var"), r,
                                      arr(f"d{i}_bounds"))
        return cls(head["algo"], MarketParams(**head["params"]), cons, TradingSchedule(tuple(head["schedule"])),
                   (n_f, n_d), head["seed"], head["n_paths"], grid, head["nu0"], head["x"], dates)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


@dataclass(frozen=True)
class HedgeReport:
    nu0: float
    x_star: float
    variance: float
    n_paths: int
    seed: int
    algo: str

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("negative variance")


# --- engine ---------------------------------------------------------------------


def _column_chunks(m: int, n: int) -> list[slice]:
    width = max(1, _CHUNK_BYTES // (8 * max(m, 1)))
    return [slice(a, min(a + width, n)) for a in range(0, n, width)]


@dataclass
class StepResult:
    choice: np.ndarray  # (M, |Q_{i-1}|) chosen column of Q_i for every stock level
    policy: DatePolicy
    vhat: np.ndarray | None  # predicted values (M, |Q_i|), value-function solvers only
    objective: np.ndarray  # arbitrage criterion (M, |Q_i|)


def _control_step(target: np.ndarray, risk: np.ndarray | None, scen: ScenarioSet, i: int,
                  grid: PositionGrid, cons: HedgeConstraints, mesh: tuple[int, int],
                  algo: str, threads: int, keep_vhat: bool) -> StepResult:
    """Regressions and arbitrage at date ``t_i`` (``1 <= i <= N-1``).

    ``target`` holds the uncharged adjusted targets ``z`` (M x |Q_i|); ``risk``
    the accumulated-risk surface at ``t_{i+1}`` for the value-function solvers.
    """
    f, d = scen.f[:, i], scen.d[:, i]
    m, nq = target.shape
    part = fit_partition(np.column_stack([f, d]), *mesh)
    basis = CellBasis(part.labels, f, d, part.n_cells)
    cells = part.locate(f, d)
    ncell = part.n_cells

    value_coef = np.empty((ncell, nq, 3))
    var_coef = np.empty((ncell, nq, 3))
    vhat = np.empty((m, nq)) if keep_vhat else None
    for sl in _column_chunks(m, nq):
        z = target[:, sl]
        cv = basis.fit(z)
        fitted = predict_cells(basis.cells, f, d, basis.centers, cv, threads)
        resid = z - fitted
        var_coef[:, sl] = basis.fit(resid * resid)
        value_coef[:, sl] = cv
        if vhat is not None:
            vhat[:, sl] = predict_cells(cells, f, d, basis.centers, cv, threads)

    objective = predict_cells(cells, f, d, basis.centers, var_coef, threads)
    r_coef = None
    if risk is not None:
        r_coef = np.empty((ncell, nq, 3))
        for sl in _column_chunks(m, nq):
            r_coef[:, sl] = basis.fit(risk[:, sl])
        rhat = predict_cells(cells, f, d, basis.centers, r_coef, threads)
        if algo == "valuefn":
            objective = objective + rhat
        else:
            # local risk: arbitrage on one-step variance, keep the total for reporting
            total = objective + rhat
    prev = grid.levels[i - 1]
    lo, hi, center = grid.windows(i, prev, cons.sell_steps, cons.buy_steps)
    choice = np.empty((m, len(prev)), dtype=np.int32)
    kernels.window_argmin(np.ascontiguousarray(objective), lo, hi, center, choice, threads)
    if algo == "localrisk":
        objective = total
    pol = DatePolicy(part, basis.centers, value_coef, var_coef, r_coef, cell_bounds(part.labels, f, d, ncell))
    return StepResult(choice, pol, vhat, objective)


def optimal_control_step(next_payoff: np.ndarray, k: int, scenarios: ScenarioSet, i: int,
                         constraints: HedgeConstraints, mesh: tuple[int, int] = (8, 8),
                         n_dates: int | None = None, threads: int = 1):
    """Optimal command on every path at date ``t_i`` for stock ``k * xi``.

    ``next_payoff[j, c]`` is the residual at ``t_{i+1}`` of path ``j`` when the
    position ``Q_i[c]`` is held over ``[t_i, t_{i+1}]``. Returns the commands
    (MW, new position minus ``k * xi``) and the date's stored regressions.
    """
    n = n_dates or scenarios.schedule.n_steps
    grid = build_position_grids(constraints, n)
    if not 1 <= i <= n - 1:
        raise ValueError("i must be an interior trading date")
    if k not in set(grid.levels[i - 1].tolist()):
        raise ValueError(f"stock level {k} not in Q_{i - 1}")
    pos = grid.positions(i)
    ds = scenarios.s[:, i + 1] - scenarios.s[:, i]
    target = next_payoff - pos[None, :] * ds[:, None]
    res = _control_step(target, None, scenarios, i, grid, constraints, mesh, "cashflow", threads, False)
    col = int(k - grid.levels[i - 1][0])
    chosen = res.choice[:, col]
    return pos[chosen] - constraints.xi * k, res.policy


def solve_initial(values: np.ndarray, s0: float, ds0: np.ndarray, positions: np.ndarray,
                  lo: int, hi: int, center: int, lam: float, x: float,
                  optimize_x: bool = False, risk_mean: np.ndarray | None = None):
    """Choose the first position among columns ``[lo, hi)``.

    ``values[:, c]`` is the residual (or regressed value) at ``t_1`` when
    position ``positions[c]`` is taken at ``t_0``. Returns ``(column, x, objective)``.
    With ``optimize_x`` the initial capital is the sample mean of the hedged
    residual, which minimises the quadratic objective in ``x``.
    """
    best = None
    for c in range(lo, hi):
        y = values[:, c] - positions[c] * ds0 + lam * abs(positions[c]) * s0
        xc = float(y.mean()) if optimize_x else x
        e = y - xc
        obj = float(np.mean(e * e))
        if risk_mean is not None:
            obj += float(risk_mean[c])
        key = (obj, abs(c - center), c > center)
        if best is None or key < best[0]:
            best = (key, c, xc, obj)
    return best[1], best[2], best[3]


def _solve(scen: ScenarioSet, params: MarketParams, cons: HedgeConstraints, algo: str,
           mesh: tuple[int, int], optimize_x: bool, threads: int | None):
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}")
    threads = threads or kernels.default_threads()
    n = scen.schedule.n_steps
    grid = build_position_grids(cons, n)
    x = cons.initial_capital(params)
    s = scen.s
    m = scen.n_paths
    lam = cons.lam
    h = scen.payoff()

    nq_last = len(grid.levels[n - 1])
    buf = np.repeat(h[:, None], nq_last, axis=1)
    risk = np.zeros((m, nq_last)) if algo != "cashflow" else None
    dates = {}
    for i in range(n - 1, 0, -1):
        pos_i = grid.positions(i)
        ds = s[:, i + 1] - s[:, i]
        for sl in _column_chunks(m, buf.shape[1]):
            buf[:, sl] -= pos_i[None, sl] * ds[:, None]
        step = _control_step(buf, risk, scen, i, grid, cons, mesh, algo, threads, algo != "cashflow")
        dates[i] = step.policy
        pos_prev = grid.positions(i - 1)
        new = np.empty((m, len(pos_prev)))
        src = buf if algo == "cashflow" else step.vhat
        kernels.gather_shift(np.ascontiguousarray(src), step.choice, pos_i, pos_prev, np.ascontiguousarray(s[:, i]), lam, new, threads)
        if risk is not None:
            newr = np.empty((m, len(pos_prev)))
            kernels.gather_shift(np.ascontiguousarray(step.objective), step.choice, pos_i, pos_prev,
                                 np.ascontiguousarray(s[:, i]), 0.0, newr, threads)
            risk = newr
        buf = new
        del step

    lo, hi, center = grid.windows(0, np.array([0]), cons.sell_steps, cons.buy_steps)
    rmean = risk.mean(axis=0) if risk is not None else None
    col, x_star, obj = solve_initial(buf, s[0, 0], s[:, 1] - s[:, 0], grid.positions(0),
                                     int(lo[0]), int(hi[0]), int(center[0]), lam, x, optimize_x, rmean)
    nu0 = float(grid.positions(0)[col])
    policy = PolicyTable(algo, params, cons, scen.schedule, tuple(mesh), scen.seed, m, grid, nu0, x_star, dates)
    report = HedgeReport(nu0, x_star, max(obj, 0.0), m, scen.seed, algo)
    return policy, report


def backward_cashflow(scenarios: ScenarioSet, params: MarketParams, constraints: HedgeConstraints,
                      mesh: tuple[int, int] = (8, 8), optimize_x: bool = False, threads: int | None = None):
    """Cash-flow tracking solver; returns ``(PolicyTable, HedgeReport)``."""
    return _solve(scenarios, params, constraints, "cashflow", mesh, optimize_x, threads)


def backward_valuefn(scenarios: ScenarioSet, params: MarketParams, constraints: HedgeConstraints,
                     mesh: tuple[int, int] = (8, 8), optimize_x: bool = False, threads: int | None = None):
    """Value-function solver with accumulated residual risk."""
    return _solve(scenarios, params, constraints, "valuefn", mesh, optimize_x, threads)


def backward_localrisk(scenarios: ScenarioSet, params: MarketParams, constraints: HedgeConstraints,
                       mesh: tuple[int, int] = (8, 8), optimize_x: bool = False, threads: int | None = None):
    """Local-risk solver: one-step variance arbitrage, total risk still reported."""
    return _solve(scenarios, params, constraints, "localrisk", mesh, optimize_x, threads)


SOLVERS = {"cashflow": backward_cashflow, "valuefn": backward_valuefn, "localrisk": backward_localrisk}


def optimize(scenarios: ScenarioSet, params: MarketParams, constraints: HedgeConstraints, algo: str = "cashflow",
             mesh: tuple[int, int] = (8, 8), optimize_x: bool = False, threads: int | None = None):
    """Run solver ``algo``; returns ``(PolicyTable, HedgeReport, seconds)``."""
    t0 = time.perf_counter()
    policy, report = SOLVERS[algo](scenarios, params, constraints, mesh, optimize_x, threads)
    return policy, report, time.perf_counter() - t0
