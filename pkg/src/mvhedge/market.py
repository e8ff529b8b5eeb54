"""Forward-price and load scenarios on a trading schedule.

The forward F(t, T) follows a one-factor Gaussian HJM model (lognormal, a
martingale) and the load D(t) an Ornstein-Uhlenbeck process around a constant
mean level. Both are sampled from their exact Gaussian transition laws.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# paths per RNG block; path j always draws from block j // BLOCK
BLOCK = 4096


@dataclass(frozen=True)
class MarketParams:
    """Model coefficients of the forward curve and the load process.

    ``hours`` is the delivery volume of the hedged product in hours (a
    30-day month by default): a position of 1 MW pays ``hours * F`` per unit
    of forward price, and the claim is ``hours * D(T) * F(T, T)``.
    """

    f0: float = 40.0
    sigma_e: float = 0.20
    a_e: float = 1.75
    d_hat: float = 9000.0
    d0: float = 9000.0
    sigma_d: float = 6240.0
    a_d: float = 19.8
    rho: float = -0.2
    maturity: float = 0.25
    hours: float = 720.0

    def __post_init__(self):
        if not (self.sigma_e >= 0 and self.sigma_d >= 0):
            raise ValueError("volatilities must be non-negative")
        if not (self.a_e > 0 and self.a_d > 0):
            raise ValueError("mean-reversion speeds must be positive")
        if not (self.f0 > 0 and self.maturity > 0 and self.hours > 0):
            raise ValueError("f0, maturity and hours must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    def replace(self, **changes) -> "MarketParams":
        return MarketParams(**{**self.__dict__, **changes})

    def log_variance(self, t: float) -> float:
        """Var[log F(t, T)]."""
        a, s, T = self.a_e, self.sigma_e, self.maturity
        return s * s * (math.exp(-2 * a * (T - t)) - math.exp(-2 * a * T)) / (2 * a)


@dataclass(frozen=True)
class TradingSchedule:
    dates: tuple[float, ...]

    def __post_init__(self):
        d = np.asarray(self.dates, dtype=float)
        if d.ndim != 1 or len(d) < 2:
            raise ValueError("a schedule needs at least two dates")
        if d[0] != 0.0:
            raise ValueError("schedule must start at 0")
        if np.any(np.diff(d) <= 0):
            raise ValueError("schedule dates must be strictly increasing")
        object.__setattr__(self, "dates", tuple(float(x) for x in d))

    @classmethod
    def uniform(cls, n_dates: int, maturity: float) -> "TradingSchedule":
        """``n_dates`` equally spaced dates on [0, maturity], both ends included."""
        if n_dates < 2:
            raise ValueError("n_dates must be at least 2")
        return cls(tuple(np.linspace(0.0, maturity, n_dates)))

    @property
    def n_steps(self) -> int:
        return len(self.dates) - 1

    def array(self) -> np.ndarray:
        return np.asarray(self.dates)

    def check(self, params: MarketParams) -> None:
        if not math.isclose(self.dates[-1], params.maturity, rel_tol=0, abs_tol=1e-12):
            raise ValueError("last schedule date must equal the maturity")


@dataclass(frozen=True)
class ScenarioSet:
    schedule: TradingSchedule
    f: np.ndarray
    d: np.ndarray
    seed: int
    hours: float = 720.0
    noise: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_paths(self) -> int:
        return self.f.shape[0]

    @property
    def s(self) -> np.ndarray:
        """Price of the delivery-period contract per MW, ``hours * F``."""
        return self.hours * self.f

    def payoff(self) -> np.ndarray:
        return self.hours * self.d[:, -1] * self.f[:, -1]


def step_moments(params: MarketParams, s: float, u: float) -> tuple[float, float, float]:
    """Variance of the log-forward increment, variance of the load shock and
    their covariance over [s, u]."""
    p = params
    T = p.maturity
    dt = u - s
    vx = p.sigma_e**2 * (math.exp(-2 * p.a_e * (T - u)) - math.exp(-2 * p.a_e * (T - s))) / (2 * p.a_e)
    vd = p.sigma_d**2 * -math.expm1(-2 * p.a_d * dt) / (2 * p.a_d)
    k = p.a_e + p.a_d
    cov = p.rho * p.sigma_e * p.sigma_d * math.exp(-p.a_e * (T - u)) * -math.expm1(-k * dt) / k
    return vx, vd, cov


def _factor(vx: float, vd: float, cov: float) -> np.ndarray:
    """Lower-triangular L with L @ L.T equal to the 2x2 covariance."""
    l11 = math.sqrt(vx)
    l21 = cov / l11 if l11 > 0 else 0.0
    l22 = math.sqrt(max(vd - l21 * l21, 0.0))
    return np.array([[l11, 0.0], [l21, l22]])


def _block_normals(seed: int, block: int, n_steps: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(block,)))
    return rng.standard_normal((BLOCK, n_steps, 2))


def simulate(params: MarketParams, schedule: TradingSchedule, n_paths: int, seed: int,
             threads: int = 1, keep_noise: bool = False) -> ScenarioSet:
    """Sample ``n_paths`` exact paths of (F(t_i, T), D(t_i)).

    Path ``j`` uses standard normals from block ``j // BLOCK`` of a stream keyed
    by ``seed``, so it does not depend on ``n_paths`` or on ``threads``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    schedule.check(params)
    t = schedule.array()
    n = schedule.n_steps
    factors = [_factor(*step_moments(params, t[i], t[i + 1])) for i in range(n)]
    decay = np.exp(-params.a_d * np.diff(t))
    drift = np.array([params.log_variance(u) for u in t]) / 2

    n_blocks = -(-n_paths // BLOCK)
    f = np.empty((n_paths, n + 1))
    d = np.empty((n_paths, n + 1))
    noise = np.empty((n_paths, n, 2)) if keep_noise else None

    def fill(b: int) -> None:
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n_paths)
        z = _block_normals(seed, b, n)[: hi - lo]
        x = np.zeros(hi - lo)
        load = np.full(hi - lo, float(params.d0))
        f[lo:hi, 0] = params.f0
        d[lo:hi, 0] = params.d0
        for i in range(n):
            L = factors[i]
            ex = L[0, 0] * z[:, i, 0]
            ed = L[1, 0] * z[:, i, 0] + L[1, 1] * z[:, i, 1]
            if noise is not None:
                noise[lo:hi, i, 0] = ex
                noise[lo:hi, i, 1] = ed
            x = x + ex
            load = params.d_hat + (load - params.d_hat) * decay[i] + ed
            f[lo:hi, i + 1] = params.f0 * np.exp(x - drift[i + 1])
            d[lo:hi, i + 1] = load

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(fill, range(n_blocks)))
    else:
        for b in range(n_blocks):
            fill(b)
    return ScenarioSet(schedule, f, d, seed, params.hours, noise)


def increment_correlation(params: MarketParams, s: float, u: float) -> float:
    """Correlation of the two Gaussian shocks over [s, u] under the exact law.

    Equals ``rho`` times the overlap of the two exponential kernels.
    """
    vx, vd, cov = step_moments(params, s, u)
    if vx == 0 or vd == 0:
        return 0.0
    return cov / math.sqrt(vx * vd)


def assumption_constants(params: MarketParams, schedule: TradingSchedule) -> tuple[float, float, float]:
    """Bounds (K1, K2, delta) on the conditional moments of the price ratio.

    K1 bounds E[S_i^2 / S_{i-1}^2], K2 bounds E[S_{i-1}^2 / S_i^2] and delta
    satisfies E[S_i]^2 <= delta E[S_i^2]; all conditional on step i-1.
    """
    if params.sigma_e <= 0:
        raise ValueError("sigma_e must be positive")
    t = schedule.array()
    a, T = params.a_e, params.maturity
    inc = params.sigma_e**2 * (np.exp(-2 * a * (T - t[1:])) - np.exp(-2 * a * (T - t[:-1]))) / (2 * a)
    k1 = float(np.exp(inc).max())
    k2 = float(np.exp(3 * inc).max())
    delta = float(np.exp(-inc).max())
    assert delta < 1.0
    return k1, k2, delta


CSV_HEADER = ["path", "date_index", "t", "F", "D"]


def dump_scenarios(scen: ScenarioSet, path: str | Path) -> None:
    t = scen.schedule.array()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for j in range(scen.n_paths):
            for i in range(len(t)):
                w.writerow([j, i, f"{t[i]:.17g}", f"{scen.f[j, i]:.17g}", f"{scen.d[j, i]:.17g}"])


def load_scenarios(path: str | Path, seed: int = -1, hours: float = 720.0) -> ScenarioSet:
    rows = np.genfromtxt(path, delimiter=",", names=True)
    paths = rows["path"].astype(int)
    idx = rows["date_index"].astype(int)
    n_paths, n_dates = paths.max() + 1, idx.max() + 1
    f = np.empty((n_paths, n_dates))
    d = np.empty((n_paths, n_dates))
    f[paths, idx] = rows["F"]
    d[paths, idx] = rows["D"]
    t = np.empty(n_dates)
    t[idx] = rows["t"]
    return ScenarioSet(TradingSchedule(tuple(t)), f, d, seed, hours)
