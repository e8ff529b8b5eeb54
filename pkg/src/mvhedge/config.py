"""Experiment configuration files (INI style, fixed key names)."""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields

from .hedgedp import ALGOS, HedgeConstraints
from .market import MarketParams, TradingSchedule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleSpec:
    n_dates: int | None = 8
    dates: tuple[float, ...] | None = None

    def build(self, maturity: float) -> TradingSchedule:
        if self.dates is not None:
            return TradingSchedule(self.dates)
        return TradingSchedule.uniform(self.n_dates, maturity)


@dataclass(frozen=True)
class SolverConfig:
    algo: str = "cashflow"
    n_f: int = 8
    n_d: int = 8
    paths: int = 50000
    seed: int = 1
    optimize_x: bool = False
    runs: int = 1


@dataclass(frozen=True)
class EvalConfig:
    paths: int = 1000000
    seed: int = 1000
    strategies: tuple[str, ...] = ("numerical", "analytic", "delta", "nohedge")
    runs: int = 1


@dataclass(frozen=True)
class SweepConfig:
    rho: tuple[float, ...] = ()


@dataclass(frozen=True)
class ConvergenceConfig:
    meshes: tuple[int, ...] = (1, 2, 4, 6, 8, 10, 12)
    samples_per_cell: int = 7000
    paths: tuple[int, ...] = (50000, 100000, 200000, 440000, 1000000)
    mesh: int = 8
    algos: tuple[str, ...] = ("cashflow", "valuefn")
    runs: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketParams = field(default_factory=MarketParams)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    constraints: HedgeConstraints = field(default_factory=HedgeConstraints)
    solver: SolverConfig = field(default_factory=SolverConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig | None = None
    convergence: ConvergenceConfig | None = None


REQUIRED = ("market", "schedule", "constraints", "solver", "eval")
STRATEGIES = ("numerical", "analytic", "delta", "nohedge")
# config key -> HedgeConstraints field
_CONSTRAINT_KEYS = {"lambda": "lam", "m_bar": "m_bar", "l_bar": "l_bar", "xi": "xi",
                    "pos_min": "pos_min", "pos_max": "pos_max", "x0": "x0"}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            lines[(section, key)] = no
    return lines


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(float(x)) for x in v.replace(",", " ").split())


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _float_or_inf(v: str) -> float:
    return math.inf if v.strip().lower() in ("inf", "infinite") else float(v)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    lines = _key_lines(text)

    def where(sec, key=None):
        if key is None:
            return f"{source}: section [{sec}]"
        return f"{source}:{lines.get((sec, key), '?')}: [{sec}] {key}"

    known = {"market", "schedule", "constraints", "solver", "eval", "sweep", "convergence"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"{where(sec)}: unknown section")
    for sec in REQUIRED:
        if not cp.has_section(sec):
            raise ConfigError(f"{source}: missing section [{sec}]")

    def section(sec, spec):
        out = {}
        for key, raw in cp.items(sec):
            if key not in spec:
                raise ConfigError(f"{where(sec, key)}: unknown key")
            name, conv = spec[key]
            try:
                out[name] = conv(raw)
            except ValueError as err:
                raise ConfigError(f"{where(sec, key)}: {err}") from None
        return out

    market_spec = {f.name: (f.name, float) for f in fields(MarketParams)}
    cons_spec = {k: (v, float) for k, v in _CONSTRAINT_KEYS.items()}
    cons_spec["x0"] = ("x0", lambda v: None if v.strip().lower() == "analytic" else float(v))
    cons_spec["m_bar"] = ("m_bar", _float_or_inf)
    cons_spec["l_bar"] = ("l_bar", _float_or_inf)
    solver_spec = {"algo": ("algo", str.strip), "n_f": ("n_f", int), "n_d": ("n_d", int),
                   "paths": ("paths", lambda v: int(float(v))), "seed": ("seed", int),
                   "optimize_x": ("optimize_x", _bool), "runs": ("runs", int)}
    eval_spec = {"paths": ("paths", lambda v: int(float(v))), "seed": ("seed", int), "runs": ("runs", int),
                 "strategies": ("strategies", lambda v: tuple(v.replace(",", " ").split()))}

    try:
        market = MarketParams(**section("market", market_spec))
        s = section("schedule", {"n_dates": ("n_dates", int), "dates": ("dates", _floats)})
        if "dates" in s and "n_dates" in s:
            raise ConfigError(f"{where('schedule')}: give n_dates or dates, not both")
        schedule = ScheduleSpec(None, s["dates"]) if "dates" in s else ScheduleSpec(s.get("n_dates", 8))
        schedule.build(market.maturity).check(market)
        c = section("constraints", cons_spec)
        span = c.get("pos_max", 12000.0) - c.get("pos_min", 0.0)
        for key in ("m_bar", "l_bar"):
            if math.isinf(c.get(key, 0.0)):
                c[key] = span
        constraints = HedgeConstraints(**c)
        solver = SolverConfig(**section("solver", solver_spec))
        if solver.algo not in ALGOS:
            raise ConfigError(f"{where('solver', 'algo')}: expected one of {', '.join(ALGOS)}")
        ev = EvalConfig(**section("eval", eval_spec))
        for name in ev.strategies:
            if name not in STRATEGIES:
                raise ConfigError(f"{where('eval', 'strategies')}: unknown strategy {name!r}")
        sweep = SweepConfig(**section("sweep", {"rho": ("rho", _floats)})) if cp.has_section("sweep") else None
        conv = None
        if cp.has_section("convergence"):
            conv = ConvergenceConfig(**section("convergence", {
                "meshes": ("meshes", _ints), "samples_per_cell": ("samples_per_cell", int),
                "paths": ("paths", _ints), "mesh": ("mesh", int), "runs": ("runs", int),
                "algos": ("algos", lambda v: tuple(v.replace(",", " ").split()))}))
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"{source}: {err}") from None
    return ExperimentConfig(market, schedule, constraints, solver, ev, sweep, conv)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None
    return parse_config(text, path)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def emit_config(cfg: ExperimentConfig) -> str:
    """Serialise ``cfg``; ``parse_config`` of the result gives back ``cfg``."""
    out = ["[market]"]
    out += [f"{k} = {_fmt(v)}" for k, v in asdict(cfg.market).items()]
    out += ["", "[schedule]"]
    if cfg.schedule.dates is not None:
        out.append(f"dates = {_fmt(cfg.schedule.dates)}")
    else:
        out.append(f"n_dates = {cfg.schedule.n_dates}")
    out += ["", "[constraints]"]
    c = asdict(cfg.constraints)
    for key, name in _CONSTRAINT_KEYS.items():
        v = c[name]
        out.append(f"{key} = {'analytic' if v is None else _fmt(v)}")
    for sec, obj in (("solver", cfg.solver), ("eval", cfg.eval), ("sweep", cfg.sweep),
                     ("convergence", cfg.convergence)):
        if obj is None:
            continue
        out += ["", f"[{sec}]"]
        out += [f"{k} = {_fmt(v)}" for k, v in asdict(obj).items()]
    return "\n".join(out) + "\n"
