"""Variance-optimal discrete hedging of a load contract under market-depth limits."""

from .analytic import AnalyticState, optimal_residual_variance, classical_residual_variance
from .hedgedp import HedgeConstraints, HedgeReport, PolicyTable, build_position_grids, optimize
from .market import MarketParams, ScenarioSet, TradingSchedule, simulate

__version__ = "0.1.0"

__all__ = [
    "AnalyticState", "HedgeConstraints", "HedgeReport", "MarketParams", "PolicyTable",
    "ScenarioSet", "TradingSchedule", "build_position_grids", "classical_residual_variance",
    "optimal_residual_variance", "optimize", "simulate",
]
