"""Closed-form continuous-time benchmarks for the load contract.

Positions are in MW of the delivery-period contract whose price is
``hours * F(t, T)``; values and variances are in currency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .market import MarketParams


@dataclass(frozen=True)
class AnalyticState:
    t: float
    d: float
    f: float

    def check(self, params: MarketParams) -> None:
        if not (0.0 <= self.t <= params.maturity) or self.f <= 0:
            raise ValueError(f"state out of bounds: {self}")


def _mean_load(t, d, p: MarketParams):
    return p.d_hat + (d - p.d_hat) * np.exp(-p.a_d * (p.maturity - t))


def _cross_term(t, p: MarketParams):
    k = p.a_e + p.a_d
    return p.rho * p.sigma_e * p.sigma_d * -np.expm1(-k * (p.maturity - t)) / k


def value(state: AnalyticState, params: MarketParams) -> float:
    """E[hours * D(T) F(T, T) | D(t) = d, F(t, T) = f]."""
    state.check(params)
    return float(params.hours * state.f * (_mean_load(state.t, state.d, params) + _cross_term(state.t, params)))


def tangent_delta(state: AnalyticState, params: MarketParams) -> float:
    """Sensitivity of ``value`` to the contract price ``hours * f``."""
    return float(_mean_load(state.t, state.d, params) + _cross_term(state.t, params))


def value_dd(state: AnalyticState, params: MarketParams) -> float:
    """Sensitivity of ``value`` to the current load."""
    return float(params.hours * state.f * math.exp(-params.a_d * (params.maturity - state.t)))


def optimal_hedge(state: AnalyticState, params: MarketParams) -> float:
    """Variance-optimal continuous hedge: tangent delta plus the projection of
    the load risk on the forward."""
    if params.sigma_e <= 0:
        raise ValueError("optimal hedge needs sigma_e > 0")
    p = params
    tau = p.maturity - state.t
    return tangent_delta(state, p) + p.rho * math.exp((p.a_e - p.a_d) * tau) * p.sigma_d / p.sigma_e


def hedge_arrays(t: float, d: np.ndarray, params: MarketParams, optimal: bool) -> np.ndarray:
    """Vectorised ``optimal_hedge`` / ``tangent_delta`` over loads ``d`` at date ``t``."""
    p = params
    h = _mean_load(t, d, p) + _cross_term(t, p)
    if optimal:
        if p.sigma_e <= 0:
            raise ValueError("optimal hedge needs sigma_e > 0")
        h = h + p.rho * math.exp((p.a_e - p.a_d) * (p.maturity - t)) * p.sigma_d / p.sigma_e
    return h


def _integrand(s, p: MarketParams):
    a = p.a_e
    growth = p.sigma_e**2 * (np.exp(-2 * a * (p.maturity - s)) - math.exp(-2 * a * p.maturity)) / (2 * a)
    return np.exp(-2 * p.a_d * (p.maturity - s) + growth)


def residual_integral(params: MarketParams, rtol: float = 1e-10) -> float:
    """Time integral of the unhedgeable load risk, adaptive Gauss-Kronrod."""
    val, _ = integrate.quad(_integrand, 0.0, params.maturity, args=(params,),
                            epsabs=0.0, epsrel=rtol, limit=200)
    return val


def residual_integral_gl(params: MarketParams, nodes: int) -> float:
    """Same integral by fixed Gauss-Legendre quadrature (refinement oracle)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    T = params.maturity
    s = 0.5 * T * (x + 1.0)
    return float(0.5 * T * np.dot(w, _integrand(s, params)))


def classical_residual_variance(params: MarketParams) -> float:
    """Residual variance of the tangent-delta hedge, independent of rho."""
    s0 = params.hours * params.f0
    return params.sigma_d**2 * s0**2 * residual_integral(params)


def optimal_residual_variance(params: MarketParams) -> float:
    return (1.0 - params.rho**2) * classical_residual_variance(params)
