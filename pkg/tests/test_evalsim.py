import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvhedge import evalsim, hedgedp, market
from mvhedge.hedgedp import HedgeConstraints
from mvhedge.market import MarketParams, TradingSchedule

P = MarketParams()
DEPTH = HedgeConstraints(m_bar=1200, l_bar=1200)


def scen(n_dates=8, paths=5000, seed=1, params=P):
    return market.simulate(params, TradingSchedule.uniform(n_dates, params.maturity), paths, seed)


def test_clip_examples():
    assert evalsim.clip_to_constraints(9463, 9000, DEPTH) == 9500
    assert evalsim.clip_to_constraints(9463, 0, DEPTH) == 1200
    assert evalsim.clip_to_constraints(4300, 4000, DEPTH) == 4300
    assert evalsim.clip_to_constraints(-50, 0, DEPTH) == 0
    assert evalsim.clip_to_constraints(13000, 11500, DEPTH) == 12000


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(evalsim.round_half_away([150, -150, 149.9, 250], 100), [200, -200, 100, 300])


@given(st.floats(-30000, 30000), st.integers(-40, 160), st.integers(0, 30), st.integers(0, 30))
def test_clip_is_feasible(desired, prev_k, s, b):
    c = HedgeConstraints(m_bar=100.0 * s, l_bar=100.0 * b, pos_min=-4000, pos_max=16000)
    prev = 100.0 * prev_k
    out = evalsim.clip_to_constraints(desired, prev, c)
    assert out % 100 == 0
    assert -4000 <= out <= 16000
    assert prev - 100 * s <= out <= prev + 100 * b or not (-4000 <= prev <= 16000)


def test_no_hedge_variance_is_payoff_spread():
    s = scen(3, 20000)
    x = DEPTH.initial_capital(P)
    r = evalsim.evaluate(evalsim.NoHedge(), s, DEPTH, x)
    h = s.payoff()
    assert r.variance == pytest.approx(np.mean((h - x) ** 2), rel=1e-12)
    assert r.mean_residual == pytest.approx(h.mean() - x, rel=1e-9)


def test_fixed_position():
    s = scen(3, 1000)
    r = evalsim.evaluate(evalsim.FixedPosition(1000.0), s, DEPTH, 0.0, keep_paths=True)
    assert np.all(r.positions == 1000.0)
    r = evalsim.evaluate(evalsim.FixedPosition(5000.0), s, DEPTH, 0.0, keep_paths=True)
    np.testing.assert_array_equal(r.positions[0], [1200.0, 2400.0])


def test_residual_accounting_with_costs():
    s = scen(3, 10)
    c = HedgeConstraints(lam=0.01)
    pos = np.tile([500.0, 300.0], (10, 1))
    got = evalsim.residuals(s, pos, 7.0, 0.01)
    S = s.s
    want = (s.payoff() - 7.0 - 500 * (S[:, 1] - S[:, 0]) - 300 * (S[:, 2] - S[:, 1])
            + 0.01 * (500 * S[:, 0] + 200 * S[:, 1]))
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_in_sample_replay_reproduces_optimizer():
    s = scen(8, 20000)
    c = HedgeConstraints(lam=0.005, m_bar=1200, l_bar=1200)
    pol, rep = hedgedp.backward_cashflow(s, P, c)
    ev = evalsim.evaluate(evalsim.Numerical(pol), s, c, pol.x)
    assert ev.variance == pytest.approx(rep.variance, rel=1e-9)


def test_saturation_small():
    # few samples per cell make the per-command fits noisy, so use a coarse mesh
    s = scen(3, 20000)
    pol, _ = hedgedp.backward_cashflow(s, P, DEPTH, (2, 2))
    fresh = scen(3, 50000, seed=2)
    x = DEPTH.initial_capital(P)
    res = [evalsim.evaluate(st_, fresh, DEPTH, x, keep_paths=True)
           for st_ in (evalsim.Numerical(pol), evalsim.AnalyticOptimal(P), evalsim.TangentDelta(P))]
    for r in res:
        assert np.all(r.positions == [1200.0, 2400.0])
        np.testing.assert_array_equal(r.residuals, res[0].residuals)


@pytest.mark.parametrize("rho", [-0.4, -0.6])
def test_strategy_ordering_small(rho):
    p = P.replace(rho=rho)
    s = scen(8, 50000, params=p)
    pol, _ = hedgedp.backward_cashflow(s, p, DEPTH)
    fresh = scen(8, 100000, seed=5, params=p)
    x = DEPTH.initial_capital(p)
    v = [evalsim.evaluate(st_, fresh, DEPTH, x).variance for st_ in
         (evalsim.Numerical(pol), evalsim.AnalyticOptimal(p), evalsim.TangentDelta(p), evalsim.NoHedge())]
    assert v[0] < v[1] < v[2]
    if rho == -0.4:
        assert v[2] < v[3]
    else:
        # strong negative correlation already damps the claim; the clipped
        # tangent delta then adds more price risk than it removes
        assert v[3] < v[2]


def test_policy_mismatch_rejected():
    s = scen(4, 2000)
    pol, _ = hedgedp.backward_cashflow(s, P, DEPTH, (2, 2))
    with pytest.raises(ValueError):
        evalsim.evaluate(evalsim.Numerical(pol), s, DEPTH.replace(xi=50.0), pol.x)
    with pytest.raises(ValueError):
        evalsim.evaluate(evalsim.Numerical(pol), scen(5, 100), DEPTH, pol.x)


def test_trajectory_dump(tmp_path):
    s = scen(4, 3)
    r = evalsim.evaluate(evalsim.AnalyticOptimal(P), s, DEPTH, 0.0, keep_paths=True)
    path = tmp_path / "traj.csv"
    evalsim.dump_trajectories(r, s, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["path", "date_index", "t", "F", "D", "position"]
    assert len(rows) == 1 + 3 * 3
    assert float(rows[1 + 3 + 1][5]) == r.positions[1, 1]
    with pytest.raises(ValueError):
        evalsim.dump_trajectories(evalsim.evaluate(evalsim.NoHedge(), s, DEPTH, 0.0), s, path)


def test_multi_run():
    mean, se = evalsim.multi_run(lambda seed: float(seed), 4, seed=10)
    assert mean == 11.5
    assert se == pytest.approx(np.std([10, 11, 12, 13], ddof=1) / 2)
    with pytest.raises(ValueError):
        evalsim.multi_run(lambda s: 0.0, 1)


def test_deterministic_market_has_zero_spread():
    p = P.replace(sigma_e=0.0, sigma_d=0.0)
    x = DEPTH.initial_capital(p)

    def run(seed):
        return evalsim.evaluate(evalsim.NoHedge(), scen(3, 100, seed, p), DEPTH, x).variance

    mean, se = evalsim.multi_run(run, 3)
    assert se == 0.0
