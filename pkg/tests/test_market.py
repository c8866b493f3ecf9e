import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepsim import market
from deepsim.core import evaluate_perspective, simulate
from deepsim.market import Bid, clear_market
from deepsim.stochastics import RandomStream
from deepsim.verify import golden_market_day, oracle_clearing_price, random_bid_set

CALM = market.MarketScenario(sigma_p_conv=(0.0, 0.0, 0.0), sigma_ps=0.0)


@pytest.mark.parametrize("t, want", [(12, 400.0), (24, 0.0), (6, 0.0), (18, 0.0)])
def test_solar_quantity(t, want):
    assert market.solar_quantity(t, 0.0, -400.0) == pytest.approx(want, abs=1e-9)


def test_solar_quantity_hour_range():
    with pytest.raises(ValueError):
        market.solar_quantity(0, 0.0, -400.0)


def test_generate_bids_shape():
    bids = market.generate_bids(5, (300, 50), market.MarketScenario(), market.MarketConstants(), RandomStream(4521))
    assert len(bids) == 5
    assert [b.quantity for b in bids[:3]] == [300, 250, 1000]


def test_generate_bids_deterministic_noon():
    bids = market.generate_bids(12, (300, 50), CALM, market.MarketConstants(), RandomStream(1))
    assert [(b.quantity, b.price) for b in bids] == [
        (300, 45), (250, 50), (1000, 60), pytest.approx((400, 35)), (300, 50)
    ]


def test_generate_bids_midnight_solar_zero():
    bids = market.generate_bids(24, (300, 50), CALM, market.MarketConstants(), RandomStream(1))
    assert bids[3].producer_id == "solar" and bids[3].quantity == 0.0


def test_clear_market_hand_trace():
    bids = [Bid("solar", 0, 35), Bid("conv1", 300, 45), Bid("wind", 300, 50), Bid("conv2", 250, 50), Bid("conv3", 1000, 60)]
    out = clear_market(bids, 800)
    assert out.clearing_price == 50
    assert out.dispatched == {"solar": 0, "conv1": 300, "wind": 300, "conv2": 250, "conv3": 0}
    assert out.total_dispatched == 850


def test_clear_market_single_bid():
    out = clear_market([Bid("c", 1000, 60)], 1000)
    assert out.clearing_price == 60 and out.dispatched == {"c": 1000}


def test_clear_market_insufficient():
    with pytest.raises(market.InsufficientSupply) as err:
        clear_market([Bid("a", 200, 30), Bid("b", 300, 40)], 800)
    assert err.value.supply == 500


def test_clear_market_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        clear_market([], 0)
    with pytest.raises(ValueError):
        Bid("a", -1, 10)


def test_zero_demand_clears_at_cheapest():
    out = clear_market([Bid("a", 100, 30), Bid("b", 100, 20)], 0)
    assert out.clearing_price == 20 and out.dispatched == {"a": 0.0, "b": 100}


@pytest.mark.parametrize("args, want", [((300, 400, 50, 80), 15000), ((300, 200, 50, 80), 7000), ((0, 100, 50, 140), 0), ((0, 0, 50, 0), 0)])
def test_wind_settlement(args, want):
    assert market.wind_settlement(*args) == want


def test_simulate_day_series():
    trace, res = market.simulate_day(market.table_policy(0.0), market.MarketScenario(), stream=RandomStream(4521))
    for name in ("c_t", "x_wt", "revenue_t"):
        assert trace[name].shape == (24,)
    assert res["wind_producer"]["revenue"] == pytest.approx(trace["revenue_t"].sum())


def test_simulate_day_deterministic():
    a = market.simulate_day(market.table_policy(0.0), market.MarketScenario(), stream=RandomStream(4521, 0, 9))
    b = market.simulate_day(market.table_policy(0.0), market.MarketScenario(), stream=RandomStream(4521, 0, 9))
    assert a[0] == b[0] and a[1] == b[1]


def test_golden_day():
    constants = market.MarketConstants(sigma_D=0.0, sigma_G=0.0)
    trace, res = market.simulate_day(market.table_policy(0.0), CALM, constants, RandomStream(4521))
    golden = golden_market_day()
    assert [(int(t), c, x, r) for t, c, x, r in zip(trace.index("c_t"), trace["c_t"], trace["x_wt"], trace["revenue_t"])] == golden
    assert all(c == 50.0 and x == 300.0 and r == 15000.0 for _, c, x, r in golden)
    assert res["wind_producer"]["revenue"] == 360000.0


def test_golden_day_independent_hand_trace():
    # noon: solar 400 @35 + conv1 300 @45 = 700 < 800, so conv2 and wind @50 are needed
    noon = golden_market_day()[11]
    assert noon == (12, 50.0, 300.0, 15000.0)


def test_expensive_wind_bid_rejected():
    out = clear_market([Bid("conv1", 300, 45), Bid("conv2", 250, 50), Bid("conv3", 1000, 60), Bid("wind", 300, 70)], 800)
    assert out.dispatched["wind"] == 0.0
    assert market.wind_settlement(0.0, 100.0, out.clearing_price, 140.0) == 0.0


def test_penalty_sweep_without_rebuild():
    model = market.build_market_model()
    scen = model.default_scenario()
    revenues = [simulate(model, market.table_policy(q), scen, None, RandomStream(4521, 0, 2))[1]["wind_producer"]["revenue"]
                for q in market.TABLE_PENALTIES]
    assert all(a >= b for a, b in zip(revenues, revenues[1:]))


def test_penalty_strict_where_short():
    model = market.build_market_model()
    scen = model.default_scenario()
    traces = [simulate(model, market.table_policy(q), scen, None, RandomStream(4521, 0, 5))[0] for q in (0.0, 20.0)]
    short = traces[0]["u_t"] > 0
    assert short.any()
    assert np.all(traces[1]["revenue_t"][short] < traces[0]["revenue_t"][short])
    assert np.all(traces[1]["revenue_t"][~short] == traces[0]["revenue_t"][~short])
    assert np.all(traces[0]["revenue_t"] >= 0)


def test_regulator_modularity():
    model = market.build_market_model()
    scen = model.default_scenario()
    _, full = simulate(model, market.table_policy(80.0), scen, None, RandomStream(3, 0, 0))
    got = evaluate_perspective(model, "wind_producer", {"b_w": 300.0, "p_w": 50.0}, {"q_u": 80.0}, scen, None, RandomStream(3, 0, 0))
    assert got == full["wind_producer"]


def test_scenario_roundtrip():
    s = market.MarketScenario(mu_p_conv=(40, 41, 42))
    assert market.MarketScenario.from_bindings(s.to_scenario()) == s


def test_insufficient_supply_in_simulation():
    constants = market.MarketConstants(mu_D=5000.0, sigma_D=0.0)
    with pytest.raises(market.InsufficientSupply):
        market.simulate_day(market.table_policy(), market.MarketScenario(), constants, 1)


# --- properties against the brute-force oracle ---

bid_sets = st.lists(
    st.tuples(st.integers(0, 500), st.integers(0, 12).map(lambda k: 5.0 * k)), min_size=2, max_size=10
)


@settings(max_examples=300, deadline=None)
@given(raw=bid_sets, frac=st.floats(0.0, 1.0))
def test_clearing_matches_oracle(raw, frac):
    bids = [Bid(f"p{i}", float(q), p) for i, (q, p) in enumerate(raw)]
    demand = frac * sum(b.quantity for b in bids)
    out = clear_market(bids, demand)
    price = oracle_clearing_price(bids, demand)
    assert out.clearing_price == price
    for b in bids:
        assert out.dispatched[b.producer_id] == (b.quantity if b.price <= price else 0.0)
    assert out.total_dispatched >= demand
    # minimality: no cheaper price level covers demand
    cheaper = [b for b in bids if b.price < price]
    if cheaper:
        assert sum(b.quantity for b in cheaper) < demand


def test_clearing_oracle_thousand_cases():
    rng = random.Random(11)
    for _ in range(1000):
        bids, demand = random_bid_set(rng)
        out = clear_market(bids, demand)
        assert out.clearing_price == oracle_clearing_price(bids, demand)


@settings(max_examples=200, deadline=None)
@given(raw=bid_sets, f1=st.floats(0.0, 1.0), f2=st.floats(0.0, 1.0))
def test_price_monotone_in_demand(raw, f1, f2):
    bids = [Bid(f"p{i}", float(q), p) for i, (q, p) in enumerate(raw)]
    total = sum(b.quantity for b in bids)
    lo, hi = sorted((f1 * total, f2 * total))
    assert clear_market(bids, lo).clearing_price <= clear_market(bids, hi).clearing_price


@settings(max_examples=200, deadline=None)
@given(raw=bid_sets, frac=st.floats(0.0, 1.0))
def test_rejection_consistency(raw, frac):
    bids = [Bid(f"p{i}", float(q), p) for i, (q, p) in enumerate(raw)]
    out = clear_market(bids, frac * sum(b.quantity for b in bids))
    for b in bids:
        if b.price > out.clearing_price:
            assert out.dispatched[b.producer_id] == 0.0


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 1000), g=st.floats(0, 1000), c=st.floats(0, 200), q1=st.floats(0, 200), q2=st.floats(0, 200))
def test_settlement_monotone_in_penalty(x, g, c, q1, q2):
    lo, hi = sorted((q1, q2))
    assert market.wind_settlement(x, g, c, hi) <= market.wind_settlement(x, g, c, lo)


def test_demand_and_production_recorded_nonnegative():
    model = market.build_market_model()
    trace, _ = simulate(model, market.table_policy(), model.default_scenario(), None, RandomStream(4521))
    assert np.all(trace["D_t"] >= 0) and np.all(trace["G_t"] >= 0)
    assert np.allclose(trace["u_t"], np.maximum(0.0, trace["x_wt"] - trace["G_t"]))
    assert math.isfinite(trace["c_t"].mean())
