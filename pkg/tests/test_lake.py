import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from deepsim import lake
from deepsim.core import audit, evaluate_perspective, simulate
from deepsim.stochastics import LogNormalSpec, RandomStream, sample_lognormal

REF = lake.LakeScenario()


def quadratic_lower(b):
    return (1 - math.sqrt(1 - 4 * b * b)) / (2 * b)


def quadratic_upper(b):
    return (1 + math.sqrt(1 - 4 * b * b)) / (2 * b)


def grid_oracle(b, q, points=200_001):
    """First sign change of x**q/(1+x**q) - b*x on a fine grid, then refined."""
    x = np.linspace(0.0, 1.0 / b, points)[1:]
    g = x**q / (1 + x**q) - b * x
    k = int(np.argmax(g >= 0))
    assert g[k] >= 0 and k > 0
    return brentq(lambda v: v**q / (1 + v**q) - b * v, x[k - 1], x[k], xtol=1e-14)


@pytest.mark.parametrize("x, q, want", [(0.0, 2.0, 0.0), (1.0, 2.0, 0.5), (1.0, 3.7, 0.5), (2.0, 2.0, 0.8)])
def test_recycling(x, q, want):
    assert lake.recycling(x, q) == pytest.approx(want, abs=1e-15)


def test_lake_step_examples():
    assert lake.lake_step(0.0, 0.0, 0.0, REF, 0.0) == 0.0
    assert lake.lake_step(1.0, 0.03, 0.0, REF, 0.02) == pytest.approx(1.13, abs=1e-12)
    assert lake.lake_step(0.01, 0.0, 0.5, REF, 0.001) == 0.0


def test_threshold_reference_value():
    got = lake.critical_threshold(0.42, 2.0)
    assert abs(got - quadratic_lower(0.42)) < 1e-6
    assert abs(got - 0.5445400016) < 1e-6
    assert abs(got**2 / (1 + got**2) - 0.42 * got) < 1e-8


def test_threshold_tangent_case():
    # b = 1/2 touches the recycling curve at x = 1
    assert lake.critical_threshold(0.5, 2.0) == pytest.approx(1.0, abs=1e-4)


def test_threshold_small_b():
    assert abs(lake.critical_threshold(0.1, 2.0) - (1 - math.sqrt(0.96)) / 0.2) < 1e-6


@pytest.mark.parametrize("b", [0.51, 0.6, 0.9])
def test_threshold_no_root(b):
    with pytest.raises(lake.NoPositiveRoot):
        lake.critical_threshold(b, 2.0)


@pytest.mark.parametrize("b, q", [(0.0, 2.0), (1.0, 2.0), (0.4, 1.0)])
def test_threshold_domain(b, q):
    with pytest.raises(ValueError):
        lake.critical_threshold(b, q)


def test_threshold_matches_grid_oracle():
    rng = np.random.default_rng(4521)
    for b, q in zip(rng.uniform(0.1, 0.45, 100), rng.uniform(2.0, 4.5, 100)):
        assert abs(lake.critical_threshold(b, q) - grid_oracle(b, q)) < 1e-6


def test_upper_equilibrium_quadratic():
    assert lake.upper_equilibrium(0.42, 2.0) == pytest.approx(quadratic_upper(0.42), abs=1e-9)


def test_economic_benefit_examples():
    assert lake.economic_benefit([0.0] * 5, 0.4, 0.98) == 0.0
    assert lake.economic_benefit([0.03] * 10, 0.4, 1.0) == pytest.approx(0.12, abs=1e-15)
    assert lake.economic_benefit([0.03] * 3, 0.4, 0.98) == pytest.approx(0.0352848, abs=1e-15)


def test_reliability_examples():
    assert lake.reliability([0.0, 0.1, 0.2], 0.5) == 1.0
    assert lake.reliability([0.0, 0.9, 0.8], 0.5) == 0.0
    assert lake.reliability([9.0, 0.1, 0.9, 0.2, 0.8], 0.5) == 0.5
    # an observation exactly at the threshold is not "below"
    assert lake.reliability([0.0, 0.5], 0.5) == 0.0


def test_build_and_trace():
    model = lake.build_lake_model()
    assert set(audit(model)) >= {"X_t", "eps_t", "X_crit", "f_economic"}
    trace, res = simulate(model, lake.table_policy(), model.default_scenario(), None, RandomStream(4521))
    assert len(trace["X_t"]) == 101 and trace["X_t"][0] == 0.0
    assert trace.derived["X_crit"] == lake.critical_threshold(0.42, 2.0)
    assert res["regulator"]["removal_total"] == 0.0


def test_trace_matches_reference_recurrence():
    model = lake.build_lake_model()
    policy = lake.table_policy(0.002)
    trace, res = simulate(model, policy, model.default_scenario(), None, RandomStream(4521, 0, 3))
    replay = RandomStream(4521, 0, 3)
    eps = [sample_lognormal(replay, LogNormalSpec(0.02, 0.0017)) for _ in range(100)]
    x = lake.simulate_pollution(0.0, policy["a"], [0.002] * 100, REF, eps)
    assert np.array_equal(x, trace["X_t"])
    assert res["community"]["f_economic"] == lake.economic_benefit(policy["a"], 0.4, 0.98)
    assert res["regulator"]["removal_total"] == pytest.approx(0.2)


def test_modularity_community():
    model = lake.build_lake_model()
    pol = lake.table_policy(0.0)
    _, full = simulate(model, pol, model.default_scenario(), None, RandomStream(7, 1, 1))
    got = evaluate_perspective(model, "community", {"a": pol["a"]}, {"r": 0.0}, model.default_scenario(), None, RandomStream(7, 1, 1))
    assert got == full["community"]


def test_custom_horizon_and_start():
    model = lake.build_lake_model(lake.LakeConstants(horizon=10, x0=0.3))
    trace, _ = simulate(model, {"a": 0.0, "r": 0.0}, model.default_scenario(), None, 1)
    assert len(trace["X_t"]) == 11 and trace["X_t"][0] == 0.3


def test_nonnegative_over_many_trajectories():
    model = lake.build_lake_model(lake.LakeConstants(horizon=50))
    scen = lake.LakeScenario(sigma=0.005).to_scenario()
    rng = np.random.default_rng(0)
    for rep in range(1000):
        policy = {"a": tuple(rng.uniform(0, 0.05, 50)), "r": tuple(rng.uniform(0, 0.1, 50))}
        trace, _ = simulate(model, policy, scen, None, RandomStream(1, 0, rep))
        assert np.all(trace["X_t"] >= 0)


def test_irreversibility():
    x_crit = lake.critical_threshold(0.42, 2.0)
    zeros = [0.0] * 1000
    x = lake.simulate_pollution(x_crit + 0.1, zeros, zeros, REF, zeros)
    assert np.all(x >= x_crit)
    assert abs(x[-1] - quadratic_upper(0.42)) < 1e-8


def test_recovery_below_threshold():
    x_crit = lake.critical_threshold(0.42, 2.0)
    zeros = [0.0] * 2000
    x = lake.simulate_pollution(x_crit - 0.01, zeros, zeros, REF, zeros)
    assert np.all(np.diff(x) <= 0)
    assert x[-1] < 1e-6


def test_regulator_dominance_pathwise():
    model = lake.build_lake_model()
    scen = model.default_scenario()
    for rep in range(10):
        paths = [simulate(model, lake.table_policy(r), scen, None, RandomStream(4521, 0, rep))[0]["X_t"]
                 for r in lake.TABLE_REMOVAL_LEVELS]
        for lo, hi in zip(paths[1:], paths[:-1]):
            assert np.all(lo <= hi)


def test_deterministic_strongest_removal_stays_below():
    model = lake.build_lake_model()
    scen = lake.LakeScenario(sigma=0.0).to_scenario()
    trace, res = simulate(model, lake.table_policy(0.003), scen, None, RandomStream(4521))
    assert np.all(trace["X_t"] < lake.critical_threshold(0.42, 2.0))
    assert res["regulator"]["reliability"] == 1.0


@settings(max_examples=50, deadline=None)
@given(
    scale=st.floats(1.0, 2.0),
    alpha=st.floats(0.0, 2.0),
    delta=st.floats(0.5, 1.0),
)
def test_benefit_monotone_in_emissions(scale, alpha, delta):
    a = lake.frozen_emissions(4521, 20)
    assert lake.economic_benefit([v * scale for v in a], alpha, delta) >= lake.economic_benefit(a, alpha, delta)


def test_policy_dataclass():
    pol = lake.LakePolicy([0.01, 0.02], [0.0, 0.0]).to_policy()
    assert pol["a"] == (0.01, 0.02)
    with pytest.raises(ValueError):
        lake.LakePolicy([-0.1], [0.0])
    with pytest.raises(ValueError):
        lake.LakePolicy([0.1, 0.1], [0.0])
