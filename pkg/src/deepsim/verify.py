"""Built-in verification suites for the two benchmark models.

Each check pairs the implementation with an independent oracle.  The
implementation hooks (``underlying``, ``clear``) can be swapped to confirm a
check actually detects a broken rule.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import lake, market
from .core import simulate
from .stochastics import LogNormalSpec, RandomStream, lognormal_underlying, sample_lognormal

VERIFY_SEED = 4521


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}" + (f"  ({self.detail})" if self.detail else "")


def quadratic_roots(b: float) -> tuple[float, float]:
    """Roots of ``x/(1+x**2) = b`` (the ``q = 2`` threshold equation) in closed form."""
    disc = math.sqrt(1.0 - 4.0 * b * b)
    return (1.0 - disc) / (2.0 * b), (1.0 + disc) / (2.0 * b)


def check_lognormal(underlying=lognormal_underlying, n: int = 1_000_000) -> CheckResult:
    spec = LogNormalSpec(0.02, 0.0017)
    x = sample_lognormal(RandomStream(VERIFY_SEED), spec, size=n, underlying=underlying)
    se = spec.std / math.sqrt(n)
    mean_err = abs(x.mean() - spec.mean)
    std_rel = abs(x.std() - spec.std) / spec.std
    ok = mean_err <= 3 * se and std_rel <= 0.05 and bool(np.all(x > 0))
    return CheckResult("lake unit: log-normal moments", ok, f"|mean-0.02|={mean_err:.2e} (3SE={3 * se:.1e}), std rel err={std_rel:.3%}")


def check_threshold() -> CheckResult:
    worst = 0.0
    for b in (0.1, 0.2, 0.3, 0.42, 0.45, 0.49):
        worst = max(worst, abs(lake.critical_threshold(b, 2.0) - quadratic_roots(b)[0]))
    try:
        lake.critical_threshold(0.6, 2.0)
        raised = False
    except lake.NoPositiveRoot:
        raised = True
    return CheckResult("lake unit: eutrophication threshold", worst < 1e-6 and raised, f"max |err| vs quadratic = {worst:.1e}")


def check_irreversibility(b: float = 0.42, q: float = 2.0, steps: int = 1000) -> CheckResult:
    x_crit = lake.critical_threshold(b, q)
    scen = lake.LakeScenario(b=b, q=q)
    zeros = [0.0] * steps
    x = lake.simulate_pollution(x_crit + 0.1, zeros, zeros, scen, zeros)
    upper = quadratic_roots(b)[1] if q == 2.0 else lake.upper_equilibrium(b, q)
    stays = bool(np.all(x >= x_crit))
    converged = abs(x[-1] - upper) < 1e-8
    return CheckResult("lake property: eutrophication is irreversible", stays and converged, f"X_{steps}={x[-1]:.9f}, upper root={upper:.9f}")


def check_lake_scenario(steps: int = 100) -> CheckResult:
    """With constant inflow the composed model must match the plain benchmark recurrence."""
    a = lake.frozen_emissions(VERIFY_SEED, steps)
    model = lake.build_lake_model(lake.LakeConstants(horizon=steps))
    scen = lake.LakeScenario(sigma=0.0)
    trace, _ = simulate(model, {"a": a, "r": 0.0}, scen.to_scenario(), None, RandomStream(VERIFY_SEED))
    expected = [0.0]
    for t in range(steps):
        x = expected[-1]
        expected.append(x + a[t] + x**2 / (1 + x**2) - 0.42 * x + 0.02)
    err = float(np.max(np.abs(trace["X_t"] - np.asarray(expected))))
    return CheckResult("lake scenario: deterministic trajectory matches benchmark recurrence", err < 1e-12, f"max |err|={err:.1e}")


def check_settlement() -> CheckResult:
    cases = [((300, 400, 50, 80), 15000.0), ((300, 200, 50, 80), 7000.0), ((0, 100, 50, 140), 0.0), ((300, 0, 40, 140), -30000.0)]
    bad = [args for args, want in cases if market.wind_settlement(*args) != want]
    return CheckResult("market unit: revenue and shortfall penalty", not bad, f"failing cases: {bad}" if bad else "")


def check_supply() -> CheckResult:
    bids = [market.Bid("a", 200, 30), market.Bid("b", 300, 40)]
    try:
        market.clear_market(bids, 800)
        raised = False
    except market.InsufficientSupply:
        raised = True
    return CheckResult("market unit: offered supply must cover demand", raised)


def oracle_clearing_price(bids, demand: float) -> float:
    """Try each distinct price ascending; the first that covers demand clears."""
    for p in sorted({b.price for b in bids}):
        if sum(b.quantity for b in bids if b.price <= p) >= demand:
            return p
    raise ValueError("infeasible")


def random_bid_set(rng: random.Random) -> tuple[list, float]:
    n = rng.randint(2, 10)
    prices = [float(rng.randint(0, 12) * 5) for _ in range(n)]  # coarse grid forces ties
    bids = [market.Bid(f"p{i}", float(rng.randint(0, 500)), prices[i]) for i in range(n)]
    total = sum(b.quantity for b in bids)
    return bids, rng.uniform(0.0, total)


def check_merit_order(clear: Callable = market.clear_market, cases: int = 1000) -> CheckResult:
    rng = random.Random(VERIFY_SEED)
    for k in range(cases):
        bids, demand = random_bid_set(rng)
        out = clear(bids, demand)
        price = oracle_clearing_price(bids, demand)
        full = all(out.dispatched[b.producer_id] == (b.quantity if b.price <= price else 0.0) for b in bids)
        if out.clearing_price != price or not full or out.total_dispatched < demand:
            return CheckResult("market property: merit-order clearing", False, f"case {k}: price {out.clearing_price} vs oracle {price}, full acceptance={full}")
    return CheckResult("market property: merit-order clearing", True, f"{cases} random bid sets")


def golden_market_day() -> list[tuple[int, float, float, float]]:
    """Hand-traceable deterministic day: all sigmas 0, demand 800, G 300, q_u 0."""
    rows = []
    for t in range(1, 25):
        solar = max(0.0, -400.0 * math.cos(2 * math.pi * t / 24))
        ladder = [(35.0, solar), (45.0, 300.0), (50.0, 250.0 + 300.0), (60.0, 1000.0)]
        cum = 0.0
        for price, qty in ladder:
            cum += qty
            if cum >= 800.0:
                break
        x = 300.0 if 50.0 <= price else 0.0
        rows.append((t, price, x, price * x - 0.0 * max(0.0, x - 300.0)))
    return rows


def deterministic_market_model():
    constants = market.MarketConstants(sigma_D=0.0, sigma_G=0.0)
    return market.build_market_model(constants)


def check_market_scenario() -> CheckResult:
    model = deterministic_market_model()
    scen = market.MarketScenario(sigma_p_conv=(0.0, 0.0, 0.0), sigma_ps=0.0).to_scenario()
    trace, res = simulate(model, market.table_policy(0.0), scen, None, RandomStream(VERIFY_SEED))
    golden = golden_market_day()
    ok = all(
        trace["c_t"][t - 1] == c and trace["x_wt"][t - 1] == x and trace["revenue_t"][t - 1] == rev
        for t, c, x, rev in golden
    )
    total = sum(r[3] for r in golden)
    ok = ok and res["wind_producer"]["revenue"] == total
    return CheckResult("market scenario: deterministic golden day", ok, f"daily revenue {res['wind_producer']['revenue']:g} vs {total:g}")


def run_all(underlying=lognormal_underlying, clear: Callable = market.clear_market) -> list[CheckResult]:
    return [
        check_lognormal(underlying),
        check_threshold(),
        check_irreversibility(),
        check_lake_scenario(),
        check_settlement(),
        check_supply(),
        check_merit_order(clear),
        check_market_scenario(),
    ]
