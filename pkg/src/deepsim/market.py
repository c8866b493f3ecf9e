"""Day-ahead electricity market with a wind producer and a system regulator.

Five producers bid every hour: three conventional units with fixed
quantities and normally distributed prices, a solar unit whose quantity
follows a cosine daily profile, and the wind producer whose bid is the
decision ``(b_w, p_w)``.  The operator clears by merit order: the clearing
price is the lowest bid price at which the cumulative offered quantity covers
demand, and every bid at or below that price is dispatched in full.

The wind producer is paid ``c_t * x_wt`` and charged ``q_u`` per MWh of
shortfall against its actual production ``G_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    Component,
    ComposedModel,
    Environment,
    Kind,
    ModelError,
    Objective,
    ParameterSpec,
    Perspective,
    Policy,
    Scenario,
    SeriesSpec,
    compose,
    simulate,
)
from .stochastics import RandomStream, sample_normal_clamped

HOURS = 24
PRODUCERS = ("conv1", "conv2", "conv3", "solar", "wind")
TABLE_PENALTIES = (0.0, 20.0, 80.0, 140.0)
TABLE_WIND_BID = (300.0, 50.0)


class InsufficientSupply(ModelError):
    def __init__(self, demand: float, supply: float, hour: int | None = None):
        at = f" in hour {hour}" if hour is not None else ""
        super().__init__(f"offered supply {supply:g} MWh cannot meet demand {demand:g} MWh{at}")
        self.demand = demand
        self.supply = supply
        self.hour = hour


@dataclass(frozen=True)
class Bid:
    producer_id: str
    quantity: float
    price: float

    def __post_init__(self):
        if self.quantity < 0:
            raise ValueError(f"bid quantity must be >= 0, got {self.quantity}")


@dataclass(frozen=True)
class MarketConstants:
    mu_D: float = 800.0
    sigma_D: float = 200.0
    b_conv: tuple[float, float, float] = (300.0, 250.0, 1000.0)
    solar_a: float = 0.0
    solar_b: float = -400.0
    mu_G: float = 300.0
    sigma_G: float = 100.0
    q_u: float = 0.0  # default of the regulator's decision

    def __post_init__(self):
        object.__setattr__(self, "b_conv", tuple(float(v) for v in self.b_conv))
        if len(self.b_conv) != 3:
            raise ValueError(f"expected 3 conventional bid quantities, got {len(self.b_conv)}")
        if self.sigma_D < 0 or self.sigma_G < 0:
            raise ValueError("standard deviations must be >= 0")
        if min(self.b_conv) < 0:
            raise ValueError("conventional bid quantities must be >= 0")


@dataclass(frozen=True)
class MarketScenario:
    mu_p_conv: tuple[float, float, float] = (45.0, 50.0, 60.0)
    sigma_p_conv: tuple[float, float, float] = (5.0, 5.0, 5.0)
    mu_ps: float = 35.0
    sigma_ps: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "mu_p_conv", tuple(float(v) for v in self.mu_p_conv))
        object.__setattr__(self, "sigma_p_conv", tuple(float(v) for v in self.sigma_p_conv))
        if min(self.sigma_p_conv) < 0 or self.sigma_ps < 0:
            raise ValueError("price standard deviations must be >= 0")

    def to_scenario(self, name: str = "default") -> Scenario:
        values = {f"mu_p{i + 1}": v for i, v in enumerate(self.mu_p_conv)}
        values.update({f"sigma_p{i + 1}": v for i, v in enumerate(self.sigma_p_conv)})
        values.update(mu_ps=self.mu_ps, sigma_ps=self.sigma_ps)
        return Scenario(values, name=name)

    @classmethod
    def from_bindings(cls, values) -> "MarketScenario":
        return cls(
            mu_p_conv=tuple(values[f"mu_p{i}"] for i in (1, 2, 3)),
            sigma_p_conv=tuple(values[f"sigma_p{i}"] for i in (1, 2, 3)),
            mu_ps=values["mu_ps"],
            sigma_ps=values["sigma_ps"],
        )


@dataclass(frozen=True)
class ClearingOutcome:
    clearing_price: float
    dispatched: dict[str, float] = field(default_factory=dict)
    demand_served: float = 0.0

    @property
    def total_dispatched(self) -> float:
        return sum(self.dispatched.values())


def solar_quantity(t: int, a: float, b: float) -> float:
    """Solar bid quantity ``max(0, a + b cos(2 pi t / 24))`` for hour ``t`` in 1..24."""
    if not 1 <= t <= HOURS:
        raise ValueError(f"hour must lie in 1..{HOURS}, got {t}")
    return max(0.0, a + b * math.cos(2.0 * math.pi * t / HOURS))


def clear_market(bids: Sequence[Bid], demand: float, hour: int | None = None) -> ClearingOutcome:
    """Merit-order clearing with full acceptance of every bid priced at or below the clearing price."""
    if not bids:
        raise ValueError("cannot clear a market without bids")
    supply = sum(b.quantity for b in bids)
    if supply < demand:
        raise InsufficientSupply(demand, supply, hour)
    ladder = sorted(bids, key=lambda b: b.price)
    cumulative = 0.0
    # summation order can leave the full ladder a rounding error short of supply
    price = ladder[-1].price
    for i, bid in enumerate(ladder):
        cumulative += bid.quantity
        last_at_price = i + 1 == len(ladder) or ladder[i + 1].price != bid.price
        if last_at_price and cumulative >= demand:
            price = bid.price
            break
    dispatched = {}
    for bid in bids:
        q = bid.quantity if bid.price <= price else 0.0
        dispatched[bid.producer_id] = dispatched.get(bid.producer_id, 0.0) + q
    return ClearingOutcome(price, dispatched, float(demand))


def wind_settlement(x_wt: float, G_t: float, c_t: float, q_u: float) -> float:
    """Hourly wind revenue: payment at the clearing price minus the shortfall penalty."""
    if x_wt < 0 or G_t < 0:
        raise ValueError("dispatch and production must be >= 0")
    shortfall = max(0.0, x_wt - G_t)
    return c_t * x_wt - q_u * shortfall


def _draw_prices(stream, mu_conv, sigma_conv, mu_ps, sigma_ps):
    conv = tuple(sample_normal_clamped(stream, m, s, 0.0) for m, s in zip(mu_conv, sigma_conv))
    return conv, sample_normal_clamped(stream, mu_ps, sigma_ps, 0.0)


def _assemble_bids(hour, conv_prices, solar_price, b_conv, solar_a, solar_b, wind_bid):
    bids = [Bid(f"conv{i + 1}", q, p) for i, (q, p) in enumerate(zip(b_conv, conv_prices))]
    bids.append(Bid("solar", solar_quantity(hour, solar_a, solar_b), solar_price))
    bids.append(Bid("wind", wind_bid[0], wind_bid[1]))
    return bids


def generate_bids(
    t: int,
    wind_bid: tuple[float, float],
    scenario: MarketScenario,
    constants: MarketConstants,
    stream: RandomStream,
) -> list[Bid]:
    """The five bids for hour ``t``: conventional, solar, then the wind producer's ``(quantity, price)``."""
    conv, solar = _draw_prices(stream, scenario.mu_p_conv, scenario.sigma_p_conv, scenario.mu_ps, scenario.sigma_ps)
    return _assemble_bids(t, conv, solar, constants.b_conv, constants.solar_a, constants.solar_b, wind_bid)


def _prepare(scenario, constants):
    return {
        "mu_conv": (scenario["mu_p1"], scenario["mu_p2"], scenario["mu_p3"]),
        "sigma_conv": (scenario["sigma_p1"], scenario["sigma_p2"], scenario["sigma_p3"]),
        "mu_ps": scenario["mu_ps"],
        "sigma_ps": scenario["sigma_ps"],
        "b_conv": (constants["b_1"], constants["b_2"], constants["b_3"]),
        "solar": (constants["solar_a"], constants["solar_b"]),
        "D": (constants["mu_D"], constants["sigma_D"]),
        "G": (constants["mu_G"], constants["sigma_G"]),
    }


def _initial_state(ctx):
    return {}


def _draw(stream, t, ctx):
    demand = sample_normal_clamped(stream, *ctx["D"], 0.0)
    conv, solar = _draw_prices(stream, ctx["mu_conv"], ctx["sigma_conv"], ctx["mu_ps"], ctx["sigma_ps"])
    production = sample_normal_clamped(stream, *ctx["G"], 0.0)
    return {"D_t": demand, "p_1t": conv[0], "p_2t": conv[1], "p_3t": conv[2], "p_st": solar, "G_t": production}


def _transition(state, decisions, draws, t, ctx):
    hour = t + 1
    bids = _assemble_bids(
        hour,
        (draws["p_1t"], draws["p_2t"], draws["p_3t"]),
        draws["p_st"],
        ctx["b_conv"],
        *ctx["solar"],
        (decisions["b_w"], decisions["p_w"]),
    )
    outcome = clear_market(bids, draws["D_t"], hour=hour)
    x_wt = outcome.dispatched["wind"]
    price = outcome.clearing_price
    outputs = {
        "c_t": price,
        "x_wt": x_wt,
        "revenue_t": wind_settlement(x_wt, draws["G_t"], price, decisions["q_u"]),
        "u_t": max(0.0, x_wt - draws["G_t"]),
        "b_st": bids[3].quantity,
        "D_t": draws["D_t"],
        "G_t": draws["G_t"],
    }
    return state, outputs


def _wind_objectives(trace, policy, scenario, constants):
    return {"revenue": float(np.sum(trace["revenue_t"]))}


def _regulator_objectives(trace, policy, scenario, constants):
    return {
        "shortfall_total": float(np.sum(trace["u_t"])),
        "mean_price": float(np.mean(trace["c_t"])),
    }


COMPONENTS = (
    Component("b_wt", "decision", "b_w"),
    Component("p_wt", "decision", "p_w"),
    Component("h_t", "transition", "transition"),
    Component("D_t", "stochastic", "D_t"),
    Component("p_1t", "stochastic", "p_1t"),
    Component("p_2t", "stochastic", "p_2t"),
    Component("p_3t", "stochastic", "p_3t"),
    Component("p_st", "stochastic", "p_st"),
    Component("G_t", "stochastic", "G_t"),
    Component("mu_D", "constant", "mu_D"),
    Component("sigma_D", "constant", "sigma_D"),
    Component("b_1", "constant", "b_1"),
    Component("b_2", "constant", "b_2"),
    Component("b_3", "constant", "b_3"),
    Component("a", "constant", "solar_a"),
    Component("b", "constant", "solar_b"),
    Component("mu_G", "constant", "mu_G"),
    Component("sigma_G", "constant", "sigma_G"),
    Component("q_u", "decision", "q_u"),
    Component("mu_p1", "deep_uncertain", "mu_p1"),
    Component("mu_p2", "deep_uncertain", "mu_p2"),
    Component("mu_p3", "deep_uncertain", "mu_p3"),
    Component("sigma_p1", "deep_uncertain", "sigma_p1"),
    Component("sigma_p2", "deep_uncertain", "sigma_p2"),
    Component("sigma_p3", "deep_uncertain", "sigma_p3"),
    Component("mu_ps", "deep_uncertain", "mu_ps"),
    Component("sigma_ps", "deep_uncertain", "sigma_ps"),
    Component("Pi", "objective", "revenue"),
    Component("b_st", "other", "b_st"),
)


def _band(value: float) -> tuple[float, float]:
    return (0.5 * value, 1.5 * value)


def market_environment(constants: MarketConstants = MarketConstants()) -> Environment:
    ref = MarketScenario()
    du, const = Kind.DEEP_UNCERTAIN, Kind.CONSTANT
    inf = math.inf
    parameters = []
    for i, (m, s) in enumerate(zip(ref.mu_p_conv, ref.sigma_p_conv), start=1):
        parameters.append(ParameterSpec(f"mu_p{i}", du, 0.0, inf, m, sample_range=_band(m), description=f"mean bid price, conventional {i}"))
        parameters.append(ParameterSpec(f"sigma_p{i}", du, 0.0, inf, s, sample_range=_band(s), description=f"std of bid price, conventional {i}"))
    parameters += [
        ParameterSpec("mu_ps", du, 0.0, inf, ref.mu_ps, sample_range=_band(ref.mu_ps), description="mean solar bid price"),
        ParameterSpec("sigma_ps", du, 0.0, inf, ref.sigma_ps, sample_range=_band(ref.sigma_ps), description="std of solar bid price"),
        ParameterSpec("mu_D", const, -inf, inf, constants.mu_D, description="mean demand (MWh)"),
        ParameterSpec("sigma_D", const, 0.0, inf, constants.sigma_D, description="std of demand (MWh)"),
        *(
            ParameterSpec(f"b_{i}", const, 0.0, inf, q, description=f"bid quantity, conventional {i} (MWh)")
            for i, q in enumerate(constants.b_conv, start=1)
        ),
        ParameterSpec("solar_a", const, -inf, inf, constants.solar_a, description="solar profile offset (MWh)"),
        ParameterSpec("solar_b", const, -inf, inf, constants.solar_b, description="solar profile amplitude (MWh)"),
        ParameterSpec("mu_G", const, -inf, inf, constants.mu_G, description="mean wind production (MWh)"),
        ParameterSpec("sigma_G", const, 0.0, inf, constants.sigma_G, description="std of wind production (MWh)"),
    ]
    return Environment(
        name="market",
        horizon=HOURS,
        parameters=tuple(parameters),
        series=(
            SeriesSpec("c_t", "step", "clearing price"),
            SeriesSpec("x_wt", "step", "dispatched wind energy"),
            SeriesSpec("revenue_t", "step", "wind producer revenue"),
            SeriesSpec("u_t", "step", "wind shortfall"),
            SeriesSpec("b_st", "step", "solar bid quantity"),
            SeriesSpec("D_t", "step", "market demand"),
            SeriesSpec("G_t", "step", "actual wind production"),
        ),
        prepare=_prepare,
        initial_state=_initial_state,
        draw=_draw,
        transition=_transition,
        requires=frozenset({"b_w", "p_w", "q_u", "mu_D", "sigma_D", "mu_G", "sigma_G", "solar_a", "solar_b",
                            "b_1", "b_2", "b_3", "mu_p1", "mu_p2", "mu_p3",
                            "sigma_p1", "sigma_p2", "sigma_p3", "mu_ps", "sigma_ps"}),
        stochastic=("p_1t", "p_2t", "p_3t", "p_st"),
        step_origin=1,
        components=COMPONENTS,
    )


def wind_producer_perspective() -> Perspective:
    bid_q, bid_p = TABLE_WIND_BID
    return Perspective(
        id="wind_producer",
        decisions=(
            ParameterSpec("b_w", Kind.DECISION, 0.0, math.inf, bid_q, per_timestep=True, description="hourly bid quantity (MWh)"),
            ParameterSpec("p_w", Kind.DECISION, 0.0, math.inf, bid_p, per_timestep=True, description="hourly bid price"),
        ),
        objectives=(Objective("revenue", "max", "daily revenue"),),
        evaluate=_wind_objectives,
        requires=frozenset({"revenue_t"}),
    )


def regulator_perspective(q_u: float = 0.0) -> Perspective:
    return Perspective(
        id="regulator",
        decisions=(ParameterSpec("q_u", Kind.DECISION, 0.0, math.inf, q_u, description="shortfall penalty per MWh"),),
        objectives=(
            Objective("shortfall_total", "min", "total wind under-delivery (MWh)"),
            Objective("mean_price", "min", "mean hourly clearing price"),
        ),
        evaluate=_regulator_objectives,
        requires=frozenset({"u_t", "c_t"}),
    )


def build_market_model(constants: MarketConstants = MarketConstants()) -> ComposedModel:
    return compose(market_environment(constants), [wind_producer_perspective(), regulator_perspective(constants.q_u)])


def table_policy(q_u: float = 0.0, wind_bid: tuple[float, float] = TABLE_WIND_BID, name: str | None = None) -> Policy:
    """Reference policy: constant hourly wind bid and a penalty level."""
    return Policy({"b_w": wind_bid[0], "p_w": wind_bid[1], "q_u": q_u}, name=name or f"q_u={q_u:g}")


def simulate_day(policy, scenario: MarketScenario | Scenario, constants: MarketConstants = MarketConstants(), stream=0):
    """Simulate one market day; ``Π`` is the wind producer's ``revenue`` objective."""
    model = build_market_model(constants)
    if isinstance(scenario, MarketScenario):
        scenario = scenario.to_scenario()
    return simulate(model, policy, scenario, model.default_constants(), stream)
