"""Shallow-lake pollution problem with a community and a regulator perspective.

Pollution evolves as::

    X[t+1] = max(0, X[t] + (a[t] - r[t]) + X[t]**q / (1 + X[t]**q) - b * X[t] + eps[t])

with ``eps`` log-normal natural inflow.  The community chooses emissions ``a``,
the regulator chooses removal ``r``; both act on the same net-emission term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
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
    Trace,
    compose,
)
from .stochastics import LogNormalSpec, frozen_uniform_sequence, sample_lognormal

TABLE_REMOVAL_LEVELS = (0.0, 0.001, 0.002, 0.003)
TABLE_SEED = 4521


class NoPositiveRoot(ModelError):
    """Natural removal outpaces recycling everywhere: there is no tipping point."""


@dataclass(frozen=True)
class LakeConstants:
    alpha: float = 0.4
    horizon: int = 100
    x0: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.x0 < 0:
            raise ValueError(f"x0 must be >= 0, got {self.x0}")


@dataclass(frozen=True)
class LakeScenario:
    """Deep uncertainties; defaults are the benchmark's reference scenario."""

    b: float = 0.42
    q: float = 2.0
    mu: float = 0.02
    sigma: float = 0.0017
    delta: float = 0.98

    def to_scenario(self, name: str = "default") -> Scenario:
        return Scenario({"b": self.b, "q": self.q, "mu": self.mu, "sigma": self.sigma, "delta": self.delta}, name=name)


@dataclass(frozen=True)
class LakePolicy:
    a: tuple[float, ...]
    r: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        if len(self.a) != len(self.r):
            raise ValueError(f"a and r must have equal length, got {len(self.a)} and {len(self.r)}")
        if min(self.a, default=0.0) < 0 or min(self.r, default=0.0) < 0:
            raise ValueError("emissions and removals must be nonnegative")

    def to_policy(self, name: str = "default") -> Policy:
        return Policy({"a": self.a, "r": self.r}, name=name)


def recycling(x: float, q: float) -> float:
    """Natural recycling ``x**q / (1 + x**q)``."""
    xq = x**q
    return xq / (1.0 + xq)


def _next_pollution(x: float, net: float, b: float, q: float, eps: float) -> float:
    xq = x**q
    return max(0.0, x + net + xq / (1.0 + xq) - b * x + eps)


def lake_step(x: float, a: float, r: float, scenario: LakeScenario, eps: float) -> float:
    """One pollution transition with emission ``a`` and removal ``r``."""
    return _next_pollution(x, a - r, scenario.b, scenario.q, eps)


def simulate_pollution(x0: float, a: Sequence[float], r: Sequence[float], scenario: LakeScenario, eps: Sequence[float]) -> np.ndarray:
    """Pollution path of length ``len(a) + 1`` for a given inflow sequence."""
    if not len(a) == len(r) == len(eps):
        raise ValueError("a, r and eps must have equal length")
    out = np.empty(len(a) + 1)
    out[0] = x = float(x0)
    b, q = scenario.b, scenario.q
    for t in range(len(a)):
        x = _next_pollution(x, a[t] - r[t], b, q, eps[t])
        out[t + 1] = x
    return out


def _peak(q: float) -> float:
    # recycling(x)/x peaks at x**q == q - 1
    return (q - 1.0) ** (1.0 / q)


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (fmid < 0) == (flo < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_bq(b: float, q: float):
    if not 0 < b < 1:
        raise ValueError(f"removal rate b must lie in (0, 1), got {b}")
    if not q > 1:
        raise ValueError(f"recycling exponent q must be > 1, got {q}")


def critical_threshold(b: float, q: float, tol: float = 1e-9) -> float:
    """Smallest positive pollution level where recycling equals natural removal.

    Solves ``x**q / (1 + x**q) = b * x`` by bisection on
    ``x**(q-1) / (1 + x**q) - b``, which is unimodal on ``x > 0`` with its
    peak at ``(q - 1)**(1/q)``; the lower root is bracketed by ``[0, peak]``.
    """
    _check_bq(b, q)
    peak = _peak(q)

    def g(x):
        return x ** (q - 1.0) / (1.0 + x**q) - b

    if g(peak) < 0:
        raise NoPositiveRoot(f"no positive root for b={b}, q={q}: removal exceeds recycling everywhere")
    return _bisect(g, 0.0, peak, tol)


def upper_equilibrium(b: float, q: float, tol: float = 1e-12) -> float:
    """Largest root of ``x**q / (1 + x**q) = b * x``: the eutrophic equilibrium."""
    _check_bq(b, q)
    peak = _peak(q)

    def g(x):
        return x ** (q - 1.0) / (1.0 + x**q) - b

    if g(peak) < 0:
        raise NoPositiveRoot(f"no positive root for b={b}, q={q}")
    # g(1/b) = b / (1 + b**q) - b < 0
    return _bisect(g, peak, 1.0 / b, tol)


def economic_benefit(a: Sequence[float], alpha: float, delta: float) -> float:
    """Discounted benefit ``sum(alpha * a[t] * delta**t)`` for ``t = 0 .. T-1``."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(alpha * a * delta ** np.arange(len(a))))


def reliability(pollution, x_crit: float) -> float:
    """Fraction of steps ``t = 1 .. T`` with pollution strictly below ``x_crit``.

    ``pollution`` is a :class:`Trace` or the full state series including ``X_0``.
    """
    if isinstance(pollution, Trace):
        pollution = pollution["X_t"]
    x = np.asarray(pollution, dtype=float)[1:]
    if len(x) == 0:
        raise ValueError("pollution series needs at least one step after X_0")
    return float(np.mean(x < x_crit))


def frozen_emissions(master_seed: int = TABLE_SEED, horizon: int = 100, low: float = 0.02, high: float = 0.04) -> tuple[float, ...]:
    """Fixed emission sequence drawn uniformly from ``[low, high)`` once per seed."""
    return frozen_uniform_sequence(master_seed, horizon, low, high)


def table_policy(r: float = 0.0, master_seed: int = TABLE_SEED, horizon: int = 100, name: str | None = None) -> Policy:
    """Reference policy: frozen uniform emissions and a constant removal level."""
    return Policy({"a": frozen_emissions(master_seed, horizon), "r": r}, name=name or f"r={r:g}")


# Environment callables are module-level so composed models pickle for process pools.

def _prepare(scenario, constants):
    return {
        "b": scenario["b"],
        "q": scenario["q"],
        "inflow": LogNormalSpec(scenario["mu"], scenario["sigma"]),
        "x0": constants["x0"],
    }


def _initial_state(ctx):
    return {"X_t": ctx["x0"]}


def _draw(stream, t, ctx):
    return {"eps_t": sample_lognormal(stream, ctx["inflow"])}


def _transition(state, decisions, draws, t, ctx):
    x = _next_pollution(state["X_t"], decisions["a"] - decisions["r"], ctx["b"], ctx["q"], draws["eps_t"])
    return {"X_t": x}, {}


def _derive(ctx):
    return {"X_crit": critical_threshold(ctx["b"], ctx["q"])}


def _community_objectives(trace, policy, scenario, constants):
    return {
        "f_economic": economic_benefit(policy["a"], constants["alpha"], scenario["delta"]),
        "reliability": reliability(trace["X_t"], trace.derived["X_crit"]),
    }


def _regulator_objectives(trace, policy, scenario, constants):
    return {
        "reliability": reliability(trace["X_t"], trace.derived["X_crit"]),
        "removal_total": float(np.sum(policy["r"])),
    }


COMPONENTS = (
    Component("X_t", "state", "X_t"),
    Component("a_t", "decision", "a"),
    Component("r_t", "decision", "r"),
    Component("f(X_t)", "transition", "transition"),
    Component("eps_t", "stochastic", "eps_t"),
    Component("alpha", "constant", "alpha"),
    Component("mu", "deep_uncertain", "mu"),
    Component("sigma", "deep_uncertain", "sigma"),
    Component("b", "deep_uncertain", "b"),
    Component("q", "deep_uncertain", "q"),
    Component("delta", "deep_uncertain", "delta"),
    Component("f_economic", "objective", "f_economic"),
    Component("X_crit", "other", "X_crit"),
)


def lake_environment(constants: LakeConstants = LakeConstants()) -> Environment:
    ref = LakeScenario()
    du = Kind.DEEP_UNCERTAIN
    parameters = (
        ParameterSpec("b", du, 0.0, 1.0, ref.b, sample_range=(0.1, 0.45), description="natural removal rate"),
        ParameterSpec("q", du, 1.0, math.inf, ref.q, sample_range=(2.0, 4.5), description="recycling exponent"),
        ParameterSpec("mu", du, 0.0, math.inf, ref.mu, sample_range=(0.01, 0.05), description="mean natural inflow"),
        ParameterSpec("sigma", du, 0.0, math.inf, ref.sigma, sample_range=(0.001, 0.005), description="std of natural inflow"),
        ParameterSpec("delta", du, 0.0, 1.0, ref.delta, sample_range=(0.93, 0.99), description="discount factor"),
        ParameterSpec("alpha", Kind.CONSTANT, 0.0, math.inf, constants.alpha, description="benefit-to-pollution ratio"),
        ParameterSpec("x0", Kind.CONSTANT, 0.0, math.inf, constants.x0, description="initial pollution"),
    )
    return Environment(
        name="lake",
        horizon=constants.horizon,
        parameters=parameters,
        series=(SeriesSpec("X_t", "state", "lake pollution"),),
        prepare=_prepare,
        initial_state=_initial_state,
        draw=_draw,
        transition=_transition,
        derive=_derive,
        requires=frozenset({"a", "r", "b", "q", "mu", "sigma", "x0"}),
        stochastic=("eps_t",),
        derived=("X_crit",),
        components=COMPONENTS,
    )


def community_perspective() -> Perspective:
    return Perspective(
        id="community",
        decisions=(
            ParameterSpec("a", Kind.DECISION, 0.0, math.inf, 0.0, per_timestep=True, description="anthropogenic emission"),
        ),
        objectives=(
            Objective("f_economic", "max", "discounted economic benefit"),
            Objective("reliability", "max", "share of steps below the eutrophication threshold"),
        ),
        evaluate=_community_objectives,
        requires=frozenset({"X_t", "X_crit", "alpha", "delta"}),
    )


def regulator_perspective() -> Perspective:
    return Perspective(
        id="regulator",
        decisions=(
            ParameterSpec("r", Kind.DECISION, 0.0, math.inf, 0.0, per_timestep=True, description="pollution removal"),
        ),
        objectives=(
            Objective("reliability", "max", "share of steps below the eutrophication threshold"),
            Objective("removal_total", "min", "total removed pollution, reported as a cost proxy"),
        ),
        evaluate=_regulator_objectives,
        requires=frozenset({"X_t", "X_crit"}),
    )


def build_lake_model(constants: LakeConstants = LakeConstants()) -> ComposedModel:
    return compose(lake_environment(constants), [community_perspective(), regulator_perspective()])
