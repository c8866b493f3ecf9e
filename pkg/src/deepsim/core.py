"""Model abstraction: parameter taxonomy, perspectives, composition and simulation.

A :class:`ComposedModel` is a shared :class:`Environment` plus an ordered list
of :class:`Perspective` objects.  Each perspective owns its decision variables
and objectives; the environment owns the state, stochastic variables, deep
uncertainties, constants and the transition.  All perspectives' decisions for
step ``t`` are merged before the transition fires.

The single simulation entry point is :func:`simulate`, which takes a policy
(decision values), a scenario (deep-uncertain values) and constants, and
returns the trace plus one value per declared objective.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .stochastics import RandomStream


class ModelError(Exception):
    """Base class for errors raised while composing or running a model."""


class DuplicateDecisionName(ModelError):
    pass


class UnresolvedSymbol(ModelError):
    def __init__(self, symbol: str, where: str):
        super().__init__(f"symbol {symbol!r} required by {where} is not declared anywhere in the model")
        self.symbol = symbol
        self.where = where


class MissingBinding(ModelError):
    def __init__(self, name: str, what: str = "binding"):
        super().__init__(f"missing {what} for {name!r}")
        self.name = name


class UnknownBinding(ModelError):
    def __init__(self, name: str, what: str = "binding"):
        super().__init__(f"{what} {name!r} is not a parameter of this model")
        self.name = name


class DomainViolation(ModelError):
    def __init__(self, name: str, value: Any, reason: str = ""):
        msg = f"value {value!r} is outside the domain of {name!r}"
        super().__init__(f"{msg}: {reason}" if reason else msg)
        self.name = name
        self.value = value


class UnknownPerspective(ModelError):
    pass


class AuditError(ModelError):
    pass


class Kind(enum.Enum):
    DECISION = "decision"
    DEEP_UNCERTAIN = "deep_uncertain"
    CONSTANT = "constant"


@dataclass(frozen=True)
class ParameterSpec:
    """One declared model parameter.

    ``lo``/``hi`` (or ``choices``) bound the values the model accepts.  The
    optional ``sample_range`` is the narrower interval scenario samplers draw
    from; it defaults to ``(lo, hi)``.
    """

    name: str
    kind: Kind
    lo: float = -math.inf
    hi: float = math.inf
    default: float = 0.0
    choices: tuple[float, ...] | None = None
    per_timestep: bool = False
    sample_range: tuple[float, float] | None = None
    description: str = ""

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValueError(f"parameter name must be an identifier, got {self.name!r}")
        if self.choices is not None:
            if self.default not in self.choices:
                raise ValueError(f"{self.name}: default {self.default} not among choices {self.choices}")
        else:
            if not self.lo <= self.hi:
                raise ValueError(f"{self.name}: empty interval [{self.lo}, {self.hi}]")
            if not self.lo <= self.default <= self.hi:
                raise ValueError(f"{self.name}: default {self.default} outside [{self.lo}, {self.hi}]")
        if self.sample_range is not None:
            slo, shi = self.sample_range
            if not (self.lo <= slo <= shi <= self.hi):
                raise ValueError(f"{self.name}: sample range {self.sample_range} not inside [{self.lo}, {self.hi}]")

    @property
    def exploration_range(self) -> tuple[float, float]:
        return self.sample_range if self.sample_range is not None else (self.lo, self.hi)

    def contains(self, value: float) -> bool:
        if self.choices is not None:
            return value in self.choices
        return self.lo <= value <= self.hi

    def coerce(self, value, horizon: int):
        """Validate ``value`` and normalise it to a float or a length-``horizon`` tuple."""
        if self.per_timestep:
            if np.ndim(value) == 0:
                values = (float(value),) * horizon
            else:
                values = tuple(float(v) for v in value)
                if len(values) != horizon:
                    raise DomainViolation(self.name, f"<sequence of length {len(values)}>", f"expected length {horizon}")
            for v in values:
                if not self.contains(v):
                    raise DomainViolation(self.name, v)
            return values
        if np.ndim(value) != 0:
            raise DomainViolation(self.name, value, "expected a scalar")
        v = float(value)
        if not self.contains(v):
            raise DomainViolation(self.name, v)
        return v


@dataclass(frozen=True)
class _Bindings:
    bindings: dict
    name: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "bindings", dict(self.bindings))

    def __getitem__(self, key):
        return self.bindings[key]

    def __contains__(self, key):
        return key in self.bindings

    def keys(self):
        return self.bindings.keys()

    def items(self):
        return self.bindings.items()

    def replace(self, name: str | None = None, **changes):
        return type(self)({**self.bindings, **changes}, name=self.name if name is None else name)


class Scenario(_Bindings):
    """Values for the deep-uncertain parameters."""


class Policy(_Bindings):
    """Values for the decision variables; per-timestep values are sequences."""


@dataclass(frozen=True)
class SeriesSpec:
    """A recorded time series; state series have ``T + 1`` entries, step series ``T``."""

    name: str
    kind: str = "step"
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("state", "step"):
            raise ValueError(f"series kind must be 'state' or 'step', got {self.kind!r}")


@dataclass(frozen=True)
class Objective:
    name: str
    sense: str = "max"
    description: str = ""

    def __post_init__(self):
        if self.sense not in ("max", "min"):
            raise ValueError(f"objective sense must be 'max' or 'min', got {self.sense!r}")


@dataclass(frozen=True)
class Component:
    """Maps a symbol of the problem description onto the model element that implements it."""

    symbol: str
    category: str
    target: str


@dataclass(frozen=True)
class Environment:
    """Shared environment of a composed model.

    The callables are invoked as::

        ctx = prepare(scenario, constants)
        state = initial_state(ctx)
        draws = draw(stream, t, ctx)
        state, outputs = transition(state, decisions_t, draws, t, ctx)
        derived = derive(ctx)

    ``draw`` must consume the same number of variates regardless of the
    decisions, otherwise common random numbers across policies break.
    """

    name: str
    horizon: int
    parameters: tuple[ParameterSpec, ...]
    series: tuple[SeriesSpec, ...]
    prepare: Callable[[Mapping, Mapping], Any]
    initial_state: Callable[[Any], dict]
    draw: Callable[[RandomStream, int, Any], dict]
    transition: Callable[[dict, Mapping, Mapping, int, Any], tuple[dict, dict]]
    derive: Callable[[Any], dict] | None = None
    requires: frozenset[str] = frozenset()
    stochastic: tuple[str, ...] = ()
    derived: tuple[str, ...] = ()
    step_origin: int = 0
    components: tuple[Component, ...] = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        for spec in self.parameters:
            if spec.kind is Kind.DECISION:
                raise ValueError(f"environment parameter {spec.name!r} cannot be a decision")


@dataclass(frozen=True)
class Perspective:
    """A stakeholder with its own decision variables and objectives.

    ``evaluate(trace, policy, scenario, constants)`` returns one value per
    declared objective; ``requires`` lists every non-own symbol it reads.
    """

    id: str
    decisions: tuple[ParameterSpec, ...]
    objectives: tuple[Objective, ...]
    evaluate: Callable[["Trace", Mapping, Mapping, Mapping], Mapping[str, float]]
    requires: frozenset[str] = frozenset()
    description: str = ""

    @property
    def decision_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.decisions)

    @property
    def objective_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.objectives)


@dataclass
class Trace:
    series: dict[str, np.ndarray]
    origins: dict[str, int]
    derived: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def index(self, name: str) -> np.ndarray:
        return np.arange(len(self.series[name])) + self.origins[name]

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.series.keys() == other.series.keys()
            and all(np.array_equal(self.series[k], other.series[k]) for k in self.series)
            and self.origins == other.origins
            and self.derived == other.derived
            and self.metadata == other.metadata
        )


@dataclass(frozen=True)
class ObjectiveResult:
    """Objective values grouped by perspective id."""

    values: dict[str, dict[str, float]]

    def __getitem__(self, perspective_id: str) -> dict[str, float]:
        return self.values[perspective_id]

    def flat(self) -> dict[str, float]:
        return {f"{pid}.{name}": v for pid, group in self.values.items() for name, v in group.items()}


@dataclass(frozen=True)
class ComposedModel:
    environment: Environment
    perspectives: tuple[Perspective, ...]

    @property
    def horizon(self) -> int:
        return self.environment.horizon

    @property
    def decision_specs(self) -> tuple[ParameterSpec, ...]:
        return tuple(s for p in self.perspectives for s in p.decisions)

    @property
    def decision_names(self) -> frozenset[str]:
        return frozenset(s.name for s in self.decision_specs)

    @property
    def uncertainty_specs(self) -> tuple[ParameterSpec, ...]:
        return tuple(s for s in self.environment.parameters if s.kind is Kind.DEEP_UNCERTAIN)

    @property
    def constant_specs(self) -> tuple[ParameterSpec, ...]:
        return tuple(s for s in self.environment.parameters if s.kind is Kind.CONSTANT)

    @property
    def series_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.environment.series)

    def perspective(self, perspective_id: str) -> Perspective:
        for p in self.perspectives:
            if p.id == perspective_id:
                return p
        known = ", ".join(p.id for p in self.perspectives) or "none"
        raise UnknownPerspective(f"no perspective {perspective_id!r} (known: {known})")

    def objectives(self) -> dict[str, Objective]:
        """Flat ``perspective.objective`` name -> declaration."""
        return {f"{p.id}.{o.name}": o for p in self.perspectives for o in p.objectives}

    def default_policy(self, name: str = "default") -> Policy:
        return Policy({s.name: s.default for s in self.decision_specs}, name=name)

    def default_scenario(self, name: str = "default") -> Scenario:
        return Scenario({s.name: s.default for s in self.uncertainty_specs}, name=name)

    def default_constants(self) -> dict[str, float]:
        return {s.name: s.default for s in self.constant_specs}

    def bind(self, specs: Iterable[ParameterSpec], values: Mapping, what: str) -> dict:
        specs = tuple(specs)
        known = {s.name for s in specs}
        for key in values.keys():
            if key not in known:
                raise UnknownBinding(key, what)
        out = {}
        for spec in specs:
            if spec.name not in values:
                raise MissingBinding(spec.name, what)
            out[spec.name] = spec.coerce(values[spec.name], self.horizon)
        return out


def compose(environment: Environment, perspectives: Sequence[Perspective]) -> ComposedModel:
    """Compose perspectives over a shared environment and audit symbol coverage."""
    perspectives = tuple(perspectives)
    seen_ids = set()
    owner: dict[str, str] = {}
    env_names = {s.name for s in environment.parameters}
    if len(env_names) != len(environment.parameters):
        raise ModelError(f"duplicate parameter names in environment {environment.name!r}")
    for p in perspectives:
        if p.id in seen_ids:
            raise ModelError(f"duplicate perspective id {p.id!r}")
        seen_ids.add(p.id)
        for spec in p.decisions:
            if spec.kind is not Kind.DECISION:
                raise ModelError(f"perspective {p.id!r} declares non-decision parameter {spec.name!r}")
            if spec.name in owner:
                raise DuplicateDecisionName(
                    f"decision {spec.name!r} declared by both {owner[spec.name]!r} and {p.id!r}"
                )
            if spec.name in env_names:
                raise DuplicateDecisionName(f"decision {spec.name!r} of {p.id!r} shadows an environment parameter")
            owner[spec.name] = p.id

    parameters = env_names | set(owner)
    for symbol in sorted(environment.requires):
        if symbol not in parameters:
            raise UnresolvedSymbol(symbol, f"transition of {environment.name!r}")
    observable = (
        parameters
        | {s.name for s in environment.series}
        | set(environment.stochastic)
        | set(environment.derived)
    )
    for p in perspectives:
        for symbol in sorted(p.requires):
            if symbol not in observable:
                raise UnresolvedSymbol(symbol, f"objectives of perspective {p.id!r}")

    model = ComposedModel(environment, perspectives)
    audit(model)
    return model


def audit(model: ComposedModel) -> dict[str, str]:
    """Check that each declared component resolves to exactly one model element.

    Returns ``symbol -> namespace`` for the resolved components.
    """
    env = model.environment
    namespaces = {
        "parameter": {s.name for s in env.parameters} | set(model.decision_names),
        "series": {s.name for s in env.series},
        "stochastic": set(env.stochastic),
        "derived": set(env.derived),
        "objective": {o.name for p in model.perspectives for o in p.objectives},
        "transition": {"transition"},
    }
    resolved = {}
    for comp in env.components:
        hits = [ns for ns, names in namespaces.items() if comp.target in names]
        if len(hits) != 1:
            where = ", ".join(hits) if hits else "nothing"
            raise AuditError(f"component {comp.symbol!r} -> {comp.target!r} resolves to {where}")
        resolved[comp.symbol] = hits[0]
    return resolved


def _as_stream(stream) -> RandomStream:
    if isinstance(stream, RandomStream):
        return stream
    return RandomStream(int(stream))


def _run(model: ComposedModel, policy: Mapping, scenario: Mapping, constants: Mapping, stream: RandomStream) -> Trace:
    env = model.environment
    horizon = env.horizon
    ctx = env.prepare(scenario, constants)
    state = dict(env.initial_state(ctx))
    state_names = [s.name for s in env.series if s.kind == "state"]
    step_names = [s.name for s in env.series if s.kind == "step"]
    state_rows = {name: [state[name]] for name in state_names}
    step_rows: dict[str, list] = {name: [] for name in step_names}
    per_step = [name for name, v in policy.items() if isinstance(v, tuple)]
    decisions = dict(policy)
    for t in range(horizon):
        for name in per_step:
            decisions[name] = policy[name][t]
        draws = env.draw(stream, t, ctx)
        state, outputs = env.transition(state, decisions, draws, t, ctx)
        for name in state_names:
            state_rows[name].append(state[name])
        for name in step_names:
            step_rows[name].append(outputs[name])
    series = {}
    origins = {}
    for name, rows in {**state_rows, **step_rows}.items():
        arr = np.asarray(rows, dtype=float)
        arr.setflags(write=False)
        series[name] = arr
        origins[name] = 0 if name in state_rows else env.step_origin
    derived = dict(env.derive(ctx)) if env.derive is not None else {}
    return Trace(series, origins, derived, metadata={"stream": stream.key})


def _evaluate(perspective: Perspective, trace: Trace, policy, scenario, constants) -> dict[str, float]:
    values = dict(perspective.evaluate(trace, policy, scenario, constants))
    declared = perspective.objective_names
    if set(values) != set(declared):
        raise ModelError(
            f"perspective {perspective.id!r} returned objectives {sorted(values)}, declared {sorted(declared)}"
        )
    return {name: float(values[name]) for name in declared}


def _bind_all(model: ComposedModel, policy, scenario, constants):
    bound_policy = model.bind(model.decision_specs, policy, "decision")
    bound_scenario = model.bind(model.uncertainty_specs, scenario, "deep uncertainty")
    if constants is None:
        constants = model.default_constants()
    bound_constants = model.bind(model.constant_specs, constants, "constant")
    return bound_policy, bound_scenario, bound_constants


def simulate(
    model: ComposedModel,
    policy: Policy | Mapping,
    scenario: Scenario | Mapping,
    constants: Mapping | None = None,
    stream: RandomStream | int = 0,
) -> tuple[Trace, ObjectiveResult]:
    """Run the model once and evaluate every perspective's objectives.

    ``stream`` is consumed; pass a fresh :class:`RandomStream` (or an integer
    master seed) for each call to get reproducible results.
    """
    bound = _bind_all(model, policy, scenario, constants)
    trace = _run(model, *bound, _as_stream(stream))
    trace.metadata["policy"] = getattr(policy, "name", None)
    trace.metadata["scenario"] = getattr(scenario, "name", None)
    result = ObjectiveResult({p.id: _evaluate(p, trace, *bound) for p in model.perspectives})
    return trace, result


def evaluate_perspective(
    model: ComposedModel,
    perspective_id: str,
    own: Mapping,
    exogenous: Mapping,
    scenario: Scenario | Mapping,
    constants: Mapping | None = None,
    stream: RandomStream | int = 0,
) -> dict[str, float]:
    """Objectives of one perspective, with every other perspective's decisions given as exogenous inputs."""
    perspective = model.perspective(perspective_id)
    own_names = set(perspective.decision_names)
    for key in own.keys():
        if key not in own_names:
            raise UnknownBinding(key, f"decision of perspective {perspective_id!r}")
    overlap = own_names & set(exogenous.keys())
    if overlap:
        raise ModelError(f"exogenous inputs may not set {perspective_id!r}'s own decisions: {sorted(overlap)}")
    merged = {**dict(exogenous.items()), **dict(own.items())}
    bound = _bind_all(model, merged, scenario, constants)
    trace = _run(model, *bound, _as_stream(stream))
    return _evaluate(perspective, trace, *bound)
