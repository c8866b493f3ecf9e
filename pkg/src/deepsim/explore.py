"""Ensemble experiments: policies x scenarios x replications, plus robustness summaries.

Every row's random stream is keyed by ``(master_seed, scenario_index,
replication_index)`` and never by the policy, so all policies see the same
stochastic draws for a given scenario and replication.  Rows are assembled in
``(policy, scenario, replication)`` order whatever the degree of parallelism.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import registry
from .core import ComposedModel, ModelError, Objective, Policy, Scenario, simulate
from .stochastics import SUBSTREAM_SAMPLING, RandomStream, latin_hypercube, monte_carlo

log = logging.getLogger(__name__)

DEFAULT_SEED = 4521
METRICS = ("mean", "std", "p10", "snr", "max_regret")


class PlanError(ValueError):
    pass


class UnknownMetric(KeyError):
    pass


class UnknownObjective(KeyError):
    pass


class SeriesNotRecorded(KeyError):
    pass


@dataclass(frozen=True)
class SamplerSpec:
    method: str
    n: int

    def __post_init__(self):
        if self.method not in ("monte_carlo", "latin_hypercube"):
            raise PlanError(f"unknown sampling method {self.method!r}")
        if self.n < 1:
            raise PlanError(f"sampler needs n >= 1, got {self.n}")


@dataclass(frozen=True)
class ExperimentPlan:
    model_id: str
    policies: tuple[Policy, ...]
    scenarios: tuple[Scenario, ...] | SamplerSpec = ()
    replications: int = 1
    master_seed: int = DEFAULT_SEED
    recorded_series: tuple[str, ...] = ()
    constants: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        if not isinstance(self.scenarios, SamplerSpec):
            object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "recorded_series", tuple(self.recorded_series))
        object.__setattr__(self, "constants", dict(self.constants))

    def validate(self, model: ComposedModel):
        if self.replications < 1:
            raise PlanError(f"replications must be >= 1, got {self.replications}")
        if not self.policies:
            raise PlanError("plan needs at least one policy")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise PlanError(f"policy names must be unique, got {names}")
        unknown = [s for s in self.recorded_series if s not in model.series_names]
        if unknown:
            raise PlanError(f"series {unknown} are not declared by the model (declared: {list(model.series_names)})")

    def digest(self) -> str:
        if isinstance(self.scenarios, SamplerSpec):
            scenarios = {"method": self.scenarios.method, "n": self.scenarios.n}
        else:
            scenarios = [{"name": s.name, **dict(s.items())} for s in self.scenarios]
        payload = {
            "model": self.model_id,
            "policies": [{"name": p.name, **{k: _jsonable(v) for k, v in p.items()}} for p in self.policies],
            "scenarios": scenarios,
            "replications": self.replications,
            "seed": self.master_seed,
            "series": list(self.recorded_series),
            "constants": {k: _jsonable(v) for k, v in self.constants.items()},
        }
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        return [float(x) for x in v]
    return v


@dataclass(frozen=True)
class ResultRow:
    policy_id: str
    scenario_id: str
    scenario_index: int
    replication: int
    objectives: dict[str, float]
    series: dict[str, tuple[float, ...]] = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ResultsTable:
    model_id: str
    rows: tuple[ResultRow, ...]
    objectives: dict[str, Objective]
    scenarios: tuple[Scenario, ...]
    recorded_series: tuple[str, ...]
    plan_hash: str
    master_seed: int

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if not r.ok)

    @property
    def policy_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.policy_id for r in self.rows))

    def resolve_objective(self, objective: str) -> str:
        """Accept ``perspective.name`` or a bare name that is unambiguous."""
        if objective in self.objectives:
            return objective
        matches = [k for k in self.objectives if k.split(".", 1)[1] == objective]
        if len(matches) == 1:
            return matches[0]
        if matches:
            raise UnknownObjective(f"objective {objective!r} is ambiguous: {matches}")
        raise UnknownObjective(f"no objective {objective!r} (known: {sorted(self.objectives)})")

    def columns(self) -> list[str]:
        params = list(dict.fromkeys(k for s in self.scenarios for k in s.keys()))
        return ["policy_id", "scenario_id", "replication", "error", *self.objectives, *(f"scenario.{p}" for p in params)]

    def records(self) -> Iterable[list]:
        params = list(dict.fromkeys(k for s in self.scenarios for k in s.keys()))
        for row in self.rows:
            scenario = self.scenarios[row.scenario_index]
            yield [
                row.policy_id,
                row.scenario_id,
                row.replication,
                row.error or "",
                *(row.objectives.get(name, math.nan) for name in self.objectives),
                *(scenario.bindings.get(p, math.nan) for p in params),
            ]


def resolve_scenarios(plan: ExperimentPlan, model: ComposedModel) -> tuple[Scenario, ...]:
    if isinstance(plan.scenarios, SamplerSpec):
        stream = RandomStream(plan.master_seed, substream=SUBSTREAM_SAMPLING)
        sampler = latin_hypercube if plan.scenarios.method == "latin_hypercube" else monte_carlo
        return tuple(sampler(plan.scenarios.n, model.uncertainty_specs, stream))
    return plan.scenarios or (model.default_scenario(),)


_WORKER: dict = {}


def _init_worker(model, constants, recorded, seed):
    _WORKER.update(model=model, constants=constants, recorded=recorded, seed=seed)


def _row(task) -> ResultRow:
    policy, scenario, s_idx, rep = task
    model = _WORKER["model"]
    stream = RandomStream(_WORKER["seed"], s_idx, rep)
    try:
        trace, result = simulate(model, policy, scenario, _WORKER["constants"], stream)
    except (ModelError, ValueError, ArithmeticError) as exc:
        return ResultRow(policy.name, scenario.name, s_idx, rep, {}, {}, f"{type(exc).__name__}: {exc}")
    series = {name: tuple(float(v) for v in trace[name]) for name in _WORKER["recorded"]}
    return ResultRow(policy.name, scenario.name, s_idx, rep, result.flat(), series)


def run_ensemble(plan: ExperimentPlan, jobs: int = 1, model: ComposedModel | None = None) -> ResultsTable:
    """Evaluate every (policy, scenario, replication) triple of ``plan``.

    Model errors in a row are recorded on that row instead of aborting the run.
    """
    if model is None:
        model = registry.get(plan.model_id).build(plan.constants)
    plan.validate(model)
    scenarios = resolve_scenarios(plan, model)
    constants = model.default_constants()
    tasks = [
        (policy, scenario, s_idx, rep)
        for policy in plan.policies
        for s_idx, scenario in enumerate(scenarios)
        for rep in range(plan.replications)
    ]
    init_args = (model, constants, plan.recorded_series, plan.master_seed)
    if jobs > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (4 * jobs))
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=init_args) as pool:
            rows = tuple(pool.map(_row, tasks, chunksize=chunk))
    else:
        saved = dict(_WORKER)
        _init_worker(*init_args)
        try:
            rows = tuple(_row(t) for t in tasks)
        finally:
            _WORKER.clear()
            _WORKER.update(saved)
    table = ResultsTable(
        model_id=plan.model_id,
        rows=rows,
        objectives=model.objectives(),
        scenarios=scenarios,
        recorded_series=plan.recorded_series,
        plan_hash=plan.digest(),
        master_seed=plan.master_seed,
    )
    if table.n_failed:
        log.warning("%d of %d rows failed", table.n_failed, len(rows))
    return table


def _p10(values: np.ndarray) -> float:
    return float(np.percentile(values, 10))


def robustness_summary(
    table: ResultsTable,
    objective: str,
    metrics: Sequence[str] = METRICS,
) -> dict[str, dict[str, float]]:
    """Per-policy robustness metrics of one objective over successful rows.

    ``std`` uses the population convention (divide by n).  ``snr`` is
    ``mean / std`` and is left out when both are zero.  ``max_regret`` compares
    each policy's replication-averaged value with the best policy in every
    scenario, using the objective's declared sense.
    """
    for m in metrics:
        if m not in METRICS:
            raise UnknownMetric(f"unknown metric {m!r} (supported: {', '.join(METRICS)})")
    name = table.resolve_objective(objective)
    maximize = table.objectives[name].sense == "max"
    by_policy: dict[str, list[float]] = {p: [] for p in table.policy_ids}
    by_cell: dict[tuple[str, int], list[float]] = {}
    for row in table.rows:
        if not row.ok:
            continue
        v = row.objectives[name]
        by_policy[row.policy_id].append(v)
        by_cell.setdefault((row.policy_id, row.scenario_index), []).append(v)

    cell_mean = {k: float(np.mean(v)) for k, v in by_cell.items()}
    best: dict[int, float] = {}
    for (_, s_idx), v in cell_mean.items():
        if s_idx not in best:
            best[s_idx] = v
        else:
            best[s_idx] = max(best[s_idx], v) if maximize else min(best[s_idx], v)

    out: dict[str, dict[str, float]] = {}
    for policy_id, values in by_policy.items():
        if not values:
            out[policy_id] = {}
            continue
        arr = np.asarray(values)
        mean, std = float(arr.mean()), float(arr.std())
        stats: dict[str, float] = {}
        if "mean" in metrics:
            stats["mean"] = mean
        if "std" in metrics:
            stats["std"] = std
        if "p10" in metrics:
            stats["p10"] = _p10(arr)
        if "snr" in metrics:
            if std > 0:
                stats["snr"] = mean / std
            elif mean != 0:
                stats["snr"] = math.copysign(math.inf, mean)
        if "max_regret" in metrics:
            regrets = [
                (best[s] - v) if maximize else (v - best[s])
                for (p, s), v in cell_mean.items()
                if p == policy_id
            ]
            stats["max_regret"] = float(max(regrets))
        out[policy_id] = stats
    return out


def regret_by_scenario(table: ResultsTable, objective: str) -> dict[str, dict[int, float]]:
    """Regret of each policy in each scenario (0 for the scenario's best policy)."""
    name = table.resolve_objective(objective)
    maximize = table.objectives[name].sense == "max"
    cells: dict[tuple[str, int], list[float]] = {}
    for row in table.rows:
        if row.ok:
            cells.setdefault((row.policy_id, row.scenario_index), []).append(row.objectives[name])
    means = {k: float(np.mean(v)) for k, v in cells.items()}
    out: dict[str, dict[int, float]] = {}
    for (p, s), v in means.items():
        peers = [m for (_, s2), m in means.items() if s2 == s]
        best = max(peers) if maximize else min(peers)
        out.setdefault(p, {})[s] = (best - v) if maximize else (v - best)
    return out


def series_aggregate(table: ResultsTable, series_id: str) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Pointwise mean and population std of a recorded series across each policy's successful rows."""
    if series_id not in table.recorded_series:
        raise SeriesNotRecorded(f"series {series_id!r} was not recorded (recorded: {list(table.recorded_series)})")
    grouped: dict[str, list] = {}
    for row in table.rows:
        if row.ok:
            grouped.setdefault(row.policy_id, []).append(row.series[series_id])
    out = {}
    for policy_id, rows in grouped.items():
        arr = np.asarray(rows, dtype=float)
        out[policy_id] = (arr.mean(axis=0), arr.std(axis=0))
    return out
