"""Command-line front end.

    deepsim simulate <config>            one trace CSV per (policy, scenario, replication)
    deepsim explore <config>             ensemble results table as CSV
    deepsim figure <lake4|market5> [config]
    deepsim verify

Configs are JSON objects with the keys ``model``, ``constants``, ``policies``,
``scenarios``, ``replications``, ``seed`` and ``output``; anything else is
rejected.  Seed precedence: ``--seed`` > ``$DEEPSIM_SEED`` > config > 4521.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 model error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__, registry, verify
from .core import ModelError, Policy, Scenario
from .explore import DEFAULT_SEED, ExperimentPlan, PlanError, SamplerSpec, robustness_summary, run_ensemble, series_aggregate
from .stochastics import frozen_uniform_sequence

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3
CONFIG_KEYS = {"model", "constants", "policies", "scenarios", "replications", "seed", "output"}
FIGURES = {"lake4": "lake", "market5": "market"}
SEED_ENV = "DEEPSIM_SEED"


class ConfigInvalid(ValueError):
    pass


@dataclass
class RunConfig:
    model_id: str
    constants: dict = field(default_factory=dict)
    policies: dict | None = None
    scenarios: Any = None
    replications: int = 1
    seed: int = DEFAULT_SEED
    output: str | None = None

    def digest(self) -> str:
        payload = {
            "model": self.model_id,
            "constants": self.constants,
            "policies": self.policies,
            "scenarios": self.scenarios,
            "replications": self.replications,
            "seed": self.seed,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _parse_seed(value, source: str) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"seed from {source} must be an integer, got {value!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigInvalid(f"seed from {source} must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def resolve_seed(flag: int | None, config_seed) -> int:
    if flag is not None:
        return _parse_seed(flag, "--seed")
    if os.environ.get(SEED_ENV):
        return _parse_seed(os.environ[SEED_ENV], f"${SEED_ENV}")
    if config_seed is not None:
        return _parse_seed(config_seed, "config")
    return DEFAULT_SEED


def load_config(
    path: str | None,
    seed_flag: int | None = None,
    model_id: str | None = None,
    default_replications: int = 1,
) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a JSON object")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigInvalid(f"unknown config keys {unknown}; allowed: {sorted(CONFIG_KEYS)}")
    model = raw.get("model", model_id)
    if model is None:
        raise ConfigInvalid("config must name a model")
    if model_id is not None and model != model_id:
        raise ConfigInvalid(f"this command needs model {model_id!r}, config names {model!r}")
    if model not in registry.MODELS:
        raise ConfigInvalid(str(registry.UnknownModel(model)))
    replications = raw.get("replications", default_replications)
    if not isinstance(replications, int) or isinstance(replications, bool):
        raise ConfigInvalid(f"replications must be an integer, got {replications!r}")
    constants = raw.get("constants", {})
    if not isinstance(constants, dict):
        raise ConfigInvalid("constants must be an object")
    return RunConfig(
        model_id=model,
        constants=constants,
        policies=raw.get("policies"),
        scenarios=raw.get("scenarios"),
        replications=replications,
        seed=resolve_seed(seed_flag, raw.get("seed")),
        output=raw.get("output"),
    )


def _decision_value(name, value, seed: int, horizon: int):
    if isinstance(value, dict):
        if set(value) != {"uniform"} or len(value["uniform"]) != 2:
            raise ConfigInvalid(f"decision {name!r}: only {{\"uniform\": [low, high]}} objects are supported")
        low, high = value["uniform"]
        return frozen_uniform_sequence(seed, horizon, float(low), float(high))
    return value


def build_plan(cfg: RunConfig, recorded_series: Sequence[str] = ()) -> tuple[ExperimentPlan, Any]:
    entry = registry.get(cfg.model_id)
    try:
        constants = entry.constants(cfg.constants)
        model = entry.builder(constants)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid constants: {exc}") from None
    reference = entry.table_policy(cfg.seed, constants)
    if cfg.policies is None:
        policies = [reference.replace(name="reference")]
    else:
        if not isinstance(cfg.policies, dict) or not cfg.policies:
            raise ConfigInvalid("policies must be a non-empty object of name -> decision values")
        policies = []
        for name, values in cfg.policies.items():
            if not isinstance(values, dict):
                raise ConfigInvalid(f"policy {name!r} must be an object")
            unknown = sorted(set(values) - model.decision_names)
            if unknown:
                raise ConfigInvalid(f"policy {name!r} sets unknown decisions {unknown}; known: {sorted(model.decision_names)}")
            parsed = {k: _decision_value(k, v, cfg.seed, model.horizon) for k, v in values.items()}
            policies.append(Policy({**reference.bindings, **parsed}, name=name))

    scenarios: Any
    base = model.default_scenario()
    if cfg.scenarios is None:
        scenarios = (base,)
    elif isinstance(cfg.scenarios, dict):
        if set(cfg.scenarios) != {"sampler", "n"}:
            raise ConfigInvalid('scenario sampler must be {"sampler": "latin_hypercube"|"monte_carlo", "n": <int>}')
        try:
            scenarios = SamplerSpec(cfg.scenarios["sampler"], int(cfg.scenarios["n"]))
        except PlanError as exc:
            raise ConfigInvalid(str(exc)) from None
    elif isinstance(cfg.scenarios, list) and cfg.scenarios:
        scenarios = []
        known = {s.name for s in model.uncertainty_specs}
        for i, item in enumerate(cfg.scenarios):
            if not isinstance(item, dict):
                raise ConfigInvalid(f"scenario {i} must be an object")
            item = dict(item)
            name = str(item.pop("name", f"s{i}"))
            unknown = sorted(set(item) - known)
            if unknown:
                raise ConfigInvalid(f"scenario {name!r} sets unknown parameters {unknown}; known: {sorted(known)}")
            scenarios.append(Scenario({**base.bindings, **item}, name=name))
        scenarios = tuple(scenarios)
    else:
        raise ConfigInvalid("scenarios must be a non-empty list or a sampler object")

    try:
        for policy in policies:
            model.bind(model.decision_specs, policy, "decision")
        if not isinstance(scenarios, SamplerSpec):
            for scenario in scenarios:
                model.bind(model.uncertainty_specs, scenario, "deep uncertainty")
    except ModelError as exc:
        raise ConfigInvalid(str(exc)) from None

    plan = ExperimentPlan(
        model_id=cfg.model_id,
        policies=tuple(policies),
        scenarios=scenarios,
        replications=cfg.replications,
        master_seed=cfg.seed,
        recorded_series=tuple(recorded_series),
        constants=cfg.constants,
    )
    try:
        plan.validate(model)
    except PlanError as exc:
        raise ConfigInvalid(str(exc)) from None
    return plan, model


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows, provenance: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in provenance.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _provenance(cfg: RunConfig) -> dict:
    return {"model": cfg.model_id, "config_hash": cfg.digest(), "seed": cfg.seed, "version": __version__}


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in name)


def cmd_simulate(cfg: RunConfig, jobs: int) -> int:
    entry = registry.get(cfg.model_id)
    plan, model = build_plan(cfg, entry.output_series)
    table = run_ensemble(plan, jobs=jobs, model=model)
    out_dir = Path(cfg.output or "traces")
    origin = {s.name: (0 if s.kind == "state" else model.environment.step_origin) for s in model.environment.series}
    t0 = origin[entry.output_series[0]]
    for row in table.rows:
        if not row.ok:
            continue
        columns = [row.series[name] for name in entry.output_series]
        body = ([t0 + i, *vals] for i, vals in enumerate(zip(*columns)))
        fname = f"{_safe(row.policy_id)}__{_safe(row.scenario_id)}__rep{row.replication:03d}.csv"
        write_csv(out_dir / fname, ["t", *entry.output_series], body, _provenance(cfg))
    failed = [r for r in table.rows if not r.ok]
    for r in failed:
        print(f"error: policy {r.policy_id} scenario {r.scenario_id} replication {r.replication}: {r.error}", file=sys.stderr)
    print(f"wrote {len(table.rows) - len(failed)} traces to {out_dir}")
    return EXIT_MODEL if failed else EXIT_OK


def cmd_explore(cfg: RunConfig, jobs: int) -> int:
    plan, model = build_plan(cfg)
    table = run_ensemble(plan, jobs=jobs, model=model)
    out = Path(cfg.output or "results.csv")
    write_csv(out, table.columns(), table.records(), {**_provenance(cfg), "plan_hash": table.plan_hash})
    print(f"{len(table.rows)} rows ({table.n_failed} failed) written to {out}")
    for objective in table.objectives:
        for policy_id, stats in robustness_summary(table, objective).items():
            shown = " ".join(f"{k}={v:.6g}" for k, v in stats.items())
            print(f"{objective:32s} {policy_id:16s} {shown}")
    return EXIT_OK


def figure_table(name: str, cfg: RunConfig, jobs: int = 1):
    """Tidy rows ``(level, t, <series>_mean, <series>_std, ...)`` for a figure protocol."""
    entry = registry.get(FIGURES[name])
    plan, model = build_plan(cfg, entry.output_series)
    base = plan.policies[0]
    policies = tuple(
        Policy({**base.bindings, entry.figure_decision: level}, name=f"{entry.figure_decision}={level:g}")
        for level in entry.figure_levels
    )
    plan = ExperimentPlan(
        model_id=plan.model_id,
        policies=policies,
        scenarios=plan.scenarios,
        replications=plan.replications,
        master_seed=plan.master_seed,
        recorded_series=plan.recorded_series,
        constants=plan.constants,
    )
    table = run_ensemble(plan, jobs=jobs, model=model)
    stats = {s: series_aggregate(table, s) for s in entry.output_series}
    kind = {s.name: s.kind for s in model.environment.series}[entry.output_series[0]]
    origin = 0 if kind == "state" else model.environment.step_origin
    header = ["level", "t"] + [f"{s}_{k}" for s in entry.output_series for k in ("mean", "std")]
    rows = []
    for policy, level in zip(policies, entry.figure_levels):
        if policy.name not in stats[entry.output_series[0]]:
            continue
        means = [stats[s][policy.name] for s in entry.output_series]
        length = len(means[0][0])
        for i in range(length):
            row = [float(level), origin + i]
            for mean, std in means:
                row += [float(mean[i]), float(std[i])]
            rows.append(row)
    return header, rows, table


def cmd_figure(name: str, cfg: RunConfig, jobs: int) -> int:
    header, rows, table = figure_table(name, cfg, jobs)
    out = Path(cfg.output or f"{name}.csv")
    write_csv(out, header, rows, _provenance(cfg))
    print(f"{len(rows)} rows written to {out}" + (f" ({table.n_failed} failed replications excluded)" if table.n_failed else ""))
    return EXIT_MODEL if table.n_failed else EXIT_OK


def cmd_verify(**hooks) -> int:
    results = verify.run_all(**hooks)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsim", description="Lake and electricity-market benchmarks under deep uncertainty.")
    parser.add_argument("--version", action="version", version=f"deepsim {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides $DEEPSIM_SEED and config)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    common.add_argument("--output", default=None, help="output path (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="write one trace CSV per replication")
    p.add_argument("config")
    p = sub.add_parser("explore", parents=[common], help="run an ensemble and write the results table")
    p.add_argument("config")
    p = sub.add_parser("figure", parents=[common], help="write mean/std series for a figure protocol")
    p.add_argument("name", choices=sorted(FIGURES))
    p.add_argument("config", nargs="?")
    sub.add_parser("verify", help="run the built-in verification suites")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify()
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    try:
        if args.command == "figure":
            cfg = load_config(args.config, args.seed, model_id=FIGURES[args.name], default_replications=10)
        else:
            cfg = load_config(args.config, args.seed)
        if args.output is not None:
            cfg.output = args.output
        if args.command == "simulate":
            return cmd_simulate(cfg, jobs)
        if args.command == "explore":
            return cmd_explore(cfg, jobs)
        return cmd_figure(args.name, cfg, jobs)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
