"""Registry of the models the CLI and ensemble runner can build by id."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Callable, Mapping

from . import lake, market
from .core import ComposedModel, Policy


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    constants_type: type
    builder: Callable[[Any], ComposedModel]
    table_policy: Callable[..., Policy]
    output_series: tuple[str, ...]
    figure_levels: tuple[float, ...]
    figure_decision: str

    def constants(self, overrides: Mapping | None = None):
        overrides = dict(overrides or {})
        known = {f.name for f in fields(self.constants_type)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise KeyError(f"unknown constants for {self.model_id!r}: {unknown} (known: {sorted(known)})")
        return self.constants_type(**overrides)

    def build(self, overrides: Mapping | None = None) -> ComposedModel:
        return self.builder(self.constants(overrides))


def _lake_table_policy(seed: int, constants: lake.LakeConstants, level: float = 0.0) -> Policy:
    return lake.table_policy(level, master_seed=seed, horizon=constants.horizon)


def _market_table_policy(seed: int, constants: market.MarketConstants, level: float | None = None) -> Policy:
    return market.table_policy(constants.q_u if level is None else level)


MODELS: dict[str, ModelEntry] = {
    "lake": ModelEntry(
        "lake", lake.LakeConstants, lake.build_lake_model, _lake_table_policy,
        output_series=("X_t",), figure_levels=lake.TABLE_REMOVAL_LEVELS, figure_decision="r",
    ),
    "market": ModelEntry(
        "market", market.MarketConstants, market.build_market_model, _market_table_policy,
        output_series=("c_t", "x_wt", "revenue_t"), figure_levels=market.TABLE_PENALTIES, figure_decision="q_u",
    ),
}


class UnknownModel(KeyError):
    def __init__(self, model_id):
        super().__init__(f"unknown model {model_id!r}; valid ids: {', '.join(sorted(MODELS))}")
        self.model_id = model_id

    def __str__(self):
        return self.args[0]


def get(model_id: str) -> ModelEntry:
    try:
        return MODELS[model_id]
    except KeyError:
        raise UnknownModel(model_id) from None
