"""Shallow-lake and day-ahead electricity-market benchmarks for exploratory modeling under deep uncertainty."""

__version__ = "0.1.0"

from .core import (
    ComposedModel,
    Environment,
    Kind,
    ModelError,
    ObjectiveResult,
    ParameterSpec,
    Perspective,
    Policy,
    Scenario,
    Trace,
    compose,
    evaluate_perspective,
    simulate,
)
from .stochastics import RandomStream

__all__ = [
    "ComposedModel",
    "Environment",
    "Kind",
    "ModelError",
    "ObjectiveResult",
    "ParameterSpec",
    "Perspective",
    "Policy",
    "RandomStream",
    "Scenario",
    "Trace",
    "compose",
    "evaluate_perspective",
    "simulate",
]
