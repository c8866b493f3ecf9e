"""Seeded random streams and the samplers used by the benchmark models.

Every stream is a Philox4x64-10 counter-based generator (Salmon et al., 2011;
Random123 known-answer vectors are checked in the test suite).  A stream is
addressed by ``(master_seed, scenario_index, replication_index, substream)``:

* the 128-bit Philox key is ``(master_seed, scenario_index << 32 | replication_index)``,
  so streams for different scenario/replication pairs use different keys;
* the substream id occupies the most significant counter word, which keeps
  auxiliary draws (frozen policy sequences, scenario sampling) in a disjoint
  counter range of the same key.

Draws never depend on the policy being evaluated, which is what gives the
ensemble runner common random numbers across policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ALGORITHM = "philox4x64-10"

SUBSTREAM_SIMULATION = 0
SUBSTREAM_POLICY = 1
SUBSTREAM_SAMPLING = 2

_U32 = 2**32
_U64 = 2**64


class NonPositiveMean(ValueError):
    """A log-normal variate must have a strictly positive mean."""


class NegativeStd(ValueError):
    """Standard deviations must be nonnegative."""


class UnboundedParameter(ValueError):
    """Stratified sampling needs a finite interval for every dimension."""


class RandomStream:
    """A stateful Philox stream identified by its key.

    The stream is consumed by sampling; build a new one from the same key to
    replay the sequence.
    """

    algorithm = ALGORITHM

    def __init__(
        self,
        master_seed: int,
        scenario_index: int = 0,
        replication_index: int = 0,
        substream: int = SUBSTREAM_SIMULATION,
    ):
        if not 0 <= master_seed < _U64:
            raise ValueError(f"master_seed must fit in 64 bits, got {master_seed}")
        for label, value in (("scenario_index", scenario_index), ("replication_index", replication_index)):
            if not 0 <= value < _U32:
                raise ValueError(f"{label} must fit in 32 bits, got {value}")
        if not 0 <= substream < _U64:
            raise ValueError(f"substream must fit in 64 bits, got {substream}")
        self.master_seed = int(master_seed)
        self.scenario_index = int(scenario_index)
        self.replication_index = int(replication_index)
        self.substream = int(substream)
        bitgen = np.random.Philox(
            counter=[0, 0, 0, self.substream],
            key=[self.master_seed, (self.scenario_index << 32) | self.replication_index],
        )
        self.generator = np.random.Generator(bitgen)

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.master_seed, self.scenario_index, self.replication_index, self.substream)

    @property
    def draw_counter(self) -> int:
        """Low counter word: number of Philox blocks generated so far."""
        return int(self.generator.bit_generator.state["state"]["counter"][0])

    def substream_of(self, substream: int) -> "RandomStream":
        """Fresh stream with the same key and a different substream id."""
        return RandomStream(self.master_seed, self.scenario_index, self.replication_index, substream)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def __repr__(self) -> str:
        return f"RandomStream({ALGORITHM}, key={self.key})"


@dataclass(frozen=True)
class LogNormalSpec:
    """Log-normal distribution given by the moments of the variate itself."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.mean > 0:
            raise NonPositiveMean(f"log-normal mean must be > 0, got {self.mean}")
        if self.std < 0:
            raise NegativeStd(f"log-normal std must be >= 0, got {self.std}")


def lognormal_underlying(spec: LogNormalSpec) -> tuple[float, float]:
    """Location and scale of the normal variable whose exponential has ``spec``'s moments.

    >>> m, s = lognormal_underlying(LogNormalSpec(0.02, 0.0))
    >>> round(math.exp(m), 12), s
    (0.02, 0.0)
    """
    if not spec.mean > 0:
        raise NonPositiveMean(f"log-normal mean must be > 0, got {spec.mean}")
    mean2 = spec.mean * spec.mean
    var = spec.std * spec.std
    m = math.log(mean2 / math.sqrt(mean2 + var))
    s = math.sqrt(math.log1p(var / mean2))
    return m, s


def sample_lognormal(stream: RandomStream, spec: LogNormalSpec, size=None, underlying=lognormal_underlying):
    """Draw log-normal variates with the mean and std given in ``spec``.

    One standard normal is consumed per variate even when ``spec.std == 0``,
    so the stream position never depends on the parameter values.
    ``underlying`` selects the moment-matching rule and exists so the
    verification suite can run against a deliberately wrong one.
    """
    z = stream.standard_normal(size)
    if spec.std == 0:
        return spec.mean if size is None else np.full(np.shape(z), spec.mean)
    m, s = underlying(spec)
    return math.exp(m + s * z) if size is None else np.exp(m + s * z)


def sample_normal_clamped(stream: RandomStream, mean: float, std: float, floor: float = 0.0, size=None):
    """``max(floor, N(mean, std**2))``; consumes one standard normal per variate."""
    if std < 0:
        raise NegativeStd(f"std must be >= 0, got {std}")
    z = stream.standard_normal(size)
    if size is None:
        return max(floor, mean + std * z)
    return np.maximum(floor, mean + std * z)


def frozen_uniform_sequence(master_seed: int, length: int, low: float, high: float) -> tuple[float, ...]:
    """A fixed sequence drawn once from the policy substream of ``master_seed``."""
    stream = RandomStream(master_seed, substream=SUBSTREAM_POLICY)
    return tuple(float(v) for v in stream.uniform(low, high, length))


def _bounds(specs: Sequence) -> list[tuple[str, float, float]]:
    out = []
    for spec in specs:
        if getattr(spec, "choices", None) is not None:
            raise UnboundedParameter(f"{spec.name} has a finite set domain, not an interval")
        lo, hi = spec.exploration_range
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedParameter(f"{spec.name} has no finite exploration range ({lo}, {hi})")
        out.append((spec.name, lo, hi))
    return out


def latin_hypercube(n: int, specs: Sequence, stream: RandomStream, prefix: str = "lhs"):
    """``n`` scenarios with exactly one sample per equal-width stratum in every dimension."""
    from .core import Scenario

    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dims = _bounds(specs)
    columns = {}
    for name, lo, hi in dims:
        strata = stream.generator.permutation(n)
        offsets = stream.generator.random(n)
        columns[name] = lo + (hi - lo) * (strata + offsets) / n
    return [
        Scenario({name: float(columns[name][i]) for name, _, _ in dims}, name=f"{prefix}_{i:04d}")
        for i in range(n)
    ]


def monte_carlo(n: int, specs: Sequence, stream: RandomStream, prefix: str = "mc"):
    """``n`` scenarios drawn independently and uniformly over each exploration range."""
    from .core import Scenario

    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dims = _bounds(specs)
    draws = stream.uniform(size=(n, len(dims)))
    return [
        Scenario({name: float(lo + (hi - lo) * draws[i, j]) for j, (name, lo, hi) in enumerate(dims)}, name=f"{prefix}_{i:04d}")
        for i in range(n)
    ]
