"""
Synthetic daily delay vectors.

The leading night hours are resampled from the values observed at the same
hour. Every later hour is drawn conditionally on the previous synthetic value:
the real previous-hour values are split into quantile bins, the bin holding the
synthetic value selects the days whose next-hour values form a conditional
distribution, and the new value is drawn uniformly inside one randomly chosen
quantile bin of that distribution.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from utils.ingest import HOURS, DelayKind
from utils.rng import MAX_SEED

logger = logging.getLogger(__name__)


class SamplerVariant(Enum):
    FULL = 'Full'
    RANDOM_DRAW = 'RandomDraw'

    @classmethod
    def parse(cls, text):
        for variant in cls:
            if str(text).strip().lower() == variant.value.lower():
                return variant
        raise ValueError(f"Unknown sampler variant: {text!r}")


@dataclass(frozen=True)
class SamplerConfig:
    night_hours: int = 4
    n_quantiles: int = 10
    rng_seed: int = 0
    variant: SamplerVariant = SamplerVariant.FULL

    def __post_init__(self):
        if not 0 <= self.night_hours < HOURS:
            raise ValueError(f"night_hours must be in [0, {HOURS}), got {self.night_hours}")
        if self.n_quantiles < 2:
            raise ValueError(f"n_quantiles must be at least 2, got {self.n_quantiles}")
        if not 0 <= self.rng_seed <= MAX_SEED:
            raise ValueError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")

    def to_dict(self):
        return {'night_hours': self.night_hours, 'n_quantiles': self.n_quantiles,
                'rng_seed': self.rng_seed, 'variant': self.variant.value}


@dataclass(frozen=True)
class DelayVector:
    values: np.ndarray
    airport: str
    kind: DelayKind

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (HOURS,):
            raise ValueError(f"Delay vector must have {HOURS} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Delay vector values must be finite")
        object.__setattr__(self, 'values', values)


def quantile_edges(samples, k):
    """
    k + 1 bin edges from min to max, interior edges at the empirical i/k
    quantiles with linear interpolation between order statistics.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("Cannot compute quantile edges of an empty sample")
    if k < 1:
        raise ValueError(f"Number of bins must be at least 1, got {k}")
    edges = np.quantile(samples, np.linspace(0.0, 1.0, k + 1), method='linear')
    # Guard against rounding producing a decreasing pair
    return np.maximum.accumulate(edges)


def locate_bin(edges, x):
    """
    Index i with edges[i] <= x < edges[i+1]; values below the first edge go to
    bin 0, values at or above the last edge to the last bin, and a value equal
    to an interior edge goes to the higher bin.
    """
    edges = np.asarray(edges, dtype=np.float64)
    n_bins = len(edges) - 1
    index = np.searchsorted(edges, x, side='right') - 1
    return np.clip(index, 0, n_bins - 1)


def _uniform_in_bin(edges, rng):
    n_bins = len(edges) - 1
    b = int(rng.integers(n_bins))
    low, high = edges[b], edges[b + 1]
    if high <= low:
        return float(low)
    return float(low + (high - low) * rng.random())


class DelaySampler:
    """
    Precomputed conditioning tables for one real delay matrix.

    Building the tables once makes ``generate`` cheap enough to call for every
    row of a data set and for every refinement replacement.
    """

    def __init__(self, real, cfg):
        self.real = real
        self.cfg = cfg
        k = cfg.n_quantiles
        self.pools = [real.hour_values(h) for h in range(HOURS)]
        empty_hours = [h for h, pool in enumerate(self.pools) if pool.size == 0]
        if empty_hours:
            logger.warning("%s %s: no observations at hour(s) %s, emitting 0 there",
                           real.airport, real.kind.value, empty_hours)

        self.first_conditioned = max(cfg.night_hours, 1)
        self.prev_edges = [None] * HOURS
        self.cond_edges = [None] * HOURS
        self.cond_bounds = [None] * HOURS
        if cfg.variant is SamplerVariant.RANDOM_DRAW:
            return

        for t in range(self.first_conditioned, HOURS):
            prev_pool = self.pools[t - 1]
            if prev_pool.size == 0:
                continue
            if prev_pool.size < k:
                logger.debug("%s hour %d: %d observations for %d quantiles",
                             real.airport, t - 1, prev_pool.size, k)
            edges = quantile_edges(prev_pool, k)
            both = real.mask[:, t - 1] & real.mask[:, t]
            prev_bins = locate_bin(edges, real.values[both, t - 1])
            nexts = real.values[both, t]
            per_bin, bounds = [], []
            for b in range(k):
                selected = nexts[prev_bins == b]
                if selected.size == 0:
                    selected = nexts[np.abs(prev_bins - b) <= 1]
                if selected.size == 0:
                    per_bin.append(None)
                    bounds.append(None)
                    continue
                per_bin.append(quantile_edges(selected, k))
                bounds.append((float(selected.min()), float(selected.max())))
            self.prev_edges[t] = edges
            self.cond_edges[t] = per_bin
            self.cond_bounds[t] = bounds

    def _resample(self, hour, rng):
        pool = self.pools[hour]
        if pool.size == 0:
            return 0.0
        return float(pool[rng.integers(pool.size)])

    def conditional_bounds(self, hour, previous):
        """[min, max] of the conditional next-value set selected by ``previous``"""
        if self.cond_edges[hour] is None:
            return None
        b = int(locate_bin(self.prev_edges[hour], previous))
        return self.cond_bounds[hour][b]

    def generate_values(self, rng):
        values = np.empty(HOURS)
        for t in range(HOURS):
            if t < self.first_conditioned or self.cond_edges[t] is None:
                values[t] = self._resample(t, rng)
                continue
            b = int(locate_bin(self.prev_edges[t], values[t - 1]))
            edges = self.cond_edges[t][b]
            values[t] = self._resample(t, rng) if edges is None else _uniform_in_bin(edges, rng)
        return values

    def generate(self, rng):
        return DelayVector(self.generate_values(rng), self.real.airport, self.real.kind)


def generate_vector(real, cfg, rng):
    """One synthetic delay vector for the airport and kind of ``real``"""
    return DelaySampler(real, cfg).generate(rng)
