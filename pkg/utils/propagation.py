"""
Granger-causality tests between airports.

x -> y is tested with the nested least-squares comparison

    restricted:   y_t ~ c_h + y_{t-1} + ... + y_{t-L}
    unrestricted: y_t ~ c_h + y_{t-1} + ... + y_{t-L} + x_{t-1} + ... + x_{t-L}

where c_h is one constant per hour of day of the target (``hour_effects``) or a
single intercept. With H constants,
F = ((RSS_r - RSS_u) / L) / (RSS_u / (n - 2L - H)), with the p-value taken from
the F(L, n - 2L - H) upper tail. Hourly delays share a daily profile, so without
the per-hour constants the lags of any other airport act as a clock.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular
from scipy.special import betainc

from utils.ingest import HOURS
from utils.rng import MAX_SEED

logger = logging.getLogger(__name__)

BIC_MAX_LAG = 6
RANK_TOLERANCE = 1e-10
MIN_P_VALUE = np.finfo(float).tiny


class ConcatMode(Enum):
    PER_DAY_POOLED = 'PerDayPooled'
    FULL_CONCAT = 'FullConcat'

    @classmethod
    def parse(cls, text):
        for mode in cls:
            if str(text).strip().lower() == mode.value.lower():
                return mode
        raise ValueError(f"Unknown concat mode: {text!r}")


class SeriesKind(Enum):
    REAL = 'Real'
    SYNTHETIC = 'Synthetic'
    SHUFFLED = 'Shuffled'


@dataclass(frozen=True)
class GcConfig:
    max_lag: int = 3
    concat_mode: ConcatMode = ConcatMode.PER_DAY_POOLED
    rng_seed: int = 0
    lag_selection: str = 'fixed'
    difference: bool = False
    hour_effects: bool = True

    def __post_init__(self):
        if self.max_lag < 1:
            raise ValueError(f"max_lag must be at least 1, got {self.max_lag}")
        if self.concat_mode is ConcatMode.PER_DAY_POOLED and self.max_lag >= HOURS:
            raise ValueError(f"max_lag must be below {HOURS} when lags are built within days")
        if self.lag_selection not in ('fixed', 'bic'):
            raise ValueError(f"lag_selection must be 'fixed' or 'bic', got {self.lag_selection!r}")
        if not 0 <= self.rng_seed <= MAX_SEED:
            raise ValueError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")

    def to_dict(self):
        return {'max_lag': self.max_lag, 'concat_mode': self.concat_mode.value, 'rng_seed': self.rng_seed,
                'lag_selection': self.lag_selection, 'difference': self.difference,
                'hour_effects': self.hour_effects}


@dataclass(frozen=True)
class GcResult:
    pair: tuple
    p_value: float
    f_stat: float
    n_obs: int
    lag: int
    series_kind: SeriesKind = SeriesKind.REAL
    degenerate: bool = False

    @property
    def direction(self):
        return f"{self.pair[0]}->{self.pair[1]}"

    @property
    def log10_p(self):
        return float(np.log10(self.p_value))


def f_upper_tail(f_stat, df1, df2):
    """P(F > f) for F(df1, df2), via the regularized incomplete beta function"""
    if f_stat <= 0:
        return 1.0
    return float(betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f_stat)))


def _series(data):
    values = np.asarray(getattr(data, 'values', data), dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    return values


def lagged_design(x, y, lag, mode):
    """
    Target vector and lag blocks. In PerDayPooled mode every row of ``x``/``y``
    is one day and lags never cross midnight; FullConcat joins the days.
    """
    if mode is ConcatMode.FULL_CONCAT:
        x, y = x.reshape(1, -1), y.reshape(1, -1)
    length = y.shape[1]
    if length <= lag:
        raise ValueError(f"Series of length {length} is too short for lag {lag}")
    target = y[:, lag:].ravel()
    y_lags = np.column_stack([y[:, lag - i:length - i].ravel() for i in range(1, lag + 1)])
    x_lags = np.column_stack([x[:, lag - i:length - i].ravel() for i in range(1, lag + 1)])
    return target, y_lags, x_lags


def target_hours(shape, lag, mode):
    """Hour of day (column index) of every target row of ``lagged_design``"""
    days, width = shape
    if mode is ConcatMode.FULL_CONCAT:
        return np.tile(np.arange(width), days)[lag:]
    return np.tile(np.arange(lag, width), days)


def fixed_effects(hours, hour_effects=True):
    """One indicator column per hour present, or a single intercept column"""
    if not hour_effects:
        return np.ones((hours.size, 1))
    return (hours[:, None] == np.unique(hours)[None, :]).astype(np.float64)


def _ols_rss(design, target):
    """Residual sum of squares through a QR factorization, or None if rank-deficient"""
    if design.shape[0] < design.shape[1]:
        return None
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= RANK_TOLERANCE * max(diag.max(), 1.0):
        return None
    beta = solve_triangular(r, q.T @ target)
    resid = target - design @ beta
    return float(resid @ resid)


def _fit(x, y, lag, mode, hour_effects=True):
    target, y_lags, x_lags = lagged_design(x, y, lag, mode)
    n = target.size
    constants = fixed_effects(target_hours(y.shape, lag, mode), hour_effects)
    restricted = np.hstack([constants, y_lags])
    unrestricted = np.hstack([constants, y_lags, x_lags])
    return n, _ols_rss(restricted, target), _ols_rss(unrestricted, target), unrestricted.shape[1]


def select_lag_bic(x, y, mode, max_lag=BIC_MAX_LAG, hour_effects=True):
    """Lag in [1..max_lag] minimizing the unrestricted model's BIC"""
    best_lag, best_bic = 1, np.inf
    for lag in range(1, max_lag + 1):
        try:
            n, _, rss_u, k = _fit(x, y, lag, mode, hour_effects)
        except ValueError:
            break
        if rss_u is None or rss_u <= 0 or n <= k:
            continue
        bic = n * np.log(rss_u / n) + k * np.log(n)
        if bic < best_bic:
            best_lag, best_bic = lag, bic
    return best_lag


def gc_test(x, y, cfg, pair=('x', 'y'), series_kind=SeriesKind.REAL):
    """Does the past of ``x`` improve the least-squares prediction of ``y``?"""
    x, y = _series(x), _series(y)
    if x.shape != y.shape:
        raise ValueError(f"Series collections are not aligned: {x.shape} vs {y.shape}")
    if cfg.difference:
        x, y = np.diff(x, axis=1), np.diff(y, axis=1)
    mode = cfg.concat_mode
    lag = cfg.max_lag
    if cfg.lag_selection == 'bic':
        lag = select_lag_bic(x, y, mode, hour_effects=cfg.hour_effects)

    n, rss_r, rss_u, k = _fit(x, y, lag, mode, cfg.hour_effects)
    df2 = n - k
    if df2 < 1:
        raise ValueError(f"Not enough observations ({n}) for lag {lag}")
    if rss_r is None or rss_u is None:
        logger.debug("%s->%s: rank-deficient design", *pair)
        return GcResult(tuple(pair), 1.0, 0.0, n, lag, series_kind, degenerate=True)

    numerator = max(rss_r - rss_u, 0.0) / lag
    if rss_u <= 0.0:
        f_stat = np.inf if numerator > 0 else 0.0
    else:
        f_stat = numerator / (rss_u / df2)
    p_value = 0.0 if np.isinf(f_stat) else f_upper_tail(f_stat, lag, df2)
    p_value = min(max(p_value, MIN_P_VALUE), 1.0)
    return GcResult(tuple(pair), p_value, float(f_stat), n, lag, series_kind)


def gc_matrix(matrices, cfg, series_kind=SeriesKind.REAL):
    """GC result for every ordered pair of airports"""
    airports = list(matrices)
    if len(airports) < 2:
        raise ValueError("Granger analysis needs at least two airports")
    results = []
    for a in airports:
        for b in airports:
            if a != b:
                results.append(gc_test(matrices[a], matrices[b], cfg, (a, b), series_kind))
    return results


def shuffle_surrogate(matrix, rng):
    """Permute every cell across the whole matrix"""
    values = np.asarray(getattr(matrix, 'values', matrix), dtype=np.float64)
    return rng.permutation(values.ravel()).reshape(values.shape)


def results_frame(results):
    return pd.DataFrame([{
        'airport_a': r.pair[0],
        'airport_b': r.pair[1],
        'direction': r.direction,
        'f_stat': r.f_stat,
        'p_value': r.p_value,
        'log10_p': r.log10_p,
        'kind': r.series_kind.value,
        'lag': r.lag,
        'n_obs': r.n_obs,
        'degenerate': r.degenerate,
    } for r in results], columns=['airport_a', 'airport_b', 'direction', 'f_stat', 'p_value',
                                  'log10_p', 'kind', 'lag', 'n_obs', 'degenerate'])


def log10_p_histogram(results, bins=None):
    """Histogram of log10 p per series kind, on shared bin edges"""
    if bins is None:
        lowest = min([r.log10_p for r in results] + [-1.0])
        bins = np.linspace(np.floor(lowest), 0.0, 21)
    bins = np.asarray(bins, dtype=np.float64)
    histogram = {'bin_edges': bins.tolist(), 'counts': {}}
    for kind in SeriesKind:
        values = [r.log10_p for r in results if r.series_kind is kind]
        if values:
            counts, _ = np.histogram(np.clip(values, bins[0], bins[-1]), bins=bins)
            histogram['counts'][kind.value] = counts.tolist()
    return histogram
