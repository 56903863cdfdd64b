"""
Reproducible toy delay data.

The reference process is an AR(1) deviation around a daily profile with a
morning and an evening peak:

    d[day, t] = profile[t] + e[day, t],   e[day, t] = phi * e[day, t-1] + sigma * noise

with e[day, 0] drawn from the stationary distribution. Each day is independent.
"""

import numpy as np

from utils.ingest import HOURS, DelayKind, DelayMatrix, Unit
from utils.rng import derive_rng

TOY_SEED = 20240601
TOY_DAYS = 600


def daily_profile(level=2.0, morning=6.0, evening=12.0):
    t = np.arange(HOURS)
    return level + morning * np.exp(-((t - 9) / 3.0) ** 2) + evening * np.exp(-((t - 17) / 4.0) ** 2)


def ar1_values(days=TOY_DAYS, phi=0.8, sigma=4.0, shift=0.0, seed=TOY_SEED, stream=0):
    rng = derive_rng(seed, stream)
    noise = rng.standard_normal((days, HOURS))
    e = np.empty((days, HOURS))
    e[:, 0] = sigma / np.sqrt(1.0 - phi ** 2) * noise[:, 0]
    for t in range(1, HOURS):
        e[:, t] = phi * e[:, t - 1] + sigma * noise[:, t]
    return daily_profile() + shift + e


def ar1_matrix(days=TOY_DAYS, phi=0.8, sigma=4.0, shift=0.0, seed=TOY_SEED, stream=0,
               airport='TOY', kind=DelayKind.ARRIVAL, unit=Unit.MINUTES):
    """The documented toy process as a fully observed DelayMatrix"""
    values = ar1_values(days, phi, sigma, shift, seed, stream)
    return DelayMatrix.from_values(values, airport=airport, kind=kind, unit=unit)


def graded_family(shifts=(0.0, 1.5, 4.0, 10.0), days=TOY_DAYS, seed=TOY_SEED,
                  kind=DelayKind.ARRIVAL, unit=Unit.MINUTES, stream_offset=0):
    """
    Airports TOY1..TOYn whose delays differ by increasing mean shifts. Airport i
    uses noise stream ``stream_offset + i + 1``.
    """
    return {
        f"TOY{i + 1}": ar1_matrix(days, shift=shift, seed=seed, stream=stream_offset + i + 1,
                                  airport=f"TOY{i + 1}", kind=kind, unit=unit)
        for i, shift in enumerate(shifts)
    }


def coupled_pair(days=TOY_DAYS, strength=0.8, noise=1.0, seed=TOY_SEED):
    """
    Two series collections where y follows x with a one-hour lag inside each
    day: y[:, t] = strength * x[:, t-1] + noise.
    """
    rng = derive_rng(seed, 100)
    x = rng.standard_normal((days, HOURS))
    y = noise * rng.standard_normal((days, HOURS))
    y[:, 1:] += strength * x[:, :-1]
    return x, y
