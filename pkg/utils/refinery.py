"""
Synthetic data sets and their discriminator-driven refinement.

A data set starts as one independently sampled vector per real day. Each
refinement round trains a fresh discriminator on a random half of the
synthetic rows and a random half of the real rows, scores the held-out
synthetic half, and regenerates every row it flags as synthetic. Rows are only
ever replaced by freshly sampled vectors, never edited.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List

import numpy as np

from utils.data_manager import JsonLinesLog
from utils.discriminator import DiscriminatorConfig, LabeledSet, predict, train
from utils.ingest import DelayKind, Unit
from utils.rng import (MAX_SEED, STREAM_DISCRIMINATOR, STREAM_INITIAL, STREAM_REALISATION,
                       STREAM_REFINE_ROW, STREAM_REFINE_SPLIT, derive_rng, derive_seed, stream_key)
from utils.sampler import DelaySampler

logger = logging.getLogger(__name__)

REFINEMENT_EPOCHS = 20


@dataclass(frozen=True)
class RefineryConfig:
    iterations: int = 1000
    disc_cfg: DiscriminatorConfig = field(default_factory=lambda: DiscriminatorConfig(epochs=REFINEMENT_EPOCHS))
    flag_threshold: float = 0.5
    rng_seed: int = 0
    skip_refinement: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if not 0 < self.flag_threshold < 1:
            raise ValueError(f"flag_threshold must be in (0, 1), got {self.flag_threshold}")
        if not 0 <= self.rng_seed <= MAX_SEED:
            raise ValueError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")

    def to_dict(self):
        return {'iterations': self.iterations, 'disc_cfg': self.disc_cfg.to_dict(),
                'flag_threshold': self.flag_threshold, 'rng_seed': self.rng_seed,
                'skip_refinement': self.skip_refinement}


@dataclass
class SyntheticDataset:
    values: np.ndarray
    airport: str
    kind: DelayKind
    unit: Unit
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Synthetic values must be finite")

    @property
    def days(self):
        return self.values.shape[0]

    @property
    def replacements(self) -> List[int]:
        return self.provenance.get('replacements', [])


def _regenerate(sampler, seed, keys_list, workers):
    def one(keys):
        return sampler.generate_values(derive_rng(seed, *keys))

    if workers > 1 and len(keys_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, keys_list))
    return [one(keys) for keys in keys_list]


def assemble(real, s_cfg, r_cfg, log_path=None, workers=1):
    """
    One synthetic data set with as many rows as ``real`` has days.

    ``log_path`` receives one JSON line per refinement round.
    """
    seed = r_cfg.rng_seed
    sampler = DelaySampler(real, s_cfg)
    days = real.days
    rows = _regenerate(sampler, seed, [(STREAM_INITIAL, i) for i in range(days)], workers)
    values = np.vstack(rows) if rows else np.empty((0, 24))

    replacements = []
    log = JsonLinesLog(log_path)
    rounds = 0 if r_cfg.skip_refinement else r_cfg.iterations
    if rounds and days < 2:
        logger.warning("%s: fewer than two days, refinement skipped", real.airport)
        rounds = 0
    real_values = real.values
    for r in range(rounds):
        rng = derive_rng(seed, STREAM_REFINE_SPLIT, r)
        synth_perm = rng.permutation(days)
        real_perm = rng.permutation(real.days)
        synth_train, synth_held = synth_perm[:days // 2], synth_perm[days // 2:]
        real_train = real_perm[:real.days // 2]

        data = LabeledSet.from_classes(real_values[real_train], values[synth_train])
        disc_cfg = replace(r_cfg.disc_cfg, rng_seed=derive_seed(seed, STREAM_DISCRIMINATOR, r))
        model = train(data, disc_cfg)
        p_real = predict(model, values[synth_held])
        flagged = synth_held[p_real < r_cfg.flag_threshold]

        if flagged.size:
            fresh = _regenerate(sampler, seed, [(STREAM_REFINE_ROW, r, int(i)) for i in flagged], workers)
            values[flagged] = np.vstack(fresh)
        replacements.append(int(flagged.size))
        log.write({'airport': real.airport, 'kind': real.kind.value, 'round': r,
                   'trained_on': int(data.vectors.shape[0]), 'held_out': int(synth_held.size),
                   'flagged': int(flagged.size), 'replaced': int(flagged.size)})
        logger.debug("%s round %d: replaced %d of %d held-out rows",
                     real.airport, r, flagged.size, synth_held.size)

    if rounds:
        logger.info("%s %s: %d refinement rounds, %d rows replaced in total",
                    real.airport, real.kind.value, rounds, sum(replacements))
    provenance = {
        'sampler': s_cfg.to_dict(),
        'refinery': r_cfg.to_dict(),
        'master_seed': seed,
        'iterations_run': rounds,
        'replacements': replacements,
    }
    return SyntheticDataset(values, real.airport, real.kind, real.unit, provenance)


def batch_generate(real, s_cfg, r_cfg, n_realisations, log_dir_path=None, workers=1):
    """
    ``n_realisations`` independent data sets; realisation j runs under the
    seed derived from (master seed, airport and kind, j). Airports never share
    streams, so their synthetic series are independent of each other.
    """
    if n_realisations < 1:
        raise ValueError(f"n_realisations must be at least 1, got {n_realisations}")

    series_key = stream_key(f"{real.airport}_{real.kind.short}")

    def one(j):
        r_seed = derive_seed(r_cfg.rng_seed, STREAM_REALISATION, series_key, j)
        log_path = None
        if log_dir_path:
            log_path = os.path.join(log_dir_path, f"{real.airport}_{real.kind.short}_{j:04d}.refinement.jsonl")
        dataset = assemble(real, s_cfg, replace(r_cfg, rng_seed=r_seed), log_path)
        dataset.provenance['realisation'] = j
        dataset.provenance['batch_master_seed'] = r_cfg.rng_seed
        return dataset

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n_realisations)))
    return [one(j) for j in range(n_realisations)]
