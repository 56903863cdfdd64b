"""
Run configuration.

A single TOML file with one table per component. Every key is optional and
falls back to the defaults below; ``--profile desk`` shrinks the expensive
knobs so a full run finishes in minutes.
"""

import copy
import logging
import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, List, Optional

from utils.discriminator import DiscriminatorConfig
from utils.ingest import AIRPORT_CODE, ColumnSchema, Region, get_region
from utils.propagation import ConcatMode, GcConfig
from utils.refinery import REFINEMENT_EPOCHS, RefineryConfig
from utils.sampler import SamplerConfig, SamplerVariant

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                   'data', 'run_config.toml')

EVALUATION_EPOCHS = 50

DEFAULT_CONFIG = {
    'run': {
        'region': 'EU',
        'airports': [],
        'n_realisations': 100,
        'master_seed': 0,
        'output_dir': 'output',
        'strict_days': False,
        'workers': 1,
    },
    'sampler': {
        'night_hours': 4,
        'n_quantiles': 10,
        'variant': 'Full',
    },
    'refinery': {
        'iterations': 1000,
        'flag_threshold': 0.5,
        'skip_refinement': False,
    },
    'discriminator': {
        'n_blocks': 2,
        'layers_per_block': 3,
        'filters': 32,
        'kernel_size': 5,
        'epochs': REFINEMENT_EPOCHS,
        'learning_rate': 1e-3,
        'l2_rate': 0.0,
        'batch_size': 32,
    },
    'evaluation': {
        'n_blocks': 2,
        'layers_per_block': 3,
        'filters': 32,
        'kernel_size': 5,
        'epochs': EVALUATION_EPOCHS,
        'learning_rate': 1e-3,
        'l2_rate': 0.0,
        'batch_size': 32,
        'n_repeats': 50,
        'n_datasets': 0,
    },
    'propagation': {
        'max_lag': 3,
        'concat_mode': 'PerDayPooled',
        'lag_selection': 'fixed',
        'difference': False,
        'hour_effects': True,
    },
    'ingest': {
        'columns': {},
        'timestamp_format': 'ISO8601',
        'timezones': {},
        'start_date': '',
        'end_date': '',
    },
}

PROFILES = {
    'full': {},
    'desk': {
        'refinery': {'iterations': 50},
        'run': {'n_realisations': 5},
        'evaluation': {'n_repeats': 10},
    },
}


class ConfigError(ValueError):
    """The run configuration is missing, unreadable or invalid"""


@dataclass
class IngestSettings:
    schema: ColumnSchema = field(default_factory=ColumnSchema)
    timezones: Dict[str, str] = field(default_factory=dict)
    start_date: Optional[date] = None
    end_date: Optional[date] = None


@dataclass
class RunConfig:
    region: Region
    airports: List[str]
    n_realisations: int
    sampler: SamplerConfig
    refinery: RefineryConfig
    discriminator_eval: DiscriminatorConfig
    output_dir: str
    master_seed: int
    n_repeats: int = 50
    n_datasets: int = 0
    propagation: GcConfig = field(default_factory=GcConfig)
    ingest: IngestSettings = field(default_factory=IngestSettings)
    strict_days: bool = False
    workers: int = 1

    def to_dict(self):
        return {
            'region': self.region.name,
            'airports': list(self.airports),
            'n_realisations': self.n_realisations,
            'master_seed': self.master_seed,
            'sampler': self.sampler.to_dict(),
            'refinery': self.refinery.to_dict(),
            'discriminator_eval': self.discriminator_eval.to_dict(),
            'n_repeats': self.n_repeats,
            'n_datasets': self.n_datasets,
            'propagation': self.propagation.to_dict(),
        }


def _merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _check_keys(raw):
    for section, values in raw.items():
        if section not in DEFAULT_CONFIG:
            raise ConfigError(f"Unknown config section: [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"Config section [{section}] must be a table")
        allowed = DEFAULT_CONFIG[section]
        for key in values:
            if key not in allowed:
                raise ConfigError(f"Unknown config key: {section}.{key}")


def _parse_date(text, name):
    if not text:
        return None
    try:
        return date.fromisoformat(str(text))
    except ValueError:
        raise ConfigError(f"{name} must be an ISO date, got {text!r}")


def build_config(raw, profile=None, seed=None):
    """Turn a (partial) config mapping into a validated RunConfig"""
    _check_keys(raw)
    merged = _merge(DEFAULT_CONFIG, raw)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"Unknown profile: {profile!r} (expected one of {sorted(PROFILES)})")
        merged = _merge(merged, PROFILES[profile])
    if seed is not None:
        merged['run']['master_seed'] = seed

    run = merged['run']
    master_seed = run['master_seed']
    section = 'run'
    try:
        region = get_region(run['region'])
        section = 'sampler'
        sampler = SamplerConfig(
            night_hours=int(merged['sampler']['night_hours']),
            n_quantiles=int(merged['sampler']['n_quantiles']),
            rng_seed=master_seed,
            variant=SamplerVariant.parse(merged['sampler']['variant']),
        )
        section = 'discriminator'
        disc = DiscriminatorConfig(rng_seed=master_seed, **merged['discriminator'])
        section = 'refinery'
        refinery = RefineryConfig(
            iterations=int(merged['refinery']['iterations']),
            disc_cfg=disc,
            flag_threshold=float(merged['refinery']['flag_threshold']),
            rng_seed=master_seed,
            skip_refinement=bool(merged['refinery']['skip_refinement']),
        )
        section = 'evaluation'
        evaluation = dict(merged['evaluation'])
        n_repeats = int(evaluation.pop('n_repeats'))
        n_datasets = int(evaluation.pop('n_datasets'))
        disc_eval = DiscriminatorConfig(rng_seed=master_seed, **evaluation)
        section = 'propagation'
        gc = GcConfig(
            max_lag=int(merged['propagation']['max_lag']),
            concat_mode=ConcatMode.parse(merged['propagation']['concat_mode']),
            rng_seed=master_seed,
            lag_selection=str(merged['propagation']['lag_selection']),
            difference=bool(merged['propagation']['difference']),
            hour_effects=bool(merged['propagation']['hour_effects']),
        )
        section = 'ingest'
        ingest_raw = merged['ingest']
        ingest = IngestSettings(
            schema=ColumnSchema(timestamp_format=ingest_raw['timestamp_format'], **ingest_raw['columns']),
            timezones=dict(ingest_raw['timezones']),
            start_date=_parse_date(ingest_raw['start_date'], 'ingest.start_date'),
            end_date=_parse_date(ingest_raw['end_date'], 'ingest.end_date'),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid [{section}] configuration: {str(e)}") from e

    config = RunConfig(
        region=region,
        airports=list(run['airports']),
        n_realisations=int(run['n_realisations']),
        sampler=sampler,
        refinery=refinery,
        discriminator_eval=disc_eval,
        output_dir=str(run['output_dir']),
        master_seed=master_seed,
        n_repeats=n_repeats,
        n_datasets=n_datasets,
        propagation=gc,
        ingest=ingest,
        strict_days=bool(run['strict_days']),
        workers=int(run['workers']),
    )
    validate_config(config)
    return config


def load_config(file_path=None, profile=None, seed=None):
    """Load a TOML run configuration; without a path the shipped default is used if present"""
    raw = {}
    path = file_path or DEFAULT_CONFIG_FILE
    if file_path is not None and not os.path.exists(file_path):
        raise ConfigError(f"Config file not found: {file_path}")
    if os.path.exists(path):
        try:
            with open(path, 'rb') as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Corrupted config file {path}: {str(e)}") from e
        logger.debug("Loaded configuration from %s", path)
    return build_config(raw, profile=profile, seed=seed)


def validate_config(config):
    """Validate cross-field constraints of a RunConfig"""
    if len(set(config.airports)) != len(config.airports):
        raise ConfigError("Airport codes must be unique")
    for code in config.airports:
        if not isinstance(code, str) or not AIRPORT_CODE.fullmatch(code):
            raise ConfigError(f"Invalid airport code: {code!r}")
    if config.n_realisations < 1:
        raise ConfigError("n_realisations must be at least 1")
    if config.n_repeats < 1:
        raise ConfigError("evaluation.n_repeats must be at least 1")
    if config.n_datasets < 0:
        raise ConfigError("evaluation.n_datasets must be non-negative (0 means all realisations)")
    if config.workers < 1:
        raise ConfigError("run.workers must be at least 1")
    if not 0 <= config.master_seed <= 2 ** 64 - 1:
        raise ConfigError("run.master_seed must be an unsigned 64-bit integer")
    if config.ingest.start_date and config.ingest.end_date and config.ingest.end_date < config.ingest.start_date:
        raise ConfigError("ingest.end_date must not precede ingest.start_date")
    return True
