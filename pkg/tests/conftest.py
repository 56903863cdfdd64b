"""
Pytest configuration and fixtures for delaysynth tests
"""

import pytest
import tempfile
import shutil
import os
import textwrap

import numpy as np

# Add the project root to the path
import sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from utils.discriminator import DiscriminatorConfig
from utils.ingest import DelayKind, Unit
from utils.refinery import RefineryConfig
from utils.sampler import SamplerConfig
from utils.toy import ar1_matrix, graded_family


@pytest.fixture
def temp_data_dir():
    """Create a temporary directory for test data files"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def toy_matrix():
    """200-day AR(1) toy delay matrix in minutes"""
    return ar1_matrix(days=200, airport='TOY', kind=DelayKind.ARRIVAL, unit=Unit.MINUTES)


@pytest.fixture
def small_matrix():
    """Short toy matrix for refinement and CLI runs"""
    return ar1_matrix(days=40, airport='SML', kind=DelayKind.ARRIVAL, unit=Unit.MINUTES)


@pytest.fixture
def small_disc_cfg():
    """A discriminator small enough to train in well under a second"""
    return DiscriminatorConfig(n_blocks=1, layers_per_block=2, filters=8, kernel_size=3,
                               epochs=15, learning_rate=1e-2, batch_size=32, rng_seed=7)


@pytest.fixture
def tiny_disc_cfg():
    """Two blocks with a shortcut projection, for gradient checks"""
    return DiscriminatorConfig(n_blocks=2, layers_per_block=2, filters=3, kernel_size=3,
                               epochs=1, learning_rate=1e-3, l2_rate=0.01, batch_size=8, rng_seed=3)


@pytest.fixture
def sampler_cfg():
    return SamplerConfig(night_hours=4, n_quantiles=10, rng_seed=11)


@pytest.fixture
def quick_refinery_cfg(small_disc_cfg):
    """Few refinement rounds with a small discriminator"""
    return RefineryConfig(iterations=3, disc_cfg=small_disc_cfg, flag_threshold=0.5, rng_seed=5)


@pytest.fixture
def toy_family():
    """Four toy airports with graded mean shifts"""
    return graded_family(days=120)


@pytest.fixture
def flight_csv(temp_data_dir):
    """A small flight export with one malformed and one incomplete row"""
    path = os.path.join(temp_data_dir, 'flights.csv')
    content = textwrap.dedent("""\
        flight_id,origin,destination,sched_dep,act_dep,sched_arr,act_arr
        F1,AAA,BBB,2024-03-01T08:00:00Z,2024-03-01T08:10:00Z,2024-03-01T09:30:00Z,2024-03-01T09:35:00Z
        F2,AAA,BBB,2024-03-01T08:20:00Z,2024-03-01T08:50:00Z,2024-03-01T09:45:00Z,2024-03-01T10:05:00Z
        F3,BBB,AAA,2024-03-02T14:00:00Z,2024-03-02T13:55:00Z,2024-03-02T15:30:00Z,2024-03-02T15:20:00Z
        F4,BBB,AAA,2024-03-02T14:00:00Z,not-a-time,2024-03-02T15:30:00Z,2024-03-02T15:40:00Z
        F5,AAA,BBB,2024-03-02T18:00:00Z,,2024-03-02T19:30:00Z,
        F6,AAA,,2024-03-02T18:00:00Z,2024-03-02T18:00:00Z,2024-03-02T19:30:00Z,2024-03-02T19:30:00Z
    """)
    with open(path, 'w') as f:
        f.write(content)
    return path


@pytest.fixture
def write_config(temp_data_dir):
    """Write a TOML run configuration and return its path"""
    def _write(text):
        path = os.path.join(temp_data_dir, 'run_config.toml')
        with open(path, 'w') as f:
            f.write(textwrap.dedent(text))
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
