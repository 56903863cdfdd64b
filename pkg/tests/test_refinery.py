"""
Unit tests for utils.refinery module
Tests data set assembly, refinement rounds and batch generation
"""

import pytest
import json
import os
from dataclasses import replace

import numpy as np

from utils.ingest import DelayKind, Unit
from utils.refinery import RefineryConfig, SyntheticDataset, assemble, batch_generate
from utils.sampler import DelaySampler
from utils.toy import ar1_matrix


def rows_satisfy_sampler(dataset, real, s_cfg):
    sampler = DelaySampler(real, s_cfg)
    for row in dataset.values:
        for hour in range(s_cfg.night_hours):
            if row[hour] not in real.values[:, hour]:
                return False
        for hour in range(s_cfg.night_hours, 24):
            low, high = sampler.conditional_bounds(hour, row[hour - 1])
            if not low <= row[hour] <= high:
                return False
    return True


@pytest.mark.unit
class TestRefineryConfig:
    """Test configuration validation"""

    def test_defaults(self):
        cfg = RefineryConfig()
        assert cfg.iterations == 1000
        assert cfg.disc_cfg.epochs == 20

    def test_threshold_range(self):
        with pytest.raises(ValueError, match='flag_threshold'):
            RefineryConfig(flag_threshold=1.0)

    def test_negative_iterations(self):
        with pytest.raises(ValueError, match='iterations'):
            RefineryConfig(iterations=-1)


@pytest.mark.unit
class TestAssemble:
    """Test a single synthetic data set"""

    def test_row_count_matches_days(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        dataset = assemble(small_matrix, sampler_cfg, quick_refinery_cfg)
        assert isinstance(dataset, SyntheticDataset)
        assert dataset.values.shape == (small_matrix.days, 24)
        assert np.all(np.isfinite(dataset.values))

    def test_provenance(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        dataset = assemble(small_matrix, sampler_cfg, quick_refinery_cfg)
        assert dataset.provenance['iterations_run'] == 3
        assert len(dataset.replacements) == 3
        assert dataset.provenance['master_seed'] == quick_refinery_cfg.rng_seed

    def test_zero_iterations_is_raw_sampler_output(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        """Without refinement rounds nothing is replaced"""
        cfg = replace(quick_refinery_cfg, iterations=0)
        dataset = assemble(small_matrix, sampler_cfg, cfg)
        assert dataset.replacements == []
        skipped = assemble(small_matrix, sampler_cfg, replace(quick_refinery_cfg, skip_refinement=True))
        np.testing.assert_array_equal(dataset.values, skipped.values)

    def test_deterministic(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        a = assemble(small_matrix, sampler_cfg, quick_refinery_cfg)
        b = assemble(small_matrix, sampler_cfg, quick_refinery_cfg, workers=3)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.replacements == b.replacements

    def test_replacements_bounded_by_held_out(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        dataset = assemble(small_matrix, sampler_cfg, quick_refinery_cfg)
        held_out = small_matrix.days - small_matrix.days // 2
        assert all(0 <= n <= held_out for n in dataset.replacements)

    def test_rows_stay_valid_sampler_output(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        """Refinement only swaps in freshly sampled rows"""
        dataset = assemble(small_matrix, sampler_cfg, quick_refinery_cfg)
        assert rows_satisfy_sampler(dataset, small_matrix, sampler_cfg)

    def test_refinement_log(self, temp_data_dir, small_matrix, sampler_cfg, quick_refinery_cfg):
        """One JSON line per round"""
        log_path = os.path.join(temp_data_dir, 'logs', 'refine.jsonl')
        dataset = assemble(small_matrix, sampler_cfg, quick_refinery_cfg, log_path=log_path)
        with open(log_path) as f:
            entries = [json.loads(line) for line in f]
        assert [e['round'] for e in entries] == [0, 1, 2]
        assert [e['replaced'] for e in entries] == dataset.replacements


@pytest.mark.unit
class TestBatchGenerate:
    """Test independent realisations"""

    def test_realisations_differ(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        cfg = replace(quick_refinery_cfg, iterations=1)
        datasets = batch_generate(small_matrix, sampler_cfg, cfg, 2)
        assert [d.provenance['realisation'] for d in datasets] == [0, 1]
        assert not np.array_equal(datasets[0].values, datasets[1].values)

    def test_realisation_independent_of_batch_size(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        """Realisation j only depends on the master seed, the series and j"""
        cfg = replace(quick_refinery_cfg, iterations=1)
        small = batch_generate(small_matrix, sampler_cfg, cfg, 1)
        large = batch_generate(small_matrix, sampler_cfg, cfg, 3, workers=2)
        np.testing.assert_array_equal(small[0].values, large[0].values)

    def test_airports_use_separate_streams(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        """Identical history under another airport code gives a different realisation"""
        twin = ar1_matrix(days=40, airport='TWN', kind=DelayKind.ARRIVAL, unit=Unit.MINUTES)
        np.testing.assert_array_equal(twin.values, small_matrix.values)
        cfg = replace(quick_refinery_cfg, skip_refinement=True)
        ours = batch_generate(small_matrix, sampler_cfg, cfg, 1)[0].values
        theirs = batch_generate(twin, sampler_cfg, cfg, 1)[0].values
        assert not np.array_equal(ours, theirs)

    def test_log_files(self, temp_data_dir, small_matrix, sampler_cfg, quick_refinery_cfg):
        cfg = replace(quick_refinery_cfg, iterations=1)
        batch_generate(small_matrix, sampler_cfg, cfg, 2, log_dir_path=temp_data_dir)
        assert os.path.exists(os.path.join(temp_data_dir, 'SML_Arr_0000.refinement.jsonl'))
        assert os.path.exists(os.path.join(temp_data_dir, 'SML_Arr_0001.refinement.jsonl'))

    def test_needs_one_realisation(self, small_matrix, sampler_cfg, quick_refinery_cfg):
        with pytest.raises(ValueError, match='n_realisations'):
            batch_generate(small_matrix, sampler_cfg, quick_refinery_cfg, 0)
