"""
Integration tests for the command-line interface
Tests every command, output files, error handling and exit codes
"""

import pytest
import json
import os

import numpy as np
import pandas as pd
from click.testing import CliRunner

from app import EXIT_DATA, EXIT_INTERNAL, EXIT_USAGE, cli, main
from utils.data_manager import load_json, load_npy, load_text_lines
from utils.ingest import load_matrix


QUICK_CONFIG = """
    [run]
    region = "US"
    n_realisations = 2
    output_dir = "{out}"

    [refinery]
    iterations = 1

    [discriminator]
    n_blocks = 1
    layers_per_block = 1
    filters = 4
    kernel_size = 3
    epochs = 2

    [evaluation]
    n_blocks = 1
    layers_per_block = 1
    filters = 4
    kernel_size = 3
    epochs = 2
    n_repeats = 1
"""


def json_lines(output):
    return [json.loads(line) for line in output.splitlines() if line.startswith('{')]


def last_error(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith('{')]
    return json.loads(lines[-1])


@pytest.fixture
def quick_config(write_config, temp_data_dir):
    """Config path plus output directory for a fast end-to-end run"""
    out = os.path.join(temp_data_dir, 'out')
    return write_config(QUICK_CONFIG.format(out=out)), out


@pytest.fixture
def toy_run(quick_config):
    """Toy matrices for three airports written to the output directory"""
    config_path, out = quick_config
    result = CliRunner().invoke(cli, ['--config', config_path, 'toy', '--airports', '3', '--days', '30'])
    assert result.exit_code == 0, result.output
    return config_path, out


@pytest.mark.integration
class TestIngestCommand:
    """Test the ingest command"""

    def test_ingest_writes_matrices(self, flight_csv, temp_data_dir):
        out = os.path.join(temp_data_dir, 'matrices')
        result = CliRunner().invoke(cli, ['ingest', '--input-dir', temp_data_dir, '--output-dir', out])
        assert result.exit_code == 0, result.output
        summary = json_lines(result.output)[-1]
        assert summary == {'matrices': 4, 'records': 4, 'rejects': 2}
        matrix = load_matrix(os.path.join(out, 'AAA_Dep.npy'))
        assert matrix.values.shape == (2, 24)
        assert matrix.values[0, 8] == pytest.approx(1200.0)

    def test_rejects_file(self, flight_csv, temp_data_dir):
        out = os.path.join(temp_data_dir, 'matrices')
        CliRunner().invoke(cli, ['ingest', '--input-dir', temp_data_dir, '--output-dir', out])
        rejects = pd.read_csv(os.path.join(out, 'rejects.csv'))
        assert list(rejects['row']) == [4, 6]
        assert set(rejects['file']) == {'flights.csv'}

    def test_rerun_is_bitwise_identical(self, flight_csv, temp_data_dir):
        out = os.path.join(temp_data_dir, 'matrices')
        names = ['AAA_Dep.npy', 'AAA_Dep.meta.json', 'BBB_Arr.npy', 'BBB_Arr.meta.json', 'rejects.csv']

        def snapshot():
            result = CliRunner().invoke(cli, ['ingest', '--input-dir', temp_data_dir, '--output-dir', out])
            assert result.exit_code == 0, result.output
            contents = {}
            for name in names:
                with open(os.path.join(out, name), 'rb') as f:
                    contents[name] = f.read()
            return contents

        assert snapshot() == snapshot()

    def test_no_csv_files(self, temp_data_dir):
        result = CliRunner().invoke(cli, ['ingest', '--input-dir', temp_data_dir])
        assert result.exit_code != 0
        assert 'No CSV files' in str(result.exception)


@pytest.mark.integration
@pytest.mark.slow
class TestPipeline:
    """Test generate, evaluate and propagation on toy data"""

    def test_toy_matrices(self, toy_run):
        _, out = toy_run
        files = sorted(os.listdir(os.path.join(out, 'matrices')))
        assert 'TOY1_Arr.npy' in files
        assert 'TOY3_Dep.meta.json' in files

    def test_toy_kinds_differ(self, toy_run):
        """Arrival and departure toy matrices come from separate noise streams"""
        _, out = toy_run
        arrivals = load_matrix(os.path.join(out, 'matrices', 'TOY1_Arr.npy'))
        departures = load_matrix(os.path.join(out, 'matrices', 'TOY1_Dep.npy'))
        assert not np.array_equal(arrivals.values, departures.values)

    def test_generate_tensor(self, toy_run):
        config_path, out = toy_run
        result = CliRunner().invoke(cli, ['--config', config_path, 'generate', '--kind', 'Arr'])
        assert result.exit_code == 0, result.output
        tensor = load_npy(os.path.join(out, 'USArr.npy'))
        assert tensor.shape == (3, 2, 30, 24)
        assert np.all(np.isfinite(tensor))
        assert load_text_lines(os.path.join(out, 'USArr.airports.txt')) == ['TOY1', 'TOY2', 'TOY3']
        provenance = load_json(os.path.join(out, 'USArr.provenance.json'))
        assert provenance['shape'] == [3, 2, 30, 24]
        assert os.path.exists(os.path.join(out, 'logs', 'TOY1_Arr_0001.refinement.jsonl'))

    def test_generate_is_reproducible(self, toy_run):
        config_path, out = toy_run
        runner = CliRunner()
        runner.invoke(cli, ['--config', config_path, 'generate', '--kind', 'Dep'])
        first = load_npy(os.path.join(out, 'USDep.npy'))
        runner.invoke(cli, ['--config', config_path, 'generate', '--kind', 'Dep'])
        np.testing.assert_array_equal(first, load_npy(os.path.join(out, 'USDep.npy')))

    def test_evaluate_reports(self, toy_run):
        config_path, out = toy_run
        runner = CliRunner()
        runner.invoke(cli, ['--config', config_path, 'generate', '--kind', 'Arr'])
        result = runner.invoke(cli, ['--config', config_path, 'evaluate', '--kind', 'Arr', '--cross'])
        assert result.exit_code == 0, result.output
        reports = os.path.join(out, 'reports')
        scores = pd.read_csv(os.path.join(reports, 'USArr.scores.csv'))
        assert list(scores['airport']) == ['TOY1', 'TOY2', 'TOY3']
        assert scores['score_median'].between(0, 1).all()
        pca = pd.read_csv(os.path.join(reports, 'USArr.pca.csv'))
        assert len(pca) == 3 * 60
        assert len(pd.read_csv(os.path.join(reports, 'USArr.cross.csv'))) == 3
        assert 'cross_transfer_correlation' in load_json(os.path.join(reports, 'USArr.evaluation.json'))
        assert {'train_min', 'train_median', 'train_max'} <= set(scores.columns)
        assert scores['train_min'].le(scores['train_median']).all()
        assert scores['train_median'].le(scores['train_max']).all()
        summary = load_json(os.path.join(reports, 'USArr.evaluation.json'))
        assert len(summary['TOY1']['dataset_train_scores']) == 2
        assert 'train_test_gap' in summary['TOY1']

    def test_propagation_reports(self, toy_run):
        config_path, out = toy_run
        runner = CliRunner()
        runner.invoke(cli, ['--config', config_path, 'generate', '--kind', 'Arr'])
        result = runner.invoke(cli, ['--config', config_path, 'propagation', '--kind', 'Arr'])
        assert result.exit_code == 0, result.output
        gc = pd.read_csv(os.path.join(out, 'reports', 'USArr.gc.csv'))
        assert gc.groupby('kind').size().to_dict() == {'Real': 6, 'Shuffled': 6, 'Synthetic': 6}
        histogram = load_json(os.path.join(out, 'reports', 'USArr.gc_histogram.json'))
        assert set(histogram['counts']) == {'Real', 'Shuffled', 'Synthetic'}

    def test_propagation_without_tensor(self, toy_run):
        """Real and shuffled series are tested even before generation"""
        config_path, out = toy_run
        result = CliRunner().invoke(cli, ['--config', config_path, 'propagation', '--kind', 'Dep',
                                          '--no-shuffled'])
        assert result.exit_code == 0, result.output
        gc = pd.read_csv(os.path.join(out, 'reports', 'USDep.gc.csv'))
        assert set(gc['kind']) == {'Real'}


@pytest.mark.cli
class TestExitCodes:
    """Test error reporting from main"""

    def test_missing_config_is_usage_error(self, temp_data_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(['--config', os.path.join(temp_data_dir, 'missing.toml'), 'toy'])
        assert exc.value.code == EXIT_USAGE
        error = last_error(capsys)
        assert error['error'] == 'ConfigError'
        assert error['exit_code'] == EXIT_USAGE

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(['frobnicate'])
        assert exc.value.code == EXIT_USAGE

    def test_missing_data_is_data_error(self, temp_data_dir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(['generate', '--matrix-dir', temp_data_dir, '--output-dir', temp_data_dir])
        assert exc.value.code == EXIT_DATA
        assert 'No arrival matrices' in last_error(capsys)['message']

    def test_strict_days(self, write_config, temp_data_dir, capsys):
        """US data must cover the full region period when strict_days is set"""
        out = os.path.join(temp_data_dir, 'out')
        path = write_config(QUICK_CONFIG.format(out=out).replace('n_realisations = 2',
                                                                 'n_realisations = 2\nstrict_days = true'))
        CliRunner().invoke(cli, ['--config', path, 'toy', '--airports', '2', '--days', '10'])
        with pytest.raises(SystemExit) as exc:
            main(['--config', path, 'generate'])
        assert exc.value.code == EXIT_DATA
        assert '1825 days' in last_error(capsys)['message']

    def test_internal_error(self, toy_run, mocker, capsys):
        config_path, _ = toy_run
        mocker.patch('app.batch_generate', side_effect=RuntimeError('unexpected'))
        with pytest.raises(SystemExit) as exc:
            main(['--config', config_path, 'generate'])
        assert exc.value.code == EXIT_INTERNAL
        assert last_error(capsys)['error'] == 'RuntimeError'

    def test_success_exit_code(self, quick_config):
        config_path, _ = quick_config
        with pytest.raises(SystemExit) as exc:
            main(['--config', config_path, 'toy', '--airports', '2', '--days', '5'])
        assert exc.value.code == 0
