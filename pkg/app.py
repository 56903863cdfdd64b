import glob
import json
import logging
import os
import sys

import click
import numpy as np
import pandas as pd

from utils.data_manager import (DataFormatError, load_npy, load_text_lines, save_csv, save_json,
                                save_npy, save_text_lines)
from utils.discriminator import discriminative_score
from utils.evaluation import correlation_score, cross_classification, pca_project
from utils.ingest import (DelayKind, aggregate_hourly, derive_calendar, load_matrix, parse_flight_csv,
                          save_matrix)
from utils.propagation import SeriesKind, gc_matrix, log10_p_histogram, results_frame, shuffle_surrogate
from utils.refinery import batch_generate
from utils.rng import STREAM_REPEAT, STREAM_SHUFFLE, derive_rng, derive_seed
from utils.run_config import PROFILES, ConfigError, load_config
from utils.toy import graded_family

logger = logging.getLogger('delaysynth')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

TOY_KIND_STREAMS = 100

KIND_CHOICES = {'Arr': [DelayKind.ARRIVAL], 'Dep': [DelayKind.DEPARTURE],
                'both': [DelayKind.ARRIVAL, DelayKind.DEPARTURE]}


def matrix_file(directory, airport, kind):
    return os.path.join(directory, f"{airport}_{kind.short}.npy")


def tensor_stem(directory, region, kind):
    return os.path.join(directory, f"{region.name}{kind.short}")


def discover_airports(directory, kind):
    suffix = f"_{kind.short}.npy"
    return sorted(os.path.basename(p)[:-len(suffix)] for p in glob.glob(os.path.join(directory, f"*{suffix}")))


def load_real_matrices(config, directory, kind):
    """Real matrices of the configured (or discovered) airports, all with the same day count"""
    airports = config.airports or discover_airports(directory, kind)
    if len(airports) == 0:
        raise ValueError(f"No {kind.value.lower()} matrices found in {directory}")
    matrices = {}
    for airport in airports:
        path = matrix_file(directory, airport, kind)
        if not os.path.exists(path):
            raise FileNotFoundError(f"Missing matrix file {path}")
        matrices[airport] = load_matrix(path, region=config.region)
    days = {m.days for m in matrices.values()}
    if len(days) != 1:
        raise DataFormatError(f"Airports have different day counts: {sorted(days)}")
    if config.strict_days and days != {config.region.expected_days}:
        raise DataFormatError(
            f"{config.region.name} data must cover {config.region.expected_days} days, got {days.pop()}")
    return matrices


def load_tensor(config, directory, kind):
    stem = tensor_stem(directory, config.region, kind)
    tensor = load_npy(f"{stem}.npy")
    airports = load_text_lines(f"{stem}.airports.txt")
    if tensor.ndim != 4 or tensor.shape[0] != len(airports) or tensor.shape[3] != 24:
        raise DataFormatError(f"{stem}.npy has shape {tensor.shape}, expected ({len(airports)}, n, days, 24)")
    return tensor, airports


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='TOML run configuration (defaults to data/run_config.toml).')
@click.option('--profile', type=click.Choice(sorted(PROFILES)), default=None,
              help='Preset overrides; "desk" shrinks iterations, realisations and repeats.')
@click.option('--seed', type=int, default=None, help='Override run.master_seed.')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']), default='INFO')
@click.pass_context
def cli(ctx, config_path, profile, seed, log_level):
    """Synthesize and validate hourly airport delay time series."""
    logging.basicConfig(level=getattr(logging, log_level), stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    ctx.obj = load_config(config_path, profile=profile, seed=seed)


@cli.command('ingest')
@click.option('--input-dir', required=True, type=click.Path(file_okay=False))
@click.option('--output-dir', default=None, type=click.Path(file_okay=False))
@click.pass_obj
def cmd_ingest(config, input_dir, output_dir):
    """Turn raw flight CSV exports into per-airport hourly delay matrices"""
    output_dir = output_dir or os.path.join(config.output_dir, 'matrices')
    files = sorted(glob.glob(os.path.join(input_dir, '*.csv')))
    if not files:
        raise ValueError(f"No CSV files found in {input_dir}")

    records, rejects = [], []
    for path in files:
        parsed = parse_flight_csv(path, config.ingest.schema)
        records.extend(parsed.records)
        frame = parsed.rejects_frame()
        frame.insert(0, 'file', os.path.basename(path))
        rejects.append(frame)
    if not records:
        raise ValueError(f"No valid flight records in {input_dir}")

    settings = config.ingest
    if settings.start_date and settings.end_date:
        calendar = list(pd.date_range(settings.start_date, settings.end_date, freq='D').date)
    else:
        calendar = derive_calendar(records, settings.timezones)
    airports = config.airports or sorted({r.origin for r in records} | {r.destination for r in records})

    written = 0
    for airport in airports:
        tz = settings.timezones.get(airport, 'UTC')
        for kind in DelayKind:
            matrix = aggregate_hourly(records, airport, kind, config.region.unit, calendar, tz=tz)
            save_matrix(matrix, matrix_file(output_dir, airport, kind))
            written += 1
    save_csv(os.path.join(output_dir, 'rejects.csv'), pd.concat(rejects, ignore_index=True))
    n_rejects = sum(len(f) for f in rejects)
    logger.info("Wrote %d matrices for %d airports (%d records, %d rejects)",
                written, len(airports), len(records), n_rejects)
    click.echo(json.dumps({'matrices': written, 'records': len(records), 'rejects': n_rejects}))


@cli.command('generate')
@click.option('--matrix-dir', default=None, type=click.Path(file_okay=False))
@click.option('--output-dir', default=None, type=click.Path(file_okay=False))
@click.option('--kind', type=click.Choice(sorted(KIND_CHOICES)), default='both')
@click.pass_obj
def cmd_generate(config, matrix_dir, output_dir, kind):
    """Generate the (airports, realisations, days, 24) synthetic tensor per delay kind"""
    matrix_dir = matrix_dir or os.path.join(config.output_dir, 'matrices')
    output_dir = output_dir or config.output_dir

    for delay_kind in KIND_CHOICES[kind]:
        matrices = load_real_matrices(config, matrix_dir, delay_kind)
        airports = list(matrices)
        days = next(iter(matrices.values())).days
        expected_shape = (len(airports), config.n_realisations, days, 24)

        stem = tensor_stem(output_dir, config.region, delay_kind)
        log_dir = os.path.join(output_dir, 'logs')
        tensor = np.empty(expected_shape)
        provenance = {'config': config.to_dict(), 'kind': delay_kind.value, 'unit': config.region.unit.value,
                      'shape': list(expected_shape), 'airports': {}}
        for i, airport in enumerate(airports):
            datasets = batch_generate(matrices[airport], config.sampler, config.refinery,
                                      config.n_realisations, log_dir_path=log_dir, workers=config.workers)
            for j, dataset in enumerate(datasets):
                if dataset.values.shape != expected_shape[2:]:
                    raise DataFormatError(
                        f"{airport} realisation {j} has shape {dataset.values.shape}, expected {expected_shape[2:]}")
                tensor[i, j] = dataset.values
            provenance['airports'][airport] = [
                {'realisation': d.provenance['realisation'],
                 'iterations_run': d.provenance['iterations_run'],
                 'replacements': d.provenance['replacements']} for d in datasets]
            logger.info("%s %s: %d realisations generated", airport, delay_kind.value, len(datasets))

        save_npy(f"{stem}.npy", tensor)
        save_text_lines(f"{stem}.airports.txt", airports)
        save_json(f"{stem}.provenance.json", provenance)
        click.echo(json.dumps({'file': f"{stem}.npy", 'shape': list(tensor.shape)}))


@cli.command('evaluate')
@click.option('--matrix-dir', default=None, type=click.Path(file_okay=False))
@click.option('--tensor-dir', default=None, type=click.Path(file_okay=False))
@click.option('--output-dir', default=None, type=click.Path(file_okay=False))
@click.option('--kind', type=click.Choice(sorted(KIND_CHOICES)), default='both')
@click.option('--n-datasets', type=int, default=None, help='Realisations to score per airport.')
@click.option('--cross', is_flag=True, help='Also run pairwise airport cross-classification.')
@click.pass_obj
def cmd_evaluate(config, matrix_dir, tensor_dir, output_dir, kind, n_datasets, cross):
    """Discriminative scores, correlation scores and PCA coordinates per airport"""
    matrix_dir = matrix_dir or os.path.join(config.output_dir, 'matrices')
    tensor_dir = tensor_dir or config.output_dir
    output_dir = output_dir or os.path.join(config.output_dir, 'reports')
    eval_cfg = config.discriminator_eval

    for delay_kind in KIND_CHOICES[kind]:
        matrices = load_real_matrices(config, matrix_dir, delay_kind)
        tensor, airports = load_tensor(config, tensor_dir, delay_kind)
        missing = [a for a in airports if a not in matrices]
        if missing:
            raise DataFormatError(f"No real matrices for tensor airports {missing}")
        limit = n_datasets or config.n_datasets or tensor.shape[1]
        limit = min(limit, tensor.shape[1])

        score_rows, corr_frames, pca_frames, summary = [], [], [], {}
        for i, airport in enumerate(airports):
            real = matrices[airport].values
            if tensor.shape[2] != real.shape[0]:
                raise DataFormatError(f"{airport}: tensor has {tensor.shape[2]} days, real data {real.shape[0]}")
            medians, train_medians, correlations = [], [], []
            for j in range(limit):
                seed = derive_seed(config.master_seed, STREAM_REPEAT, i, j)
                dist = discriminative_score(real, tensor[i, j], eval_cfg, config.n_repeats, seed=seed,
                                            workers=config.workers)
                report = correlation_score(real, tensor[i, j])
                medians.append(dist.median)
                train_medians.append(dist.train_median)
                correlations.append(report.median)
                frame = report.to_frame()
                frame.insert(0, 'realisation', j)
                frame.insert(0, 'airport', airport)
                corr_frames.append(frame)
            projection = pca_project(real, tensor[i, 0]).to_frame()
            projection.insert(0, 'airport', airport)
            pca_frames.append(projection)
            score_rows.append({
                'airport': airport, 'n_datasets': limit,
                'score_min': float(np.min(medians)), 'score_median': float(np.median(medians)),
                'score_max': float(np.max(medians)),
                'train_min': float(np.min(train_medians)), 'train_median': float(np.median(train_medians)),
                'train_max': float(np.max(train_medians)),
                'corr_min': float(np.min(correlations)), 'corr_median': float(np.median(correlations)),
                'corr_max': float(np.max(correlations)),
            })
            summary[airport] = {'dataset_scores': medians, 'dataset_train_scores': train_medians,
                                'dataset_correlations': correlations,
                                'train_test_gap': float(np.median(train_medians) - np.median(medians))}
            logger.info("%s %s: median score %.3f (train %.3f), median correlation %.3f",
                        airport, delay_kind.value, score_rows[-1]['score_median'], score_rows[-1]['train_median'],
                        score_rows[-1]['corr_median'])

        stem = tensor_stem(output_dir, config.region, delay_kind)
        save_csv(f"{stem}.scores.csv", pd.DataFrame(score_rows))
        save_csv(f"{stem}.correlation.csv", pd.concat(corr_frames, ignore_index=True))
        save_csv(f"{stem}.pca.csv", pd.concat(pca_frames, ignore_index=True))
        if cross:
            synth = {a: tensor[i, 0] for i, a in enumerate(airports)}
            real = {a: matrices[a].values for a in airports}
            report = cross_classification(real, synth, eval_cfg, seed=config.master_seed)
            save_csv(f"{stem}.cross.csv", report.to_frame())
            summary['cross_transfer_correlation'] = report.transfer_correlation()
        save_json(f"{stem}.evaluation.json", summary)
        click.echo(json.dumps({'report': f"{stem}.scores.csv", 'airports': len(score_rows)}))


@cli.command('propagation')
@click.option('--matrix-dir', default=None, type=click.Path(file_okay=False))
@click.option('--tensor-dir', default=None, type=click.Path(file_okay=False))
@click.option('--output-dir', default=None, type=click.Path(file_okay=False))
@click.option('--kind', type=click.Choice(sorted(KIND_CHOICES)), default='both')
@click.option('--realisation', type=int, default=0, help='Synthetic realisation to test.')
@click.option('--shuffled/--no-shuffled', default=True, help='Include shuffled-real surrogates.')
@click.pass_obj
def cmd_propagation(config, matrix_dir, tensor_dir, output_dir, kind, realisation, shuffled):
    """Granger-causality p-values between airport pairs on real, synthetic and shuffled series"""
    matrix_dir = matrix_dir or os.path.join(config.output_dir, 'matrices')
    tensor_dir = tensor_dir or config.output_dir
    output_dir = output_dir or os.path.join(config.output_dir, 'reports')
    gc_cfg = config.propagation

    for delay_kind in KIND_CHOICES[kind]:
        matrices = load_real_matrices(config, matrix_dir, delay_kind)
        real = {a: m.values for a, m in matrices.items()}
        results = gc_matrix(real, gc_cfg, SeriesKind.REAL)

        stem = tensor_stem(tensor_dir, config.region, delay_kind)
        if os.path.exists(f"{stem}.npy"):
            tensor, airports = load_tensor(config, tensor_dir, delay_kind)
            if not 0 <= realisation < tensor.shape[1]:
                raise ValueError(f"Realisation {realisation} outside [0, {tensor.shape[1]})")
            synth = {a: tensor[i, realisation] for i, a in enumerate(airports)}
            results += gc_matrix(synth, gc_cfg, SeriesKind.SYNTHETIC)
        else:
            logger.warning("No synthetic tensor at %s.npy, testing real data only", stem)
        if shuffled:
            surrogate = {a: shuffle_surrogate(v, derive_rng(gc_cfg.rng_seed, STREAM_SHUFFLE, i))
                         for i, (a, v) in enumerate(real.items())}
            results += gc_matrix(surrogate, gc_cfg, SeriesKind.SHUFFLED)

        out_stem = tensor_stem(output_dir, config.region, delay_kind)
        save_csv(f"{out_stem}.gc.csv", results_frame(results))
        save_json(f"{out_stem}.gc_histogram.json", log10_p_histogram(results))
        click.echo(json.dumps({'report': f"{out_stem}.gc.csv", 'tests': len(results)}))


@cli.command('toy')
@click.option('--output-dir', default=None, type=click.Path(file_okay=False))
@click.option('--airports', 'n_airports', type=click.IntRange(2, 8), default=4)
@click.option('--days', type=click.IntRange(min=2), default=600)
@click.pass_obj
def cmd_toy(config, output_dir, n_airports, days):
    """Write toy delay matrices (graded mean shifts) for a quick end-to-end run"""
    output_dir = output_dir or os.path.join(config.output_dir, 'matrices')
    shifts = [0.0, 1.5, 4.0, 10.0, 15.0, 20.0, 25.0, 30.0][:n_airports]
    for offset, kind in enumerate(DelayKind):
        family = graded_family(shifts, days=days, seed=config.master_seed, kind=kind, unit=config.region.unit,
                               stream_offset=TOY_KIND_STREAMS * offset)
        for airport, matrix in family.items():
            save_matrix(matrix, matrix_file(output_dir, airport, kind))
    click.echo(json.dumps({'airports': n_airports, 'days': days, 'directory': output_dir}))


def exit_code_for(error):
    if isinstance(error, (click.UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(error, click.ClickException):
        return EXIT_USAGE
    if isinstance(error, (ValueError, OSError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv=None):
    """Run the CLI; errors become one JSON line on stderr and a nonzero exit code"""
    try:
        cli.main(args=argv, prog_name='delaysynth', standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_INTERNAL:
            logger.exception("Internal error")
        message = e.format_message() if isinstance(e, click.ClickException) else str(e)
        sys.stderr.write(json.dumps({'error': type(e).__name__, 'message': message, 'exit_code': code}) + '\n')
        sys.exit(code)
    sys.exit(EXIT_OK)


if __name__ == '__main__':
    main()
