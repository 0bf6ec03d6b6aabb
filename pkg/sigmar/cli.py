"""Command-line entry point.

    python -m sigmar.cli simulate --out results --seed 1
    python -m sigmar.cli fit --data panel.csv --weights W.csv --method bc
    python -m sigmar.cli project --phi Phi.csv --k 3 --n 4
    python -m sigmar.cli forecast --data panel.csv --trade trade.csv --window 40
    python -m sigmar.cli benchmark --data panel.csv --trade trade.csv --preprocess
    python -m sigmar.cli replicate-table1 --reps 50 --jobs 4

Exit codes: 0 on success, 2 for invalid input or parameters, 3 for
numerical failures.
"""
import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from sigmar import baselines
from sigmar import data_loader
from sigmar import evaluate
from sigmar import model
from sigmar import projection
from sigmar import reading_utils
from sigmar import replicate
from sigmar import simulate
from sigmar.errors import DimensionError, DomainError, NumericalError, ValidationError
from sigmar.metadata import __version__
from utils import utils

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

SUBCOMMANDS = {
    "simulate": "simulate",
    "fit": "fit",
    "project": "project",
    "forecast": "forecast",
    "benchmark": "benchmark",
    "replicate-table1": "replicate",
}


def _comma_list(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="sigmar",
                                     description='SIGMAR estimation, forecasting and replication')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='Key-value config file.')
    common.add_argument('--seed', type=int, default=None, help='Master seed.')
    common.add_argument('--out', type=str, default=None, help='Output directory.')
    common.add_argument('--reps', type=int, default=None, help='Replications per cell.')
    common.add_argument('--jobs', type=int, default=None, help='Worker processes.')
    common.add_argument('--exp_id', type=str, default=None, help='Experiment ID.')
    common.add_argument('--verbose', action='store_true', help='Log at DEBUG level.')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--data', type=str, default=None, help='Panel CSV (t, variable, country, value).')
    data.add_argument('--weights', type=str, default=None, help='Weight matrix CSV without header.')
    data.add_argument('--trade', type=str, default=None,
                      help='Trade-flow CSV (year, exporter, importer, value).')
    data.add_argument('--preprocess', action='store_true', default=None,
                      help='Difference, demean and scale the panel.')
    data.add_argument('--periods_per_year', type=int, default=None, help='Panel periods per year.')
    data.add_argument('--first_year', type=int, default=None, help='Calendar year of period 0.')
    data.add_argument('--trade_window', type=int, default=None, help='Trade years averaged.')

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common], help='Simulate a SIGMAR panel.')
    for name in ('k', 'n', 's', 'T'):
        p.add_argument(f'--{name}', type=int, default=None, help=f'DGP {name}.')

    p = sub.add_parser('fit', parents=[common, data], help='Fit one estimator.')
    p.add_argument('--method', type=str, default=None, choices=evaluate.METHODS)
    p.add_argument('--as_of_year', type=int, default=None, help='Trade year for the weights.')

    p = sub.add_parser('project', parents=[common],
                       help='Split a transition into B kron A + S.')
    p.add_argument('--phi', type=str, default=None, help='kn x kn transition CSV without header.')
    p.add_argument('--params', type=str, default=None, help='Parameter JSON; projects B kron A + S.')
    p.add_argument('--k', type=int, default=None, help='Number of variables (with --phi).')
    p.add_argument('--n', type=int, default=None, help='Number of countries (with --phi).')

    p = sub.add_parser('forecast', parents=[common, data], help='Rolling one-step forecasts.')
    p.add_argument('--method', type=str, default=None, choices=evaluate.METHODS + ("oracle",))
    p.add_argument('--window', type=int, default=None, help='Estimation window length.')
    p.add_argument('--params', type=str, default=None, help='True parameters for --method oracle.')
    p.add_argument('--warm_start', action='store_true', default=None)

    p = sub.add_parser('benchmark', parents=[common, data], help='Compare methods by MSFE.')
    p.add_argument('--methods', type=_comma_list, default=None, help='Comma-separated methods.')
    p.add_argument('--window', type=int, default=None, help='Estimation window length.')

    p = sub.add_parser('replicate-table1', parents=[common], help='Monte-Carlo replication.')
    p.add_argument('--cells', type=_comma_list, default=None, help='Cells as KxNxS, comma-separated.')
    p.add_argument('--T_values', type=_comma_list, default=None, help='Series lengths, comma-separated.')
    p.add_argument('--designs', type=int, default=None,
                   help='Independent true-parameter draws per cell (default 1).')
    p.add_argument('--full_grid', action='store_true', help='Run every reference cell.')
    return parser


def _overrides(args):
    skip = {"command", "config", "verbose", "full_grid", "k", "n", "s", "T"}
    values = {key: value for key, value in vars(args).items() if key not in skip}
    for name in ("k", "n", "s", "T"):
        if hasattr(args, name):
            values[f"dgp.{name}"] = getattr(args, name)
    if getattr(args, "full_grid", False):
        values["cells"] = [f"{k}x{n}x{s}" for k, n, s in replicate.GRID_CELLS]
        values["T_values"] = replicate.GRID_T
    return values


def load_config(args):
    cfg = reading_utils.read_config(args.config) if args.config else {}
    return reading_utils.ExperimentConfig.from_sources(SUBCOMMANDS[args.command], cfg,
                                                       _overrides(args))


def _path(config, name):
    return os.path.join(config.out, name)


def _write_json(doc, path):
    with open(path, "wt") as fp:
        json.dump(doc, fp, indent=2)
    logger.info(f"wrote {path}")


def _stacked_labels(series):
    variables, countries, _ = data_loader.labels_of(series)
    return [f"{v}@{c}" for c in countries for v in variables]


def write_estimate_csvs(params, series, out_dir):
    """Plot-ready A, B, C, S and B kron A + S with labels."""
    variables, countries, _ = data_loader.labels_of(series)
    stacked = _stacked_labels(series)
    tables = {
        "A.csv": (params.A, variables, variables),
        "B.csv": (params.B, countries, countries),
        "C.csv": (params.C, variables, variables),
        "S.csv": (params.S, stacked, stacked),
        "kron_plus_s.csv": (model.phi_of(params), stacked, stacked),
    }
    for name, (M, rows, cols) in tables.items():
        reading_utils.write_matrix_csv(M, os.path.join(out_dir, name), rows, cols)


def load_series(config):
    series = data_loader.load_panel_csv(config.data)
    if config.preprocess:
        series = data_loader.preprocess(series)
        logger.info(f"preprocessed panel to T={series.T}")
    return series


def weight_provider(config, series):
    """Fixed weights from a CSV, or t -> trade weights for the year of period t."""
    if config.weights is not None:
        W = reading_utils.load_weight_csv(config.weights)
        if W.n != series.n:
            raise DimensionError(f"weight matrix is {W.n} x {W.n} for {series.n} countries")
        return W
    trade = data_loader.load_trade_csv(config.trade, series.countries)
    periods = series.periods or tuple(range(series.T))
    return data_loader.trade_weight_provider(trade, periods, config.periods_per_year,
                                             config.first_year, config.trade_window)


def _weight_for_fit(config, series):
    provider = weight_provider(config, series)
    if isinstance(provider, model.WeightMatrix):
        return provider
    if config.as_of_year is not None:
        trade = data_loader.load_trade_csv(config.trade, series.countries)
        return data_loader.build_weight_from_trade(trade, config.as_of_year, config.trade_window)
    return provider(series.T - 1)


def run_simulate(config):
    spec = dataclasses.replace(config.dgp, seed=config.seed)
    W = simulate.gen_weight(spec.n, spec.seed)
    params = simulate.gen_coefficients(spec, W)
    series = simulate.simulate_series(params, W, spec.T, burn_in=spec.burn_in, seed=spec.seed,
                                      sigma=spec.sigma)
    data_loader.write_panel_csv(series, _path(config, "panel.csv"))
    reading_utils.write_matrix_csv(W.W, _path(config, "weights.csv"))
    model.save_params(params, _path(config, "params.json"))
    report = model.check_admissible(params, W)
    _write_json({"dgp": dataclasses.asdict(spec), "admissibility": dataclasses.asdict(report)},
                _path(config, "simulation.json"))
    return series


def run_fit(config):
    series = load_series(config)
    W = _weight_for_fit(config, series)
    forecaster, fit = evaluate.fit_forecaster(config.method, series, W, config.method_options())
    prefix = f"{config.method}_{config.exp_id}"
    if fit is None:
        _write_json(forecaster.to_dict(), _path(config, f"{prefix}_forecaster.json"))
        return forecaster
    doc = model.params_to_dict(fit.params)
    doc["method"] = config.method
    doc["Pi"] = fit.transition(W).tolist()
    _write_json(doc, _path(config, f"{prefix}_params.json"))
    report = fit.report
    if hasattr(report, "trace"):
        pd.DataFrame([dataclasses.asdict(row) for row in report.trace]).to_csv(
            _path(config, f"{prefix}_trace.csv"), index=False, float_format="%.10g")
        _write_json({"iterations": report.iterations, "converged": report.converged,
                     "lambda": report.lam}, _path(config, f"{prefix}_report.json"))
    else:
        doc = report.to_dict()
        doc["projection"] = fit.projection.to_dict()
        _write_json(doc, _path(config, f"{prefix}_report.json"))
    write_estimate_csvs(fit.params, series, config.out)
    return fit


def run_project(config):
    if config.phi is not None:
        Phi = reading_utils.load_matrix_csv(config.phi)
        k, n = config.dgp.k, config.dgp.n
    else:
        params = model.load_params(config.params)
        Phi, k, n = model.phi_of(params), params.k, params.n
    result = projection.project_phi(Phi, k, n, config.admm)
    _write_json(result.to_dict(), _path(config, f"projection_{config.exp_id}.json"))
    for name, M in (("A.csv", result.A), ("B.csv", result.B), ("S.csv", result.S)):
        reading_utils.write_matrix_csv(M, _path(config, name))
    return result


def run_forecast(config):
    series = load_series(config)
    provider = weight_provider(config, series)
    if config.method == "oracle":
        truth = model.load_params(config.params)

        def method(train, W):
            return baselines.oracle_forecaster(truth, W)
        method.__name__ = "oracle"
    else:
        method = config.method
    result = evaluate.rolling_forecast(series, provider, method, config.window,
                                       config.method_options(), warm_start=config.warm_start,
                                       progress=True)
    prefix = f"forecast_{result.method}_{config.exp_id}"
    pd.DataFrame(result.to_rows()).to_csv(_path(config, f"{prefix}.csv"), index=False,
                                          float_format="%.10g")
    doc = result.to_dict()
    doc["overall"] = result.overall
    _write_json(doc, _path(config, f"{prefix}.json"))
    return result


def run_benchmark(config):
    series = load_series(config)
    provider = weight_provider(config, series)
    results = evaluate.benchmark(series, provider, config.methods, config.window,
                                 config.method_options(), progress=True)
    long, wide = evaluate.benchmark_tables(results)
    long.to_csv(_path(config, f"benchmark_{config.exp_id}_long.csv"), index=False,
                float_format="%.10g")
    wide.to_csv(_path(config, f"benchmark_{config.exp_id}_wide.csv"), index=False,
                float_format="%.10g")
    for row in wide.itertuples(index=False):
        logger.info(f"{row.method}: overall MSFE {row.overall:.4f}")
    return results


def run_replicate(config):
    report = replicate.replicate_table1(config.cells, config.T_values, config.reps, config.seed,
                                        config.jobs, config.method_options(), config.designs)
    paths = report.write(config.out, config.exp_id)
    for row in report.summary.itertuples(index=False):
        if row.passed is not None:
            logger.info(f"({row.k},{row.n}) T={row.T} {row.quantity}/{row.method}: "
                        f"{row.mean:.3f} in [{row.band_low}, {row.band_high}] -> "
                        f"{'pass' if row.passed else 'FAIL'}")
    logger.info(f"replication tables written to {paths['summary']}")
    return report


RUNNERS = {
    "simulate": run_simulate,
    "fit": run_fit,
    "project": run_project,
    "forecast": run_forecast,
    "benchmark": run_benchmark,
    "replicate": run_replicate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    try:
        config = load_config(args)
    except ValidationError as err:
        utils.init_logger(level=level)
        logger.error(f"invalid configuration: {err}")
        return EXIT_INVALID
    os.makedirs(config.out, exist_ok=True)
    utils.init_logger(filename=_path(config, f"run_{config.exp_id}.log"), level=level)
    logger.info(f"sigmar {__version__}: {args.command} (seed {config.seed}, out {config.out})")
    try:
        RUNNERS[config.mode](config)
    except (ValidationError, DimensionError, DomainError) as err:
        logger.error(f"{args.command} failed: {err}")
        return EXIT_INVALID
    except NumericalError as err:
        logger.error(f"{args.command} failed numerically: {err}")
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as err:
        logger.error(f"{args.command} failed numerically: {err}")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
