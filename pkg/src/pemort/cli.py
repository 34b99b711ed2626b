"""Command-line entry point: ``pemort <subcommand> ...``.

Exit codes: 0 success, 2 input/output, 3 data, 4 convergence, 5 numeric.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .compare import diff_surface, emit_heatmap, forecast_error
from .data import (
    load_population_csv,
    load_surface_csv,
    mortality_rates,
    save_surface_csv,
    synth_surface,
)
from .exceptions import ConvergenceError, DataError, MortalityError
from .fitting import FitOptions, fit_chain, fit_trends
from .model import PEParams, PETrend, eval_surface, params_at
from .ssm import GibbsConfig, Priors, forecast_rates, gibbs_chains
from .validation import parse_range

log = logging.getLogger("pemort")

DEFAULT_SEED = 20120101
DEFAULT_HORIZON = 12


def cmd_rates(args):
    grid = load_population_csv(args.population_csv)
    surface = mortality_rates(grid)
    save_surface_csv(surface, args.out_csv)
    log.info("wrote %d ages x %d years to %s", *surface.shape, args.out_csv)
    return 0


def _fit_init(args, surface):
    if args.init_trend:
        trend = PETrend.load(args.init_trend)
        return params_at(trend, int(surface.years[0]))
    demo = PETrend.demo()
    return params_at(demo, demo.t0)


def cmd_fit(args):
    surface = load_surface_csv(args.rates_csv)
    opts = FitOptions(
        tol=args.tol,
        max_iter=args.max_iter,
        log_residuals=args.log_residuals,
        multistart=args.multistart,
        seed=args.seed,
    )
    chain = fit_chain(surface, _fit_init(args, surface), opts)
    chain.to_csv(args.out_params_csv)
    if not args.quiet:
        print(f"{'year':>6} {'residual_ss':>14} {'iter':>5} converged")
        for year, res in chain:
            print(f"{year:>6} {res.residual_ss:>14.6e} {res.iterations:>5} {str(res.converged).lower()}")
    failed = chain.failed_years
    if failed:
        raise ConvergenceError(f"fit did not converge for years {failed}", years=failed)
    t0 = int(surface.years[0]) if args.t0 is None else args.t0
    trend = fit_trends(chain, t0)
    trend.save(args.out_trend_file)
    log.info("trend written to %s", args.out_trend_file)
    return 0


def _forecast_years(args, default_last):
    if args.years:
        return parse_range(args.years, "years")
    last = args.last_year if args.last_year is not None else default_last
    if last is None:
        raise DataError("give --years A-B or --last-year YEAR")
    return np.arange(last + 1, last + 1 + args.horizon)


def cmd_forecast_model(args):
    trend = PETrend.load(args.trend_file)
    ages = parse_range(args.ages, "ages")
    years = _forecast_years(args, None)
    surface = eval_surface(trend, ages, years)
    save_surface_csv(surface, args.out_csv)
    log.info("forecast %d..%d written to %s", years[0], years[-1], args.out_csv)
    return 0


def cmd_forecast_bayes(args):
    surface = load_surface_csv(args.rates_csv)
    if np.any(surface.rates <= 0):
        raise DataError("Bayesian forecasting needs strictly positive rates (log scale)")
    cfg = GibbsConfig(args.n_samples, args.burn_in, args.keep_last, seed=args.seed)
    post = gibbs_chains(
        surface.log_rates, Priors(), cfg, n_chains=args.chains, ages=surface.ages, years=surface.years
    )
    rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(args.chains + 1)[-1])
    forecast = forecast_rates(post, args.horizon, rng)
    forecast.to_csv(args.out_csv)
    if args.summary_csv:
        save_surface_csv(forecast.summary, args.summary_csv)
    if args.posterior_csv:
        post.to_csv(args.posterior_csv)
    if args.trace_dir:
        post.write_traces(args.trace_dir)
    log.info("Bayesian forecast for %d years written to %s", args.horizon, args.out_csv)
    return 0


def cmd_compare(args):
    a = load_surface_csv(args.a_csv)
    b = load_surface_csv(args.b_csv)
    if args.errors:
        err = forecast_error(a, b, log=args.log)
        emit_heatmap(err.abs_errors, args.out, args.format)
        if not args.quiet:
            print(f"{'age':>4} {'mae':>14}")
            for age, mae in zip(err.abs_errors.ages, err.per_age_mae):
                print(f"{age:>4} {mae:>14.6e}")
    else:
        emit_heatmap(diff_surface(a, b, log=args.log), args.out, args.format)
    return 0


def cmd_synth(args):
    trend = PETrend.load(args.trend) if args.trend else PETrend.demo()
    surface = synth_surface(
        trend, parse_range(args.ages, "ages"), parse_range(args.years, "years"), args.noise, args.seed
    )
    save_surface_csv(surface, args.out_csv)
    return 0


def _global_flags(suppress):
    # subcommands re-declare the flags with SUPPRESS so they never overwrite
    # a value given before the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common.add_argument("--seed", type=int, default=dflt(DEFAULT_SEED), help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--quiet", action="store_true", default=dflt(False), help="suppress tables and progress messages")
    common.add_argument(
        "--log-residuals", action="store_true", default=dflt(False),
        help="fit log-rates instead of raw rates (diagnostic; default is raw residuals)",
    )
    return common


def build_parser():
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="pemort", parents=[_global_flags(suppress=False)],
        description="Fit, forecast and compare age x year mortality surfaces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rates", parents=[common], help="population counts -> mortality rates")
    p.add_argument("population_csv", help="input CSV with header year,age,population")
    p.add_argument("out_csv", help="output CSV with header year,age,rate")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("fit", parents=[common], help="per-year fits and trend extraction")
    p.add_argument("rates_csv", help="input CSV with header year,age,rate")
    p.add_argument("out_params_csv", help="per-year parameter CSV")
    p.add_argument("out_trend_file", help="trend constants as key=value text")
    p.add_argument("--init-trend", help="trend file whose first-year parameters start the chain")
    p.add_argument("--t0", type=int, help="calendar year mapped to t=0 (default: first data year)")
    p.add_argument("--tol", type=float, default=1e-10, help="relative decrease tolerance (default %(default)s)")
    p.add_argument("--max-iter", type=int, default=200, help="iterations per year (default %(default)s)")
    p.add_argument("--multistart", type=int, default=1, help="starts per year, diagnostics only (default %(default)s)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("forecast-model", parents=[common], help="evaluate a trend file on an age x year grid")
    p.add_argument("trend_file", help="trend constants as key=value text")
    p.add_argument("out_csv", help="output CSV with header year,age,rate")
    p.add_argument("--ages", default="0-78", help="age range A-B (default %(default)s)")
    p.add_argument("--years", help="forecast years A-B")
    p.add_argument("--last-year", type=int, help="last data year; forecast the following --horizon years")
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON, help="years after --last-year (default %(default)s)")
    p.set_defaults(func=cmd_forecast_model)

    p = sub.add_parser("forecast-bayes", parents=[common], help="Gibbs-sampled state-space forecast")
    p.add_argument("rates_csv", help="input CSV with header year,age,rate")
    p.add_argument("out_csv", help="forecast summary CSV year,age,mean_rate,lo95,hi95")
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON, help="forecast years (default %(default)s)")
    p.add_argument("--n-samples", type=int, default=12000, help="total Gibbs sweeps (default %(default)s)")
    p.add_argument("--burn-in", type=int, default=8000, help="discarded sweeps (default %(default)s)")
    p.add_argument("--keep-last", type=int, default=4000, help="kept sweeps (default %(default)s)")
    p.add_argument("--chains", type=int, default=1, help="independent chains, pooled (default %(default)s)")
    p.add_argument("--trace-dir", help="directory for per-parameter trace CSVs")
    p.add_argument("--posterior-csv", help="write kept draws as draw,param,index,value")
    p.add_argument("--summary-csv", help="write the mean forecast as year,age,rate")
    p.set_defaults(func=cmd_forecast_bayes)

    p = sub.add_parser("compare", parents=[common], help="difference or error surface between two rate files")
    p.add_argument("a_csv", help="reference surface (year,age,rate)")
    p.add_argument("b_csv", help="compared surface (year,age,rate)")
    p.add_argument("out", help="output path")
    p.add_argument("--format", choices=["csv", "png"], help="output format (default: from the file suffix, else csv)")
    p.add_argument("--log", action="store_true", help="difference log-rates instead of rates")
    p.add_argument("--errors", action="store_true", help="write |a - b| and print per-age mean absolute error")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", parents=[common], help="synthetic surface from a trend")
    p.add_argument("out_csv", help="output CSV with header year,age,rate")
    p.add_argument("--trend", help="trend file (default: built-in demo trend)")
    p.add_argument("--ages", default="0-78", help="age range A-B (default %(default)s)")
    p.add_argument("--years", default="2012-2034", help="year range A-B (default %(default)s)")
    p.add_argument("--noise", type=float, default=0.0, help="log-normal noise sd (default %(default)s)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            return args.func(args)
    except MortalityError as exc:
        print(f"pemort {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
