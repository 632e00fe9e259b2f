"""Command-line surface: simulate, estimate, select, backtest.

Every command writes its results next to a JSON manifest echoing the
full configuration, seed, library version, wall time, and any per-cell
errors, so a result file is always traceable to the run that made it.
Exit codes: 0 on success, 1 on domain errors (bad data, failed
estimation), 2 on usage errors (unknown flags or estimator ids).
All commands are deterministic given their flags and seed, for any
``--jobs`` value.
"""

import functools
import os
import sys
import time

import click
import numpy as np

from . import __version__, registry
from .errors import SafcovError
from .panel_io import (
    RunManifest,
    load_factor_table,
    load_panel,
    load_riskfree,
    save_covariance,
    save_manifest,
    _jsonable,
)
from .portfolio import BacktestConfig, expanding_sd_series, run_backtest
from .saf import CovarianceEstimate, assemble_saf_covariance, fit_saf
from .selection import select_mu, select_num_factors
from .simulation import (
    SimulationDesign,
    generate_design,
    run_study,
    study_table,
    summarize_study,
)

_OUT_ENV = "SAFCOV_OUT"


def _default_out():
    return os.environ.get(_OUT_ENV, ".")


def _guard_domain_errors(fn):
    """Map library errors to exit code 1 with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SafcovError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _parse_estimators(text):
    ids = [part.strip() for part in text.split(",") if part.strip()]
    if not ids:
        raise click.UsageError("no estimator ids given")
    for estimator_id in ids:
        try:
            registry.require_known(estimator_id)
        except KeyError:
            raise click.UsageError(
                f"unknown estimator {estimator_id!r}; available: "
                f"{', '.join(registry.available_estimators())}") from None
    return ids


def _parse_int_list(text, what):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise click.UsageError(f"could not parse {what} list {text!r}") \
            from None


def _parse_float_list(text, what):
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise click.UsageError(f"could not parse {what} list {text!r}") \
            from None


def _write_manifest(out_dir, name, command, config, seed, wall, errors):
    manifest = RunManifest(
        command=command,
        config=_jsonable(config),
        seed=seed,
        version=__version__,
        wall_time=wall,
        errors=errors,
    )
    path = os.path.join(out_dir, name)
    save_manifest(manifest, path)
    return path


@click.group()
@click.version_option(version=__version__, prog_name="safcov")
def main():
    """Covariance estimation toolkit: factor fits, rivals, studies."""


@main.command()
@click.option("--design", type=click.Choice(["uniform", "sparse", "spiked"]),
              required=True, help="Population covariance family.")
@click.option("--n", "n_assets", type=int, required=True,
              help="Cross-section size N.")
@click.option("--t", "n_periods", type=int, required=True,
              help="Panel length T.")
@click.option("--eta", type=float, default=0.0, show_default=True,
              help="Off-diagonal level (uniform/spiked).")
@click.option("--p", type=float, default=0.1, show_default=True,
              help="Nonzero probability (sparse).")
@click.option("--exponents", default="1.0,1.0,0.8,0.5", show_default=True,
              help="Spike exponents (spiked).")
@click.option("--dist", type=click.Choice(["gaussian", "student_t5"]),
              default="gaussian", show_default=True)
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--estimators", default="saf,sample", show_default=True,
              help="Comma-separated registry ids.")
@click.option("--redraw-sigma", is_flag=True,
              help="Fresh population matrix per replication.")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=_default_out,
              help="Output directory [env SAFCOV_OUT or '.'].")
@_guard_domain_errors
def simulate(design, n_assets, n_periods, eta, p, exponents, dist, reps,
             seed, estimators, redraw_sigma, jobs, out):
    """Run a Monte Carlo study of one design cell."""
    estimator_ids = _parse_estimators(estimators)
    start = time.perf_counter()
    cell = SimulationDesign(
        kind=design, N=n_assets, T=n_periods, eta=eta, p=p, seed=seed,
        dist=dist, exponents=_parse_float_list(exponents, "exponent"))
    os.makedirs(out, exist_ok=True)

    scores = run_study(cell, estimator_ids, reps,
                       redraw_sigma=redraw_sigma, jobs=jobs)
    summary = summarize_study(scores)
    scores.to_csv(os.path.join(out, "simulate_scores.csv"),
                  index=False, float_format="%.17g")
    summary.to_csv(os.path.join(out, "simulate_summary.csv"),
                   index=False, float_format="%.17g")

    Sigma_true, _ = generate_design(cell)
    eigenvalues = np.sort(np.linalg.eigvalsh(Sigma_true))[::-1]
    with open(os.path.join(out, "design_eigenvalues.csv"), "w") as fh:
        fh.write("rank,eigenvalue\n")
        for k, value in enumerate(eigenvalues, start=1):
            fh.write(f"{k},{value:.17g}\n")

    errors = [
        {"rep": int(row.rep), "estimator_id": row.estimator_id,
         "error": row.error}
        for row in scores.itertuples() if row.error is not None
    ]
    wall = time.perf_counter() - start
    _write_manifest(
        out, "simulate_manifest.json", "simulate",
        {"design": vars(cell), "reps": reps, "estimators": estimator_ids,
         "redraw_sigma": redraw_sigma, "jobs": jobs},
        seed, wall, errors)
    click.echo(study_table(
        summary, title=f"{design} design, N={n_assets}, T={n_periods}, "
                       f"reps={reps}"))


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True,
              dir_okay=False), required=True, help="Return panel CSV.")
@click.option("--estimator",
              type=click.Choice(list(registry.available_estimators())),
              default="saf", show_default=True)
@click.option("--standardize", is_flag=True,
              help="Demean and scale each series to unit variance.")
@click.option("--factors", "factors_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Observed-factor CSV (date,mkt_rf,smb,hml,rf).")
@click.option("--r", "r_fixed", type=int, help="Fix the factor count.")
@click.option("--mu", "mu_fixed", type=float, help="Fix the penalty level.")
@click.option("--select-r", is_flag=True,
              help="Select the factor count from the eigenvalue gaps "
                   "(default when --r is absent).")
@click.option("--select-mu", "select_mu_flag", is_flag=True,
              help="Select the penalty on the information-criterion grid "
                   "(default when --mu is absent).")
@click.option("--r-max", type=int, default=8, show_default=True)
@click.option("--split-n", type=int, help="Split point (adz).")
@click.option("--alpha-n", type=float, help="Penalty level (bt).")
@click.option("--out", type=click.Path(file_okay=False), default=_default_out,
              help="Output directory [env SAFCOV_OUT or '.'].")
@_guard_domain_errors
def estimate(input_path, estimator, standardize, factors_path, r_fixed,
             mu_fixed, select_r, select_mu_flag, r_max, split_n, alpha_n,
             out):
    """Estimate one covariance matrix from a panel CSV."""
    start = time.perf_counter()
    os.makedirs(out, exist_ok=True)
    panel = load_panel(input_path, standardize=standardize)
    X = panel.values
    chosen = {}

    factors = None
    if factors_path is not None:
        table = load_factor_table(factors_path)
        factors = table.observed(3 if estimator == "ff3f" else 1)
        if factors.series.shape[0] != panel.n_periods:
            raise click.UsageError(
                "factor file length does not match the panel")

    if estimator == "saf":
        r = r_fixed
        if r is None:
            result = select_num_factors(X, r_max=r_max)
            r = max(result.r_hat, 1)
            chosen["r_hat"] = result.r_hat
            chosen["xi"] = result.xi
        chosen["r"] = r
        if mu_fixed is None:
            selection = select_mu(X, r)
            fit = selection.best_fit
            chosen["mu_star"] = selection.mu_star
        else:
            fit = fit_saf(X, r=r, mu=mu_fixed)
            chosen["mu"] = mu_fixed
        result_estimate = assemble_saf_covariance(fit)
    else:
        context = {"factors": factors, "split_n": split_n,
                   "alpha_n": alpha_n, "r_max": r_max}
        matrix, is_precision = registry.estimate(estimator, X, context)
        result_estimate = CovarianceEstimate(
            matrix=matrix, estimator_id=estimator,
            params={"is_precision": is_precision})

    cov_path = os.path.join(out, "covariance.csv")
    save_covariance(result_estimate, cov_path, labels=panel.labels)
    wall = time.perf_counter() - start
    _write_manifest(
        out, "estimate_manifest.json", "estimate",
        {"input": input_path, "estimator": estimator,
         "standardize": standardize, "chosen": chosen,
         "params": result_estimate.params},
        0, wall, [])
    click.echo(f"wrote {cov_path}")
    for key, value in chosen.items():
        click.echo(f"{key} = {value}")


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True,
              dir_okay=False), required=True, help="Return panel CSV.")
@click.option("--standardize", is_flag=True)
@click.option("--r-max", type=int, default=8, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=_default_out,
              help="Output directory [env SAFCOV_OUT or '.'].")
@_guard_domain_errors
def select(input_path, standardize, r_max, out):
    """Select the factor count and penalty level for a panel."""
    start = time.perf_counter()
    os.makedirs(out, exist_ok=True)
    panel = load_panel(input_path, standardize=standardize)
    result = select_num_factors(panel.values, r_max=r_max)
    r_eff = max(result.r_hat, 1)
    selection = select_mu(panel.values, r_eff)
    payload = {
        "r_hat": result.r_hat,
        "xi": result.xi,
        "r_used_for_penalty": r_eff,
        "mu_star": selection.mu_star,
        "mu_grid": selection.grid,
        "ic_values": selection.ic_values,
        "kappa_per_mu": selection.kappa_per_mu,
        "converged_per_mu": selection.converged_per_mu,
    }
    path = os.path.join(out, "selection.json")
    import json
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2)
        fh.write("\n")
    wall = time.perf_counter() - start
    _write_manifest(
        out, "select_manifest.json", "select",
        {"input": input_path, "standardize": standardize, "r_max": r_max},
        0, wall, [])
    click.echo(f"r_hat = {result.r_hat} (threshold xi = {result.xi:.6g})")
    click.echo(f"mu_star = {selection.mu_star:.6g}")
    click.echo(f"wrote {path}")


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True,
              dir_okay=False), required=True, help="Return panel CSV.")
@click.option("--riskfree", "riskfree_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Risk-free rate CSV (date,rf).")
@click.option("--factors", "factors_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Observed-factor CSV (date,mkt_rf,smb,hml,rf).")
@click.option("--window", type=int, default=60, show_default=True)
@click.option("--sizes", default="30", show_default=True,
              help="Comma-separated subset sizes.")
@click.option("--repeats", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--estimators", default="eqw", show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True,
              help="Risk aversion of the certainty equivalent.")
@click.option("--periods", type=int, default=12, show_default=True,
              help="Annualization periods per year.")
@click.option("--sd-start", type=int, default=12, show_default=True,
              help="First index of the expanding-SD series.")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=_default_out,
              help="Output directory [env SAFCOV_OUT or '.'].")
@_guard_domain_errors
def backtest(input_path, riskfree_path, factors_path, window, sizes,
             repeats, seed, estimators, gamma, periods, sd_start, jobs, out):
    """Rolling-window out-of-sample minimum-variance experiment."""
    estimator_ids = _parse_estimators(estimators)
    subset_sizes = _parse_int_list(sizes, "subset size")
    start = time.perf_counter()
    os.makedirs(out, exist_ok=True)
    panel = load_panel(input_path, standardize=False)

    riskfree = None
    if riskfree_path is not None:
        rf_dates, riskfree = load_riskfree(riskfree_path)
        if rf_dates != panel.dates:
            raise click.UsageError(
                "risk-free dates do not match the panel dates")

    factors = None
    if factors_path is not None:
        table = load_factor_table(factors_path)
        if table.dates != panel.dates:
            raise click.UsageError(
                "factor dates do not match the panel dates")
        factors = table.observed(3 if "ff3f" in estimator_ids else 1)

    cfg = BacktestConfig(
        window_h=window, subset_sizes=tuple(subset_sizes),
        n_repeats=repeats, seed=seed, estimators=tuple(estimator_ids),
        annualization_periods=periods, risk_aversion_gamma=gamma,
        jobs=jobs)
    report = run_backtest(panel.values, cfg, riskfree=riskfree,
                          factors=factors)

    report.cells.to_csv(os.path.join(out, "backtest_cells.csv"),
                        index=False, float_format="%.17g")
    report.summary.to_csv(os.path.join(out, "backtest_summary.csv"),
                          index=False, float_format="%.17g")
    with open(os.path.join(out, "backtest_series.csv"), "w") as fh:
        fh.write("estimator_id,size,repeat,index,ret\n")
        for (est, size, rep), series in report.series.items():
            for k, value in enumerate(series):
                fh.write(f"{est},{size},{rep},{k},{value:.17g}\n")
    with open(os.path.join(out, "backtest_expanding_sd.csv"), "w") as fh:
        fh.write("estimator_id,size,repeat,index,sd\n")
        for (est, size, rep), series in report.series.items():
            if series.size <= sd_start:
                continue
            sd_path = expanding_sd_series(series, sd_start, periods=periods)
            for k, value in enumerate(sd_path):
                fh.write(f"{est},{size},{rep},{sd_start + k},"
                         f"{value:.17g}\n")

    errors = [
        {"estimator_id": row.estimator_id, "size": int(row.size),
         "repeat": int(row.repeat), "error": row.error}
        for row in report.cells.itertuples() if row.error is not None
    ]
    wall = time.perf_counter() - start
    _write_manifest(
        out, "backtest_manifest.json", "backtest",
        {"input": input_path, "riskfree": riskfree_path,
         "factors": factors_path, "window": window,
         "sizes": subset_sizes, "repeats": repeats,
         "estimators": estimator_ids, "gamma": gamma,
         "periods": periods, "jobs": jobs},
        seed, wall, errors)
    click.echo(report.summary.to_string(
        index=False, float_format=lambda v: f"{v:.4f}"))


if __name__ == "__main__":
    main()
