"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 partial results (too many replicate failures).
"""

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import ConfigError, RpceError
from .harness import (
    ExperimentConfig,
    run_experiment,
    write_csv,
    write_curves_tsv,
    write_summary,
)
from .hermite import FULL, NO_INTERACTION, enumerate_basis
from .numerics import RngStream
from .problems import PROBLEM_SUMMARIES
from .rotate import (
    AdmOptions,
    evaluate,
    fit_adm,
    fit_l1,
    fit_sadmdr,
    load_model,
    moments,
    save_model,
)

_FIT_METHODS = ("l1", "reweighted-l1", "adm", "sadm", "sadmdr")


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except RpceError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)
    return wrapper


def _load_table(path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError:
        data = np.loadtxt(path, comments="#", ndmin=2)
    return data


@click.group()
def main():
    """Sparse rotated polynomial-chaos surrogates."""


@main.command()
def version():
    """Print the library version."""
    click.echo(__version__)


@main.command()
@click.option("--describe", "name", default=None, help="describe one problem")
def problems(name):
    """List or describe the built-in benchmark problems."""
    if name is None:
        for key, text in PROBLEM_SUMMARIES.items():
            click.echo(f"{key}: {text}")
    elif name in PROBLEM_SUMMARIES:
        click.echo(f"{name}: {PROBLEM_SUMMARIES[name]}")
    else:
        click.echo(f"config error: unknown problem {name!r}", err=True)
        sys.exit(2)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="CSV of training rows: d input columns then the output column")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="where to write the model JSON")
@click.option("--method", default="l1", type=click.Choice(_FIT_METHODS))
@click.option("--order", default=3, show_default=True, help="basis total degree")
@click.option("--mode", default=FULL, type=click.Choice([FULL, NO_INTERACTION]),
              show_default=True)
@click.option("--d-tilde", default=None, type=int, help="reduced dimension (sadmdr)")
@click.option("--p-reduced", default=None, type=int, help="reduced basis order (sadmdr)")
@click.option("--theta", default=None, type=float, help="rotation stopping threshold")
@click.option("--max-rotations", default=9, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@_guarded
def fit(input_path, out_path, method, order, mode, d_tilde, p_reduced, theta,
        max_rotations, seed):
    """Fit one surrogate model from a sample file."""
    data = _load_table(input_path)
    if data.shape[1] < 2:
        raise ConfigError("need at least one input column and one output column")
    samples, outputs = data[:, :-1], data[:, -1]
    d = samples.shape[1]
    opts = AdmOptions(rng=RngStream(seed, 0), theta=theta,
                      max_rotations=max_rotations,
                      reweighted=(method == "reweighted-l1"))
    if method in ("l1", "reweighted-l1"):
        model = fit_l1(samples, outputs, enumerate_basis(d, order, mode), opts)
    elif method in ("adm", "sadm"):
        model = fit_adm(samples, outputs, enumerate_basis(d, order, mode), opts,
                        init="identity" if method == "adm" else "sir")
    else:
        if d_tilde is None or p_reduced is None:
            raise ConfigError("sadmdr needs --d-tilde and --p-reduced")
        model = fit_sadmdr(samples, outputs, d_tilde, p_reduced, opts)
    save_model(model, out_path)
    mean, var = moments(model)
    click.echo(f"wrote {out_path}: N={model.basis.size} mean={mean:.6g} "
               f"std={np.sqrt(var):.6g} converged={model.converged}")


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--points", "points_path", required=True, type=click.Path(exists=True),
              help="CSV of input rows")
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def eval_cmd(model_path, points_path, out_path):
    """Apply a saved model to points."""
    model = load_model(model_path)
    pts = _load_table(points_path)
    vals = evaluate(model, pts)
    np.savetxt(out_path, vals, fmt="%r")
    click.echo(f"wrote {out_path}: {vals.shape[0]} values")


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--output-dir", default=None, type=click.Path(),
              help="override the config's output directory")
@_guarded
def experiment(config_path, output_dir):
    """Run a full experiment described by a JSON config."""
    with open(config_path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    config = ExperimentConfig.from_dict(doc)
    out = Path(output_dir or config.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(config)
    write_csv(report, out / "report.csv")
    write_summary(report, out / "summary.json")
    write_curves_tsv(report, out / "curves.tsv")
    for warning in report.timing_warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"wrote {out / 'report.csv'}, {out / 'summary.json'}, "
               f"{out / 'curves.tsv'}")
    if report.quota_exceeded:
        click.echo("too many replicate failures; results are partial", err=True)
        sys.exit(4)


if __name__ == "__main__":
    main()
