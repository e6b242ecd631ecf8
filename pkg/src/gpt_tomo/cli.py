"""``gpt-tomo`` command line interface.

Exit status 0 on success, 2 on invalid input, 3 on numerical failure.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import io
from .core import GptError
from .pipeline import (EXIT_NUMERICAL, EXIT_VALIDATION, PipelineConfig, StageError, SynthSpec,
                       _stage, emit_plot_data, fit_ranks, load_config, load_counts,
                       monte_carlo_errorbars, parse_ranks, run_analysis, synthesize_counts,
                       _error_code, _seeds)

log = logging.getLogger("gpt_tomo")


def _fail(exc: Exception) -> None:
    if isinstance(exc, StageError):
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    if _error_code(exc) == "validation":
        click.echo(f"error: [input] validation: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"error: [numerical] {exc}", err=True)
    sys.exit(EXIT_NUMERICAL)


def _config(config_path, input_path, **overrides) -> PipelineConfig:
    """Config file (if any) with explicit command line values on top."""
    base = load_config(config_path).to_dict() if config_path else {}
    if input_path is not None:
        base["input"] = str(input_path)
        base["synth"] = None
    for key, val in overrides.items():
        if val is not None:
            base[key] = val
    if isinstance(base.get("ranks"), str):
        base["ranks"] = parse_ranks(base["ranks"])
    return PipelineConfig.from_dict(base)


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose):
    """Self-consistent GPT tomography of prepare-and-measure count data."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


_ranks = click.option("--ranks", default=None, help="Candidate ranks, e.g. 2..10 or 3,4,5.")
_seed = click.option("--seed", type=int, default=None, help="Master random seed.")
_config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                           default=None, help="JSON file mirroring the pipeline configuration.")
_workers = click.option("--workers", type=int, default=None, help="Worker processes.")


@main.command()
@click.option("--m", "m", type=int, required=True, help="Number of preparations.")
@click.option("--n", "n", type=int, required=True, help="Number of columns, unit column included.")
@click.option("--w", "w", type=float, default=0.98, show_default=True)
@click.option("--wp", type=float, default=0.98, show_default=True)
@click.option("--counts", "N", type=float, default=20000, show_default=True,
              help="Expected counts per cell.")
@click.option("--design", type=click.Choice(["full", "fiducial"]), default="full",
              show_default=True)
@click.option("--f", "f", type=int, default=6, show_default=True, help="Fiducial count.")
@click.option("--geometry", type=click.Choice(["sphere", "disk"]), default="sphere",
              show_default=True, help="Qubit (sphere) or rebit (disk) preparations.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Counts CSV to write.")
def synth(m, n, w, wp, N, design, f, geometry, seed, out):
    """Sample a synthetic counts file from a depolarized-qubit ground truth."""
    try:
        with _stage("synth"):
            spec = SynthSpec(m=m, n=n, w=w, wp=wp, counts=N, design=design, f=f,
                             geometry=geometry)
            c = synthesize_counts(spec, _seeds(seed)[0])
            io.write_counts(out, c.n0, c.n1, c.mask)
    except GptError as exc:
        _fail(exc)
    click.echo(f"wrote {out}")


@main.command()
@click.argument("counts", type=click.Path(exists=True, dir_okay=False), required=False)
@_config_opt
@_ranks
@_seed
@_workers
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for rank_report.json and rank_table.csv.")
def fit(counts, config_path, ranks, seed, workers, out):
    """Fit every candidate rank and report the Akaike selection."""
    try:
        cfg = _config(config_path, counts, ranks=ranks, seed=seed, workers=workers, out=out)
        with _stage("load"):
            F = load_counts(cfg).frequencies()
        with _stage("select_rank"):
            rr = fit_ranks(F, cfg)
        if cfg.out:
            io.write_json(Path(cfg.out) / "rank_report.json", rr.to_dict())
    except (GptError, ValueError, OSError) as exc:
        _fail(exc)
    for c in rr.candidates:
        click.echo(f"k={c.k:2d} chi2={c.chi2:14.4f} dof={c.dof:7d} weight={c.weight:.6g}"
                   + ("  (rejected)" if c.rejected else ""))
    click.echo(f"selected rank: {rr.selected_rank}")


@main.command()
@click.argument("counts", type=click.Path(exists=True, dir_okay=False), required=False)
@_config_opt
@_ranks
@_seed
@_workers
@click.option("--resamples", type=int, default=None,
              help="Monte Carlo resamples (default 100; 0 disables).")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory for report.json and stage artifacts.")
@click.option("--plots/--no-plots", default=True, help="Also write the CSV plot tables.")
def analyze(counts, config_path, ranks, seed, workers, resamples, out, plots):
    """Run the full pipeline and write the JSON report."""
    try:
        cfg = _config(config_path, counts, ranks=ranks, seed=seed, workers=workers,
                      resamples=resamples, out=out)
        report = run_analysis(cfg)
        if plots and cfg.out:
            emit_plot_data(report, Path(cfg.out) / "plots")
    except (GptError, ValueError, OSError) as exc:
        _fail(exc)
    b = report.bounds
    click.echo(f"selected rank: {report.selected_rank}")
    click.echo(f"w1={b.w1:.6f} w1'={b.w1p:.6f} w2={b.w2:.6f} w2'={b.w2p:.6f}")
    click.echo(f"POM/CHSH bounds: {b.lb_cmin:.6f} <= C <= {b.ub_cmax:.6f}")
    click.echo(f"volume ratio: {b.volume_ratio:.6f}"
               + (f" +- {b.std['volume_ratio']:.2g}" if "volume_ratio" in b.std else ""))
    click.echo(f"shrink factor: {report.shrink.epsilon_star:.6f}")


@main.command()
@click.argument("counts", type=click.Path(exists=True, dir_okay=False), required=False)
@_config_opt
@click.option("--rank", type=int, default=None,
              help="Rank to refit; selected from --ranks when omitted.")
@_ranks
@_seed
@_workers
@click.option("--resamples", type=int, default=None, help="Monte Carlo resamples (default 100).")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def mc(counts, config_path, rank, ranks, seed, workers, resamples, out):
    """Monte Carlo error bars from Poisson resampling of the counts."""
    try:
        cfg = _config(config_path, counts, ranks=ranks, seed=seed, workers=workers,
                      resamples=resamples, out=out)
        with _stage("load"):
            cnt = load_counts(cfg)
        if rank is None:
            with _stage("select_rank"):
                rank = fit_ranks(cnt.frequencies(), cfg).selected_rank
        with _stage("montecarlo"):
            res = monte_carlo_errorbars(cnt, rank, cfg)
        if cfg.out:
            io.write_json(Path(cfg.out) / "montecarlo.json", {"rank": rank, **res.to_dict()})
    except (GptError, ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"rank {rank}: {res.resamples - res.dropped} of {res.resamples} resamples kept")
    for q, s in res.std.items():
        click.echo(f"{q:>13s} = {res.mean[q]:.6f} +- {s:.3g}")


@main.command()
@click.argument("report_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Directory for the CSV plot tables.")
def report(report_json, out):
    """Write CSV plot tables from an existing report.json."""
    try:
        with _stage("report"):
            paths = emit_plot_data(io.read_json(report_json), out)
    except (GptError, ValueError, OSError) as exc:
        _fail(exc)
    for p in paths:
        click.echo(str(p))


if __name__ == "__main__":
    main()
