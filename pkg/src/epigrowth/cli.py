"""Command-line entry point: synth, backtest and estimate subcommands."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import sys
from pathlib import Path

import click

from .errors import EpigrowthError
from .features import write_frame
from .grf import ForestParams
from .run import RunConfig, run_backtest, run_estimate
from .synth import generate, scenario_from_file, scenario_to_file, write_true_rates


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _build_config(cfg_path: str | None, **overrides) -> RunConfig:
    base: dict = {}
    if cfg_path:
        base = json.loads(Path(cfg_path).read_text())
    forest_doc = dict(base.pop("forest", {}))
    for key in ("trees", "min_leaf", "subsample", "honesty", "mtry", "max_depth", "max_bins"):
        v = overrides.pop(key, None)
        if v is not None:
            name = {
                "trees": "num_trees",
                "subsample": "subsample_fraction",
                "honesty": "honesty_fraction",
            }.get(key, key)
            forest_doc[name] = v
    merged = dict(base)
    for key, v in overrides.items():
        if v is not None:
            merged[key] = v
    if "windows" in merged and isinstance(merged["windows"], str):
        merged["windows"] = _parse_ints(merged["windows"])
    if "ma_windows" in merged and isinstance(merged["ma_windows"], str):
        merged["ma_windows"] = _parse_ints(merged["ma_windows"])
    if "windows" in merged:
        merged["windows"] = tuple(merged["windows"])
    if "ma_windows" in merged:
        merged["ma_windows"] = tuple(merged["ma_windows"])
    forest_doc.setdefault("seed", merged.get("seed", 0))
    merged["forest"] = ForestParams(**forest_doc)
    return RunConfig(**merged)


forest_options = [
    click.option("--trees", type=int, default=None, help="number of trees"),
    click.option("--min-leaf", "min_leaf", type=int, default=None, help="min rows per treatment arm per leaf"),
    click.option("--subsample", type=float, default=None, help="per-tree subsample fraction"),
    click.option("--honesty", type=float, default=None, help="honest-half fraction"),
    click.option("--mtry", type=int, default=None, help="candidate features per split"),
    click.option("--max-depth", "max_depth", type=int, default=None, help="tree depth cap"),
    click.option("--max-bins", "max_bins", type=int, default=None, help="split candidate bins per feature"),
]

run_options = [
    click.option("--config", "cfg_path", type=click.Path(exists=True), default=None, help="JSON config; flags override"),
    click.option("--cases", type=click.Path(exists=True), default=None, help="cumulative cases CSV"),
    click.option("--gazetteer", type=click.Path(exists=True), default=None),
    click.option("--svi", type=click.Path(exists=True), default=None),
    click.option("--cusp", type=click.Path(exists=True), default=None),
    click.option("--tracking", type=click.Path(exists=True), default=None),
    click.option("--manifest", type=click.Path(exists=True), default=None, help="column-name manifest JSON"),
    click.option("--features", type=click.Path(exists=True), default=None, help="prebuilt feature frame CSV"),
    click.option("--horizon", type=int, default=None),
    click.option("--windows", type=str, default=None, help="comma-separated OLS window sizes"),
    click.option("--lag", type=int, default=None, help="incident trailing-window length"),
    click.option("--ma", "ma_windows", type=str, default=None, help="comma-separated moving-average windows"),
    click.option("--metric-scale", "metric_scale", type=click.Choice(["log", "raw"]), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--workers", type=int, default=None, help="parallel workers (never affects results)"),
    click.option("--out", type=str, default=None, help="output directory"),
]


def _apply(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return wrap


@click.group()
def main():
    """Estimate county-level epidemic growth rates with adaptive fitting windows."""


@main.command()
@click.option("--scenario", type=click.Path(exists=True), required=True, help="scenario JSON")
@click.option("--out", type=str, required=True, help="output directory")
@click.option("--seed", type=int, default=None, help="override the scenario seed")
def synth(scenario, out, seed):
    """Generate a synthetic dataset in the ingestion formats."""
    scn = scenario_from_file(scenario)
    if seed is not None:
        scn = dataclasses.replace(scn, seed=seed)
    series, frame, rates = generate(scn)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    import csv

    with open(out_dir / "cases.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "county", "state", "fips", "cases", "deaths"])
        for s in series:
            for i in range(len(s)):
                date = s.origin_date + dt.timedelta(days=i)
                writer.writerow(
                    [
                        date.isoformat(),
                        f"County {s.county.fips}",
                        s.county.state,
                        s.county.fips,
                        int(s.cases[i]),
                        int(s.deaths[i]),
                    ]
                )
    write_frame(frame, out_dir / "features.csv")
    write_true_rates(rates, [s.county for s in series], out_dir / "true_rates.csv")
    scenario_to_file(scn, out_dir / "scenario.json")
    click.echo(f"wrote cases.csv, features.csv, true_rates.csv to {out_dir}")


@main.command()
@_apply(run_options)
@_apply(forest_options)
@click.option("--stride", type=int, default=None, help="evaluate every s-th day")
@click.option("--eval-start", "eval_start", type=int, default=None)
@click.option("--eval-end", "eval_end", type=int, default=None)
def backtest(cfg_path, **kw):
    """Benchmark the adaptive estimator against fixed OLS windows."""
    try:
        config = _build_config(cfg_path, **kw)
        result = run_backtest(config)
    except EpigrowthError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    if len(result.series) == 0:
        click.echo("error: no scorable days in the evaluation range", err=True)
        for day, reason in result.skipped_days:
            click.echo(f"  day {day}: {reason}", err=True)
        sys.exit(1)
    for k in sorted(result.summaries):
        label = "per-day" if k == 1 else f"{k}-day MA"
        click.echo(f"median MAPE ({label}):")
        for method, (rmse, mape) in sorted(
            result.summaries[k].items(), key=lambda kv: kv[1][1]
        ):
            click.echo(f"  {method:<14} rmse={rmse:.4f} mape={mape:.4f}")
    click.echo(f"outputs in {config.out}")


@main.command()
@_apply(run_options)
@_apply(forest_options)
@click.option("--as-of", "as_of", type=str, required=True, help="estimation date YYYY-MM-DD")
def estimate(cfg_path, as_of, **kw):
    """Write the per-county growth-rate table for one day, hottest first."""
    try:
        config = _build_config(cfg_path, **kw)
        date = dt.date.fromisoformat(as_of)
        rows = run_estimate(config, date)
    except (EpigrowthError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    n_est = sum(1 for r in rows if r[1] is not None)
    click.echo(f"estimated {n_est}/{len(rows)} counties; table in {config.out}/estimates.csv")


if __name__ == "__main__":
    main()
