"""7-day-ahead forecasting, RMSE/MAPE backtest scoring and output emission.

Forecasts extrapolate from the last observed log incident count, so competing
methods differ only through their growth-rate estimate. Errors default to the
log scale: e_c = ln(pred) - ln(truth), RMSE = sqrt(mean e^2) and MAPE =
mean |e| / |ln truth|. The raw scale (errors on counts) is available behind
`scale="raw"` since the reference tables do not state which was used.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baseline import OlsFit
from .charts import line_chart
from .errors import NoForecastError
from .grf import GrowthEstimate
from .panel import CountyId, IncidentPanel

DEFAULT_HORIZON = 7

METRIC_COLUMNS = ("day", "date", "method", "rmse", "mape", "n_counties")


@dataclass(frozen=True)
class Forecast:
    county: CountyId
    as_of_day: int
    horizon: int
    ln_pred: float
    method: str


@dataclass(frozen=True)
class MetricRecord:
    day: int
    method: str
    rmse: float
    mape: float
    n_counties: int


@dataclass(frozen=True)
class MetricSeries:
    records: tuple[MetricRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def methods(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.method, None)
        return list(seen)

    def for_method(self, method: str) -> list[MetricRecord]:
        return [r for r in self.records if r.method == method]


def method_label(estimate: GrowthEstimate | OlsFit) -> str:
    if isinstance(estimate, OlsFit):
        return f"OLS.wsize={estimate.window}"
    return "GRF"


def forecast(
    estimate: GrowthEstimate | OlsFit,
    panel: IncidentPanel,
    horizon: int = DEFAULT_HORIZON,
) -> Forecast:
    """Extrapolate horizon days ahead from the estimate's anchor cell."""
    county = estimate.county
    day = estimate.day
    if county is None or day is None:
        raise NoForecastError("estimate carries no (county, day) anchor")
    j = panel.county_index(county.fips)
    if day < 0 or day >= panel.num_days or not panel.valid[day, j]:
        raise NoForecastError(f"anchor ({day}, {county.fips}) is not a valid panel cell")
    ln_pred = float(panel.log_incident[day, j] + horizon * estimate.r_hat)
    return Forecast(county, day, horizon, ln_pred, method_label(estimate))


def score_day(
    forecasts: list[Forecast],
    panel: IncidentPanel,
    scale: str = "log",
) -> list[MetricRecord]:
    """One RMSE/MAPE record per method from forecasts sharing an as-of day.

    Counties lacking a valid truth cell at day+horizon are dropped per method;
    on the log scale, counties whose |ln truth| is 0 are additionally dropped
    from the MAPE mean. Returns [] when nothing is scorable.
    """
    if scale not in ("log", "raw"):
        raise ValueError(f"scale must be 'log' or 'raw', got {scale!r}")
    by_method: dict[str, list[Forecast]] = {}
    for f in forecasts:
        by_method.setdefault(f.method, []).append(f)
    records = []
    for method, group in by_method.items():
        errors = []
        ape = []
        day = None
        for f in group:
            day = f.as_of_day
            target = f.as_of_day + f.horizon
            if target >= panel.num_days:
                continue
            j = panel.county_index(f.county.fips)
            if not panel.valid[target, j]:
                continue
            if scale == "log":
                truth = float(panel.log_incident[target, j])
                e = f.ln_pred - truth
                errors.append(e)
                if abs(truth) > 0.0:
                    ape.append(abs(e) / abs(truth))
            else:
                truth = float(panel.incident[target, j])
                e = float(np.exp(f.ln_pred)) - truth
                errors.append(e)
                if truth > 0.0:
                    ape.append(abs(e) / truth)
        if not errors or not ape:
            continue
        err = np.asarray(errors)
        records.append(
            MetricRecord(
                day=int(day),
                method=method,
                rmse=float(np.sqrt(np.mean(err * err))),
                mape=float(np.mean(ape)),
                n_counties=len(errors),
            )
        )
    return records


def moving_average(series: MetricSeries, k: int) -> MetricSeries:
    """Trailing k-entry mean of each metric per method; short prefixes shrink."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for method in series.methods():
        recs = sorted(series.for_method(method), key=lambda r: r.day)
        for i, r in enumerate(recs):
            window = recs[max(0, i - k + 1) : i + 1]
            out.append(
                MetricRecord(
                    day=r.day,
                    method=method,
                    rmse=float(np.mean([x.rmse for x in window])),
                    mape=float(np.mean([x.mape for x in window])),
                    n_counties=r.n_counties,
                )
            )
    out.sort(key=lambda r: (r.day, r.method))
    return MetricSeries(tuple(out))


def median_summary(series: MetricSeries) -> dict[str, tuple[float, float]]:
    """Per-method (median rmse, median mape) over evaluation days."""
    if len(series) == 0:
        raise ValueError("empty metric series")
    out = {}
    for method in series.methods():
        recs = series.for_method(method)
        out[method] = (
            float(np.median([r.rmse for r in recs])),
            float(np.median([r.mape for r in recs])),
        )
    return out


def write_metrics_csv(series: MetricSeries, path: Path, origin: dt.date) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in sorted(series.records, key=lambda r: (r.day, r.method)):
            date = origin + dt.timedelta(days=r.day)
            writer.writerow(
                [r.day, date.isoformat(), r.method, repr(r.rmse), repr(r.mape), r.n_counties]
            )


def read_metrics_csv(path: Path) -> MetricSeries:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                MetricRecord(
                    day=int(row["day"]),
                    method=row["method"],
                    rmse=float(row["rmse"]),
                    mape=float(row["mape"]),
                    n_counties=int(row["n_counties"]),
                )
            )
    return MetricSeries(tuple(records))


def write_summary_csv(summary: dict[str, tuple[float, float]], path: Path) -> None:
    order = sorted(summary, key=_method_sort_key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "median_rmse", "median_mape"])
        for method in order:
            rmse, mape = summary[method]
            writer.writerow([method, repr(rmse), repr(mape)])


def _method_sort_key(method: str):
    # fixed windows widest-first, adaptive method last, mirroring the table layout
    if method.startswith("OLS.wsize="):
        return (0, -int(method.split("=")[1]))
    return (1, 0)


def emit_outputs(
    series: MetricSeries,
    summaries: dict[int, dict[str, tuple[float, float]]],
    out_dir,
    origin: dt.date,
    ma_windows: tuple[int, ...] = (3, 4, 5, 6, 7),
) -> list[Path]:
    """Write the per-day series, each moving average, summaries and plots.

    Returns the written paths. Empty series produce headers-only data files
    and no plots.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "metrics.csv"
    write_metrics_csv(series, path, origin)
    written.append(path)

    smoothed = {k: moving_average(series, k) for k in ma_windows}
    for k, ma in smoothed.items():
        path = out / f"metrics_ma{k}.csv"
        write_metrics_csv(ma, path, origin)
        written.append(path)

    for k, summary in summaries.items():
        path = out / (f"summary_ma{k}.csv" if k > 1 else "summary.csv")
        write_summary_csv(summary, path)
        written.append(path)

    if len(series) > 0:
        for metric in ("rmse", "mape"):
            for k, ma in [(1, series)] + list(smoothed.items()):
                data = {}
                for method in sorted(ma.methods(), key=_method_sort_key):
                    pts = [
                        (float(r.day), getattr(r, metric))
                        for r in sorted(ma.for_method(method), key=lambda r: r.day)
                    ]
                    data[method] = pts
                suffix = f"_ma{k}" if k > 1 else ""
                title = f"{metric.upper()}" + (f" ({k}-day moving average)" if k > 1 else "")
                path = out / f"{metric}{suffix}.svg"
                path.write_text(
                    line_chart(data, title, "days since first recorded case", metric.upper())
                )
                written.append(path)
    return written
