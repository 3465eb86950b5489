"""Pipeline orchestration: data loading, per-day backtests, as-of estimates.

The adaptive estimator is refit from scratch at every evaluation day so no
future data leaks into a forecast; per-day forest seeds derive from
(run seed, day), which makes reruns byte-identical for any worker count.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ingest
from .baseline import ols_window_fit
from .blocks import BlockRecord, block_transform, build_training_set
from .errors import (
    EpigrowthError,
    InsufficientDataError,
    InsufficientHistoryError,
    NoForecastError,
)
from .features import FeatureFrame, empty_frame, read_frame
from .forecast_eval import (
    Forecast,
    MetricRecord,
    MetricSeries,
    emit_outputs,
    forecast,
    median_summary,
    moving_average,
    score_day,
)
from .grf import Forest, ForestParams, GrowthEstimate, fit_forest, predict_batch, save_forest
from .panel import DEFAULT_LAG, IncidentPanel, build_incident_panel, repair_monotonicity

GRF_METHOD = "GRF"


@dataclass(frozen=True)
class RunConfig:
    cases: str | None = None
    gazetteer: str | None = None
    svi: str | None = None
    cusp: str | None = None
    tracking: str | None = None
    manifest: str | None = None
    features: str | None = None  # prebuilt feature frame (synthetic route)
    horizon: int = 7
    windows: tuple[int, ...] = (2, 4, 8, 16)
    lag: int = DEFAULT_LAG
    forest: ForestParams = field(default_factory=ForestParams)
    metric_scale: str = "log"
    ma_windows: tuple[int, ...] = (3, 4, 5, 6, 7)
    eval_start: int | None = None
    eval_end: int | None = None
    stride: int = 1
    out: str = "out"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.windows or len(set(self.windows)) != len(self.windows) or min(self.windows) < 1:
            raise ValueError("windows must be distinct positive integers")
        if self.metric_scale not in ("log", "raw"):
            raise ValueError("metric_scale must be 'log' or 'raw'")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["forest"] = dataclasses.asdict(self.forest)
        return doc


def echo_config(config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_resolved.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
    )


def load_inputs(config: RunConfig) -> tuple[IncidentPanel, FeatureFrame, dict]:
    """Cases plus features -> aligned panel and frame, with load diagnostics."""
    if config.cases is None:
        raise ValueError("a cases file is required")
    loaded = ingest.load_cases(config.cases)
    if not loaded.series:
        raise EpigrowthError(f"no usable rows in {config.cases}")
    repaired = []
    repairs = 0
    for s in loaded.series:
        r, n = repair_monotonicity(s)
        repaired.append(r)
        repairs += n
    panel = build_incident_panel(repaired, lag=config.lag)

    if config.features is not None:
        frame = read_frame(config.features)
        if frame.counties != panel.counties or frame.num_days != panel.num_days:
            raise EpigrowthError("feature frame does not match the case panel domain")
    elif any((config.gazetteer, config.svi, config.cusp, config.tracking)):
        manifest = ingest.load_manifest(config.manifest) if config.manifest else {}
        sentinel = float(manifest.get("svi_sentinel", ingest.SVI_SENTINEL))
        gaz = ingest.load_gazetteer(config.gazetteer) if config.gazetteer else None
        svi = (
            ingest.load_svi(config.svi, manifest.get("svi"), sentinel)
            if config.svi
            else None
        )
        cusp = ingest.load_cusp(config.cusp, manifest.get("cusp")) if config.cusp else None
        tracking = (
            ingest.load_tracking(config.tracking, manifest.get("tracking"))
            if config.tracking
            else None
        )
        frame = ingest.assemble_features(panel, gaz, svi, cusp, tracking)
    else:
        frame = empty_frame(panel.num_days, panel.counties)

    diagnostics = {
        "dropped_rows_no_fips": loaded.dropped_rows,
        "monotonicity_repairs": repairs,
        "num_counties": len(panel.counties),
        "num_days": panel.num_days,
        "num_features": frame.m,
    }
    return panel, frame, diagnostics


def _blocks_by_day(blocks: list[BlockRecord]) -> dict[int, list[BlockRecord]]:
    by_day: dict[int, list[BlockRecord]] = {}
    for b in blocks:
        by_day.setdefault(b.day, []).append(b)
    return by_day


def _day_seed(seed: int, t_star: int) -> int:
    ss = np.random.SeedSequence([int(np.uint64(seed & (2**64 - 1))), t_star])
    return int(ss.generate_state(1, np.uint64)[0])


def eval_days(config: RunConfig, panel: IncidentPanel, blocks: list[BlockRecord]) -> list[int]:
    if not blocks:
        return []
    first = min(b.day for b in blocks)
    start = config.eval_start if config.eval_start is not None else first
    end = (
        config.eval_end
        if config.eval_end is not None
        else panel.num_days - 1 - config.horizon
    )
    return [t for t in range(max(start, 1), end + 1, config.stride)]


def grf_estimates_for_day(
    blocks_at_day: list[BlockRecord],
    forest: Forest,
    ts,
) -> list[GrowthEstimate]:
    """Predict the rate for every county with a block at the target day."""
    if not blocks_at_day:
        return []
    queries = np.array([b.features.values for b in blocks_at_day])
    r_hat, n_eff, status = predict_batch(forest, ts, queries)
    out = []
    for i, b in enumerate(blocks_at_day):
        if status[i] != 0:
            continue
        out.append(GrowthEstimate(float(r_hat[i]), float(n_eff[i]), b.county, b.day))
    return out


@dataclass
class BacktestResult:
    series: MetricSeries
    smoothed: dict[int, MetricSeries]
    summaries: dict[int, dict[str, tuple[float, float]]]
    skipped_days: list[tuple[int, str]]
    diagnostics: dict


def run_backtest(config: RunConfig, emit: bool = True) -> BacktestResult:
    """Fit every method at each evaluation day, forecast, score and emit."""
    panel, frame, diagnostics = load_inputs(config)
    blocks, skipped_pairs = block_transform(panel, frame)
    diagnostics["skipped_block_pairs"] = skipped_pairs
    by_day = _blocks_by_day(blocks)

    records: list[MetricRecord] = []
    skipped_days: list[tuple[int, str]] = []
    method_skips: dict[str, int] = {}

    for t_star in eval_days(config, panel, blocks):
        try:
            ts = build_training_set(blocks, t_star)
        except InsufficientHistoryError as e:
            skipped_days.append((t_star, str(e)))
            continue
        params = dataclasses.replace(config.forest, seed=_day_seed(config.seed, t_star))
        forest = fit_forest(ts, params, n_jobs=config.workers)

        forecasts: list[Forecast] = []
        blocks_today = by_day.get(t_star, [])
        estimates = grf_estimates_for_day(blocks_today, forest, ts)
        for est in estimates:
            forecasts.append(forecast(est, panel, config.horizon))
        grf_skipped = len(panel.counties) - len(estimates)
        if grf_skipped:
            method_skips[GRF_METHOD] = method_skips.get(GRF_METHOD, 0) + grf_skipped
        for county in panel.counties:
            for w in config.windows:
                method = f"OLS.wsize={w}"
                try:
                    fit = ols_window_fit(panel, county, t_star, w)
                    forecasts.append(forecast(fit, panel, config.horizon))
                except (InsufficientDataError, NoForecastError):
                    method_skips[method] = method_skips.get(method, 0) + 1

        day_records = score_day(forecasts, panel, scale=config.metric_scale)
        if not day_records:
            skipped_days.append((t_star, "no scorable counties"))
            continue
        records.extend(day_records)
    diagnostics["method_skips"] = dict(sorted(method_skips.items()))

    series = MetricSeries(tuple(sorted(records, key=lambda r: (r.day, r.method))))
    smoothed = {k: moving_average(series, k) for k in config.ma_windows}
    summaries: dict[int, dict[str, tuple[float, float]]] = {}
    if len(series) > 0:
        summaries[1] = median_summary(series)
        for k, ma in smoothed.items():
            summaries[k] = median_summary(ma)

    if emit:
        out_dir = Path(config.out)
        emit_outputs(series, summaries, out_dir, panel.origin, config.ma_windows)
        echo_config(config, out_dir)
        (out_dir / "diagnostics.json").write_text(
            json.dumps(
                {"diagnostics": diagnostics, "skipped_days": skipped_days},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
    return BacktestResult(series, smoothed, summaries, skipped_days, diagnostics)


def run_estimate(config: RunConfig, as_of: dt.date, emit: bool = True):
    """Per-county rate table at one day, highest estimated growth first."""
    panel, frame, diagnostics = load_inputs(config)
    t_star = panel.day_of(as_of)
    if t_star < 1 or t_star >= panel.num_days:
        raise ValueError(f"--as-of {as_of} falls outside the loaded data range")
    blocks, _ = block_transform(panel, frame)
    ts = build_training_set(blocks, t_star)
    params = dataclasses.replace(config.forest, seed=_day_seed(config.seed, t_star))
    forest = fit_forest(ts, params, n_jobs=config.workers)

    by_day = _blocks_by_day(blocks)
    estimates = {
        e.county.fips: e for e in grf_estimates_for_day(by_day.get(t_star, []), forest, ts)
    }
    rows = []
    for county in panel.counties:
        est = estimates.get(county.fips)
        if est is None:
            rows.append((county, None, None, None))
            continue
        j = panel.county_index(county.fips)
        pred = float(np.exp(panel.log_incident[t_star, j] + config.horizon * est.r_hat))
        rows.append((county, est.r_hat, pred, est.num_effective_rows))
    with_est = sorted(
        (r for r in rows if r[1] is not None), key=lambda r: (-r[1], r[0].fips)
    )
    without = sorted((r for r in rows if r[1] is None), key=lambda r: r[0].fips)
    ordered = with_est + without

    if emit:
        out_dir = Path(config.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        import csv

        with open(out_dir / "estimates.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fips", "state", "r_hat", "forecast_incident", "n_effective"])
            for county, r_hat, pred, n_eff in ordered:
                if r_hat is None:
                    writer.writerow([county.fips, county.state, "NA", "NA", "NA"])
                else:
                    writer.writerow(
                        [county.fips, county.state, repr(r_hat), repr(pred), repr(n_eff)]
                    )
        save_forest(forest, out_dir / "forest.json")
        echo_config(config, out_dir)
    return ordered
