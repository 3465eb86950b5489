"""Synthetic county panels with feature-driven growth-regime switches.

Latent incident counts follow piecewise exponential growth; the observed count
is the latent value times lognormal noise, rounded to an integer. Cumulative
series are built by inverting the trailing-window incident definition, so the
full real-data path (ingest formats -> panel -> blocks -> forest) runs on
synthetic data without special cases. Each regime switch flips a visible 0/1
indicator feature for the affected counties, giving the forest signal to
adapt with; extra pure-noise features probe split selectivity.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .features import FeatureFrame
from .panel import DEFAULT_LAG, CountyId, CumulativeSeries

ORIGIN_DATE = dt.date(2020, 3, 1)
MAX_COUNT = float(2**62)


@dataclass(frozen=True)
class RegimeSwitch:
    """From `day` on, affected counties grow at `rate`; `indicator` names the
    0/1 feature that flips with the switch. `affected` is a tuple of county
    indices, or None for all counties."""

    day: int
    rate: float
    affected: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Scenario:
    num_counties: int
    num_days: int
    base_rate: float
    regimes: tuple[RegimeSwitch, ...] = ()
    sigma: float = 0.0
    initial_level: float = 1000.0
    initial_spread: float = 0.0  # log10 half-range of per-county initial levels
    num_distractors: int = 3
    lag: int = DEFAULT_LAG
    seed: int = 0

    def __post_init__(self):
        if self.num_counties < 1 or self.num_days < 2:
            raise ScenarioError("need at least 1 county and 2 days")
        if self.sigma < 0:
            raise ScenarioError("sigma must be >= 0")
        rates = [self.base_rate] + [r.rate for r in self.regimes]
        if any(abs(r) > 0.5 for r in rates):
            raise ScenarioError("rates must lie in [-0.5, 0.5]")
        days = [r.day for r in self.regimes]
        if any(d <= 0 or d >= self.num_days for d in days):
            raise ScenarioError("switch days must fall inside (0, num_days)")
        if sorted(days) != days or len(set(days)) != len(days):
            raise ScenarioError("switch days must be strictly increasing")
        if self.initial_level <= 0:
            raise ScenarioError("initial_level must be positive")


def scenario_from_file(path) -> Scenario:
    doc = json.loads(Path(path).read_text())
    regimes = tuple(
        RegimeSwitch(
            day=int(r["day"]),
            rate=float(r["rate"]),
            affected=tuple(r["affected"]) if r.get("affected") is not None else None,
        )
        for r in doc.get("regimes", ())
    )
    return Scenario(
        num_counties=int(doc["num_counties"]),
        num_days=int(doc["num_days"]),
        base_rate=float(doc["base_rate"]),
        regimes=regimes,
        sigma=float(doc.get("sigma", 0.0)),
        initial_level=float(doc.get("initial_level", 1000.0)),
        initial_spread=float(doc.get("initial_spread", 0.0)),
        num_distractors=int(doc.get("num_distractors", 3)),
        lag=int(doc.get("lag", DEFAULT_LAG)),
        seed=int(doc.get("seed", 0)),
    )


def scenario_to_file(scenario: Scenario, path) -> None:
    doc = {
        "num_counties": scenario.num_counties,
        "num_days": scenario.num_days,
        "base_rate": scenario.base_rate,
        "regimes": [
            {"day": r.day, "rate": r.rate, "affected": list(r.affected) if r.affected else None}
            for r in scenario.regimes
        ],
        "sigma": scenario.sigma,
        "initial_level": scenario.initial_level,
        "initial_spread": scenario.initial_spread,
        "num_distractors": scenario.num_distractors,
        "lag": scenario.lag,
        "seed": scenario.seed,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _county_id(idx: int) -> CountyId:
    return CountyId(f"{idx + 1:05d}", "SY")


def generate(scenario: Scenario):
    """Build (series list, FeatureFrame, true rates (T, C)) for the scenario.

    The cumulative inversion clips observed incidents up by the minimal amount
    needed to keep cumulative counts non-decreasing, so the panel transform
    recovers the (clipped) observations exactly.
    """
    T, C = scenario.num_days, scenario.num_counties
    rates = np.full((T, C), scenario.base_rate)
    for reg in scenario.regimes:
        cols = list(reg.affected) if reg.affected is not None else list(range(C))
        for j in cols:
            rates[reg.day :, j] = reg.rate

    series = []
    observed = np.zeros((T, C), dtype=np.int64)
    for j in range(C):
        rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, j]))
        if scenario.initial_spread > 0:
            level = scenario.initial_level * 10 ** rng.uniform(
                -scenario.initial_spread, scenario.initial_spread
            )
        else:
            level = scenario.initial_level
        latent = np.empty(T)
        latent[0] = level
        for t in range(1, T):
            latent[t] = latent[t - 1] * math.exp(rates[t, j])
        if latent.max() > MAX_COUNT:
            raise ScenarioError(
                "latent counts overflow; use smaller rates, horizon or initial levels"
            )
        noise = np.exp(scenario.sigma * rng.standard_normal(T))
        obs = np.round(latent * noise)
        np.maximum(obs, 0.0, out=obs)

        lag = scenario.lag
        cum = np.zeros(T, dtype=np.int64)
        inc = np.zeros(T, dtype=np.int64)
        for t in range(T):
            if t < lag:
                # floor of 1 on day 0 keeps the county's lag clock anchored there
                prev = cum[t - 1] if t > 0 else 1
                cum[t] = max(int(obs[t]), prev)
                inc[t] = cum[t]
            else:
                target = int(obs[t]) + cum[t - lag]
                cum[t] = max(target, cum[t - 1])
                inc[t] = cum[t] - cum[t - lag]
        observed[:, j] = inc
        series.append(
            CumulativeSeries(_county_id(j), ORIGIN_DATE, cum, np.zeros(T, dtype=np.int64))
        )

    frame = _build_frame(scenario, rates)
    return series, frame, rates


def _build_frame(scenario: Scenario, rates: np.ndarray) -> FeatureFrame:
    T, C = rates.shape
    names: list[str] = []
    provenance: list[str] = []
    cols: list[np.ndarray] = []

    for i, reg in enumerate(scenario.regimes):
        ind = np.zeros((T, C))
        affected = list(reg.affected) if reg.affected is not None else list(range(C))
        for j in affected:
            ind[reg.day :, j] = 1.0
        names.append(f"policy_{i}")
        provenance.append("synthetic")
        cols.append(ind)

    for d in range(scenario.num_distractors):
        noise = np.empty((T, C))
        for j in range(C):
            rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, j, 7 + d]))
            noise[:, j] = rng.standard_normal(T)
        names.append(f"noise_{d}")
        provenance.append("synthetic")
        cols.append(noise)

    counties = tuple(_county_id(j) for j in range(C))
    if cols:
        values = np.stack(cols, axis=2)
    else:
        values = np.zeros((T, C, 0))
    missing = np.zeros(values.shape, dtype=bool)
    return FeatureFrame(tuple(names), tuple(provenance), counties, values, missing)


def write_true_rates(rates: np.ndarray, counties, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "fips", "rate"])
        for t in range(rates.shape[0]):
            for j, county in enumerate(counties):
                writer.writerow([t, county.fips, repr(float(rates[t, j]))])
