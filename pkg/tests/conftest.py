import datetime as dt

import numpy as np
import pytest

from epigrowth.features import FeatureFrame, empty_frame
from epigrowth.panel import CountyId, CumulativeSeries, IncidentPanel


def county(i: int, state: str = "AL") -> CountyId:
    return CountyId(f"{i:05d}", state)


def panel_from_logs(log_rows: np.ndarray, counties=None, origin=dt.date(2020, 3, 1)) -> IncidentPanel:
    """Craft a panel directly from a (T, C) array of log incident values.

    NaN marks invalid cells. Incident counts are the rounded exponentials, so
    tests control the log view exactly regardless of integer rounding.
    """
    logs = np.asarray(log_rows, dtype=np.float64)
    if logs.ndim == 1:
        logs = logs[:, None]
    T, C = logs.shape
    if counties is None:
        counties = tuple(county(j + 1) for j in range(C))
    valid = ~np.isnan(logs)
    incident = np.where(valid, np.round(np.exp(np.where(valid, logs, 0.0))), 0).astype(np.int64)
    return IncidentPanel(tuple(counties), origin, incident, logs, valid)


def frame_for(panel: IncidentPanel, values: np.ndarray | None = None, names=None) -> FeatureFrame:
    """A feature frame aligned to `panel`; empty when no values are given."""
    if values is None:
        return empty_frame(panel.num_days, panel.counties)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    m = values.shape[2]
    if names is None:
        names = tuple(f"f{i}" for i in range(m))
    return FeatureFrame(
        tuple(names),
        tuple("synthetic" for _ in range(m)),
        panel.counties,
        values,
        np.zeros(values.shape, dtype=bool),
    )


def random_series(rng: np.random.Generator, n_days: int, fips: str = "01001",
                  state: str = "AL", origin=dt.date(2020, 3, 1)) -> CumulativeSeries:
    """A monotone cumulative series from a random non-decreasing walk."""
    steps = rng.integers(0, 40, size=n_days)
    steps[0] = max(1, steps[0])
    cases = np.cumsum(steps)
    deaths = np.cumsum(rng.integers(0, 3, size=n_days))
    return CumulativeSeries(CountyId(fips, state), origin, cases, deaths)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
