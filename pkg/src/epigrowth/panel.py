"""Calendar-aligned county panel: cumulative series, incident transformation, log views.

Incident cases I_t are the new cases inside a trailing window of `lag` days
(default 22): I_t = Y_t - Y_{t-lag} once a county has at least `lag` days of
history, and I_t = Y_t before that. The clock for that branch starts at the
county's first positive cumulative count; the global day index is anchored to
the earliest date across all loaded counties.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, EmptyInputError

DEFAULT_LAG = 22


@dataclass(frozen=True, order=True)
class CountyId:
    """5-digit FIPS plus 2-letter state code."""

    fips: str
    state: str = field(compare=False)

    def __post_init__(self):
        if len(self.fips) != 5 or not self.fips.isdigit():
            raise ValueError(f"fips must be a 5-digit string, got {self.fips!r}")
        if len(self.state) != 2 or not self.state.isalpha() or not self.state.isupper():
            raise ValueError(f"state must be 2 uppercase letters, got {self.state!r}")


@dataclass(frozen=True)
class CumulativeSeries:
    """Daily cumulative case/death counts for one county, from its first report onward."""

    county: CountyId
    origin_date: dt.date
    cases: np.ndarray
    deaths: np.ndarray

    def __post_init__(self):
        cases = np.asarray(self.cases, dtype=np.int64)
        deaths = np.asarray(self.deaths, dtype=np.int64)
        if cases.shape != deaths.shape or cases.ndim != 1:
            raise ValueError("cases and deaths must be 1-d arrays of equal length")
        if cases.size and (cases.min() < 0 or deaths.min() < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "cases", cases)
        object.__setattr__(self, "deaths", deaths)

    def __len__(self) -> int:
        return self.cases.size

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.cases) >= 0) and np.all(np.diff(self.deaths) >= 0))


def repair_monotonicity(raw: CumulativeSeries) -> tuple[CumulativeSeries, int]:
    """Force cumulative counts non-decreasing via a running maximum.

    Real reporting data contains downward revisions; differencing those would
    produce negative incident counts. Returns the repaired series and how many
    entries were lifted.
    """
    cases = np.maximum.accumulate(raw.cases)
    deaths = np.maximum.accumulate(raw.deaths)
    repairs = int(np.count_nonzero(cases != raw.cases) + np.count_nonzero(deaths != raw.deaths))
    if repairs == 0:
        return raw, 0
    return CumulativeSeries(raw.county, raw.origin_date, cases, deaths), repairs


@dataclass(frozen=True)
class IncidentPanel:
    """Rectangular (day, county) panel of incident counts and their logs.

    `log_incident` is NaN wherever `valid` is False; `valid` is False wherever
    the incident count is zero or the day falls outside the county's observed
    span.
    """

    counties: tuple[CountyId, ...]
    origin: dt.date
    incident: np.ndarray  # (T, C) int64
    log_incident: np.ndarray  # (T, C) float64, NaN where invalid
    valid: np.ndarray  # (T, C) bool

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {c.fips: j for j, c in enumerate(self.counties)}
        )

    @property
    def num_days(self) -> int:
        return self.incident.shape[0]

    def county_index(self, fips: str) -> int:
        return self._index[fips]

    def date_of(self, day: int) -> dt.date:
        return self.origin + dt.timedelta(days=int(day))

    def day_of(self, date: dt.date) -> int:
        return (date - self.origin).days


def incident_from_cumulative(cases: np.ndarray, lag: int) -> np.ndarray:
    """Trailing-window incident counts for one county's cumulative vector.

    The branch clock t runs from the first positive entry; entries before the
    first case yield I_t = Y_t (zero).
    """
    n = cases.size
    out = np.empty(n, dtype=np.int64)
    positive = np.nonzero(cases > 0)[0]
    start = int(positive[0]) if positive.size else n
    for t in range(n):
        local = t - start
        if local >= lag:
            out[t] = cases[t] - cases[t - lag]
        else:
            out[t] = cases[t]
    return out


def build_incident_panel(series_set, lag: int = DEFAULT_LAG) -> IncidentPanel:
    """Align cumulative series on a shared calendar and difference them into incidents.

    Cells outside a county's observed span, or where the incident count is
    zero, are flagged invalid and excluded from the log view.
    """
    series = sorted(series_set, key=lambda s: s.county.fips)
    if not series:
        raise EmptyInputError("no cumulative series supplied")
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    for s in series:
        if not s.is_monotone:
            raise ContractViolationError(
                f"series for {s.county.fips} is not monotone; repair_monotonicity first"
            )

    origin = min(s.origin_date for s in series)
    last = max(s.origin_date + dt.timedelta(days=len(s) - 1) for s in series)
    num_days = (last - origin).days + 1
    counties = tuple(s.county for s in series)

    incident = np.zeros((num_days, len(series)), dtype=np.int64)
    valid = np.zeros((num_days, len(series)), dtype=bool)
    for j, s in enumerate(series):
        offset = (s.origin_date - origin).days
        inc = incident_from_cumulative(s.cases, lag)
        incident[offset : offset + len(s), j] = inc
        valid[offset : offset + len(s), j] = inc >= 1

    log_incident = np.full(incident.shape, np.nan)
    np.log(incident, out=log_incident, where=valid)
    return IncidentPanel(counties, origin, incident, log_incident, valid)
