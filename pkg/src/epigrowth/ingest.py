"""Loaders for the public datasets and the (day, county) feature assembly.

Case counts arrive as daily cumulative rows per county; the other four
sources contribute features: county centroids, static socio-economic
indicators, state policy intervals (expanded to daily 0/1 columns) and daily
state testing numbers. State-level features are inherited by every county of
the state. Missing cells are median-imputed with an explicit 0/1 missingness
indicator appended per affected column, and columns that are missing
everywhere are dropped.

An optional JSON manifest maps raw column names to feature registry names per
source (and carries the missing-value sentinel), so dataset revisions only
need a manifest edit.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AssemblyError, FormatError, RowError, RowErrorGroup
from .features import FeatureFrame
from .panel import CountyId, CumulativeSeries, IncidentPanel

log = logging.getLogger(__name__)

SVI_SENTINEL = -999.0

STATE_CODES = {
    "alabama": "AL", "alaska": "AK", "arizona": "AZ", "arkansas": "AR",
    "california": "CA", "colorado": "CO", "connecticut": "CT", "delaware": "DE",
    "district of columbia": "DC", "florida": "FL", "georgia": "GA", "guam": "GU",
    "hawaii": "HI", "idaho": "ID", "illinois": "IL", "indiana": "IN",
    "iowa": "IA", "kansas": "KS", "kentucky": "KY", "louisiana": "LA",
    "maine": "ME", "maryland": "MD", "massachusetts": "MA", "michigan": "MI",
    "minnesota": "MN", "mississippi": "MS", "missouri": "MO", "montana": "MT",
    "nebraska": "NE", "nevada": "NV", "new hampshire": "NH", "new jersey": "NJ",
    "new mexico": "NM", "new york": "NY", "north carolina": "NC",
    "north dakota": "ND", "northern mariana islands": "MP", "ohio": "OH",
    "oklahoma": "OK", "oregon": "OR", "pennsylvania": "PA", "puerto rico": "PR",
    "rhode island": "RI", "south carolina": "SC", "south dakota": "SD",
    "tennessee": "TN", "texas": "TX", "utah": "UT", "vermont": "VT",
    "virgin islands": "VI", "virginia": "VA", "washington": "WA",
    "west virginia": "WV", "wisconsin": "WI", "wyoming": "WY",
}


def load_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise FormatError(f"manifest {path} must be a JSON object")
    return doc


def _state_code(raw: str, line: int) -> str:
    s = raw.strip()
    if len(s) == 2 and s.isalpha():
        return s.upper()
    code = STATE_CODES.get(s.lower())
    if code is None:
        raise RowError(line, f"unknown state {raw!r}")
    return code


def _norm_fips(raw: str) -> str:
    s = raw.strip()
    if s.endswith(".0"):
        s = s[:-2]
    return s.zfill(5) if s.isdigit() and len(s) <= 5 else s


@dataclass(frozen=True)
class CasesLoad:
    series: tuple[CumulativeSeries, ...]
    dropped_rows: int


def load_cases(path) -> CasesLoad:
    """Parse a daily cumulative case/death file into one series per county.

    Rows without a FIPS code are dropped and counted; date gaps inside a
    county's span are filled by carrying the previous cumulative value
    forward. All malformed rows are reported together after the scan.
    """
    required = ["date", "county", "state", "fips", "cases", "deaths"]
    rows: dict[str, dict[dt.date, tuple[int, int]]] = {}
    states: dict[str, str] = {}
    dropped = 0
    errors: list[RowError] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing_cols = [c for c in required if c not in header]
        if missing_cols:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing_cols)}")
        for line, row in enumerate(reader, start=2):
            fips_raw = (row.get("fips") or "").strip()
            if not fips_raw:
                dropped += 1
                continue
            try:
                date = dt.date.fromisoformat(row["date"].strip())
                fips = _norm_fips(fips_raw)
                if len(fips) != 5 or not fips.isdigit():
                    raise ValueError(f"bad fips {fips_raw!r}")
                state = _state_code(row["state"], line)
                cases = int(row["cases"])
                deaths = int(row["deaths"])
                if cases < 0 or deaths < 0:
                    raise ValueError("negative count")
            except RowError as e:
                errors.append(e)
                continue
            except (ValueError, KeyError) as e:
                errors.append(RowError(line, str(e)))
                continue
            rows.setdefault(fips, {})[date] = (cases, deaths)
            states.setdefault(fips, state)
    if errors:
        raise RowErrorGroup(path, errors)
    if not rows:
        return CasesLoad((), dropped)

    series = []
    for fips in sorted(rows):
        per_day = rows[fips]
        days = sorted(per_day)
        origin, last = days[0], days[-1]
        n = (last - origin).days + 1
        cases = np.zeros(n, dtype=np.int64)
        deaths = np.zeros(n, dtype=np.int64)
        prev = (0, 0)
        for i in range(n):
            date = origin + dt.timedelta(days=i)
            prev = per_day.get(date, prev)
            cases[i], deaths[i] = prev
        county = CountyId(fips, states[fips])
        series.append(CumulativeSeries(county, origin, cases, deaths))
    return CasesLoad(tuple(series), dropped)


@dataclass(frozen=True)
class GazetteerLoad:
    centroids: dict[str, tuple[float, float]]  # fips -> (lat, lon)
    duplicate_rows: int


def load_gazetteer(path) -> GazetteerLoad:
    """Tab-separated county centroids (GEOID, INTPTLAT, INTPTLONG)."""
    centroids: dict[str, tuple[float, float]] = {}
    duplicates = 0
    errors: list[RowError] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        header = {h.strip(): h for h in (reader.fieldnames or [])}
        for col in ("GEOID", "INTPTLAT", "INTPTLONG"):
            if col not in header:
                raise FormatError(f"{path}: missing column(s) {col}")
        for line, row in enumerate(reader, start=2):
            try:
                fips = _norm_fips(row[header["GEOID"]])
                lat = float(row[header["INTPTLAT"]])
                lon = float(row[header["INTPTLONG"]])
                if not -90.0 <= lat <= 90.0:
                    raise ValueError(f"latitude {lat} out of range")
                if not -180.0 <= lon <= 180.0:
                    raise ValueError(f"longitude {lon} out of range")
            except (ValueError, KeyError) as e:
                errors.append(RowError(line, str(e)))
                continue
            if fips in centroids:
                duplicates += 1
            centroids[fips] = (lat, lon)
    if errors:
        raise RowErrorGroup(path, errors)
    if duplicates:
        log.warning("%s: %d duplicate GEOID row(s), last wins", path, duplicates)
    return GazetteerLoad(centroids, duplicates)


@dataclass(frozen=True)
class SviLoad:
    columns: tuple[str, ...]  # registry names
    rows: dict[str, tuple[np.ndarray, np.ndarray]]  # fips -> (values, missing)


def load_svi(path, columns: dict[str, str] | None = None, sentinel: float = SVI_SENTINEL) -> SviLoad:
    """County-level socio-economic indicators; `sentinel` cells become missing."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if "FIPS" not in header:
            raise FormatError(f"{path}: missing column(s) FIPS")
        if columns is None:
            use = [(c, f"svi_{c.lower()}") for c in header if c != "FIPS"]
        else:
            absent = [c for c in columns if c not in header]
            if absent:
                raise FormatError(f"{path}: missing column(s) {', '.join(absent)}")
            use = [(c, columns[c]) for c in columns]
        rows: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        errors: list[RowError] = []
        for line, row in enumerate(reader, start=2):
            try:
                fips = _norm_fips(row["FIPS"])
                values = np.empty(len(use))
                missing = np.zeros(len(use), dtype=bool)
                for i, (col, _) in enumerate(use):
                    cell = (row.get(col) or "").strip()
                    v = float(cell) if cell else sentinel
                    if v == sentinel:
                        values[i] = np.nan
                        missing[i] = True
                    else:
                        values[i] = v
            except (ValueError, KeyError) as e:
                errors.append(RowError(line, str(e)))
                continue
            rows[fips] = (values, missing)
    if errors:
        raise RowErrorGroup(path, errors)
    return SviLoad(tuple(name for _, name in use), rows)


@dataclass(frozen=True)
class CuspLoad:
    policies: tuple[str, ...]  # registry names
    intervals: dict[tuple[str, str], list[tuple[dt.date, dt.date | None]]]


def load_cusp(path, policies: dict[str, str] | None = None) -> CuspLoad:
    """State policy intervals from paired <policy>_start/<policy>_end columns.

    An empty start means never enacted; an empty end leaves the interval
    open-ended. Daily 0/1 expansion happens at assembly time.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if "state" not in header:
            raise FormatError(f"{path}: missing column(s) state")
        bases = [c[: -len("_start")] for c in header if c.endswith("_start")]
        bases = [b for b in bases if f"{b}_end" in header]
        if policies is None:
            use = [(b, f"cusp_{b.lower()}") for b in bases]
        else:
            absent = [b for b in policies if b not in bases]
            if absent:
                raise FormatError(f"{path}: missing policy column pair(s) {', '.join(absent)}")
            use = [(b, policies[b]) for b in policies]
        intervals: dict[tuple[str, str], list[tuple[dt.date, dt.date | None]]] = {}
        errors: list[RowError] = []
        for line, row in enumerate(reader, start=2):
            try:
                state = _state_code(row["state"], line)
                for base, name in use:
                    start_cell = (row.get(f"{base}_start") or "").strip()
                    end_cell = (row.get(f"{base}_end") or "").strip()
                    key = (state, name)
                    intervals.setdefault(key, [])
                    if not start_cell:
                        continue
                    start = dt.date.fromisoformat(start_cell)
                    end = dt.date.fromisoformat(end_cell) if end_cell else None
                    if end is not None and end < start:
                        raise ValueError(f"{base}: end {end} before start {start}")
                    intervals[key].append((start, end))
            except RowError as e:
                errors.append(e)
            except (ValueError, KeyError) as e:
                errors.append(RowError(line, str(e)))
    if errors:
        raise RowErrorGroup(path, errors)
    return CuspLoad(tuple(name for _, name in use), intervals)


@dataclass(frozen=True)
class TrackingLoad:
    columns: tuple[str, ...]  # registry names
    rows: dict[tuple[dt.date, str], tuple[np.ndarray, np.ndarray]]


def load_tracking(path, columns: dict[str, str] | None = None) -> TrackingLoad:
    """Daily per-state test counts and positivity rates.

    For every `<base>_tests`/`<base>_positive` pair without an explicit
    `<base>_positivity` column, the ratio is derived (missing when the test
    count is zero). Negative counts are row errors.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in ("date", "state"):
            if col not in header:
                raise FormatError(f"{path}: missing column(s) {col}")
        numeric = [c for c in header if c not in ("date", "state")]
        if columns is None:
            use = [(c, f"tracking_{c.lower()}") for c in numeric]
        else:
            absent = [c for c in columns if c not in numeric]
            if absent:
                raise FormatError(f"{path}: missing column(s) {', '.join(absent)}")
            use = [(c, columns[c]) for c in columns]
        derived = []
        used_cols = [c for c, _ in use]
        for col, name in use:
            if col.endswith("_tests"):
                base = col[: -len("_tests")]
                if f"{base}_positive" in used_cols and f"{base}_positivity" not in numeric:
                    derived.append(base)
        names = tuple(name for _, name in use) + tuple(
            f"tracking_{b.lower()}_positivity" for b in derived
        )

        rows: dict[tuple[dt.date, str], tuple[np.ndarray, np.ndarray]] = {}
        errors: list[RowError] = []
        for line, row in enumerate(reader, start=2):
            try:
                date = dt.date.fromisoformat(row["date"].strip())
                state = _state_code(row["state"], line)
                values = np.empty(len(names))
                missing = np.zeros(len(names), dtype=bool)
                raw: dict[str, float | None] = {}
                for i, (col, _) in enumerate(use):
                    cell = (row.get(col) or "").strip()
                    if cell:
                        v = float(cell)
                        if col.endswith(("_tests", "_positive")) and v < 0:
                            raise ValueError(f"{col}: negative count {v}")
                        values[i] = v
                        raw[col] = v
                    else:
                        values[i] = np.nan
                        missing[i] = True
                        raw[col] = None
                for k, base in enumerate(derived):
                    i = len(use) + k
                    tests = raw.get(f"{base}_tests")
                    positive = raw.get(f"{base}_positive")
                    if tests and positive is not None and tests > 0:
                        values[i] = positive / tests
                    else:
                        values[i] = np.nan
                        missing[i] = True
            except RowError as e:
                errors.append(e)
                continue
            except (ValueError, KeyError) as e:
                errors.append(RowError(line, str(e)))
                continue
            rows[(date, state)] = (values, missing)
    if errors:
        raise RowErrorGroup(path, errors)
    return TrackingLoad(names, rows)


def assemble_features(
    panel: IncidentPanel,
    gazetteer: GazetteerLoad | None = None,
    svi: SviLoad | None = None,
    cusp: CuspLoad | None = None,
    tracking: TrackingLoad | None = None,
) -> FeatureFrame:
    """Join the loaded sources into one (day, county, feature) frame.

    County-level sources broadcast over days; state-level sources are
    inherited by every county of the state. Missing cells take their column's
    median over present cells; columns missing everywhere are dropped; every
    column that still has missing cells gets a 0/1 indicator column appended.
    """
    T = panel.num_days
    counties = panel.counties
    C = len(counties)

    if cusp is not None or tracking is not None:
        known = set()
        if cusp is not None:
            known |= {state for state, _ in cusp.intervals}
        if tracking is not None:
            known |= {state for _, state in tracking.rows}
        unknown = sorted(c.fips for c in counties if c.state not in known)
        if unknown:
            raise AssemblyError(
                "counties with no state-level feature data: " + ", ".join(unknown)
            )

    names: list[str] = []
    provenance: list[str] = []
    layers: list[np.ndarray] = []
    masks: list[np.ndarray] = []

    def add(name: str, prov: str, values: np.ndarray, missing: np.ndarray) -> None:
        names.append(name)
        provenance.append(prov)
        layers.append(values)
        masks.append(missing)

    if gazetteer is not None:
        for k, name in enumerate(("latitude", "longitude")):
            col = np.zeros((T, C))
            miss = np.zeros((T, C), dtype=bool)
            for j, county in enumerate(counties):
                cent = gazetteer.centroids.get(county.fips)
                if cent is None:
                    miss[:, j] = True
                else:
                    col[:, j] = cent[k]
            add(name, "gazetteer", col, miss)

    if svi is not None:
        for i, name in enumerate(svi.columns):
            col = np.zeros((T, C))
            miss = np.zeros((T, C), dtype=bool)
            for j, county in enumerate(counties):
                entry = svi.rows.get(county.fips)
                if entry is None or entry[1][i]:
                    miss[:, j] = True
                else:
                    col[:, j] = entry[0][i]
            add(name, "svi", col, miss)

    dates = [panel.date_of(t) for t in range(T)]

    if cusp is not None:
        cusp_states = {state for state, _ in cusp.intervals}
        for name in cusp.policies:
            col = np.zeros((T, C))
            miss = np.zeros((T, C), dtype=bool)
            for j, county in enumerate(counties):
                if county.state not in cusp_states:
                    miss[:, j] = True
                    continue
                for start, end in cusp.intervals.get((county.state, name), ()):
                    for t, date in enumerate(dates):
                        if date >= start and (end is None or date <= end):
                            col[t, j] = 1.0
            add(name, "cusp", col, miss)

    if tracking is not None:
        for i, name in enumerate(tracking.columns):
            col = np.zeros((T, C))
            miss = np.zeros((T, C), dtype=bool)
            for j, county in enumerate(counties):
                for t, date in enumerate(dates):
                    entry = tracking.rows.get((date, county.state))
                    if entry is None or entry[1][i]:
                        miss[t, j] = True
                    else:
                        col[t, j] = entry[0][i]
            add(name, "tracking", col, miss)

    # drop all-missing columns, impute the rest, append missingness indicators
    keep = [i for i, mask in enumerate(masks) if not mask.all()]
    dropped = [names[i] for i in range(len(names)) if i not in keep]
    if dropped:
        log.warning("dropping %d all-missing feature column(s): %s", len(dropped), dropped)
    names = [names[i] for i in keep]
    provenance = [provenance[i] for i in keep]
    layers = [layers[i] for i in keep]
    masks = [masks[i] for i in keep]

    indicator_layers = []
    for i, name in enumerate(list(names)):
        mask = masks[i]
        if mask.any():
            median = float(np.median(layers[i][~mask]))
            layers[i] = np.where(mask, median, layers[i])
            indicator_layers.append((f"{name}_missing", mask.astype(np.float64)))

    for name, ind in indicator_layers:
        names.append(name)
        provenance.append("derived")
        layers.append(ind)
        masks.append(np.zeros((T, C), dtype=bool))

    if layers:
        values = np.stack(layers, axis=2)
        missing = np.stack(masks, axis=2)
    else:
        values = np.zeros((T, C, 0))
        missing = np.zeros((T, C, 0), dtype=bool)
    return FeatureFrame(tuple(names), tuple(provenance), counties, values, missing)
