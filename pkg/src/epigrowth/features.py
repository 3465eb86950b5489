"""Dense per-(day, county) feature storage with missingness masks.

Missing cells hold their column's median over present cells (imputed at
assembly time); the mask records which cells were imputed. Every county/day
cell of a frame shares one feature-name registry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import CountyId


@dataclass(frozen=True)
class FeatureVector:
    """One cell's feature values plus its missingness mask."""

    values: np.ndarray  # (m,) float64
    missing: np.ndarray  # (m,) bool
    names: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.values) == len(self.missing) == len(self.names)):
            raise ValueError("values, missing and names must have equal length")


@dataclass(frozen=True)
class FeatureFrame:
    """Features for every (day, county) cell of a panel.

    provenance labels each column's source: gazetteer | svi | cusp | tracking |
    derived | synthetic.
    """

    names: tuple[str, ...]
    provenance: tuple[str, ...]
    counties: tuple[CountyId, ...]
    values: np.ndarray  # (T, C, m) float64
    missing: np.ndarray  # (T, C, m) bool

    def __post_init__(self):
        if self.values.shape != self.missing.shape:
            raise ValueError("values and missing must share a shape")
        if self.values.shape[2] != len(self.names) or len(self.names) != len(self.provenance):
            raise ValueError("feature axis must match the name registry")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if self.values.shape[1] != len(self.counties):
            raise ValueError("county axis must match the county list")

    @property
    def m(self) -> int:
        return len(self.names)

    @property
    def num_days(self) -> int:
        return self.values.shape[0]

    def cell(self, day: int, county_idx: int) -> FeatureVector:
        return FeatureVector(
            self.values[day, county_idx].copy(),
            self.missing[day, county_idx].copy(),
            self.names,
        )


def empty_frame(num_days: int, counties: tuple[CountyId, ...]) -> FeatureFrame:
    """A frame with zero feature columns (panel-only pipelines)."""
    return FeatureFrame(
        names=(),
        provenance=(),
        counties=counties,
        values=np.zeros((num_days, len(counties), 0)),
        missing=np.zeros((num_days, len(counties), 0), dtype=bool),
    )


def write_frame(frame: FeatureFrame, path) -> None:
    """Wide CSV: day, fips, state, then one column per feature.

    Missing cells are written empty; a `# provenance:` comment row after the
    header preserves column sources. Floats use repr so a read-back is exact.
    """
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "fips", "state", *frame.names])
        writer.writerow(["# provenance", "", "", *frame.provenance])
        for t in range(frame.num_days):
            for j, county in enumerate(frame.counties):
                cells = [
                    "" if frame.missing[t, j, i] else repr(float(frame.values[t, j, i]))
                    for i in range(frame.m)
                ]
                writer.writerow([t, county.fips, county.state, *cells])


def read_frame(path) -> FeatureFrame:
    """Read a frame written by write_frame; imputes nothing (missing cells 0)."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[3:])
        prov_row = next(reader)
        provenance = tuple(prov_row[3:])
        cells: dict[tuple[int, str], tuple[str, list[str]]] = {}
        for row in reader:
            cells[(int(row[0]), row[1])] = (row[2], row[3:])
    counties = tuple(
        CountyId(fips, state)
        for fips, state in sorted({(k[1], v[0]) for k, v in cells.items()})
    )
    num_days = max(k[0] for k in cells) + 1 if cells else 0
    index = {c.fips: j for j, c in enumerate(counties)}
    values = np.zeros((num_days, len(counties), len(names)))
    missing = np.zeros((num_days, len(counties), len(names)), dtype=bool)
    for (t, fips), (_, raw) in cells.items():
        j = index[fips]
        for i, cell in enumerate(raw):
            if cell == "":
                missing[t, j, i] = True
            else:
                values[t, j, i] = float(cell)
    return FeatureFrame(names, provenance, counties, values, missing)
