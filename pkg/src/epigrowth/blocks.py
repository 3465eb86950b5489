"""Two-day block construction and parity-paired training sets.

Each block covers one county's consecutive valid day pair (t-1, t). Its
normalized outcomes are y0 = 0 and y1 = ln I_t - ln I_{t-1}; the rough OLS of
{y0, y1} on the regressors {0, 1} has the closed form slope = y1, intercept =
0, so those values are stored directly (the generic solver survives as a test
oracle). Block features are the day-t feature cell augmented with the rough
slope, intercept and previous incident count.

Training sets for a target day pair blocks by day parity: blocks on days with
t*'s parity become treated rows carrying their own y1; days of the opposite
parity contribute control rows with outcome 0 that borrow the next day's block
features, so every control row duplicates some treated row's feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistoryError
from .features import FeatureFrame, FeatureVector
from .panel import CountyId, IncidentPanel

AUGMENTED_NAMES = ("ols_slope", "ols_intercept", "prev_incident")


@dataclass(frozen=True)
class BlockRecord:
    """One (t-1, t) block: outcomes, rough OLS estimates, augmented features."""

    day: int
    county: CountyId
    y1: float
    r_ols: float
    alpha_ols: float
    prev_incident: int
    features: FeatureVector
    y0: float = 0.0


@dataclass(frozen=True)
class TrainingSet:
    """Parity-paired rows for one target day: (features, outcome, treatment)."""

    target_day: int
    feature_names: tuple[str, ...]
    features: np.ndarray  # (n, m) float64
    outcomes: np.ndarray  # (n,) float64
    treatment: np.ndarray  # (n,) int8
    provenance: tuple[tuple[int, CountyId], ...]  # (day, county) per row

    def __len__(self) -> int:
        return self.outcomes.size


def block_transform(panel: IncidentPanel, frame: FeatureFrame) -> tuple[list[BlockRecord], int]:
    """Build one block per valid consecutive day pair per county.

    Pairs touching an invalid cell are skipped; returns the blocks in
    (county, day) order plus the skip count.
    """
    if frame.num_days != panel.num_days or frame.counties != panel.counties:
        raise ValueError("panel and feature frame must cover the same (day, county) domain")
    names = frame.names + AUGMENTED_NAMES
    records: list[BlockRecord] = []
    skipped = 0
    for j, county in enumerate(panel.counties):
        for t in range(1, panel.num_days):
            if not (panel.valid[t - 1, j] and panel.valid[t, j]):
                skipped += 1
                continue
            y1 = float(panel.log_incident[t, j] - panel.log_incident[t - 1, j])
            prev = int(panel.incident[t - 1, j])
            values = np.concatenate([frame.values[t, j], [y1, 0.0, float(prev)]])
            missing = np.concatenate([frame.missing[t, j], [False, False, False]])
            records.append(
                BlockRecord(
                    day=t,
                    county=county,
                    y1=y1,
                    r_ols=y1,
                    alpha_ols=0.0,
                    prev_incident=prev,
                    features=FeatureVector(values, missing, names),
                )
            )
    return records, skipped


def build_training_set(blocks: list[BlockRecord], t_star: int) -> TrainingSet:
    """Assemble the treated/control rows for target day `t_star`.

    Days t <= t_star with t ≡ t_star (mod 2) contribute treated rows from
    their own block; days of the opposite parity contribute control rows
    (outcome 0) borrowing block t+1's features, dropped when t+1 would exceed
    t_star or block t+1 is missing.
    """
    if t_star < 1:
        raise ValueError(f"t_star must be >= 1, got {t_star}")
    by_key: dict[tuple[str, int], BlockRecord] = {
        (b.county.fips, b.day): b for b in blocks if b.day <= t_star
    }
    if not by_key:
        raise InsufficientHistoryError(f"no blocks at or before day {t_star}")
    counties = sorted({b.county for b in blocks if b.day <= t_star}, key=lambda c: c.fips)

    rows: list[tuple[np.ndarray, float, int, int, CountyId]] = []
    names: tuple[str, ...] | None = None
    for county in counties:
        for t in range(t_star + 1):
            if (t_star - t) % 2 == 0:
                block = by_key.get((county.fips, t))
                if block is None:
                    continue
                rows.append((block.features.values, block.y1, 1, t, county))
                names = block.features.names
            else:
                block = by_key.get((county.fips, t + 1))
                if block is None or t + 1 > t_star:
                    continue
                rows.append((block.features.values, 0.0, 0, t, county))
                names = block.features.names
    if not rows:
        raise InsufficientHistoryError(f"no usable rows for target day {t_star}")
    features = np.array([r[0] for r in rows], dtype=np.float64)
    outcomes = np.array([r[1] for r in rows], dtype=np.float64)
    treatment = np.array([r[2] for r in rows], dtype=np.int8)
    provenance = tuple((r[3], r[4]) for r in rows)
    return TrainingSet(t_star, names, features, outcomes, treatment, provenance)
