"""Fixed-window OLS growth-rate estimators (the non-adaptive benchmarks).

A window of size w at day t uses the valid cells among days {t-w+1, ..., t}
and regresses log incident counts on the day index. The two-point case is
solved in closed form so that a 2-day window reproduces the block slope
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .panel import CountyId, IncidentPanel


@dataclass(frozen=True)
class OlsFit:
    """Least-squares slope/intercept of log incident on day index over one window."""

    county: CountyId
    day: int
    r_hat: float
    alpha_hat: float
    window: int
    n_used: int


def ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Slope and intercept of y on x; exact two-point form when n == 2."""
    n = x.size
    if n == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return float(slope), float(y[0] - slope * x[0])
    xbar = float(x.mean())
    ybar = float(y.mean())
    dx = x - xbar
    slope = float(np.dot(dx, y - ybar) / np.dot(dx, dx))
    return slope, ybar - slope * xbar


def ols_window_fit(panel: IncidentPanel, county: CountyId, t: int, window: int) -> OlsFit:
    """Fit the growth rate for `county` at day `t` from its last `window` days.

    Invalid cells inside the window are skipped; fewer than 2 usable cells
    raises InsufficientDataError.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    j = panel.county_index(county.fips)
    lo = max(0, t - window + 1)
    days = np.arange(lo, t + 1)
    mask = panel.valid[lo : t + 1, j]
    if int(mask.sum()) < 2:
        raise InsufficientDataError(
            f"window {window} at day {t} for {county.fips}: {int(mask.sum())} valid cell(s)"
        )
    x = days[mask].astype(np.float64)
    y = panel.log_incident[lo : t + 1, j][mask]
    slope, intercept = ols_line(x, y)
    return OlsFit(county, t, slope, intercept, window, int(mask.sum()))
