"""County-level epidemic growth-rate estimation with adaptive fitting windows."""

from .baseline import OlsFit, ols_window_fit
from .blocks import BlockRecord, TrainingSet, block_transform, build_training_set
from .features import FeatureFrame, FeatureVector
from .forecast_eval import (
    Forecast,
    MetricRecord,
    MetricSeries,
    forecast,
    median_summary,
    moving_average,
    score_day,
)
from .grf import (
    Forest,
    ForestParams,
    GrowthEstimate,
    best_split,
    fit_forest,
    forest_weights,
    load_forest,
    node_tau,
    predict_rate,
    pseudo_outcomes,
    save_forest,
)
from .panel import (
    CountyId,
    CumulativeSeries,
    IncidentPanel,
    build_incident_panel,
    repair_monotonicity,
)
from .run import RunConfig, run_backtest, run_estimate
from .synth import RegimeSwitch, Scenario, generate

__version__ = "0.1.0"
