"""Data ingestion, features, forecasting, evaluation and experiment scenarios."""
from .data import DataError, PanelDataset, load_m5, load_panel, ordinal_encode, synthesize, write_panel
from .evaluate import ALL_SERIES, EvalReport, combine_reports, evaluate
from .features import BASE_FEATURES, FeatureFrame, SeriesBlock, build_features, features_at, series_block
from .forecast import naive_forecast, recursive_forecast
from .scenario import (
    SCENARIOS,
    ScenarioConfig,
    ScenarioResult,
    Split,
    check_combination,
    coherence_error,
    make_split,
    run_seeds,
    scenario_run,
    train_block,
)

__all__ = [
    "ALL_SERIES", "BASE_FEATURES", "DataError", "EvalReport", "FeatureFrame", "PanelDataset", "SCENARIOS",
    "ScenarioConfig", "ScenarioResult", "SeriesBlock", "Split", "build_features", "check_combination",
    "coherence_error", "combine_reports", "evaluate", "features_at", "load_m5", "load_panel", "make_split",
    "naive_forecast", "ordinal_encode", "recursive_forecast", "run_seeds", "scenario_run", "series_block",
    "synthesize", "train_block", "write_panel",
]
