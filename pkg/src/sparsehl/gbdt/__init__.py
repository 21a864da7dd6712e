"""Histogram gradient-boosted regression trees with pluggable objectives."""
from .binning import BinnedDataset, apply_bins, bin_features
from .booster import Booster, TrainConfig, Tree, fit, predict

__all__ = ["BinnedDataset", "Booster", "TrainConfig", "Tree", "apply_bins", "bin_features", "fit", "predict"]
