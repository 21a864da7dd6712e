from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_BINS = 255


@dataclass(eq=False)
class BinnedDataset:
    """Quantile-binned feature matrix in feature-major layout.

    ``bins[f, i]`` is 0 for a missing value, otherwise the 1-based value bin.
    ``edges[f]`` holds the strictly increasing upper bounds of value bins
    ``1..n_bins[f]-1``; the last value bin is unbounded.
    """

    bins: np.ndarray
    edges: list
    targets: np.ndarray | None = None
    weights: np.ndarray | None = None
    feature_names: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return int(self.bins.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.bins.shape[0])

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([e.size + 1 for e in self.edges], dtype=np.int64)


def _edges(values: np.ndarray, max_bins: int) -> np.ndarray:
    v = values[~np.isnan(values)]
    if v.size == 0:
        return np.empty(0)
    uniq = np.unique(v)
    if uniq.size <= max_bins:
        return uniq[:-1].copy()
    qs = np.quantile(v, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    edges = np.unique(qs)
    # the top edge must leave something in the last bin
    return edges[edges < uniq[-1]]


def apply_bins(X, edges) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(edges):
        raise ValueError(f"expected {len(edges)} feature columns, got shape {X.shape}")
    out = np.zeros((X.shape[1], X.shape[0]), dtype=np.uint8)
    for f, e in enumerate(edges):
        col = X[:, f]
        nan = np.isnan(col)
        b = np.searchsorted(e, col, side="left") + 1
        b[nan] = 0
        out[f] = b
    return out


def bin_features(X, max_bins: int = MAX_BINS, targets=None, weights=None, feature_names=None,
                 reference: BinnedDataset | None = None) -> BinnedDataset:
    """Bin raw feature columns (rows are samples, NaN is missing).

    With ``reference`` the bin edges of that dataset are reused, which is how
    validation and prediction data are binned.
    """
    if not 1 <= max_bins <= MAX_BINS:
        raise ValueError(f"max_bins must lie in 1..{MAX_BINS}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D (samples x features)")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if reference is not None:
        edges = reference.edges
        names = list(reference.feature_names)
    else:
        edges = [_edges(X[:, f], max_bins) for f in range(X.shape[1])]
        names = list(feature_names) if feature_names is not None else [f"f{k}" for k in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match the number of columns")
    y = None if targets is None else np.asarray(targets, dtype=np.float64).ravel()
    if y is not None and y.size != X.shape[0]:
        raise ValueError("targets length does not match the number of rows")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    return BinnedDataset(apply_bins(X, edges), edges, y, w, names)
