"""Recursive multi-step forecasting and naive baselines."""
from __future__ import annotations

import numpy as np

from .features import SeriesBlock, features_at

__all__ = ["recursive_forecast", "naive_forecast"]


def recursive_forecast(model, block: SeriesBlock, cutoff: int, horizon: int = 28) -> np.ndarray:
    """Forecast days ``cutoff .. cutoff+horizon-1`` for every series of ``block``.

    ``model`` needs a ``predict(X)`` method. Targets from ``cutoff`` on are
    hidden; each step's predictions become history for the next step.
    Returns an (n_series, horizon) array.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    T = block.Y.shape[1]
    if not 0 < cutoff <= T:
        raise ValueError(f"cutoff {cutoff} outside 1..{T}")
    if cutoff + horizon > T:
        block = block.extend(cutoff + horizon - T)
    Yh = block.Y.copy()
    Yh[:, cutoff:] = np.nan
    out = np.empty((block.n_series, horizon))
    for k in range(horizon):
        t = cutoff + k
        pred = np.asarray(model.predict(features_at(block, Yh, [t])), dtype=np.float64)
        Yh[:, t] = pred
        out[:, k] = pred
    return out


def naive_forecast(history, horizon: int, kind: str = "naive", period: int = 7) -> np.ndarray:
    """``naive`` repeats the last value; ``seasonal_naive`` repeats the last ``period`` values."""
    Y = np.atleast_2d(np.asarray(history, dtype=np.float64))
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if kind == "naive":
        return np.repeat(Y[:, -1:], horizon, axis=1)
    if kind == "seasonal_naive":
        if period < 1 or Y.shape[1] < period:
            raise ValueError(f"need at least {period} observations for seasonal_naive")
        last = Y[:, -period:]
        return last[:, np.arange(horizon) % period]
    raise ValueError(f"unknown naive kind {kind!r}")
