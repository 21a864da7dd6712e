"""Lag, rolling-mean, calendar and price features for daily demand series.

One function, :func:`features_at`, computes every feature for a set of days
from a history matrix; training frames and recursive forecasting both go
through it, so there is no train/serve skew. Features for day ``t`` read
targets strictly before ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..hierarchy import Hierarchy
from .data import PanelDataset

__all__ = ["LAGS", "WINDOWS", "BASE_FEATURES", "SeriesBlock", "FeatureFrame", "series_block", "features_at",
           "build_features"]

LAGS = (1, 2, 3, 4, 5, 6, 7, 28, 56, 364)
WINDOWS = (7, 28, 56)
BASE_FEATURES = (
    ["aggregation", "value"]
    + [f"sales_lag{k}" for k in LAGS]
    + [f"sales_lag1_mavg{w}" for w in WINDOWS]
    + ["dayofweek", "dayofmonth", "weekofyear", "monthofyear",
       "sell_price_avg", "sell_price_change", "weeks_on_sale_avg"]
)


@dataclass(eq=False)
class SeriesBlock:
    """A set of (possibly aggregated) series with everything features need."""

    Y: np.ndarray  # (m, T) targets
    dates: pd.DatetimeIndex
    price: np.ndarray  # (m, T), NaN when unknown
    weeks_on_sale: np.ndarray  # (m, T)
    aggregation: np.ndarray  # (m,) level code
    value: np.ndarray  # (m,) series code within the level
    exog: dict = field(default_factory=dict)  # name -> (T,) or (m, T)

    @property
    def n_series(self) -> int:
        return int(self.Y.shape[0])

    @property
    def feature_names(self) -> list[str]:
        return list(BASE_FEATURES) + list(self.exog)

    def extend(self, n_days: int) -> "SeriesBlock":
        """Append ``n_days`` future days: unknown targets, last known price."""
        if n_days <= 0:
            return self
        m = self.n_series
        dates = self.dates.append(pd.date_range(self.dates[-1] + pd.Timedelta(days=1), periods=n_days, freq="D"))
        pad = np.full((m, n_days), np.nan)
        last_price = pd.DataFrame(self.price.T).ffill().to_numpy().T[:, -1:]
        wos_last = self.weeks_on_sale[:, -1:]
        # weeks on sale keeps counting from the last known value
        frac = np.arange(1, n_days + 1)[None, :] / 7.0
        exog = {}
        for k, v in self.exog.items():
            exog[k] = np.concatenate([v, np.full(v.shape[:-1] + (n_days,), np.nan)], axis=-1)
        return SeriesBlock(
            np.concatenate([self.Y, pad], axis=1),
            pd.DatetimeIndex(dates),
            np.concatenate([self.price, np.repeat(last_price, n_days, axis=1)], axis=1),
            np.concatenate([self.weeks_on_sale, wos_last + frac], axis=1),
            self.aggregation,
            self.value,
            exog,
        )


def _weeks_on_sale(price: np.ndarray) -> np.ndarray:
    on = np.nan_to_num(price) > 0
    T = price.shape[1]
    first = np.where(on.any(axis=1), on.argmax(axis=1), T)
    t = np.arange(T)[None, :]
    w = ((t - first[:, None]) // 7).astype(np.float64)
    w[t < first[:, None]] = np.nan
    return w


def _member_mean(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Mean of the defined member values per aggregate row (dense 0/1 M)."""
    ok = ~np.isnan(X)
    num = M @ np.where(ok, X, 0.0)
    den = M @ ok.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def series_block(p: PanelDataset, h: Hierarchy | None = None, levels=None) -> SeriesBlock:
    """Build the feature source for the bottom series or for hierarchy levels.

    With ``h`` given, ``levels`` selects level names (default: all) and
    aggregate targets are the member sums; price-like inputs are averaged.
    """
    n_b, T = p.target.shape
    price = p.exog.get("sell_price")
    price = np.full((n_b, T), np.nan) if price is None else np.asarray(price, dtype=np.float64)
    if price.ndim == 1:
        price = np.broadcast_to(price, (n_b, T)).copy()
    wos = _weeks_on_sale(price)
    series_exog = {k: v for k, v in p.exog.items() if k != "sell_price" and v.ndim == 2}
    cal_exog = {k: v for k, v in p.exog.items() if k != "sell_price" and v.ndim == 1}
    if h is None:
        exog = dict(cal_exog)
        exog.update(series_exog)
        return SeriesBlock(p.target.astype(np.float64), p.dates, price, wos,
                           np.zeros(n_b), np.arange(n_b, dtype=np.float64), exog)
    if h.n_b != n_b:
        raise ValueError(f"hierarchy has {h.n_b} bottom series, panel has {n_b}")
    names = h.level_names if levels is None else list(levels)
    rows, agg, val = [], [], []
    for name in names:
        sl = h.level_rows(name)
        r = np.arange(sl.start, sl.stop)
        rows.append(r)
        agg.append(np.full(r.size, h.level_names.index(name), dtype=np.float64))
        val.append(np.arange(r.size, dtype=np.float64))
    rows = np.concatenate(rows)
    M = h.S.toarray()[rows]
    exog = dict(cal_exog)
    for k, v in series_exog.items():
        exog[k] = _member_mean(M, v)
    return SeriesBlock(M @ p.target, p.dates, _member_mean(M, price), _member_mean(M, wos),
                       np.concatenate(agg), np.concatenate(val), exog)


def features_at(block: SeriesBlock, Yh: np.ndarray, days) -> np.ndarray:
    """Feature rows for every series at each day in ``days``.

    Rows are series-major: row ``i * len(days) + k`` is series ``i`` on
    ``days[k]``. Only ``Yh[:, :day]`` is read for a given day.
    """
    days = np.asarray(days, dtype=np.int64)
    m, K = Yh.shape[0], days.size
    tmax = int(days.max()) if K else 0
    C = np.zeros((m, tmax + 1))
    if tmax:
        np.cumsum(Yh[:, :tmax], axis=1, out=C[:, 1:])
    cols = []
    cols.append(np.repeat(block.aggregation, K))
    cols.append(np.repeat(block.value, K))
    for lag in LAGS:
        src = days - lag
        v = np.full((m, K), np.nan)
        ok = src >= 0
        v[:, ok] = Yh[:, src[ok]]
        cols.append(v.ravel())
    for w in WINDOWS:
        v = np.full((m, K), np.nan)
        ok = days - w >= 0
        v[:, ok] = (C[:, days[ok]] - C[:, days[ok] - w]) / w
        cols.append(v.ravel())
    d = block.dates[days]
    for cal in (d.dayofweek, d.day, d.isocalendar().week.to_numpy(), d.month):
        cols.append(np.tile(np.asarray(cal, dtype=np.float64), m))
    cols.append(block.price[:, days].ravel())
    prev = np.full((m, K), np.nan)
    ok = days >= 1
    prev[:, ok] = block.price[:, days[ok] - 1]
    cols.append((block.price[:, days] - prev).ravel())
    cols.append(block.weeks_on_sale[:, days].ravel())
    for v in block.exog.values():
        if v.ndim == 1:
            cols.append(np.tile(v[days], m))
        else:
            cols.append(v[:, days].ravel())
    return np.column_stack(cols)


@dataclass(eq=False)
class FeatureFrame:
    X: np.ndarray
    y: np.ndarray
    series: np.ndarray  # row -> series index in the block
    days: np.ndarray  # row -> absolute day index
    feature_names: list

    @property
    def n_days(self) -> int:
        return int(np.unique(self.days).size)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.feature_names)
        df.insert(0, "day", self.days)
        df.insert(0, "series", self.series)
        df["target"] = self.y
        return df


def build_features(source, start: int = 0, stop: int | None = None) -> FeatureFrame:
    """Feature frame for days ``start <= t < stop`` of a panel or series block."""
    block = source if isinstance(source, SeriesBlock) else series_block(source)
    T = block.Y.shape[1]
    stop = T if stop is None else stop
    if not 0 <= start < stop <= T:
        raise ValueError(f"invalid day range [{start}, {stop}) for {T} days")
    days = np.arange(start, stop)
    X = features_at(block, block.Y, days)
    m = block.n_series
    return FeatureFrame(X, block.Y[:, start:stop].ravel().copy(), np.repeat(np.arange(m), days.size),
                        np.tile(days, m), block.feature_names)
