"""Daily panel data: loading, validation and a synthetic generator."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

__all__ = ["DataError", "PanelDataset", "load_panel", "load_m5", "write_panel", "synthesize"]


class DataError(ValueError):
    """Malformed input data."""


@dataclass(eq=False)
class PanelDataset:
    """Bottom-level series on a contiguous daily grid.

    ``target`` is (n_series, n_days). ``exog`` maps a column name to either a
    per-series (n_series, n_days) array or a calendar-level (n_days,) array;
    NaN marks an unknown value.
    """

    series_ids: np.ndarray
    dates: pd.DatetimeIndex
    target: np.ndarray
    exog: dict = field(default_factory=dict)
    meta: pd.DataFrame | None = None

    def __post_init__(self):
        n, T = self.target.shape
        if len(self.series_ids) != n or len(self.dates) != T:
            raise DataError("target shape does not match series ids and dates")
        for k, v in self.exog.items():
            if v.shape not in ((n, T), (T,)):
                raise DataError(f"exogenous column {k!r} has shape {v.shape}")
        if self.meta is None:
            self.meta = pd.DataFrame({"series_id": self.series_ids})

    @property
    def n_series(self) -> int:
        return int(self.target.shape[0])

    @property
    def n_days(self) -> int:
        return int(self.target.shape[1])

    def exog_matrix(self, name: str) -> np.ndarray:
        v = self.exog[name]
        return np.broadcast_to(v, self.target.shape) if v.ndim == 1 else v


def _row_numbers(mask) -> str:
    rows = (np.flatnonzero(np.asarray(mask)) + 2).tolist()  # 1-based, after the header
    shown = ", ".join(map(str, rows[:10]))
    return shown + (" ..." if len(rows) > 10 else "")


def load_panel(panel_csv, meta_csv=None) -> PanelDataset:
    """Read a long ``series_id,date,target[,exog...]`` CSV.

    Missing days inside the overall date range are inserted with target 0
    and unknown exogenous values.
    """
    path = Path(panel_csv)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    df = pd.read_csv(path, dtype={"series_id": str})
    missing = {"series_id", "date", "target"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing column(s) {sorted(missing)}")
    dates = pd.to_datetime(df["date"], errors="coerce")
    if dates.isna().any():
        # the inferred format failed somewhere; parse those rows one by one
        bad = dates.isna()
        dates[bad] = pd.to_datetime(df.loc[bad, "date"], errors="coerce", format="mixed")
    if dates.isna().any():
        raise DataError(f"{path}: unparseable date on row(s) {_row_numbers(dates.isna())}")
    if (dates != dates.dt.normalize()).any():
        raise DataError(f"{path}: non-daily timestamp on row(s) {_row_numbers(dates != dates.dt.normalize())}")
    df["date"] = dates
    dup = df.duplicated(["series_id", "date"], keep="first")
    if dup.any():
        raise DataError(f"{path}: duplicate (series_id, date) on row(s) {_row_numbers(dup)}")
    target = pd.to_numeric(df["target"], errors="coerce")
    if target.isna().any():
        raise DataError(f"{path}: non-numeric target on row(s) {_row_numbers(target.isna())}")
    df["target"] = target
    series = np.array(pd.unique(df["series_id"]), dtype=object)
    grid = pd.date_range(dates.min(), dates.max(), freq="D")
    si = pd.Index(series).get_indexer(df["series_id"])
    ti = grid.get_indexer(df["date"])
    Y = np.zeros((series.size, grid.size))
    Y[si, ti] = df["target"].to_numpy(dtype=np.float64)
    exog = {}
    for col in df.columns:
        if col in ("series_id", "date", "target"):
            continue
        m = np.full((series.size, grid.size), np.nan)
        m[si, ti] = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=np.float64)
        exog[col] = m
    meta = None
    if meta_csv is not None:
        mpath = Path(meta_csv)
        if not mpath.exists():
            raise DataError(f"{mpath}: file not found")
        meta = pd.read_csv(mpath, dtype=str)
        if "series_id" not in meta.columns:
            raise DataError(f"{mpath}: missing column 'series_id'")
        if meta["series_id"].duplicated().any():
            raise DataError(f"{mpath}: duplicate series_id on row(s) {_row_numbers(meta['series_id'].duplicated())}")
        meta = meta.set_index("series_id")
        absent = [s for s in series if s not in meta.index]
        if absent:
            raise DataError(f"{mpath}: no metadata for series {absent[:5]}")
        meta = meta.loc[list(series)].reset_index()
    return PanelDataset(series, grid, Y, exog, meta)


def write_panel(p: PanelDataset, panel_csv, meta_csv=None) -> None:
    n, T = p.target.shape
    cols = {
        "series_id": np.repeat(p.series_ids.astype(str), T),
        "date": np.tile(p.dates.strftime("%Y-%m-%d"), n),
        "target": p.target.ravel(),
    }
    for k in p.exog:
        cols[k] = p.exog_matrix(k).ravel()
    pd.DataFrame(cols).to_csv(panel_csv, index=False)
    if meta_csv is not None:
        p.meta.to_csv(meta_csv, index=False)


def load_m5(directory, stores=None, max_series: int | None = None) -> PanelDataset:
    """Read the M5 ``sales_train_*.csv`` / ``calendar.csv`` / ``sell_prices.csv`` layout."""
    d = Path(directory)
    sales_files = sorted(d.glob("sales_train_*.csv"))
    if not sales_files:
        raise DataError(f"{d}: no sales_train_*.csv file")
    sales = pd.read_csv(sales_files[-1])
    if stores is not None:
        sales = sales[sales["store_id"].isin(list(stores))]
    if max_series is not None:
        sales = sales.iloc[:max_series]
    cal = pd.read_csv(d / "calendar.csv")
    prices = pd.read_csv(d / "sell_prices.csv")
    day_cols = [c for c in sales.columns if c.startswith("d_")]
    cal = cal.set_index("d").loc[day_cols]
    dates = pd.DatetimeIndex(pd.to_datetime(cal["date"]))
    Y = sales[day_cols].to_numpy(dtype=np.float64)
    ids = sales["id"].astype(str).to_numpy(dtype=object)
    exog = {}
    for s in ("snap_CA", "snap_TX", "snap_WI"):
        if s in cal.columns:
            exog[s] = cal[s].to_numpy(dtype=np.float64)
    for e in ("event_type_1", "event_type_2"):
        if e in cal.columns:
            exog[f"{e}_enc"] = ordinal_encode(cal[e])
    week_pos = pd.Index(pd.unique(cal["wm_yr_wk"]))
    wk = week_pos.get_indexer(cal["wm_yr_wk"])
    P = np.full((len(sales), week_pos.size), np.nan)
    key = pd.MultiIndex.from_frame(sales[["store_id", "item_id"]])
    pk = pd.MultiIndex.from_frame(prices[["store_id", "item_id"]])
    r = key.get_indexer(pk)
    c = week_pos.get_indexer(prices["wm_yr_wk"])
    ok = (r >= 0) & (c >= 0)
    P[r[ok], c[ok]] = prices["sell_price"].to_numpy(dtype=np.float64)[ok]
    exog["sell_price"] = P[:, wk]
    meta = sales[["id", "item_id", "dept_id", "cat_id", "store_id", "state_id"]].rename(columns={"id": "series_id"})
    return PanelDataset(ids, dates, Y, exog, meta.reset_index(drop=True))


def ordinal_encode(values) -> np.ndarray:
    """Integer codes in first-appearance order; missing stays 0, others start at 1."""
    s = pd.Series(values)
    codes = np.zeros(len(s))
    present = s.notna().to_numpy()
    uniq = pd.unique(s[present])
    codes[present] = pd.Index(uniq).get_indexer(s[present]) + 1
    return codes


def synthesize(n_series: int = 500, n_days: int = 730, n_stores: int = 5, n_depts: int = 5,
               zero_fraction: float = 0.4, seed: int = 0, start: str = "2019-01-01") -> PanelDataset:
    """Intermittent count demand with weekly seasonality and group-level shifts.

    Series are spread over ``n_stores`` stores, each with ``n_depts``
    departments. A series' mean combines a store effect, a department effect,
    a shared weekly profile and slowly drifting store and department levels.
    Zeros are injected per cell so the overall zero fraction is close to
    ``zero_fraction`` (exactly all zeros when it is 1).
    """
    if not 0.0 <= zero_fraction <= 1.0:
        raise ValueError("zero_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    dates = pd.date_range(start, periods=n_days, freq="D")
    store = np.arange(n_series) % n_stores
    dept = (np.arange(n_series) // n_stores) % n_depts
    t = np.arange(n_days)
    dow = dates.dayofweek.to_numpy()

    weekly = 1.0 + 0.35 * np.sin(2 * np.pi * (dow + rng.uniform(0, 7)) / 7)
    yearly = 1.0 + 0.15 * np.sin(2 * np.pi * t / 365.25 + rng.uniform(0, 2 * np.pi))

    def drift(k):
        # mean-reverting log level per group
        z = np.zeros((k, n_days))
        eps = rng.normal(0, 0.05, size=(k, n_days))
        for j in range(1, n_days):
            z[:, j] = 0.97 * z[:, j - 1] + eps[:, j]
        return np.exp(z)

    store_lvl = rng.lognormal(0, 0.3, n_stores)[:, None] * drift(n_stores)
    dept_lvl = rng.lognormal(0, 0.3, n_depts)[:, None] * drift(n_depts)
    item_lvl = rng.lognormal(0.5, 0.6, n_series)
    mu = item_lvl[:, None] * store_lvl[store] * dept_lvl[dept] * weekly[None, :] * yearly[None, :]

    price0 = np.round(rng.uniform(1, 20, n_series), 2)
    promo = rng.random((n_series, n_days)) < 0.03
    price = np.where(promo, price0[:, None] * 0.8, price0[:, None])
    mu = mu * np.where(promo, 1.5, 1.0)
    snap = np.asarray(dates.day <= 10, dtype=np.float64)
    mu = mu * (1.0 + 0.1 * snap)[None, :]

    # gamma-Poisson counts; their own zeros count toward the requested fraction
    shape = 2.0
    lam = rng.gamma(shape, mu / shape)
    counts = rng.poisson(lam).astype(np.float64)
    p0 = float(np.mean(counts == 0))
    if zero_fraction >= 1.0:
        counts[:] = 0.0
    elif zero_fraction > p0:
        q = (zero_fraction - p0) / (1.0 - p0)
        counts[rng.random(counts.shape) < q] = 0.0

    ids = np.array([f"s{i:04d}" for i in range(n_series)], dtype=object)
    meta = pd.DataFrame({
        "series_id": ids,
        "store": [f"store{s}" for s in store],
        "dept": [f"dept{d}" for d in dept],
    })
    exog = {"sell_price": price, "snap": snap}
    return PanelDataset(ids, pd.DatetimeIndex(dates), counts, exog, meta)
