"""Per-level RMSE / MAE reports with seed aggregation and relative columns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..hierarchy import Hierarchy

__all__ = ["ALL_SERIES", "EvalReport", "evaluate", "combine_reports"]

ALL_SERIES = "All series"


@dataclass(eq=False)
class EvalReport:
    """``table`` is indexed by level name (plus the pooled ``All series`` row)."""

    table: pd.DataFrame
    name: str = ""

    def rmse(self, level: str = ALL_SERIES) -> float:
        return float(self.table.loc[level, "rmse"])

    def mae(self, level: str = ALL_SERIES) -> float:
        return float(self.table.loc[level, "mae"])

    def relative_to(self, baseline: "EvalReport") -> "EvalReport":
        t = self.table.copy()
        b = baseline.table.reindex(t.index)
        for col in ("rmse", "mae"):
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = t[col] / b[col]
            # equal errors (including 0 vs 0) are exactly 1
            t[f"rel_{col}"] = np.where(t[col] == b[col], 1.0, rel)
        return EvalReport(t, self.name)

    def to_csv(self, path=None):
        return self.table.rename_axis("level").to_csv(path)

    def to_text(self) -> str:
        head = f"{self.name}\n" if self.name else ""
        return head + self.table.rename_axis("level").to_string(float_format=lambda v: f"{v:.4f}")

    @classmethod
    def from_csv(cls, path, name: str = "") -> "EvalReport":
        return cls(pd.read_csv(path).set_index("level").rename_axis(None), name)


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def evaluate(forecasts, actuals, h: Hierarchy, baseline: EvalReport | None = None, name: str = "") -> EvalReport:
    """Score forecasts at every level of ``h``.

    ``actuals`` are bottom-level (n_b, H). ``forecasts`` are either bottom
    level, in which case they are aggregated, or already cover all n rows
    (used as given, e.g. unreconciled base forecasts).
    """
    A = _as_2d(actuals)
    F = _as_2d(forecasts)
    if A.shape[0] != h.n_b:
        raise ValueError(f"actuals cover {A.shape[0]} series, hierarchy has {h.n_b} bottom series")
    if F.shape[0] == h.n_b:
        F = h.aggregate(F)
    elif F.shape[0] != h.n:
        raise ValueError(f"forecasts cover {F.shape[0]} series; expected {h.n_b} or {h.n}")
    if F.shape[1] != A.shape[1]:
        raise ValueError(f"forecast horizon {F.shape[1]} differs from actuals {A.shape[1]}")
    A = h.aggregate(A)
    E = F - A
    rows = []
    for name_, start, stop in h.levels:
        e = E[start:stop]
        rows.append((name_, stop - start, np.sqrt(np.mean(e * e)), np.mean(np.abs(e))))
    rows.append((ALL_SERIES, h.n, np.sqrt(np.mean(E * E)), np.mean(np.abs(E))))
    t = pd.DataFrame(rows, columns=["level", "n_series", "rmse", "mae"]).set_index("level").rename_axis(None)
    rep = EvalReport(t, name)
    return rep if baseline is None else rep.relative_to(baseline)


def combine_reports(reports, name: str = "") -> EvalReport:
    """Mean and standard deviation of rmse / mae over runs (e.g. seeds)."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to combine")
    idx = reports[0].table.index
    t = pd.DataFrame(index=idx)
    t["n_series"] = reports[0].table["n_series"]
    for col in ("rmse", "mae") + tuple(c for c in ("rel_rmse", "rel_mae") if c in reports[0].table):
        vals = np.column_stack([r.table.loc[idx, col].to_numpy() for r in reports])
        t[col] = vals.mean(axis=1)
        t[f"{col}_std"] = vals.std(axis=1, ddof=1) if len(reports) > 1 else 0.0
    t["n_runs"] = len(reports)
    return EvalReport(t, name)
