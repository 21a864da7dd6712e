"""Summing matrices for cross-sectional and temporal hierarchies.

Rows of ``S`` are ordered top-down: one block per declared level (groups in
first-appearance order of the bottom keys), then the bottom identity block.
The total level is never implicit; declare it as a one-group level.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np
import pandas as pd

from .sparse import SparseMatrix, from_triplets, identity, row_sums

__all__ = [
    "LevelSpec",
    "Hierarchy",
    "build_cross_sectional",
    "build_temporal",
    "sample_random_hierarchy",
    "partition",
    "load_hierarchy_spec",
    "from_metadata",
]

BOTTOM = "bottom"


@dataclass(frozen=True)
class LevelSpec:
    """One aggregation level: every bottom key is mapped to a group id."""

    name: str
    group_of: Mapping[Hashable, Hashable]


@dataclass(frozen=True, eq=False)
class Hierarchy:
    S: SparseMatrix
    levels: tuple[tuple[str, int, int], ...]  # (name, first row, stop row)
    n_a: int
    n_b: int
    l: int
    d: np.ndarray
    labels: tuple = field(default=())  # (level name, group id) per row
    bottom_keys: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    def level_rows(self, name: str) -> slice:
        for lvl, start, stop in self.levels:
            if lvl == name:
                return slice(start, stop)
        raise KeyError(name)

    @property
    def level_names(self) -> list[str]:
        return [name for name, _, _ in self.levels]

    def aggregate(self, bottom):
        """``S @ bottom`` for a vector or a (n_b, k) matrix."""
        return self.S @ np.asarray(bottom, dtype=np.float64)

    @classmethod
    def trivial(cls, n_b: int, bottom_keys=None) -> "Hierarchy":
        keys = tuple(range(n_b)) if bottom_keys is None else tuple(bottom_keys)
        return _assemble([], keys)

    def check(self) -> None:
        """Raise AssertionError if any structural invariant is violated."""
        S = self.S
        assert S.n_rows == self.n and S.n_cols == self.n_b
        bottom = S.toarray()[self.n_a:]
        assert np.array_equal(bottom, np.eye(self.n_b)), "bottom block is not the identity"
        col = np.bincount(S.col_indices, weights=S.values, minlength=self.n_b)
        assert np.all(col == self.l), "column sums differ from the level count"
        assert np.array_equal(self.d, self.l * row_sums(S))
        assert np.all(self.d >= self.l)


def _assemble(level_groups, bottom_keys) -> Hierarchy:
    """level_groups: list of (name, group ids, code per bottom column)."""
    n_b = len(bottom_keys)
    rows, cols = [], []
    levels, labels = [], []
    offset = 0
    for name, groups, codes in level_groups:
        rows.append(offset + codes)
        cols.append(np.arange(n_b, dtype=np.int64))
        levels.append((name, offset, offset + len(groups)))
        labels.extend((name, g) for g in groups)
        offset += len(groups)
    n_a = offset
    rows.append(n_a + np.arange(n_b, dtype=np.int64))
    cols.append(np.arange(n_b, dtype=np.int64))
    levels.append((BOTTOM, n_a, n_a + n_b))
    labels.extend((BOTTOM, k) for k in bottom_keys)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    S = from_triplets(r, c, np.ones(r.size), (n_a + n_b, n_b))
    l = len(level_groups) + 1
    d = l * row_sums(S)
    return Hierarchy(S, tuple(levels), n_a, n_b, l, d, tuple(labels), tuple(bottom_keys))


def _codes(keys, mapping_fn, level_name):
    groups: dict = {}
    codes = np.empty(len(keys), dtype=np.int64)
    for i, k in enumerate(keys):
        g = mapping_fn(k, level_name)
        codes[i] = groups.setdefault(g, len(groups))
    return list(groups), codes


def build_cross_sectional(bottom_keys: Sequence[Hashable], level_specs: Sequence[LevelSpec]) -> Hierarchy:
    """Cross-sectional hierarchy with ``l = len(level_specs) + 1`` levels."""
    keys = list(bottom_keys)
    if len(set(keys)) != len(keys):
        raise ValueError("bottom keys must be unique")

    def lookup(k, spec):
        try:
            return spec.group_of[k]
        except KeyError:
            raise KeyError(f"bottom key {k!r} missing from level {spec.name!r}") from None

    level_groups = []
    for spec in level_specs:
        groups, codes = _codes(keys, lambda k, _: lookup(k, spec), spec.name)
        level_groups.append((spec.name, groups, codes))
    return _assemble(level_groups, keys)


_FREQ = {
    "day": lambda ts: ts.strftime("%Y-%m-%d"),
    "week": lambda ts: "%d-W%02d" % ts.isocalendar()[:2],
    "month": lambda ts: ts.strftime("%Y-%m"),
    "quarter": lambda ts: f"{ts.year}-Q{ts.quarter}",
    "year": lambda ts: str(ts.year),
    "all": lambda ts: "all",
}


def build_temporal(timestep_keys, frequencies: Sequence[str]) -> Hierarchy:
    """Temporal hierarchy over a dated sequence.

    Weeks are ISO weeks (Monday start). Partial buckets at the edges are kept,
    so every column still sums to ``l``.
    """
    dates = pd.DatetimeIndex(pd.to_datetime(list(timestep_keys)))
    if dates.has_duplicates:
        dup = dates[dates.duplicated()][0]
        raise ValueError(f"duplicate timestep {dup.date()}")
    if not dates.is_monotonic_increasing:
        raise ValueError("timesteps must be strictly increasing")
    level_groups = []
    for freq in frequencies:
        try:
            fn = _FREQ[freq]
        except KeyError:
            raise ValueError(f"unknown frequency {freq!r}; choose from {sorted(_FREQ)}") from None
        groups, codes = _codes(list(dates), lambda ts, _: fn(ts), freq)
        level_groups.append((freq, groups, codes))
    return _assemble(level_groups, [ts.strftime("%Y-%m-%d") for ts in dates])


def sample_random_hierarchy(n_b: int, max_levels: int = 10, max_categories: int = 100, rng_seed=None) -> Hierarchy:
    """Random cross-sectional hierarchy for the misspecification ablation.

    Draws a level count in ``1..max_levels`` and, per level, a category count
    in ``1..max_categories``; each bottom series gets a uniform category.
    Empty categories are dropped.
    """
    if max_levels < 1 or max_categories < 1:
        raise ValueError("max_levels and max_categories must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n_levels = int(rng.integers(1, max_levels + 1))
    level_groups = []
    for k in range(n_levels):
        n_cat = int(rng.integers(1, max_categories + 1))
        raw = rng.integers(0, n_cat, size=n_b)
        # relabel in first-appearance order; unused categories vanish
        groups, codes = _codes(list(raw), lambda g, _: int(g), f"random_{k}")
        level_groups.append((f"random_{k}", groups, codes))
    return _assemble(level_groups, list(range(n_b)))


def partition(h: Hierarchy) -> tuple[SparseMatrix, SparseMatrix, SparseMatrix]:
    """Split into ``C`` (aggregate rows), ``U`` (n x n_a, U^T = [I, -C]) and ``J = [0, I]``."""
    S = h.S
    n_a, n_b = h.n_a, h.n_b
    rows = S.row_indices()
    agg = rows < n_a
    C = from_triplets(rows[agg], S.col_indices[agg], S.values[agg], (n_a, n_b))
    # U stacks I_{n_a} on top of -C^T
    cu = np.arange(n_a)
    u_rows = np.concatenate([cu, n_a + S.col_indices[agg]])
    u_cols = np.concatenate([cu, rows[agg]])
    u_vals = np.concatenate([np.ones(n_a), -S.values[agg]])
    U = from_triplets(u_rows, u_cols, u_vals, (n_a + n_b, n_a))
    jb = np.arange(n_b)
    J = from_triplets(jb, n_a + jb, np.ones(n_b), (n_b, n_a + n_b))
    return C, U, J


def load_hierarchy_spec(path) -> dict:
    """Read ``{"levels": [{"name": ..., "column": ...}, ...]}``."""
    spec = json.loads(Path(path).read_text())
    if not isinstance(spec, dict) or not isinstance(spec.get("levels"), list):
        raise ValueError(f"{path}: expected an object with a 'levels' list")
    for lvl in spec["levels"]:
        if "name" not in lvl:
            raise ValueError(f"{path}: every level needs a 'name'")
    return spec


def from_metadata(meta: pd.DataFrame, spec: Mapping, key_column: str = "series_id") -> Hierarchy:
    """Resolve a hierarchy spec against series metadata.

    ``column`` may be a column name, a list of names (crossing), or absent /
    null for the one-group total level.
    """
    keys = list(meta[key_column])
    specs = []
    for lvl in spec["levels"]:
        col = lvl.get("column")
        if col is None:
            groups = ["total"] * len(keys)
        else:
            cols = [col] if isinstance(col, str) else list(col)
            missing = [c for c in cols if c not in meta.columns]
            if missing:
                raise KeyError(f"level {lvl['name']!r} refers to unknown metadata column(s) {missing}")
            if len(cols) == 1:
                groups = [str(v) for v in meta[cols[0]]]
            else:
                groups = ["/".join(str(v) for v in row) for row in meta[cols].itertuples(index=False)]
        specs.append(LevelSpec(lvl["name"], dict(zip(keys, groups))))
    return build_cross_sectional(keys, specs)
