"""End-to-end experiment runs: train, forecast, reconcile, evaluate.

Three training scenarios are supported:

``bottom_up``
    one model on the bottom series; aggregates are sums of its forecasts.
``separate_aggregations``
    one model per hierarchy level, followed by reconciliation.
``global``
    one model on every series of every level, followed by reconciliation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..gbdt import Booster, TrainConfig, bin_features, fit
from ..hierarchy import Hierarchy, build_temporal
from ..hloss import RandomHierarchyLoss, make_context, make_metric, make_objective
from ..reconcile import METHODS, fit_erm, fit_reconciler, reconcile
from .data import PanelDataset
from .evaluate import EvalReport, combine_reports, evaluate
from .features import SeriesBlock, features_at, series_block
from .forecast import recursive_forecast

__all__ = ["SCENARIOS", "ScenarioConfig", "ScenarioResult", "Split", "check_combination", "make_split",
           "scenario_run", "run_seeds", "train_block", "coherence_error"]

SCENARIOS = ("bottom_up", "separate_aggregations", "global")
OBJECTIVES = ("sl", "tl", "hl")


@dataclass
class ScenarioConfig:
    scenario: str = "bottom_up"
    objective: str = "sl"
    metric: str = "sl"
    reconciliation: str = "base"
    horizon: int = 28
    train_days: int | None = 364
    temporal: tuple = ()
    random_hierarchy: bool = False
    max_levels_random: int = 10
    max_categories: int = 100
    hier_freq: int | None = 1
    rho: float = 1.5
    train: TrainConfig = field(default_factory=TrainConfig)


GRID_HELP = (
    "valid combinations: bottom_up with objective/metric in {sl, tl, hl} and no reconciliation; "
    "separate_aggregations or global with objective/metric in {sl, tl} and any reconciliation method"
)


def check_combination(scenario: str, objective: str, metric: str, reconciliation: str) -> None:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; {GRID_HELP}")
    for kind, v in (("objective", objective), ("metric", metric)):
        if v not in OBJECTIVES:
            raise ValueError(f"unknown {kind} {v!r}; {GRID_HELP}")
    if reconciliation not in METHODS:
        raise ValueError(f"unknown reconciliation {reconciliation!r}; choose from {METHODS}")
    if scenario == "bottom_up":
        if reconciliation not in ("base", "bottom_up"):
            raise ValueError(f"bottom_up forecasts are coherent by construction; {GRID_HELP}")
    elif "hl" in (objective, metric):
        raise ValueError(f"the hierarchical loss is only used in the bottom_up scenario; {GRID_HELP}")


@dataclass(frozen=True)
class Split:
    """Day ranges: train rows [train_start, valid_start), validation [valid_start, test_start),
    test [test_start, test_start + horizon)."""

    train_start: int
    valid_start: int
    test_start: int
    horizon: int

    @property
    def train_days(self) -> np.ndarray:
        return np.arange(self.train_start, self.valid_start)

    @property
    def valid_days(self) -> np.ndarray:
        return np.arange(self.valid_start, self.test_start)

    @property
    def test_days(self) -> np.ndarray:
        return np.arange(self.test_start, self.test_start + self.horizon)


def make_split(n_days: int, horizon: int = 28, train_days: int | None = None) -> Split:
    """Last ``horizon`` days for test, the ``horizon`` before them for validation."""
    test_start = n_days - horizon
    valid_start = test_start - horizon
    train_start = 0 if train_days is None else max(0, valid_start - train_days)
    if horizon < 1 or valid_start - train_start < 1:
        raise ValueError(f"{n_days} days are too few for horizon {horizon}")
    return Split(train_start, valid_start, test_start, horizon)


@dataclass(eq=False)
class ScenarioResult:
    report: EvalReport
    forecasts: np.ndarray  # (n, horizon), rows in hierarchy order
    base_forecasts: np.ndarray | None
    boosters: list
    timings: dict
    coherence: float
    config: ScenarioConfig
    seed: int
    reconciler: object = None


def coherence_error(h: Hierarchy, full) -> float:
    """Largest absolute gap between an aggregate row and the sum of its bottom rows."""
    full = np.asarray(full, dtype=np.float64)
    return float(np.max(np.abs(h.aggregate(full[h.n_a:]) - full))) if full.size else 0.0


def _hl_parts(cfg: ScenarioConfig, h: Hierarchy, dates, train_days, valid_days, seed):
    def h_te(days):
        if cfg.temporal:
            return build_temporal(dates[days], list(cfg.temporal))
        return Hierarchy.trivial(days.size)

    obj = met = None
    if cfg.objective == "hl":
        te = h_te(train_days)
        if cfg.random_hierarchy:
            obj = RandomHierarchyLoss(te, h.n_b, None, seed, cfg.max_levels_random, cfg.max_categories,
                                      cfg.hier_freq)
        else:
            obj = make_objective("hl", make_context(h, te))
    if cfg.metric == "hl":
        met = make_metric("hl", make_context(h, h_te(valid_days)))
    return obj, met


def train_block(block: SeriesBlock, split: Split, train_cfg: TrainConfig, objective, metric,
                max_bins: int = 255) -> tuple[Booster, np.ndarray]:
    """Fit one booster on a series block; returns it with in-sample predictions (m, n_train_days)."""
    tr, va = split.train_days, split.valid_days
    names = block.feature_names
    train = bin_features(features_at(block, block.Y, tr), max_bins, targets=block.Y[:, tr].ravel(),
                         feature_names=names)
    valid = bin_features(features_at(block, block.Y, va), targets=block.Y[:, va].ravel(), reference=train)
    b = fit(train, objective, metric, train_cfg, valid=valid)
    return b, b.predict(train).reshape(block.n_series, tr.size)


def scenario_run(p: PanelDataset, h: Hierarchy, cfg: ScenarioConfig, seed: int = 0,
                 baseline: EvalReport | None = None) -> ScenarioResult:
    check_combination(cfg.scenario, cfg.objective, cfg.metric, cfg.reconciliation)
    if h.n_b != p.n_series:
        raise ValueError(f"hierarchy has {h.n_b} bottom series, panel has {p.n_series}")
    split = make_split(p.n_days, cfg.horizon, cfg.train_days)
    tcfg = replace(cfg.train, rng_seed=seed)
    t0 = time.perf_counter()
    boosters = []
    base = None
    reconciler = None

    if cfg.scenario == "bottom_up":
        block = series_block(p)
        obj, met = _hl_parts(cfg, h, p.dates, split.train_days, split.valid_days, seed)
        obj = obj or make_objective(cfg.objective, rho=cfg.rho)
        met = met or make_metric(cfg.metric, rho=cfg.rho)
        b, _ = train_block(block, split, tcfg, obj, met)
        boosters.append(b)
        t1 = time.perf_counter()
        bottom = recursive_forecast(b, block, split.test_start, split.horizon)
        full = h.aggregate(bottom)
    else:
        obj = make_objective(cfg.objective, rho=cfg.rho)
        met = make_metric(cfg.metric, rho=cfg.rho)
        groups = [[name] for name in h.level_names] if cfg.scenario == "separate_aggregations" else [None]
        blocks, fitted = [], []
        for levels in groups:
            block = series_block(p, h, levels)
            b, insample = train_block(block, split, tcfg, obj, met)
            boosters.append(b)
            blocks.append(block)
            fitted.append(insample)
        Yhat_in = np.vstack(fitted)
        Y_in = h.aggregate(p.target[:, split.train_days])
        if cfg.reconciliation == "erm":
            reconciler = fit_erm(h, Y_in, Yhat_in)
        else:
            reconciler = fit_reconciler(cfg.reconciliation, h, Yhat_in - Y_in)
        t1 = time.perf_counter()
        base = np.vstack([recursive_forecast(b, blk, split.test_start, split.horizon)
                          for b, blk in zip(boosters, blocks)])
        full = reconcile(reconciler, base)
    t2 = time.perf_counter()

    actual = p.target[:, split.test_days]
    name = f"{cfg.scenario} {cfg.objective}/{cfg.metric}"
    if cfg.scenario != "bottom_up":
        name += f" {cfg.reconciliation}"
    report = evaluate(full, actual, h, baseline, name=name)
    return ScenarioResult(report, full, base, boosters, {"train": t1 - t0, "predict": t2 - t1},
                          coherence_error(h, full), cfg, seed, reconciler)


def run_seeds(p: PanelDataset, h: Hierarchy, cfg: ScenarioConfig, seeds=range(10),
              baseline: EvalReport | None = None) -> tuple[EvalReport, list[ScenarioResult]]:
    results = [scenario_run(p, h, cfg, s, baseline) for s in seeds]
    return combine_reports([r.report for r in results], results[0].report.name), results
