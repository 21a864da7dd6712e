"""Timing harness: hierarchical-loss gradient scaling, scenario and reconciliation costs."""
from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np
import pandas as pd

from .gbdt import TrainConfig
from .hierarchy import Hierarchy, _assemble, from_metadata
from .hloss import hloss_gradient, make_context
from .reconcile import METHODS, fit_erm, fit_reconciler, reconcile
from .sparse import to_dense

log = logging.getLogger(__name__)

GRADIENT_COLUMNS = ["n_b", "l", "n_te", "nnz", "sparse_s", "dense_s", "dense_direct_s", "speedup"]
SCENARIO_COLUMNS = ["scenario", "reconciliation", "train_s", "predict_s", "total_s"]
RECONCILE_COLUMNS = ["method", "n", "fit_s", "apply_s"]


def timeit(fn, repeats: int = 5, warmup: int = 1) -> float:
    """Median wall time over ``repeats`` calls after ``warmup`` untimed calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def bench_hierarchy(n_b: int, l: int = 12) -> Hierarchy:
    """Nested hierarchy with ``l`` levels (total first, bottom last).

    Aggregate level k >= 1 has ``n_b // 2**(l-1-k)`` contiguous groups, so the
    number of aggregate rows stays proportional to n_b.
    """
    levels = []
    for k in range(l - 1):
        g = 1 if k == 0 else max(1, n_b >> (l - 1 - k))
        codes = (np.arange(n_b) * g) // n_b
        levels.append((f"level{k}", list(range(g)), codes.astype(np.int64)))
    return _assemble(levels, list(range(n_b)))


def dense_operator_gradient(S_cs, S_te, d_cs, d_te, E):
    """Gradient via explicit dense smoothing operators ``S^T diag(1/d) S``.

    This is the textbook dense formulation: forming the n_b x n_b operator
    costs O(n_b^2 n) per call.
    """
    M_cs = (S_cs.T / d_cs) @ S_cs
    M_te = (S_te.T / d_te) @ S_te
    return M_cs @ E @ M_te.T


def dense_direct_gradient(S_cs, S_te, d_cs, d_te, E):
    R = S_cs @ E @ S_te.T
    return (S_cs.T / d_cs) @ R @ (S_te / d_te[:, None])


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def bench_gradient(sizes=(100, 300, 1000, 3000), l: int = 12, n_te: int = 28, repeats: int = 5,
                   warmup: int = 1, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    h_te = Hierarchy.trivial(n_te)
    rows = []
    for n_b in sizes:
        h = bench_hierarchy(n_b, l)
        ctx = make_context(h, h_te)
        Y = rng.random((n_b, n_te))
        Yhat = rng.random((n_b, n_te))
        sparse_s = timeit(lambda: hloss_gradient(ctx, Yhat, Y), repeats, warmup)
        S_cs, S_te = to_dense(h.S), to_dense(h_te.S)
        E = Yhat - Y
        dense_s = timeit(lambda: dense_operator_gradient(S_cs, S_te, h.d, h_te.d, E), repeats, warmup)
        direct_s = timeit(lambda: dense_direct_gradient(S_cs, S_te, h.d, h_te.d, E), repeats, warmup)
        rows.append((n_b, l, n_te, h.S.nnz, sparse_s, dense_s, direct_s, dense_s / sparse_s))
        log.info("n_b=%d sparse=%.4gs dense=%.4gs direct=%.4gs", n_b, sparse_s, dense_s, direct_s)
    return pd.DataFrame(rows, columns=GRADIENT_COLUMNS)


def gradient_slopes(df: pd.DataFrame) -> dict:
    return {
        "sparse": loglog_slope(df["n_b"], df["sparse_s"]),
        "dense": loglog_slope(df["n_b"], df["dense_s"]),
        "dense_direct": loglog_slope(df["n_b"], df["dense_direct_s"]),
    }


def bench_scenarios(panel, h, train: TrainConfig, reconciliation: str = "mint_shrink", horizon: int = 28,
                    train_days: int | None = 364, seed: int = 0) -> pd.DataFrame:
    from .pipeline import ScenarioConfig, scenario_run

    rows = []
    for scenario in ("bottom_up", "separate_aggregations", "global"):
        rec = "base" if scenario == "bottom_up" else reconciliation
        cfg = ScenarioConfig(scenario, "sl", "sl", rec, horizon, train_days, train=replace(train))
        r = scenario_run(panel, h, cfg, seed)
        tr, pr = r.timings["train"], r.timings["predict"]
        rows.append((scenario, rec, tr, pr, tr + pr))
    return pd.DataFrame(rows, columns=SCENARIO_COLUMNS)


def bench_reconcile(h: Hierarchy, T: int = 200, repeats: int = 5, warmup: int = 1, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    bottom = rng.gamma(2.0, 2.0, size=(h.n_b, T))
    Y = h.aggregate(bottom)
    Yhat = Y + rng.normal(0, 1, size=Y.shape)
    y_new = Yhat[:, -1]
    rows = []
    for method in METHODS:
        if method == "erm":
            fit_fn = lambda: fit_erm(h, Y, Yhat)  # noqa: E731
        else:
            fit_fn = lambda m=method: fit_reconciler(m, h, Yhat - Y)  # noqa: E731
        r = fit_fn()
        rows.append((method, h.n, timeit(fit_fn, repeats, warmup), timeit(lambda: reconcile(r, y_new), repeats, warmup)))
    return pd.DataFrame(rows, columns=RECONCILE_COLUMNS)


def plot_gradient(df: pd.DataFrame, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for col, label in (("sparse_s", "sparse"), ("dense_s", "dense operator"), ("dense_direct_s", "dense direct")):
        ax.loglog(df["n_b"], df[col], "o-", label=label)
    ax.set_xlabel("bottom-level series n_b")
    ax.set_ylabel("gradient wall time [s]")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def synthetic_case(n_series: int = 200, n_days: int = 600, seed: int = 0):
    """Small synthetic panel with a total / store / store-department hierarchy."""
    from .pipeline import synthesize

    p = synthesize(n_series, n_days, seed=seed)
    spec = {"levels": [{"name": "total"}, {"name": "store", "column": "store"},
                       {"name": "dept", "column": ["store", "dept"]}]}
    return p, from_metadata(p.meta, spec)
