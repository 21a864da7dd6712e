"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line before asserting.
"""
import json
import time
import warnings

import numpy as np
import pytest

from sparsehl.bench import synthetic_case
from sparsehl.cli import main as cli_main
from sparsehl.gbdt import TrainConfig, bin_features, fit
from sparsehl.hierarchy import Hierarchy, LevelSpec, build_cross_sectional, partition, sample_random_hierarchy
from sparsehl.hloss import (
    HierarchicalLoss,
    SquaredError,
    dense_reference,
    hloss_gradient,
    hloss_objective,
    hloss_value,
    make_context,
    squared_error_objective,
)
from sparsehl.pipeline import ScenarioConfig, evaluate, features_at, scenario_run, series_block
from sparsehl.reconcile import fit_erm, fit_mint, fit_reconciler
from sparsehl.sparse import from_triplets, sparsity, to_dense


def emit(capsys, n, ok, detail=""):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())


def toy_h():
    return build_cross_sectional([0, 1], [LevelSpec("total", {0: "T", 1: "T"})])


def random_ctx(rng, max_b=8):
    h_cs = sample_random_hierarchy(int(rng.integers(1, max_b + 1)), 3, 4, rng_seed=rng)
    h_te = sample_random_hierarchy(int(rng.integers(1, max_b + 1)), 3, 4, rng_seed=rng)
    return make_context(h_cs, h_te)


def test_criterion_1_toy_exactness(capsys):
    t0 = time.perf_counter()
    ctx = make_context(toy_h(), toy_h())
    E = np.array([[1.0, 0.0], [0.0, 0.0]])
    g = hloss_gradient(ctx, E, np.zeros((2, 2)))
    coef_ok = np.array_equal(g, [[9 / 16, 3 / 16], [3 / 16, 1 / 16]])
    D = np.outer(toy_h().d, toy_h().d)
    den_ok = np.array_equal(D, [[16, 8, 8], [8, 4, 4], [8, 4, 4]])
    elapsed = time.perf_counter() - t0
    ok = coef_ok and den_ok and elapsed < 1.0
    emit(capsys, 1, ok, f"coefficients={g.ravel().tolist()} denominator_ok={den_ok} {elapsed:.3f}s")
    assert ok


def test_criterion_2_gradient_correctness(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_g = worst_h = 0.0
    eps1, eps2 = 1e-5, 1e-3
    for _ in range(100):
        ctx = random_ctx(rng)
        Yh, Y = rng.normal(size=ctx.shape), rng.normal(size=ctx.shape)
        g = hloss_gradient(ctx, Yh, Y)
        L0 = hloss_value(ctx, Yh, Y)
        for idx in np.ndindex(*Yh.shape):
            p, m = Yh.copy(), Yh.copy()
            p[idx] += eps1
            m[idx] -= eps1
            fd = (hloss_value(ctx, p, Y) - hloss_value(ctx, m, Y)) / (2 * eps1)
            worst_g = max(worst_g, abs(fd - g[idx]) / max(abs(g[idx]), 1e-3))
            p[idx] += eps2 - eps1
            m[idx] -= eps2 - eps1
            sd = (hloss_value(ctx, p, Y) - 2 * L0 + hloss_value(ctx, m, Y)) / eps2**2
            worst_h = max(worst_h, abs(sd - ctx.hess[idx]) / ctx.hess[idx])
    elapsed = time.perf_counter() - t0
    ok = worst_g < 1e-6 and worst_h < 1e-5 and elapsed < 10
    emit(capsys, 2, ok, f"max rel grad err={worst_g:.2e} max rel 2nd-diff err={worst_h:.2e} {elapsed:.2f}s")
    assert ok


def test_criterion_3_dense_sparse_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        ctx = random_ctx(rng)
        Yh, Y = rng.normal(size=ctx.shape), rng.normal(size=ctx.shape)
        loss, grad, hess = dense_reference(to_dense(ctx.h_cs.S), to_dense(ctx.h_te.S), ctx.h_cs.d, ctx.h_te.d,
                                           Yh, Y)
        worst = max(worst,
                    abs(hloss_value(ctx, Yh, Y) - loss) / max(abs(loss), 1.0),
                    float(np.max(np.abs(hloss_gradient(ctx, Yh, Y) - grad))),
                    float(np.max(np.abs(ctx.hess - hess))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    emit(capsys, 3, ok, f"max deviation={worst:.2e} {elapsed:.2f}s")
    assert ok


def test_criterion_4_degeneracy(capsys):
    rng = np.random.default_rng(4)
    n_r, n_c = 25, 40
    ctx = make_context(Hierarchy.trivial(n_r), Hierarchy.trivial(n_c))
    p, y = rng.normal(size=n_r * n_c), rng.normal(size=n_r * n_c)
    a, b = hloss_objective(ctx, p, y), squared_error_objective(p, y)
    gh_ok = np.array_equal(a.grad, b.grad) and np.array_equal(a.hess, b.hess)
    X = rng.normal(size=(n_r * n_c, 6))
    d = bin_features(X, targets=X[:, 0] * 2 + rng.normal(size=n_r * n_c))
    cfg = TrainConfig(n_estimators=40, learning_rate=0.1, num_leaves=15, min_child_samples=5, bagging_fraction=0.8,
                      feature_fraction=0.8, early_stopping_rounds=None, rng_seed=11)
    m_hl = fit(d, HierarchicalLoss(ctx), config=cfg).to_dict()
    m_sl = fit(d, SquaredError(), config=cfg).to_dict()
    model_ok = m_hl["trees"] == m_sl["trees"] and m_hl["base_score"] == m_sl["base_score"]
    ok = gh_ok and model_ok
    emit(capsys, 4, ok, f"grad/hess identical={gh_ok} boosters identical={model_ok}")
    assert ok


def test_criterion_5_coherence(capsys):
    rng = np.random.default_rng(5)
    worst_c = worst_i = 0.0
    for _ in range(50):
        h = sample_random_hierarchy(int(rng.integers(2, 31)), 4, 6, rng_seed=rng)
        S = to_dense(h.S)
        Ut = to_dense(partition(h)[1]).T
        R = rng.normal(size=(h.n, 40)) * rng.uniform(0.5, 2.0, size=(h.n, 1))
        Y = S @ rng.poisson(3.0, size=(h.n_b, 60))
        Yhat = Y + rng.normal(size=Y.shape)
        recs = [fit_reconciler(m, h, R) for m in ("ols", "wls_struct", "wls_var", "mint_shrink", "bottom_up")]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            recs.append(fit_erm(h, Y, Yhat))
        for r in recs:
            SG = S @ r.dense_G()
            worst_c = max(worst_c, float(np.max(np.abs(Ut @ SG))))
            if r.method != "erm":
                worst_i = max(worst_i, float(np.max(np.abs(SG @ SG - SG))))
    ok = worst_c <= 1e-8 and worst_i <= 1e-8
    emit(capsys, 5, ok, f"max |U^T S G|={worst_c:.2e} max idempotence gap={worst_i:.2e}")
    assert ok


def test_criterion_6_closed_form_oracle(capsys):
    G = fit_reconciler("ols", toy_h()).dense_G()
    ols_ok = np.max(np.abs(G - np.array([[1 / 3, 2 / 3, -1 / 3], [1 / 3, -1 / 3, 2 / 3]]))) <= 1e-12
    rng = np.random.default_rng(6)
    mint_gap = erm_gap = 0.0
    for _ in range(20):
        h = sample_random_hierarchy(int(rng.integers(2, 7)), 3, 3, rng_seed=rng)
        if h.n > 12:
            continue
        mint_gap = max(mint_gap, float(np.max(np.abs(fit_mint(h, np.eye(h.n)) - fit_reconciler("ols", h).dense_G()))))
        S = to_dense(h.S)
        T = int(rng.integers(3, 2 * h.n))
        Y = S @ rng.normal(size=(h.n_b, T))
        Yhat = Y + rng.normal(scale=0.5, size=Y.shape)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            P = fit_erm(h, Y, Yhat).dense_G()
        brute = (np.linalg.pinv(np.kron(Yhat.T, S)) @ Y.reshape(-1, order="F")).reshape(h.n_b, h.n, order="F")
        erm_gap = max(erm_gap, float(np.max(np.abs(P - brute))))
    ok = ols_ok and mint_gap <= 1e-12 and erm_gap <= 1e-8
    emit(capsys, 6, ok, f"ols_toy_ok={ols_ok} mint(W=I)-ols={mint_gap:.1e} erm-brute={erm_gap:.1e}")
    assert ok


def test_criterion_7_sparsity(capsys):
    n_b, l, n = 3049, 12, 42840
    # l - 1 aggregate entries per column on distinct rows, plus the identity block
    rows = np.concatenate([(k * 3001 + np.arange(n_b)) % (n - n_b) for k in range(l - 1)]
                          + [n - n_b + np.arange(n_b)])
    cols = np.tile(np.arange(n_b), l)
    S = from_triplets(rows, cols, np.ones(rows.size), (n, n_b))
    s = sparsity(S)
    ok = S.nnz == n_b * l and abs(s - 0.9997) <= 1e-4
    emit(capsys, 7, ok, f"sparsity={s:.6f} nnz={S.nnz}")
    assert ok


@pytest.mark.slow
def test_criterion_8_scaling_shape(capsys, tmp_path):
    t0 = time.perf_counter()
    rc = cli_main(["bench", "--sizes", "100", "300", "1000", "3000", "--levels", "12", "--skip-scenarios",
                   "--no-plots", "--repeats", "3", "--out-dir", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    slopes = json.loads((tmp_path / "bench_slopes.json").read_text())
    import pandas as pd

    df = pd.read_csv(tmp_path / "bench_gradient.csv")
    speedup = float(df.loc[df["n_b"] == 3000, "speedup"].iloc[0])
    ok = (rc == 0 and slopes["sparse"] <= 2.3 and slopes["dense"] > slopes["sparse"] and slopes["dense"] > 2.3
          and speedup >= 2.0 and elapsed < 300)
    emit(capsys, 8, ok, f"slopes sparse={slopes['sparse']:.2f} dense={slopes['dense']:.2f} "
                        f"speedup@3000={speedup:.0f}x {elapsed:.1f}s")
    assert ok


DESK_TRAIN = TrainConfig(n_estimators=500, learning_rate=0.1, num_leaves=31, min_child_samples=20,
                         feature_fraction=0.8, bagging_fraction=0.8, early_stopping_rounds=50)


def aggregate_rmse(report, h):
    return float(np.mean([report.rmse(name) for name in h.level_names[:-1]]))


@pytest.mark.slow
def test_criterion_9_desk_scale_direction(capsys):
    t0 = time.perf_counter()
    p, h = synthetic_case(500, 730, seed=0)
    zeros = float(np.mean(p.target == 0))
    seeds = range(10)
    base = dict(horizon=28, train_days=364, train=DESK_TRAIN)
    runs = {
        "sl": ScenarioConfig("bottom_up", "sl", "sl", "base", **base),
        "hl": ScenarioConfig("bottom_up", "hl", "hl", "base", **base),
        "sep": ScenarioConfig("separate_aggregations", "sl", "sl", "mint_shrink", **base),
    }
    rmse = {k: [] for k in runs}
    wall = {k: [] for k in runs}
    for s in seeds:
        for k, cfg in runs.items():
            r = scenario_run(p, h, cfg, seed=s)
            rmse[k].append(aggregate_rmse(r.report, h))
            wall[k].append(r.timings["train"] + r.timings["predict"])
    elapsed = time.perf_counter() - t0
    m = {k: float(np.mean(v)) for k, v in rmse.items()}
    t = {k: float(np.mean(v)) for k, v in wall.items()}
    ratio = t["sep"] / t["sl"]
    acc_ok = m["hl"] <= m["sl"]
    time_ok = ratio >= 5.0
    ok = acc_ok and time_ok and elapsed < 900
    emit(capsys, 9, ok,
         f"zeros={zeros:.2f} levels={h.level_names} agg RMSE hl/hl={m['hl']:.2f} sl/sl={m['sl']:.2f} "
         f"[{'ok' if acc_ok else 'worse'}]; wall bottom-up={t['sl']:.2f}s hl={t['hl']:.2f}s "
         f"sep+mint_shrink={t['sep']:.2f}s ratio={ratio:.2f}x [{'ok' if time_ok else 'below 5x'}] "
         f"{elapsed:.0f}s")
    assert acc_ok, "HL/HL did not match or beat SL/SL on aggregate RMSE"
    assert time_ok, f"bottom-up is only {ratio:.2f}x faster than separate aggregations + MinT-shrink"
    assert elapsed < 900


def test_criterion_10_pipeline_integrity(capsys):
    rng = np.random.default_rng(10)
    p, h = synthetic_case(40, 400, seed=10)
    block = series_block(p)
    leak_ok = True
    for day in rng.integers(1, 400, size=50):
        Y2 = block.Y.copy()
        Y2[:, day:] += rng.normal(scale=100.0, size=(block.n_series, 400 - day))
        leak_ok &= np.array_equal(features_at(block, block.Y, [day]), features_at(block, Y2, [day]),
                                  equal_nan=True)
    full = series_block(p, h)
    agg_ok = np.array_equal(full.Y, h.aggregate(p.target))
    rep = evaluate(full.Y[:, -7:], p.target[:, -7:], h)
    agg_ok &= rep.rmse() == 0.0
    train = TrainConfig(n_estimators=30, learning_rate=0.1, num_leaves=8, bagging_fraction=0.7, feature_fraction=0.8)
    cfg = ScenarioConfig(horizon=14, train_days=120, train=train)
    a, b = scenario_run(p, h, cfg, seed=3), scenario_run(p, h, cfg, seed=3)
    det_ok = a.boosters[0].to_json() == b.boosters[0].to_json() and np.array_equal(a.forecasts, b.forecasts)
    ok = bool(leak_ok and agg_ok and det_ok)
    emit(capsys, 10, ok, f"no_leakage={bool(leak_ok)} aggregate_consistency={bool(agg_ok)} deterministic={det_ok}")
    assert ok
