"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .gbdt import Booster, TrainConfig
from .hierarchy import Hierarchy, from_metadata, load_hierarchy_spec
from .reconcile import METHODS, NumericalError, Reconciler, fit_reconciler, reconcile
from .sparse import write_matrix_market

log = logging.getLogger("sparsehl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_run(out: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    cfg = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func",)}
    payload = {"command": command, "version": _version(), "config": cfg}
    if extra:
        payload.update(extra)
    (out / "run.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


# -- shared helpers -----------------------------------------------------------


def row_labels(h: Hierarchy) -> list[str]:
    """Bottom rows keep their series id; aggregate rows are ``level/group``."""
    return [str(g) if lvl == "bottom" else f"{lvl}/{g}" for lvl, g in h.labels]


def _require_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _load_panel_and_hierarchy(args):
    from .pipeline import load_panel

    spec = load_hierarchy_spec(_require_file(args.hierarchy, "hierarchy"))
    p = load_panel(_require_file(args.data, "data"), args.meta)
    try:
        h = from_metadata(p.meta, spec)
    except KeyError as e:
        from .pipeline import DataError

        raise DataError(str(e).strip("'\"")) from None
    return p, h


def _train_config(args) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    kw = {k: v for k, v in vars(args).items() if k in names and v is not None}
    kw.setdefault("rng_seed", args.seed)
    return TrainConfig(**kw)


def _forecast_frame(labels, F, dates) -> pd.DataFrame:
    n, H = F.shape
    return pd.DataFrame({
        "series_id": np.repeat(np.asarray(labels, dtype=object), H),
        "step": np.tile(np.arange(1, H + 1), n),
        "date": np.tile(pd.DatetimeIndex(dates).strftime("%Y-%m-%d"), n),
        "value": F.ravel(),
    })


def _read_forecasts(path) -> tuple[list, np.ndarray, pd.DatetimeIndex]:
    from .pipeline import DataError

    df = pd.read_csv(_require_file(path, "forecasts"), dtype={"series_id": str})
    missing = {"series_id", "step", "value"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing column(s) {sorted(missing)}")
    wide = df.pivot(index="series_id", columns="step", values="value")
    order = list(pd.unique(df["series_id"]))
    wide = wide.loc[order]
    if wide.isna().any().any():
        raise DataError(f"{path}: forecasts do not cover every (series_id, step)")
    dates = None
    if "date" in df.columns:
        dates = pd.DatetimeIndex(pd.to_datetime(df.drop_duplicates("step").sort_values("step")["date"]))
    return order, wide.to_numpy(dtype=np.float64), dates


def _align(h: Hierarchy, labels, F):
    """Order forecast rows like the hierarchy (bottom-only or full)."""
    from .pipeline import DataError

    all_labels = row_labels(h)
    bottom = all_labels[h.n_a:]
    pos = {lab: i for i, lab in enumerate(labels)}
    if set(labels) == set(bottom):
        return F[[pos[k] for k in bottom]], "bottom"
    if set(labels) == set(all_labels):
        return F[[pos[k] for k in all_labels]], "full"
    absent = [k for k in bottom if k not in pos][:5]
    raise DataError(f"forecasts do not match the hierarchy (e.g. missing {absent})")


# -- commands -----------------------------------------------------------------


def cmd_synth(args, out: Path):
    from .pipeline import synthesize, write_panel

    p = synthesize(args.n_series, args.n_days, args.n_stores, args.n_depts, args.zero_fraction, args.seed,
                   args.start)
    write_panel(p, out / "panel.csv", out / "meta.csv")
    spec = {"levels": [{"name": "total"}, {"name": "store", "column": "store"},
                       {"name": "dept", "column": ["store", "dept"]}]}
    (out / "hierarchy.json").write_text(json.dumps(spec, indent=2))
    print(f"wrote {p.n_series} series x {p.n_days} days, zero fraction {np.mean(p.target == 0):.3f}")
    return {"zero_fraction_observed": float(np.mean(p.target == 0))}


def cmd_build_hierarchy(args, out: Path):
    from .pipeline import DataError

    spec = load_hierarchy_spec(_require_file(args.hierarchy, "hierarchy"))
    meta = pd.read_csv(_require_file(args.meta, "meta"), dtype=str)
    if "series_id" not in meta.columns:
        raise DataError(f"{args.meta}: missing column 'series_id'")
    try:
        h = from_metadata(meta, spec)
    except KeyError as e:
        raise DataError(str(e).strip("'\"")) from None
    h.check()
    write_matrix_market(h.S, out / "S.mtx")
    pd.DataFrame({"row": np.arange(h.n), "label": row_labels(h), "d": h.d}).to_csv(out / "rows.csv", index=False)
    levels = pd.DataFrame(h.levels, columns=["level", "start", "stop"])
    levels.to_csv(out / "levels.csv", index=False)
    print(f"n={h.n} n_a={h.n_a} n_b={h.n_b} l={h.l} nnz={h.S.nnz}")
    return {"n": h.n, "n_a": h.n_a, "n_b": h.n_b, "l": h.l}


def cmd_train(args, out: Path):
    from .pipeline import Split, check_combination, series_block, train_block
    from .pipeline.scenario import ScenarioConfig, _hl_parts
    from .hloss import make_metric, make_objective
    from .reconcile import fit_erm

    scenario = args.scenario.replace("-", "_")
    rec = args.reconciliation.replace("-", "_")
    try:
        check_combination(scenario, args.objective, args.metric, rec)
    except ValueError as e:
        raise UsageError(str(e)) from None
    p, h = _load_panel_and_hierarchy(args)
    tcfg = _train_config(args)
    H = args.horizon
    T = p.n_days
    valid_start = T - H
    train_start = 0 if args.train_days is None else max(0, valid_start - args.train_days)
    if valid_start - train_start < 1:
        from .pipeline import DataError

        raise DataError(f"{T} days are too few for horizon {H}")
    split = Split(train_start, valid_start, T, H)
    manifest = {"scenario": scenario, "objective": args.objective, "metric": args.metric, "models": []}
    log_rows = []
    if scenario == "bottom_up":
        cfg = ScenarioConfig(scenario, args.objective, args.metric, "base", H, args.train_days,
                             tuple(args.temporal or ()), args.random_hierarchy, train=tcfg)
        obj, met = _hl_parts(cfg, h, p.dates, split.train_days, split.valid_days, args.seed)
        obj = obj or make_objective(args.objective)
        met = met or make_metric(args.metric)
        b, _ = train_block(series_block(p), split, tcfg, obj, met)
        b.save(out / "model.json")
        manifest["models"].append({"levels": None, "path": "model.json", "bottom_only": True})
        log_rows += [("model.json", i + 1, v) for i, v in enumerate(b.history["valid"])]
    else:
        obj, met = make_objective(args.objective), make_metric(args.metric)
        groups = [[n] for n in h.level_names] if scenario == "separate_aggregations" else [None]
        fitted = []
        for levels in groups:
            b, insample = train_block(series_block(p, h, levels), split, tcfg, obj, met)
            name = f"model_{levels[0]}.json" if levels else "model_global.json"
            b.save(out / name)
            manifest["models"].append({"levels": levels, "path": name, "bottom_only": False})
            log_rows += [(name, i + 1, v) for i, v in enumerate(b.history["valid"])]
            fitted.append(insample)
        Yhat_in = np.vstack(fitted)
        Y_in = h.aggregate(p.target[:, split.train_days])
        r = fit_erm(h, Y_in, Yhat_in) if rec == "erm" else fit_reconciler(rec, h, Yhat_in - Y_in)
        r.save(out / "reconciler.json")
        manifest["reconciler"] = "reconciler.json"
    (out / "models.json").write_text(json.dumps(manifest, indent=2))
    pd.DataFrame(log_rows, columns=["model", "iteration", "valid_metric"]).to_csv(out / "training_log.csv",
                                                                                 index=False)
    print(f"trained {len(manifest['models'])} model(s) into {out}")
    return {"n_models": len(manifest["models"])}


def cmd_forecast(args, out: Path):
    from .pipeline import DataError, recursive_forecast, series_block

    p, h = _load_panel_and_hierarchy(args)
    mdir = Path(args.models_dir) if args.models_dir else out
    manifest = json.loads(_require_file(mdir / "models.json", "models").read_text())
    if args.cutoff is None:
        cutoff = p.n_days
    else:
        ts = pd.Timestamp(args.cutoff)
        if ts < p.dates[0] or ts > p.dates[-1] + pd.Timedelta(days=1):
            raise DataError(f"cutoff {args.cutoff} outside the data range")
        cutoff = int((ts - p.dates[0]).days)
    dates = pd.date_range(p.dates[0] + pd.Timedelta(days=cutoff), periods=args.horizon, freq="D")
    parts = []
    for m in manifest["models"]:
        b = Booster.load(mdir / m["path"])
        block = series_block(p) if m["bottom_only"] else series_block(p, h, m["levels"])
        if block.feature_names != b.feature_names:
            raise DataError(f"{m['path']}: feature schema differs from the data ({len(b.feature_names)} vs "
                            f"{len(block.feature_names)} columns)")
        parts.append(recursive_forecast(b, block, cutoff, args.horizon))
    F = np.vstack(parts)
    labels = row_labels(h)
    labels = labels[h.n_a:] if manifest["models"][0]["bottom_only"] else labels
    _forecast_frame(labels, F, dates).to_csv(out / "forecast.csv", index=False)
    print(f"wrote {F.shape[0]} series x {args.horizon} steps to {out / 'forecast.csv'}")
    return {"cutoff": str(dates[0].date())}


def _hierarchy_from_args(args) -> Hierarchy:
    from .pipeline import DataError

    spec = load_hierarchy_spec(_require_file(args.hierarchy, "hierarchy"))
    meta = pd.read_csv(_require_file(args.meta, "meta"), dtype=str)
    try:
        return from_metadata(meta, spec)
    except KeyError as e:
        raise DataError(str(e).strip("'\"")) from None


def cmd_reconcile(args, out: Path):
    from .pipeline import coherence_error

    h = _hierarchy_from_args(args)
    labels, F, dates = _read_forecasts(args.forecasts)
    F, kind = _align(h, labels, F)
    if args.reconciler:
        r = Reconciler.load(_require_file(args.reconciler, "reconciler"))
        if r.h.n != h.n:
            raise UsageError(f"reconciler was fitted on a hierarchy with {r.h.n} rows, not {h.n}")
    else:
        method = args.method.replace("-", "_")
        if method not in ("base", "bottom_up", "ols", "wls_struct"):
            raise UsageError(f"method {method!r} needs a fitted --reconciler file")
        r = fit_reconciler(method, h)
    if kind == "bottom":
        if r.method != "bottom_up":
            raise UsageError("bottom-level forecasts can only be reconciled with bottom_up")
        full = h.aggregate(F)
    else:
        full = reconcile(r, F)
    if dates is None:
        dates = pd.date_range("1970-01-01", periods=F.shape[1], freq="D")
    _forecast_frame(row_labels(h), full, dates).to_csv(out / "reconciled.csv", index=False)
    err = coherence_error(h, full)
    print(f"reconciled with {r.method}; max coherence gap {err:.3g}")
    return {"method": r.method, "coherence_error": err}


def cmd_evaluate(args, out: Path):
    from .pipeline import DataError, EvalReport, evaluate

    p, h = _load_panel_and_hierarchy(args)
    labels, F, dates = _read_forecasts(args.forecasts)
    F, _ = _align(h, labels, F)
    if dates is None:
        raise DataError(f"{args.forecasts}: a 'date' column is needed to find the actuals")
    idx = p.dates.get_indexer(dates)
    if (idx < 0).any():
        raise DataError(f"no actuals for forecast date(s) {list(dates[idx < 0].strftime('%Y-%m-%d'))[:5]}")
    actual = p.target[:, idx]
    baseline = EvalReport.from_csv(_require_file(args.baseline, "baseline")) if args.baseline else None
    rep = evaluate(F, actual, h, baseline, name=args.name or "")
    rep.to_csv(out / "report.csv")
    (out / "report.txt").write_text(rep.to_text() + "\n")
    print(rep.to_text())
    return {"all_series_rmse": rep.rmse()}


def cmd_bench(args, out: Path):
    from . import bench

    grad = bench.bench_gradient(tuple(args.sizes), args.levels, args.n_te, args.repeats, args.warmup, args.seed)
    grad.to_csv(out / "bench_gradient.csv", index=False)
    slopes = bench.gradient_slopes(grad)
    print(grad.to_string(index=False))
    print("log-log slopes: " + ", ".join(f"{k}={v:.2f}" for k, v in slopes.items()))
    if not args.no_plots:
        bench.plot_gradient(grad, out / "bench_gradient.png")
    if not args.skip_scenarios:
        p, h = bench.synthetic_case(args.bench_series, args.bench_days, args.seed)
        rec = bench.bench_reconcile(h, repeats=args.repeats, warmup=args.warmup, seed=args.seed)
        rec.to_csv(out / "bench_reconcile.csv", index=False)
        print(rec.to_string(index=False))
        tcfg = TrainConfig(n_estimators=args.bench_trees, learning_rate=0.1, early_stopping_rounds=None,
                           rng_seed=args.seed)
        sc = bench.bench_scenarios(p, h, tcfg, seed=args.seed)
        sc.to_csv(out / "bench_scenarios.csv", index=False)
        print(sc.to_string(index=False))
    (out / "bench_slopes.json").write_text(json.dumps(slopes, indent=2))
    return {"slopes": slopes}


# -- argument parsing -----------------------------------------------------------


def _add_data_args(sp, meta_required=False):
    sp.add_argument("--data", help="long-format panel CSV (series_id,date,target,...)")
    sp.add_argument("--meta", required=meta_required, help="series metadata CSV (series_id,<columns>)")
    sp.add_argument("--hierarchy", help="hierarchy spec JSON")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults (flags override it)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--no-plots", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sparsehl", description="Hierarchical forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    sp = sub.add_parser("synth", parents=[common], help="generate a synthetic panel")
    sp.add_argument("--n-series", type=int, default=500)
    sp.add_argument("--n-days", type=int, default=730)
    sp.add_argument("--n-stores", type=int, default=5)
    sp.add_argument("--n-depts", type=int, default=5)
    sp.add_argument("--zero-fraction", type=float, default=0.4)
    sp.add_argument("--start", default="2019-01-01")
    sp.set_defaults(func=cmd_synth)
    subs["synth"] = sp

    sp = sub.add_parser("build-hierarchy", parents=[common], help="build S from metadata and a spec")
    sp.add_argument("--meta")
    sp.add_argument("--hierarchy")
    sp.set_defaults(func=cmd_build_hierarchy)
    subs["build-hierarchy"] = sp

    sp = sub.add_parser("train", parents=[common], help="train booster(s) for a scenario")
    _add_data_args(sp)
    sp.add_argument("--scenario", default="bottom_up")
    sp.add_argument("--objective", default="sl", choices=["sl", "tl", "hl"])
    sp.add_argument("--metric", default="sl", choices=["sl", "tl", "hl"])
    sp.add_argument("--reconciliation", default="base")
    sp.add_argument("--horizon", type=int, default=28)
    sp.add_argument("--train-days", type=int, default=364)
    sp.add_argument("--temporal", nargs="*", default=None, help="temporal levels for the hl objective")
    sp.add_argument("--random-hierarchy", action="store_true")
    sp.add_argument("--n-estimators", type=int)
    sp.add_argument("--learning-rate", type=float)
    sp.add_argument("--num-leaves", type=int)
    sp.add_argument("--min-child-samples", type=int)
    sp.add_argument("--lambda-l2", type=float)
    sp.add_argument("--lambda-l1", type=float)
    sp.add_argument("--feature-fraction", type=float)
    sp.add_argument("--bagging-fraction", type=float)
    sp.add_argument("--bagging-freq", type=int)
    sp.add_argument("--early-stopping-rounds", type=int)
    sp.set_defaults(func=cmd_train)
    subs["train"] = sp

    sp = sub.add_parser("forecast", parents=[common], help="recursive forecast with trained models")
    _add_data_args(sp)
    sp.add_argument("--models-dir")
    sp.add_argument("--cutoff", help="first forecast date (default: the day after the data)")
    sp.add_argument("--horizon", type=int, default=28)
    sp.set_defaults(func=cmd_forecast)
    subs["forecast"] = sp

    sp = sub.add_parser("reconcile", parents=[common], help="reconcile a forecast CSV")
    sp.add_argument("--forecasts")
    sp.add_argument("--meta")
    sp.add_argument("--hierarchy")
    sp.add_argument("--reconciler", help="fitted reconciler JSON (from train)")
    sp.add_argument("--method", default="bottom_up", help=f"one of {METHODS} when no reconciler file is given")
    sp.set_defaults(func=cmd_reconcile)
    subs["reconcile"] = sp

    sp = sub.add_parser("evaluate", parents=[common], help="per-level RMSE / MAE report")
    _add_data_args(sp)
    sp.add_argument("--forecasts")
    sp.add_argument("--baseline", help="report CSV to compute relative columns against")
    sp.add_argument("--name")
    sp.set_defaults(func=cmd_evaluate)
    subs["evaluate"] = sp

    sp = sub.add_parser("bench", parents=[common], help="timing benchmarks")
    sp.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 1000, 3000])
    sp.add_argument("--levels", type=int, default=12)
    sp.add_argument("--n-te", type=int, default=28)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--warmup", type=int, default=1)
    sp.add_argument("--skip-scenarios", action="store_true")
    sp.add_argument("--bench-series", type=int, default=200)
    sp.add_argument("--bench-days", type=int, default=600)
    sp.add_argument("--bench-trees", type=int, default=50)
    sp.set_defaults(func=cmd_bench)
    subs["bench"] = sp
    return parser, subs


def _apply_config_file(parser, subs, argv):
    pre, _ = parser.parse_known_args(argv)
    if not getattr(pre, "config", None):
        return parser.parse_args(argv)
    path = Path(pre.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None
    sp = subs[pre.command]
    known = {a.dest for a in sp._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"{path}: unknown option(s) {unknown} for '{pre.command}'")
    sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    from .pipeline import DataError

    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config_file(parser, subs, argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        extra = args.func(args, out)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    write_run(out, args.command, args, {"result": extra} if extra else None)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
