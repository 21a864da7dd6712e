"""Full-data M5 comparison of bottom-up HL/HL against SL/SL.

Long-running and not part of the test suite. Needs the M5 csv files
(``sales_train_*.csv``, ``calendar.csv``, ``sell_prices.csv``) in one directory::

    python3 -m sparsehl.m5 --data-dir /path/to/m5 --out-dir m5_run
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .hierarchy import from_metadata
from .pipeline import ScenarioConfig, load_m5, scenario_run

# the twelve M5 aggregation levels, bottom (item x store) implied
M5_LEVELS = {"levels": [
    {"name": "total"},
    {"name": "state", "column": "state_id"},
    {"name": "store", "column": "store_id"},
    {"name": "cat", "column": "cat_id"},
    {"name": "dept", "column": "dept_id"},
    {"name": "state_cat", "column": ["state_id", "cat_id"]},
    {"name": "state_dept", "column": ["state_id", "dept_id"]},
    {"name": "store_cat", "column": ["store_id", "cat_id"]},
    {"name": "store_dept", "column": ["store_id", "dept_id"]},
    {"name": "item", "column": "item_id"},
    {"name": "item_state", "column": ["item_id", "state_id"]},
]}

RATIO_RANGE = (0.82, 0.95)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--out-dir", default="m5_run")
    ap.add_argument("--stores", nargs="*", default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = load_m5(args.data_dir, args.stores)
    h = from_metadata(p.meta, M5_LEVELS)
    rmse = {}
    for obj in ("sl", "hl"):
        r = scenario_run(p, h, ScenarioConfig("bottom_up", obj, obj, "base", train_days=3 * 365), seed=args.seed)
        r.report.to_csv(out / f"report_{obj}.csv")
        rmse[obj] = r.report.rmse()
    ratio = rmse["hl"] / rmse["sl"]
    ok = RATIO_RANGE[0] <= ratio <= RATIO_RANGE[1]
    (out / "m5_summary.json").write_text(json.dumps({"rmse": rmse, "ratio": ratio, "in_range": ok}, indent=2))
    print(f"all-series RMSE hl/hl={rmse['hl']:.3f} sl/sl={rmse['sl']:.3f} ratio={ratio:.3f} "
          f"({'within' if ok else 'outside'} {RATIO_RANGE})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
