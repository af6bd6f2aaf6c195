"""Calibration runs for the frozen verification thresholds.

Runs every acceptance configuration over several seeds and prints, for each
threshold, the worst value seen.  The constants in ``dbmlab.analysis.THRESHOLDS``
were set from this output with a margin on top.

    python3 scripts/calibrate.py --seeds 101 102 103 104 --out calibration.json
"""

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from acceptance_configs import ALL  # noqa: E402
from dbmlab.analysis import (  # noqa: E402
    beurling_integral_check,
    cap_radius_check,
    growth_exponent,
    makarov_check,
    max_measure_check,
    theorem_margin,
)
from dbmlab.growth import grow  # noqa: E402

BIG = {"makarov": 1e9, "max_measure_3d": 1e9, "cap_radius_2d": 1e9, "cap_radius_trend": 1e9}


def measure(name, trace):
    out = {}
    n = trace.config.n_particles
    tm = theorem_margin(trace)
    for c in tm.checks:
        if c.statistic is not None:
            out[f"trend:{c.name}"] = c.statistic
    if n >= 1000:
        out["slope_last_decade"] = growth_exponent(trace, (n // 10, n))
    if trace.config.dimension == 2:
        c = cap_radius_check(trace, thresholds=BIG)
        if c.statistic is not None:
            out["cap_radius_2d"] = c.statistic
            out["cap_radius_trend"] = c.details["sup_last_decade"] - c.details["sup_previous_decade"]
        if trace.config.eta == 1:
            c = makarov_check(trace, thresholds=BIG)
            if c.statistic is not None:
                out["makarov"] = c.statistic
        if name == "beurling":
            rep = beurling_integral_check(trace, 50.0, m_min=100)
            out["beurling_2d"] = rep.sup_margin
            out["beurling_m"] = rep.m
    else:
        c = max_measure_check(trace, thresholds=BIG)
        out["max_measure_3d"] = c.statistic
        out["cap_over_R"] = cap_radius_check(trace).details["cap_over_R"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[101, 102, 103, 104])
    ap.add_argument("--runs", nargs="+", default=list(ALL))
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    results = {}
    for name in args.runs:
        for seed in args.seeds:
            t0 = time.time()
            trace = grow(replace(ALL[name], seed=seed))
            res = measure(name, trace)
            res["seconds"] = round(time.time() - t0, 1)
            res["R_final"] = trace.final_cluster.radius
            results[f"{name}/{seed}"] = res
            print(name, seed, json.dumps(res), flush=True)
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=1))
    worst = {}
    for res in results.values():
        for k, v in res.items():
            if isinstance(v, float) and math.isfinite(v):
                worst[k] = max(worst.get(k, -math.inf), v)
    print("worst:", json.dumps(worst, indent=1))


if __name__ == "__main__":
    main()
