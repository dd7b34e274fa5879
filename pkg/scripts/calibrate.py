#!/usr/bin/env python3
"""Exploratory calibration of the reference synthetic system.

Measures, for a candidate config: the day-mining acceptance rate, plain
MC risk estimates from the Exact model, inter-model correlations on
coupled scenarios, and per-model evaluation costs. Used to pin down the
shipped reference config; not part of the test suite.
"""

import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from adequacy.cli import build_stack
from adequacy.config import ExperimentConfig
from adequacy.scenarios import STREAM_REFERENCE, day_acceptance_rate


def main(config_path, n_mc=2000):
    cfg = ExperimentConfig.load(config_path)
    demand, wind = cfg.build_libraries()
    source = cfg.make_source(demand, wind, master_seed=99)

    rate = day_acceptance_rate(source, n_scenarios=60)
    print(f"day acceptance rate: {rate:.4f}")

    stack, analytic, _ = build_stack(cfg, ["Exact", "Gre", "Avg"], demand, wind)
    avg_m, gre_m, exact_m = stack[0], stack[1], stack[2]
    print(f"analytic Avg risk: LOLE {analytic.lol_hours:.3f} h/y, "
          f"EENS {analytic.ens_energy:.1f} MWh/y")

    outs = {name: np.empty((n_mc, 2)) for name in ("Exact", "Gre", "Avg")}
    costs = {name: 0.0 for name in outs}
    t_scen = 0.0
    for i in range(n_mc):
        t0 = time.perf_counter()
        scen = source.sample(STREAM_REFERENCE, i)
        t_scen += time.perf_counter() - t0
        for name, model in (("Exact", exact_m), ("Gre", gre_m), ("Avg", avg_m)):
            t0 = time.perf_counter()
            ov = model.evaluate(scen)
            costs[name] += time.perf_counter() - t0
            outs[name][i] = (ov.lol_hours, ov.ens_energy)

    print(f"scenario cost: {t_scen / n_mc * 1e3:.3f} ms")
    for name in outs:
        arr = outs[name]
        se = arr.std(axis=0, ddof=1) / np.sqrt(n_mc)
        print(f"{name:6s} LOLE {arr[:,0].mean():8.3f} +-{se[0]:.3f}  "
              f"EENS {arr[:,1].mean():10.1f} +-{se[1]:.1f}   "
              f"cost {costs[name] / n_mc * 1e3:.3f} ms")
    for a, b in (("Exact", "Gre"), ("Exact", "Avg"), ("Gre", "Avg")):
        for k, metric in ((0, "LOLE"), (1, "EENS")):
            x, y = outs[a][:, k], outs[b][:, k]
            if x.std() > 0 and y.std() > 0:
                r = np.corrcoef(x, y)[0, 1]
                print(f"rho({a},{b}) {metric}: {r:.4f}")
    lol_years = (outs["Exact"][:, 0] > 0).mean()
    print(f"fraction of years with any LOL (Exact): {lol_years:.3f}")


if __name__ == "__main__":
    main(sys.argv[1], int(sys.argv[2]) if len(sys.argv) > 2 else 2000)
