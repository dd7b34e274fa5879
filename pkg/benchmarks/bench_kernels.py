#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-Python mirror.

Runs each hot kernel on reference-system-sized inputs with both backends
(outputs are bit-identical; only speed differs) and prints a table with
per-call times and speedups, plus an end-to-end model evaluation row.

Usage: python benchmarks/bench_kernels.py [repeats]
"""

import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from adequacy.config import ExperimentConfig
from adequacy.kernels import pure
from adequacy import kernels
from adequacy.surrogate import Normalizer, build_training_set, train_gbt

CONFIG = os.path.join(os.path.dirname(__file__), "..", "src", "adequacy",
                      "data", "reference_config.json")


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(repeats=5):
    try:
        from adequacy.kernels import _core as compiled
    except ImportError:
        print("compiled kernels not built; run `python setup.py build_ext "
              "--inplace` first")
        return 1

    cfg = ExperimentConfig.load(CONFIG)
    fleet = cfg.thermal_fleet()
    caps = np.array([u.capacity for u in fleet])
    pf = np.array([u.fail_rate for u in fleet])
    pr = np.array([u.repair_rate for u in fleet])
    av = np.array([u.availability for u in fleet])
    storage = cfg.storage_fleet()
    demand, wind = cfg.build_libraries()
    source = cfg.make_source(demand, wind, master_seed=3)
    m = source.sample(0, 0).m

    ts = build_training_set(1500, source, storage)
    norm = Normalizer.fit(ts.frames)
    gbt = train_gbt(norm.transform(ts.frames), ts.lol_labels,
                    cfg.gbt_params())
    frames = norm.transform(np.minimum(m.reshape(365, 24), 1.0))
    vargs = (gbt.feature, gbt._thr_values, gbt.left, gbt.right, gbt.value,
             gbt.offsets, gbt.baseline)

    rows = []
    for name, call in [
        ("thermal_trace (30 units x 8760 h)",
         lambda impl: impl.thermal_trace(7, caps, pf, pr, av, 8760)),
        ("greedy_dispatch (27 units x 8760 h)",
         lambda impl: impl.greedy_dispatch(m, storage.power, storage.energy,
                                           storage.full_soc(),
                                           storage.greedy_order)),
        ("exact_dispatch (27 units x 8760 h)",
         lambda impl: impl.exact_dispatch(m, storage.power, storage.energy,
                                          storage.full_soc())),
        ("gbt_predict_values (365 frames)",
         lambda impl: impl.gbt_predict_values(frames, *vargs)),
    ]:
        t_pure = timeit(lambda: call(pure), repeats)
        t_fast = timeit(lambda: call(compiled), repeats)
        rows.append((name, t_pure, t_fast))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'pure':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, t_pure, t_fast in rows:
        print(f"{name:<{width}}  {t_pure * 1e3:9.3f}ms  {t_fast * 1e3:9.3f}ms  "
              f"{t_pure / t_fast:7.1f}x")
    print(f"\nactive backend at import time: {kernels.backend_name()}")
    return 0


if __name__ == "__main__":
    sys.exit(main(int(sys.argv[1]) if len(sys.argv) > 1 else 5))
