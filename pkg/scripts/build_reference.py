#!/usr/bin/env python3
"""Build the long direct-MC reference for the shipped synthetic system.

Evaluates the Exact and Avg models on n independent scenarios (counters
of a dedicated stream) and caches means, standard errors and the exact
analytic Avg expectation in src/adequacy/data/reference_mc.json. The
acceptance suite validates the cached system hash and uses these values
as the unbiasedness oracle.

Usage: python scripts/build_reference.py [n_samples] [workers]
"""

import json
import multiprocessing as mp
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from adequacy.cli import build_stack
from adequacy.config import ExperimentConfig
from adequacy.scenarios import STREAM_REFERENCE

MASTER_SEED = 424242

_CTX = {}


def _init(config_path):
    cfg = ExperimentConfig.load(config_path)
    demand, wind = cfg.build_libraries()
    stack, analytic, _ = build_stack(cfg, ["Exact", "Avg"], demand, wind)
    _CTX["source"] = cfg.make_source(demand, wind, master_seed=MASTER_SEED)
    _CTX["avg"], _CTX["exact"] = stack


def _chunk(args):
    start, count = args
    source = _CTX["source"]
    exact, avg = _CTX["exact"], _CTX["avg"]
    acc = np.zeros(8)  # sums and sum-squares for exact/avg lole/eens
    cross = np.zeros(2)  # sum of exact*avg per metric
    for i in range(start, start + count):
        scen = source.sample(STREAM_REFERENCE, i)
        e = exact.evaluate(scen)
        a = avg.evaluate(scen)
        v = np.array([e.lol_hours, e.ens_energy, a.lol_hours, a.ens_energy])
        acc[:4] += v
        acc[4:] += v * v
        cross += v[:2] * v[2:]
    return acc, cross


def main(config_path, n, workers, out_path):
    t0 = time.time()
    tasks = []
    step = 2000
    for start in range(0, n, step):
        tasks.append((start, min(step, n - start)))
    if workers > 1:
        with mp.Pool(workers, initializer=_init, initargs=(config_path,)) as pool:
            results = pool.map(_chunk, tasks)
    else:
        _init(config_path)
        results = [_chunk(t) for t in tasks]
    acc = np.sum([r[0] for r in results], axis=0)
    cross = np.sum([r[1] for r in results], axis=0)

    mean = acc[:4] / n
    var = (acc[4:] - n * mean * mean) / (n - 1)
    se = np.sqrt(var / n)
    rho = [(cross[k] / n - mean[k] * mean[2 + k])
           / np.sqrt(var[k] * var[2 + k] * ((n - 1) / n) ** 2)
           for k in range(2)]

    cfg = ExperimentConfig.load(config_path)
    demand, wind = cfg.build_libraries()
    _, analytic, _ = build_stack(cfg, ["Exact", "Avg"], demand, wind)

    doc = {
        "system_hash": cfg.system_hash(),
        "master_seed": MASTER_SEED,
        "stream": STREAM_REFERENCE,
        "n_samples": n,
        "exact": {
            "lole": mean[0], "lole_se": se[0],
            "eens": mean[1], "eens_se": se[1],
            "lole_var": var[0], "eens_var": var[1],
        },
        "avg": {
            "lole": mean[2], "lole_se": se[2],
            "eens": mean[3], "eens_se": se[3],
        },
        "analytic_avg": {"lole": analytic.lol_hours,
                         "eens": analytic.ens_energy},
        "rho_exact_avg": {"lole": rho[0], "eens": rho[1]},
        "wall_time_s": time.time() - t0,
    }
    with open(out_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(doc, indent=1, sort_keys=True))


if __name__ == "__main__":
    here = os.path.dirname(os.path.abspath(__file__))
    config = os.path.join(here, "..", "src", "adequacy", "data",
                          "reference_config.json")
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 1_000_000
    workers = int(sys.argv[2]) if len(sys.argv) > 2 else (os.cpu_count() or 1)
    out = os.path.join(here, "..", "src", "adequacy", "data",
                       "reference_mc.json")
    main(config, n, workers, out)
