"""Run reports: aggregation over repeated runs, serialisation, comparison.

The JSON report is the authoritative record; CSV rows are presentation.
Reports round-trip losslessly through JSON (no NaN/Inf values are ever
written; undefined entries are null).
"""

import json
import math

import numpy as np

from .config import ConfigError
from .stats import METRICS

SCHEMA_VERSION = 1
REPORT_KIND = "adequacy-run-report"

COMPARE_COLUMNS = ("architecture", "time_s", "lole", "lole_se", "eens",
                   "eens_se", "lole_speedup", "eens_speedup")


def _mean_ignoring_none(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    if not vals:
        return None
    return float(np.mean(vals))


def build_run_report(architecture, estimates, *, seed, system_hash,
                     config_hash, workers, baseline=None):
    """Aggregate one or more MlmcEstimate objects into a report dict.

    With repeats, the headline estimate is the mean of per-run estimates
    and its standard error is the sample SE of that mean (per-run
    internal SEs remain available under "runs").
    """
    runs = [e.to_record() for e in estimates]
    n_runs = len(runs)
    first = runs[0]
    n_levels = len(first["level_names"])

    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": REPORT_KIND,
        "architecture": architecture,
        "system_hash": system_hash,
        "config_hash": config_hash,
        "seed": int(seed),
        "workers": int(workers),
        "repeats": n_runs,
        "budget": first["budget"],
        "budget_mode": first["budget_mode"],
        "target_metric": first["target_metric"],
        "analytic_bottom": first["analytic_bottom"],
        "total_time": float(sum(r["total_time"] for r in runs)),
        "metrics": {},
        "levels": [],
        "runs": runs,
    }

    for metric in METRICS:
        q = [r["metrics"][metric]["q_hat"] for r in runs]
        if n_runs >= 2:
            est = float(np.mean(q))
            se = float(np.std(q, ddof=1) / math.sqrt(n_runs))
        else:
            est = float(q[0])
            se = float(first["metrics"][metric]["std_error"])
        speed = _mean_ignoring_none(
            [r["metrics"][metric]["speed"] for r in runs])
        entry = {"estimate": est, "std_error": se, "speed": speed,
                 "speedup_vs_baseline": None}
        if baseline is not None:
            base_speed = baseline["metrics"][metric]["speed"]
            if speed is not None and base_speed:
                entry["speedup_vs_baseline"] = float(speed / base_speed)
        report["metrics"][metric] = entry

    for l in range(n_levels):
        level = {
            "name": first["level_names"][l],
            "n": _mean_ignoring_none([r["n_per_level"][l] for r in runs]),
            "tau": _mean_ignoring_none([r["tau_per_level"][l] for r in runs]),
        }
        for metric in METRICS:
            r_hat = _mean_ignoring_none(
                [r["metrics"][metric]["r_hat"][l] for r in runs])
            sigma = _mean_ignoring_none(
                [r["metrics"][metric]["sigma_y"][l] for r in runs])
            rho = _mean_ignoring_none(
                [r["metrics"][metric]["rho"][l] for r in runs])
            q = report["metrics"][metric]["estimate"]
            level[metric] = {
                "r_hat": r_hat,
                "sigma_y": sigma,
                "rho": rho,
                "share": (None if not q or r_hat is None
                          else float(r_hat / q)),
            }
        report["levels"].append(level)
    return report


def save_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, allow_nan=False, sort_keys=True)
        fh.write("\n")


def load_report(path):
    with open(path) as fh:
        report = json.load(fh)
    if report.get("kind") != REPORT_KIND:
        raise ConfigError(f"{path} is not a run report")
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: unsupported report schema {report.get('schema_version')!r}")
    return report


def _fmt(x):
    if x is None:
        return ""
    return f"{x:.6g}"


def comparison_rows(reports):
    """Table-style rows for a set of reports on one system.

    The baseline is the plain-MC row (architecture "Exact"); speedups
    are speed ratios against it. Reports must share the system hash.
    """
    hashes = {r["system_hash"] for r in reports}
    if len(hashes) > 1:
        raise ConfigError(
            "reports were produced on different systems (hash mismatch)")
    baseline = next((r for r in reports if r["architecture"] == "Exact"), None)
    rows = []
    for r in reports:
        row = {
            "architecture": r["architecture"],
            "time_s": r["total_time"],
            "lole": r["metrics"]["LOLE"]["estimate"],
            "lole_se": r["metrics"]["LOLE"]["std_error"],
            "eens": r["metrics"]["EENS"]["estimate"],
            "eens_se": r["metrics"]["EENS"]["std_error"],
            "lole_speedup": None,
            "eens_speedup": None,
        }
        if baseline is not None:
            for metric, col in (("LOLE", "lole_speedup"),
                                ("EENS", "eens_speedup")):
                speed = r["metrics"][metric]["speed"]
                base = baseline["metrics"][metric]["speed"]
                if speed is not None and base:
                    row[col] = speed / base
        rows.append(row)
    return rows


def write_comparison_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(COMPARE_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) if c != "architecture"
                              else row[c] for c in COMPARE_COLUMNS) + "\n")
