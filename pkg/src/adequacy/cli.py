"""Command-line harness: generate | train | estimate | compare.

Exit codes: 0 success, 2 config error, 3 missing data/model artifact,
4 runtime failure. All artifacts live under the --out directory; reruns
with the same config and seed reproduce every non-timing report field.
"""

import argparse
import json
import os
import sys
import time
import traceback

import numpy as np

from .config import (ConfigError, ExperimentConfig, SURROGATE_LEVELS,
                     architecture_slug, canonical_json, parse_architecture,
                     sha256_hex)
from .dispatch import (AvgModel, ExactModel, GreedyModel, analytic_bottom_for,
                       average_profile, build_copt)
from .mlmc import run_mlmc
from .report import (build_run_report, comparison_rows, load_report,
                     save_report, write_comparison_csv)
from .scenarios import (HOURS_PER_DAY, STREAM_HOLDOUT, library_from_csv,
                        library_to_csv)
from .stats import METRICS
from .surrogate import (EnsRegressor, GbtModel, Normalizer, SurrogateModel,
                        build_training_set, evaluate_rmse, train_ens_regressor,
                        train_gbt)

#: per-run stream spacing, so repeated runs draw independent scenarios
STREAM_STRIDE = 64

MODELS_VERSION = 1


class MissingArtifactError(RuntimeError):
    """Required data or model file not found (CLI exit code 3)."""


def _path(out_dir, name):
    return os.path.join(out_dir, name)


def load_libraries(out_dir):
    demand_path = _path(out_dir, "demand.csv")
    wind_path = _path(out_dir, "wind.csv")
    for p in (demand_path, wind_path):
        if not os.path.exists(p):
            raise MissingArtifactError(
                f"library file {p} not found; run `adequacy generate` first")
    demand, _ = library_from_csv(demand_path)
    wind, _ = library_from_csv(wind_path)
    return demand, wind


def load_models(out_dir):
    path = _path(out_dir, "models.json")
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"model artifact {path} not found; run `adequacy train` first")
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MODELS_VERSION:
        raise ConfigError(f"{path}: unsupported models version")
    return doc


def nominal_daily_profile(cfg, demand, wind):
    """Mean daily demand profile for the peak-shaving program (demand-only
    by default; 'net' subtracts the mean wind profile)."""
    prof = demand.mean(axis=0).reshape(-1, HOURS_PER_DAY).mean(axis=0)
    if cfg.system["avg_nominal"] == "net":
        prof = prof - wind.mean(axis=0).reshape(-1, HOURS_PER_DAY).mean(axis=0)
    return prof


def build_stack(cfg, names_top_first, demand, wind, models_doc=None):
    """Instantiate the level stack (returned bottom to top) plus the
    analytic bottom contribution when the bottom level is Avg."""
    storage = cfg.storage_fleet()
    stack_names = list(reversed(names_top_first))
    analytic = None
    analytic_cost = 0.0
    profile = None
    if "Avg" in stack_names:
        profile = average_profile(storage,
                                  nominal_daily_profile(cfg, demand, wind))
        copt = build_copt(cfg.thermal_fleet())
        analytic, analytic_cost = analytic_bottom_for(copt, demand, wind,
                                                      profile)

    def make(name):
        if name == "Exact":
            return ExactModel(storage)
        if name == "Gre":
            return GreedyModel(storage)
        if name == "Avg":
            return AvgModel(profile)
        if models_doc is None:
            raise MissingArtifactError(
                f"level {name} needs trained models; run `adequacy train`")
        gbt = GbtModel.from_dict(models_doc["gbt"])
        norm = Normalizer.from_dict(models_doc["normalizer"])
        theta = models_doc["theta"]
        if name == "HGB+Gre":
            return SurrogateModel(gbt, norm, theta=theta,
                                  greedy_fleet=storage, name=name)
        return SurrogateModel(
            gbt, norm, theta=theta,
            ens_regressor=EnsRegressor.from_dict(models_doc["ens_regressor"]),
            name=name)

    stack = [make(n) for n in stack_names]
    return stack, analytic, analytic_cost


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    demand, wind = cfg.build_libraries()
    library_to_csv(_path(out_dir, "demand.csv"), demand)
    library_to_csv(_path(out_dir, "wind.csv"), wind)

    fleet = cfg.thermal_fleet()
    with open(_path(out_dir, "thermal_fleet.csv"), "w") as fh:
        fh.write("capacity_mw,fail_rate,repair_rate,availability\n")
        for u in fleet:
            fh.write(f"{u.capacity!r},{u.fail_rate!r},{u.repair_rate!r},"
                     f"{u.availability!r}\n")
    storage = cfg.storage_fleet()
    with open(_path(out_dir, "storage_fleet.csv"), "w") as fh:
        fh.write("power_mw,energy_mwh\n")
        for u in storage.units:
            fh.write(f"{u.power!r},{u.energy!r}\n")
    build_copt(fleet).to_csv(_path(out_dir, "copt.csv"))

    wind_cap = cfg.wind_params().capacity_mw
    summary = {
        "system_hash": cfg.system_hash(),
        "peak_demand_mw": float(demand.max()),
        "mean_demand_mw": float(demand.mean()),
        "mean_wind_cf": float(wind.mean() / wind_cap),
        "thermal_capacity_mw": float(sum(u.capacity for u in fleet)),
        "storage_power_mw": storage.total_power,
        "storage_energy_mwh": storage.total_energy,
        "n_demand_traces": int(demand.shape[0]),
        "n_wind_traces": int(wind.shape[0]),
    }
    with open(_path(out_dir, "generate_report.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def cmd_train(cfg, out_dir):
    demand, wind = load_libraries(out_dir)
    storage = cfg.storage_fleet()
    seed = cfg.training["seed"]
    source = cfg.make_source(demand, wind, master_seed=seed)

    t0 = time.perf_counter()
    ts = build_training_set(
        cfg.training["n_days"], source, storage,
        provenance={"seed": seed, "training_hash": cfg.training_hash()})
    mining_s = time.perf_counter() - t0

    norm = Normalizer.fit(ts.frames)
    nf = norm.transform(ts.frames)

    t0 = time.perf_counter()
    gbt = train_gbt(nf, ts.lol_labels, cfg.gbt_params())
    gbt_s = time.perf_counter() - t0

    cur = ts.curtailed()
    t0 = time.perf_counter()
    try:
        ens = train_ens_regressor(norm.transform(cur.frames), cur.ens_labels,
                                  cfg.ens_params())
    except ValueError as exc:
        raise ConfigError(
            f"cannot train the ENS regressor ({exc}); the system produced "
            f"{len(cur)} curtailed days out of {len(ts)} mined days -- "
            "increase training.n_days or make the system less reliable")
    ens_s = time.perf_counter() - t0

    models_doc = {
        "version": MODELS_VERSION,
        "system_hash": cfg.system_hash(),
        "training_hash": cfg.training_hash(),
        "seed": seed,
        "theta": cfg.training["theta_hours"],
        "normalizer": norm.to_dict(),
        "gbt": gbt.to_dict(),
        "ens_regressor": ens.to_dict(),
        "provenance": ts.provenance,
    }
    models_text = canonical_json(models_doc)
    with open(_path(out_dir, "models.json"), "w") as fh:
        fh.write(models_text + "\n")

    # training-set export: clipped pre-normalisation features plus labels
    with open(_path(out_dir, "training_set.csv"), "w") as fh:
        fh.write(",".join(f"mw_h{h + 1:02d}" for h in range(HOURS_PER_DAY))
                 + ",lol_label,ens_label\n")
        for i in range(len(ts)):
            fh.write(",".join(repr(float(x)) for x in ts.frames[i])
                     + f",{float(ts.lol_labels[i])!r}"
                     + f",{float(ts.ens_labels[i])!r}\n")
    with open(_path(out_dir, "training_set_meta.json"), "w") as fh:
        json.dump({"version": MODELS_VERSION,
                   "normalization": norm.to_dict(),
                   "provenance": ts.provenance,
                   "training_hash": cfg.training_hash()},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")

    # holdout accuracy, mined from a disjoint stream
    holdout = build_training_set(
        cfg.training["holdout_days"], source, storage, stream=STREAM_HOLDOUT)
    hold_nf = norm.transform(holdout.frames)
    lol_rmse = evaluate_rmse(gbt.predict, hold_nf, holdout.lol_labels)
    hold_cur = holdout.ens_labels > 0.0
    ens_rmse = None
    if hold_cur.sum() >= 1:
        ens_rmse = evaluate_rmse(
            lambda x: np.maximum(0.0, ens.predict(x)),
            hold_nf[hold_cur], holdout.ens_labels[hold_cur])

    train_report = {
        "schema_version": MODELS_VERSION,
        "system_hash": cfg.system_hash(),
        "training_hash": cfg.training_hash(),
        "model_hash": sha256_hex(models_text),
        "seed": seed,
        "n_days": cfg.training["n_days"],
        "curtailed_days": int((ts.ens_labels > 0).sum()),
        "holdout_days": cfg.training["holdout_days"],
        "holdout_rmse": {"lol_hours": lol_rmse, "ens_mwh": ens_rmse},
        "timings_s": {"mining": mining_s, "gbt": gbt_s, "regressor": ens_s},
    }
    with open(_path(out_dir, "training_report.json"), "w") as fh:
        json.dump(train_report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return train_report


def cmd_estimate(cfg, out_dir, baseline_path=None):
    demand, wind = load_libraries(out_dir)
    arch = cfg.run["architecture"]
    names = parse_architecture(arch)

    models_doc = None
    if any(n in SURROGATE_LEVELS for n in names):
        models_doc = load_models(out_dir)
        if models_doc["training_hash"] != cfg.training_hash():
            raise ConfigError(
                "models.json was trained under a different system/training "
                "config; re-run `adequacy train`")

    stack, analytic, analytic_cost = build_stack(cfg, names, demand, wind,
                                                 models_doc)
    source = cfg.make_source(demand, wind, master_seed=cfg.run["seed"])

    baseline = None
    if baseline_path is not None:
        baseline = load_report(baseline_path)
        if baseline["system_hash"] != cfg.system_hash():
            raise ConfigError("baseline report is from a different system")

    workers = cfg.run["workers"] or (os.cpu_count() or 1)
    # the one-off convolution is shared by all repeated runs
    repeats = cfg.run["repeats"]
    shared_cost = analytic_cost / repeats
    estimates = []
    for r in range(repeats):
        estimates.append(run_mlmc(
            stack, source,
            budget=cfg.run["budget"],
            exploratory_n=cfg.run["exploratory_n"],
            target_metric=cfg.run["target_metric"],
            analytic_bottom=analytic,
            analytic_bottom_cost=shared_cost,
            budget_mode=cfg.run["budget_mode"],
            reuse_exploration=cfg.run["reuse_exploration"],
            workers=workers,
            stream_offset=r * STREAM_STRIDE))

    report = build_run_report(
        arch, estimates, seed=cfg.run["seed"],
        system_hash=cfg.system_hash(), config_hash=cfg.full_hash(),
        workers=workers, baseline=baseline)

    os.makedirs(out_dir, exist_ok=True)
    slug = architecture_slug(arch)
    save_report(report, _path(out_dir, f"report_{slug}.json"))
    write_comparison_csv(comparison_rows([report]),
                         _path(out_dir, f"row_{slug}.csv"))
    return report


def cmd_compare(report_paths, out_path):
    reports = [load_report(p) for p in report_paths]
    rows = comparison_rows(reports)
    write_comparison_csv(rows, out_path)
    return rows


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="adequacy",
        description="Multilevel Monte Carlo resource adequacy harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="config JSON path")
        p.add_argument("--out", default="artifacts",
                       help="artifact directory (default: artifacts)")

    add_common(sub.add_parser("generate", help="build libraries and COPT"))
    add_common(sub.add_parser("train", help="mine days and train surrogates"))

    est = sub.add_parser("estimate", help="run one MLMC architecture")
    add_common(est)
    est.add_argument("--arch", help="override run.architecture")
    est.add_argument("--seed", type=int, help="override run.seed")
    est.add_argument("--budget", type=float, help="override run.budget")
    est.add_argument("--budget-mode", choices=("samples", "seconds"),
                     help="override run.budget_mode")
    est.add_argument("--repeats", type=int, help="override run.repeats")
    est.add_argument("--workers", type=int, help="override run.workers")
    est.add_argument("--baseline", help="MC baseline report for speedups")

    cmp_p = sub.add_parser("compare", help="tabulate run reports")
    cmp_p.add_argument("reports", nargs="+", help="report JSON paths")
    cmp_p.add_argument("--out", default="comparison.csv",
                       help="output CSV path")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            rows = cmd_compare(args.reports, args.out)
            for row in rows:
                print(f"{row['architecture']}: "
                      f"LOLE {row['lole']:.4g} +- {row['lole_se']:.2g} h/y, "
                      f"EENS {row['eens']:.4g} +- {row['eens_se']:.2g} MWh/y")
            print(f"wrote {args.out}")
            return 0

        cfg = ExperimentConfig.load(args.config)
        if args.command == "generate":
            summary = cmd_generate(cfg, args.out)
            print(f"libraries written to {args.out} "
                  f"(peak demand {summary['peak_demand_mw']:.0f} MW, "
                  f"mean wind CF {summary['mean_wind_cf']:.3f})")
        elif args.command == "train":
            rep = cmd_train(cfg, args.out)
            tm = rep["timings_s"]
            print(f"trained on {rep['n_days']} days "
                  f"({rep['curtailed_days']} curtailed); "
                  f"holdout RMSE: LOL {rep['holdout_rmse']['lol_hours']:.3g} h, "
                  f"ENS {rep['holdout_rmse']['ens_mwh']} MWh; "
                  f"timings mining/gbt/regressor = "
                  f"{tm['mining']:.1f}/{tm['gbt']:.1f}/{tm['regressor']:.1f} s")
        elif args.command == "estimate":
            for key in ("arch", "seed", "budget", "repeats", "workers"):
                val = getattr(args, key)
                if val is not None:
                    cfg.run["architecture" if key == "arch" else key] = val
            if args.budget_mode is not None:
                cfg.run["budget_mode"] = args.budget_mode
            parse_architecture(cfg.run["architecture"])
            rep = cmd_estimate(cfg, args.out, baseline_path=args.baseline)
            for metric in METRICS:
                m = rep["metrics"][metric]
                line = (f"{metric}: {m['estimate']:.4g} +- "
                        f"{m['std_error']:.3g}")
                if m["speed"] is not None:
                    line += f" (speed {m['speed']:.3g})"
                if m["speedup_vs_baseline"] is not None:
                    line += f" (speedup {m['speedup_vs_baseline']:.1f}x)"
                print(line)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
