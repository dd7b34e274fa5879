"""Experiment configuration: JSON schema, defaults, hashing, builders.

A config file has three sections. ``system`` describes the synthetic
test system (thermal fleet, demand/wind library parameters, storage
fleet) and seeds the libraries; ``training`` controls day mining and the
surrogate learners; ``run`` selects the MLMC architecture, budget and
sampling seed. Unknown keys are rejected so typos fail loudly.
"""

import copy
import hashlib
import json

from .dispatch import StorageFleet, StorageUnit
from .scenarios import (DemandParams, GeneratingUnit, ScenarioSource,
                        WindParams, build_demand_library, build_wind_library)
from .surrogate import EnsRegressorParams, GbtParams


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


LEVEL_NAMES = ("Exact", "Gre", "Avg", "HGB+Gre", "HGB+SVR")
SURROGATE_LEVELS = ("HGB+Gre", "HGB+SVR")

DEFAULTS = {
    "system": {
        "seed": 20220101,
        "thermal_fleet": [],
        "demand": {
            "n_traces": 20, "peak_mw": 5000.0, "seasonal_amplitude": 0.12,
            "weekend_factor": 0.95, "noise_sigma": 0.03,
        },
        "wind": {
            "n_traces": 20, "capacity_mw": 1200.0, "ar_rho": 0.985,
            "shape_gain": 1.5, "mean_capacity_factor": 0.33,
        },
        "storage_fleet": [],
        "avg_nominal": "demand",  # or "net": subtract mean wind
    },
    "training": {
        "seed": 1,
        "n_days": 5000,
        "holdout_days": 500,
        "theta_hours": 0.5,
        "gbt": {
            "n_iterations": 100, "learning_rate": 0.1, "max_bins": 255,
            "max_leaves": 31, "min_samples_leaf": 20,
        },
        "ens_regressor": {"gamma": 1.0 / 480.0, "alpha": 1e-3},
    },
    "run": {
        "seed": 7,
        "architecture": "Exact",
        "budget": 100.0,
        "budget_mode": "samples",  # or "seconds"
        "exploratory_n": 40,
        "target_metric": "EENS",
        "repeats": 1,
        "workers": 0,  # 0 = all available cores
        "reuse_exploration": True,
    },
}


def _merge(defaults, given, path=""):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path + key!r} must be an object")
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(text):
    return hashlib.sha256(text.encode()).hexdigest()


class ExperimentConfig:
    """Validated three-section configuration."""

    def __init__(self, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for section in raw:
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section {section!r}")
        merged = {}
        for section, defaults in DEFAULTS.items():
            merged[section] = _merge(defaults, raw.get(section, {}),
                                     section + ".")
        self.system = merged["system"]
        self.training = merged["training"]
        self.run = merged["run"]
        self._validate()

    @staticmethod
    def load(path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        return ExperimentConfig(raw)

    def _validate(self):
        if not self.system["thermal_fleet"]:
            raise ConfigError("system.thermal_fleet must be nonempty")
        if not self.system["storage_fleet"]:
            raise ConfigError("system.storage_fleet must be nonempty")
        if self.system["avg_nominal"] not in ("demand", "net"):
            raise ConfigError("system.avg_nominal must be 'demand' or 'net'")
        if self.run["budget"] <= 0:
            raise ConfigError("run.budget must be positive")
        if self.run["budget_mode"] not in ("samples", "seconds"):
            raise ConfigError("run.budget_mode must be 'samples' or 'seconds'")
        if self.run["target_metric"] not in ("LOLE", "EENS"):
            raise ConfigError("run.target_metric must be LOLE or EENS")
        if self.run["exploratory_n"] < 2:
            raise ConfigError("run.exploratory_n must be at least 2")
        if self.run["repeats"] < 1:
            raise ConfigError("run.repeats must be >= 1")
        if self.run["workers"] < 0:
            raise ConfigError("run.workers must be >= 0 (0 = all cores)")
        if self.training["n_days"] < 1:
            raise ConfigError("training.n_days must be >= 1")
        parse_architecture(self.run["architecture"])
        self.thermal_fleet()
        self.storage_fleet()

    # -- hashes ------------------------------------------------------------

    def system_hash(self):
        return sha256_hex(canonical_json(self.system))

    def training_hash(self):
        return sha256_hex(canonical_json(
            {"system": self.system, "training": self.training}))

    def full_hash(self):
        return sha256_hex(canonical_json(
            {"system": self.system, "training": self.training,
             "run": self.run}))

    # -- builders ----------------------------------------------------------

    def thermal_fleet(self):
        units = []
        for row in self.system["thermal_fleet"]:
            row = dict(row)
            count = int(row.pop("count", 1))
            try:
                unit = GeneratingUnit(**row)
                unit.validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad thermal unit {row!r}: {exc}")
            units.extend([unit] * count)
        return units

    def storage_fleet(self):
        units = []
        for row in self.system["storage_fleet"]:
            row = dict(row)
            count = int(row.pop("count", 1))
            try:
                unit = StorageUnit(**row)
                unit.validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad storage unit {row!r}: {exc}")
            units.extend([unit] * count)
        return StorageFleet(units)

    def demand_params(self):
        return DemandParams(**{k: (tuple(v) if isinstance(v, list) else v)
                               for k, v in self.system["demand"].items()})

    def wind_params(self):
        return WindParams(**self.system["wind"])

    def build_libraries(self):
        seed = self.system["seed"]
        demand = build_demand_library(self.demand_params(), seed)
        wind = build_wind_library(self.wind_params(), seed)
        return demand, wind

    def make_source(self, demand, wind, master_seed, keep_components=False):
        return ScenarioSource(self.thermal_fleet(), demand, wind,
                              master_seed, keep_components=keep_components)

    def gbt_params(self):
        return GbtParams(**self.training["gbt"])

    def ens_params(self):
        return EnsRegressorParams(**self.training["ens_regressor"])

    def to_dict(self):
        return {"system": copy.deepcopy(self.system),
                "training": copy.deepcopy(self.training),
                "run": copy.deepcopy(self.run)}


def parse_architecture(spec):
    """Parse an architecture string (top level first, pipe-separated)
    into a validated list of level names.

    The top level must be Exact; Avg may only appear at the bottom.
    Repeating a name is allowed (a duplicated level contributes zero).
    """
    if not isinstance(spec, str) or not spec.strip():
        raise ConfigError("architecture must be a nonempty string")
    names = [part.strip() for part in spec.split("|")]
    for name in names:
        if name not in LEVEL_NAMES:
            raise ConfigError(
                f"unknown level name {name!r}; valid names: "
                + ", ".join(LEVEL_NAMES))
    if names[0] != "Exact":
        raise ConfigError("the top level must be Exact")
    if "Avg" in names[:-1]:
        raise ConfigError("Avg may only be the bottom level")
    return names


def architecture_slug(spec):
    return "_".join(n.replace("+", "") for n in parse_architecture(spec))
