import json
import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from adequacy.config import ExperimentConfig
from adequacy.surrogate import (Normalizer, SurrogateModel, build_training_set,
                                train_ens_regressor, train_gbt)

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "adequacy",
                        "data")


def reference_config_path():
    return os.path.join(DATA_DIR, "reference_config.json")


@pytest.fixture(scope="session")
def ref_cfg():
    return ExperimentConfig.load(reference_config_path())


@pytest.fixture(scope="session")
def ref_libs(ref_cfg):
    return ref_cfg.build_libraries()


@pytest.fixture(scope="session")
def ref_storage(ref_cfg):
    return ref_cfg.storage_fleet()


@pytest.fixture(scope="session")
def ref_source(ref_cfg, ref_libs):
    demand, wind = ref_libs
    return ref_cfg.make_source(demand, wind, master_seed=1)


@pytest.fixture(scope="session")
def ref_training_set(ref_cfg, ref_source, ref_storage):
    return build_training_set(ref_cfg.training["n_days"], ref_source,
                              ref_storage)


@pytest.fixture(scope="session")
def ref_models(ref_cfg, ref_training_set, ref_storage):
    """Trained surrogate components on the reference system."""
    ts = ref_training_set
    norm = Normalizer.fit(ts.frames)
    nf = norm.transform(ts.frames)
    gbt = train_gbt(nf, ts.lol_labels, ref_cfg.gbt_params())
    cur = ts.ens_labels > 0
    ens = train_ens_regressor(norm.transform(ts.frames[cur]),
                              ts.ens_labels[cur], ref_cfg.ens_params())
    theta = ref_cfg.training["theta_hours"]
    return {
        "normalizer": norm, "gbt": gbt, "ens": ens, "theta": theta,
        "hgb_gre": SurrogateModel(gbt, norm, theta=theta,
                                  greedy_fleet=ref_storage, name="HGB+Gre"),
        "hgb_svr": SurrogateModel(gbt, norm, theta=theta,
                                  ens_regressor=ens, name="HGB+SVR"),
    }


@pytest.fixture(scope="session")
def ref_mc():
    """Cached long direct-MC reference (built by scripts/build_reference.py)."""
    path = os.path.join(DATA_DIR, "reference_mc.json")
    if not os.path.exists(path):
        pytest.skip("reference_mc.json not built; run scripts/build_reference.py")
    with open(path) as fh:
        return json.load(fh)
