import os

import numpy as np
import pytest

import darkproxy.config
from darkproxy.sensor import build_sensor
from darkproxy.sensor import default_sensor_spec


@pytest.fixture(scope="function", autouse=True)
def reset_env(tmp_path_factory):
    save_env = os.environ.copy()
    for key in list(os.environ.keys()):
        if key.startswith(("DARKPROXY_", "PNNP_")):
            os.environ.pop(key)
    empty = tmp_path_factory.mktemp("no-config")
    os.environ["DARKPROXY_SITE_CONFIG"] = str(empty / "site.yaml")
    os.environ["DARKPROXY_GLOBAL_CONFIG"] = str(empty / "global.yaml")
    darkproxy.config.reset()
    yield
    darkproxy.config.reset()
    os.environ.clear()
    os.environ.update(save_env)


@pytest.fixture
def small_spec():
    spec = default_sensor_spec()
    spec.update({"height": 32, "width": 32, "isos": [800, 1600, 3200]})
    spec["ble"] = {800: 0.2, 1600: -0.3, 3200: 0.5}
    spec["sigma_row"] = {iso: v for iso, v in spec["sigma_row"].items() if iso in spec["isos"]}
    spec["sigma_col"] = {iso: v for iso, v in spec["sigma_col"].items() if iso in spec["isos"]}
    return spec


@pytest.fixture
def sensor(small_spec):
    return build_sensor(small_spec, seed=3)


@pytest.fixture
def gaussian_samples():
    return np.random.default_rng(11).normal(0.0, 2.0, 20_000)
