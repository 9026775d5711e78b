import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from atomic_fcgcg import experiments as ex

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _run(name, **over):
    cfg = ex.shipped_config(name)
    for block, vals in over.items():
        cfg[block] = {**cfg.get(block, {}), **vals}
    return ex.execute(ex.resolve(cfg))


@pytest.fixture(scope="session")
def heat_run():
    return _run("heat_414")


@pytest.fixture(scope="session")
def trace_run():
    return _run("trace_d1")


@pytest.fixture(scope="session")
def two_cell_run():
    return _run("mineffort_two_cell")


@pytest.fixture(scope="session")
def gaussian_effort_run():
    return _run("mineffort_gaussian")


@pytest.fixture(scope="session")
def shipped_runs(heat_run, trace_run, two_cell_run, gaussian_effort_run):
    return {"heat_414": heat_run, "trace_d1": trace_run,
            "mineffort_two_cell": two_cell_run, "mineffort_gaussian": gaussian_effort_run}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def heat_compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("heat_compare")
    code, summary = ex.compare_config(ex.resolve(ex.shipped_config("heat_414")), out, plots=False)
    return out, code, summary
