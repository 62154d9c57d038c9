import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from iuq.data import SyntheticSceneConfig, generate_synthetic_dataset

torch.set_num_threads(1)
settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_dataset():
    cfg = SyntheticSceneConfig(n_scenes=4, frames_per_scene=4, resolution=32, seed=3)
    return generate_synthetic_dataset(cfg)


@pytest.fixture(scope="session")
def tiny_frames(tiny_dataset):
    manifest, triples = tiny_dataset
    return [triples[r] for r in manifest.frames]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._iuq_verdicts = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    if call.when == "setup" and call.excinfo is None:
        return
    if call.excinfo is None:
        status = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        status = "SKIP"
    else:
        status = "FAIL"
    details = "; ".join(v for k, v in item.user_properties if k == "detail")
    line = f"{status} {marker.args[0]}" + (f" | {details}" if details else "")
    item.config._iuq_verdicts.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config._iuq_verdicts:
        terminalreporter.section("acceptance criteria")
        for line in config._iuq_verdicts:
            terminalreporter.write_line(line)
