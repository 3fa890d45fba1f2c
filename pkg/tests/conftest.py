from __future__ import annotations

import sys

import pytest

from qspace.accmodel import synth_lut
from qspace.archspace import Hyperspace
from qspace.costmodel import SyntheticDevice, synth_samples
from qspace.predictor import train_predictor

from toys import fixture_path


@pytest.fixture(scope="session")
def cpu_hs():
    return Hyperspace.preset("cpu_vnni")


@pytest.fixture(scope="session")
def mobile_hs():
    return Hyperspace.preset("pixel4")


@pytest.fixture(scope="session")
def cpu_device():
    return SyntheticDevice.preset("synth_cpu")


@pytest.fixture(scope="session")
def mobile_device():
    return SyntheticDevice.preset("synth_mobile")


@pytest.fixture(scope="session")
def cpu_predictor(cpu_device):
    return train_predictor(synth_samples(cpu_device, seed=0), cpu_device.name, cpu_device.granularity)


@pytest.fixture(scope="session")
def mobile_predictor(mobile_device):
    return train_predictor(synth_samples(mobile_device, seed=0), mobile_device.name,
                           mobile_device.granularity)


@pytest.fixture(scope="session")
def cpu_lut(cpu_hs):
    return synth_lut(cpu_hs, 0)


@pytest.fixture(scope="session")
def toy_hs():
    return Hyperspace.from_json(fixture_path("toy_hyperspace.json"))


@pytest.fixture(scope="session")
def toy_lut(toy_hs):
    return synth_lut(toy_hs, 0)


@pytest.fixture(scope="session")
def models_hs():
    return Hyperspace.from_json(fixture_path("toy_models.json"))


@pytest.fixture(scope="session")
def models_lut(models_hs):
    return synth_lut(models_hs, 0)


@pytest.fixture(scope="session")
def evo_hs():
    return Hyperspace.from_json(fixture_path("toy_evolution.json"))


@pytest.fixture(scope="session")
def evo_lut(evo_hs):
    return synth_lut(evo_hs, 0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
