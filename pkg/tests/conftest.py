import sys
from pathlib import Path

import numpy as np
import pytest

from cocultrl import dynamics as dyn
from cocultrl.policy import Architecture, PolicyParams

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


@pytest.fixture
def model():
    return dyn.ModelParams()


@pytest.fixture
def x0():
    return dyn.DEFAULT_INITIAL_STATE.to_array()


@pytest.fixture
def arch():
    return Architecture()


def random_params(arch, rng, scale=0.5):
    """Dense random parameters so every coordinate carries gradient."""
    return PolicyParams(arch, rng.normal(scale=scale, size=arch.n_params))


@pytest.fixture
def rparams(arch):
    return random_params(arch, np.random.default_rng(7))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
