import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xdmap.config import PipelineConfig
from xdmap.pipeline import run_mapping, simulate_from_config
from xdmap.synthetic import NoiseSpec

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Full 50-frame reference sequences take a few seconds to simulate and ~15 s
# to map, so they are shared across the whole session.


@pytest.fixture(scope="session")
def reference_config():
    return PipelineConfig(seed=1)


@pytest.fixture(scope="session")
def reference_sequence(reference_config):
    return simulate_from_config(reference_config)


@pytest.fixture(scope="session")
def reference_map(reference_sequence, reference_config):
    return run_mapping(reference_sequence, reference_config)


POSE_NOISE = NoiseSpec(0.0, 0.02, math.radians(0.1), 0.0, 0.0)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion, printed after the run

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records the verdict and prints it."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n: int, passed: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        results[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
