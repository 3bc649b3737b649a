import numpy as np
import pytest
from hypothesis import settings

from sphsynth.scenegen import default_scene, make_rig
from sphsynth.sphere import ErpGrid

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def rig_128():
    """Default textured rig at 128x64 with 2x2 supersampled color."""
    return make_rig(default_scene(0), (0.0, 0.0, 0.0), 0.26, ErpGrid(128, 64), supersample=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one summary line per acceptance criterion."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
