import numpy as np
import pytest

from shelfscan.engine.evalkit import generate_pattern
from shelfscan.engine.imagecore import RasterImage


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture(scope="session")
def pattern_art():
    """A textured 160x120 RGB product pattern."""

    return generate_pattern(np.random.default_rng(11), 160, 120)


@pytest.fixture(scope="session")
def second_art():
    return generate_pattern(np.random.default_rng(23), 160, 120)


@pytest.fixture
def gradient_image():
    """A 6x4 float ramp, value = 10 * x + y."""

    ys, xs = np.mgrid[0:4, 0:6]
    return RasterImage((10.0 * xs + ys).astype(np.float64))


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """Keep the global config file inside the test's temporary directory."""

    from shelfscan.utils.config import Config

    monkeypatch.setattr(Config, "PATH", tmp_path / ".shelfscan.json")
