import sys
from pathlib import Path

import pytest
from hypothesis import settings

from zenotbs.model import LatticeSpec, default_aah

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

PRESETS = Path(__file__).resolve().parents[1] / "presets"


@pytest.fixture
def aah():
    return default_aah()


@pytest.fixture
def two_level():
    return LatticeSpec.two_level()


@pytest.fixture
def presets():
    return PRESETS
