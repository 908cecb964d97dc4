import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from intensitynet import GridSpec


@pytest.fixture
def default_grid():
    return GridSpec()


@pytest.fixture
def small_grid():
    return GridSpec(n_cells=16)
