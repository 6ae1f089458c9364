"""Shared fixtures: reference fields and small bounds."""

import math
import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))
os.environ.setdefault('LOG_FILE', 'none')

from src.config import RunConfig  # noqa: E402
from src.field_model import MagneticSystem  # noqa: E402

QUADRATIC_WELL_TERMS = [
    [],
    [{'coeff': 1, 'powers': [1, 0]}, {'coeff': '1/3', 'powers': [3, 0]}, {'coeff': 1, 'powers': [1, 2]}],
]


def block_terms(scale: float):
    """Two decoupled copies of the quadratic well, the second scaled by ``scale``."""
    return [
        [],
        [{'coeff': 1, 'powers': [1, 0, 0, 0]}, {'coeff': '1/3', 'powers': [3, 0, 0, 0]},
         {'coeff': 1, 'powers': [1, 2, 0, 0]}],
        [],
        [{'coeff': scale, 'powers': [0, 0, 1, 0]}, {'coeff': scale / 3, 'powers': [0, 0, 3, 0]},
         {'coeff': scale, 'powers': [0, 0, 1, 2]}],
    ]


@pytest.fixture(scope='session')
def quadratic_well():
    """b(q) = 1 + q1^2 + q2^2 on [-3, 3]^2."""
    return MagneticSystem.from_terms(2, QUADRATIC_WELL_TERMS, (3.0, 3.0), 'quadratic-well')


@pytest.fixture(scope='session')
def landau_system():
    return MagneticSystem.from_terms(2, [[], [{'coeff': 1, 'powers': [1, 0]}]], (3.0, 3.0), 'landau')


@pytest.fixture(scope='session')
def free_system():
    """A = 0: the Dirichlet Laplacian, with a closed-form discrete spectrum."""
    return MagneticSystem.from_terms(2, [[], []], (1.0, 1.0), 'free')


@pytest.fixture(scope='session')
def blocks_4d():
    """beta(0) = (1, sqrt 2)."""
    return MagneticSystem.from_terms(4, block_terms(math.sqrt(2)), (2.5,) * 4, 'blocks-4d')


@pytest.fixture
def quadratic_config():
    return RunConfig.from_preset('quadratic-well-2d')


@pytest.fixture
def minimal_config_dict():
    return {
        'name': 'minimal',
        'system': {'dimension': 2, 'potential': QUADRATIC_WELL_TERMS, 'box': [3.0, 3.0]},
    }
