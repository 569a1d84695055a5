from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from pilotwave import IntegratorConfig, M4_RELAXING_PHASES, M4_RESIDUE_PHASES, SuperpositionSpec


@pytest.fixture(scope="session")
def m4_spec() -> SuperpositionSpec:
    """The four-mode phase set yielding confinement and an H-bar residue."""
    return SuperpositionSpec(2, M4_RESIDUE_PHASES)


@pytest.fixture(scope="session")
def m4_alt_spec() -> SuperpositionSpec:
    """The four-mode phase set that relaxes with no discernible residue."""
    return SuperpositionSpec(2, M4_RELAXING_PHASES)


@pytest.fixture(scope="session")
def ground_spec() -> SuperpositionSpec:
    return SuperpositionSpec(1, np.zeros((1, 1)))


@pytest.fixture(scope="session")
def default_cfg() -> IntegratorConfig:
    return IntegratorConfig()
