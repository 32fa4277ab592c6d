from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from semcvdcm.simulation.simulator import SyntheticDataset, simulate_dataset  # noqa: E402
from semcvdcm.simulation.spec import SyntheticSpec  # noqa: E402


@pytest.fixture
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(n_observations=300, k=12, n_zones=6, seed=3)


@pytest.fixture
def small_synthetic(small_spec: SyntheticSpec) -> SyntheticDataset:
    return simulate_dataset(small_spec)
