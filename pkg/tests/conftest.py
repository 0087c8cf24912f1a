import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nomadsim.bodies import ParticleSet


@pytest.fixture
def rng():
    return np.random.default_rng(20080613)


@pytest.fixture
def merger_2048():
    from nomadsim.bodies import MergerConfig, make_merger_ics

    return make_merger_ics(MergerConfig(n_per_galaxy=1024, seed=3))


@pytest.fixture
def random_set(rng):
    """A small random bound-ish cloud with two SMBH-flagged particles."""
    n = 64
    smbh = np.zeros(n, dtype=bool)
    smbh[:2] = True
    return ParticleSet(
        ids=np.arange(n),
        masses=rng.uniform(0.5, 2.0, n) / n,
        positions=rng.normal(0.0, 1.0, (n, 3)),
        velocities=rng.normal(0.0, 0.3, (n, 3)),
        smbh=smbh,
        time=0.0,
    )
