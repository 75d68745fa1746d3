import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stlplan import dynamics as dyn  # noqa: E402
from stlplan.mission import load_bundled  # noqa: E402


@pytest.fixture(scope="session")
def params():
    return dyn.default_hexarotor()


@pytest.fixture(scope="session")
def desk():
    return load_bundled("desk")


@pytest.fixture(scope="session")
def default_scenario():
    return load_bundled("default")


def hover_trajectory(params, p, N, Ts=0.1):
    x0 = dyn.hover_state(params, p=p)
    return dyn.rollout(np.zeros((N, params.n_rotors)), x0, params, Ts)
