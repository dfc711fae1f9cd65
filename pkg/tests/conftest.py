import numpy as np
import pytest

from abscov.channel import ChannelParams
from abscov.env import Environment, BuildingBlock, generate_environment


@pytest.fixture(scope="session")
def default_env():
    return generate_environment(1, 1000.0, 31.25, 200)


@pytest.fixture(scope="session")
def empty_env():
    return generate_environment(1, 1000.0, 31.25, 0)


@pytest.fixture(scope="session")
def default_params():
    return ChannelParams.from_db(n_abs=5)


def spread_gu_positions(env, m, rng, k, min_cell_gap=1):
    """Valid GU positions with at most one GU per k-grid cell."""
    from abscov.env import gu_positions_valid

    cell = env.area_side / k
    taken = set()
    out = []
    while len(out) < m:
        p = rng.uniform(0.0, env.area_side, 2)
        c = (int(p[1] // cell), int(p[0] // cell))
        if c in taken or not gu_positions_valid(env, p[None, :])[0]:
            continue
        taken.add(c)
        out.append(p)
    return np.array(out)


def single_building_env(x, y, side, height, d=1000.0, hp=60.0, hq=1.0):
    return Environment(d, side, hp, hq, [BuildingBlock(x, y, side, height)])
