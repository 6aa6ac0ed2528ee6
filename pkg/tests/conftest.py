import dataclasses

import numpy as np
import pytest

from bamlab.environment import (
    Environment,
    PotentialDistribution,
    TrapDistribution,
    sample_environment,
)
from bamlab.lattice import l1_ball


@pytest.fixture(scope="session")
def de_pot():
    return PotentialDistribution.double_exponential(1.0)


@pytest.fixture(scope="session")
def lw_trap():
    return TrapDistribution.log_weibull(2.0)


def make_env(seed, radius=4, center=(0, 0), pot=None, trap=None):
    pot = pot or PotentialDistribution.double_exponential(1.0)
    trap = trap or TrapDistribution.log_weibull(2.0)
    return sample_environment(l1_ball(center, radius), pot, trap, seed)


def separated_env(seed, radius=4, margin=3.0, extra=0.0):
    """Random environment whose origin value stands clear of the rest."""
    env = make_env(seed, radius=radius)
    xi = env.xi.copy()
    c = env.box.index_of((0, 0))
    others = np.delete(np.arange(len(env.box)), c)
    xi[c] = xi[others].max() + margin / env.trap.delta_sigma + extra
    return dataclasses.replace(env, xi=xi)


def override_fields(env, xi=None, sigma=None):
    changes = {}
    if xi is not None:
        changes["xi"] = np.asarray(xi, dtype=float)
    if sigma is not None:
        changes["sigma"] = np.asarray(sigma, dtype=float)
    return dataclasses.replace(env, **changes)
