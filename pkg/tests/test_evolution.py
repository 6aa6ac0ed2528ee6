import csv
import itertools
import math

import numpy as np
import pytest
from scipy.linalg import expm

from bamlab.evolution import evolve, export_snapshot, localisation_ratio
from bamlab.lattice import l1_ball
from bamlab.operators import assemble, assemble_torus
from bamlab.evolution import evolve_matrix

from conftest import make_env, override_fields


def test_single_site_exact():
    env = make_env(1, radius=1)
    m = evolve(env, [(0, 0)], 3.0)
    expected = 3.0 * (env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0)))
    assert m.log_mass_offset == pytest.approx(expected, rel=1e-8)
    assert m.weights == pytest.approx(np.ones(1))


def test_time_zero_is_point_mass():
    env = make_env(2, radius=2)
    m = evolve(env, list(l1_ball((0, 0), 2).iter_sites()), 0.0)
    assert m.weight_at((0, 0)) == 1.0
    assert m.log_mass_offset == 0.0


def test_two_site_closed_form():
    env = make_env(3, radius=2)
    sites = [(0, 0), (1, 0)]
    op = assemble(env, sites)
    dense = op.to_dense()
    start = np.zeros(2)
    start[op.index[(0, 0)]] = 1.0
    t = 2.5
    exact = expm(dense * t) @ start
    m = evolve(env, sites, t)
    approx = math.exp(m.log_mass_offset) * m.weights
    assert approx == pytest.approx(exact, rel=1e-8)


def test_negative_time_rejected():
    env = make_env(4, radius=1)
    with pytest.raises(ValueError):
        evolve(env, [(0, 0)], -1.0)


def test_zero_potential_dirichlet_mass_decreases():
    env = make_env(5, radius=3)
    env = override_fields(env, xi=np.zeros(len(env.box)))
    domain = list(l1_ball((0, 0), 3).iter_sites())
    logs = [evolve(env, domain, t).log_mass_offset for t in (0.0, 0.5, 1.5, 3.0)]
    assert all(b <= a + 1e-10 for a, b in zip(logs, logs[1:]))


def test_torus_mass_conservation():
    rng = np.random.default_rng(6)
    side = 4
    sites = list(itertools.product(range(side), repeat=2))
    sigma = {z: float(1.0 + 2.0 * rng.random()) for z in sites}
    xi = {z: 0.0 for z in sites}
    op = assemble_torus(xi, sigma, side)
    weights, log_mass, _ = evolve_matrix(op.matrix, 0, 5.0)
    assert abs(log_mass) <= 1e-8
    assert weights.sum() == pytest.approx(1.0)


def test_global_bounds():
    env = make_env(7, radius=3)
    domain = list(l1_ball((0, 0), 3).iter_sites())
    t = 4.0
    m = evolve(env, domain, t)
    max_xi = max(env.xi_at(z) for z in domain)
    assert m.log_mass_offset <= t * max_xi + 1e-8
    # point mass at the origin never falls below pure survival
    assert m.log_mass_at((0, 0)) >= t * (env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0))) - 1e-6


def test_domain_monotonicity_per_site():
    env = make_env(8, radius=4)
    small = list(l1_ball((0, 0), 2).iter_sites())
    large = list(l1_ball((0, 0), 4).iter_sites())
    t = 2.0
    m_small = evolve(env, small, t)
    m_large = evolve(env, large, t)
    for z in small:
        u_small = math.exp(m_small.log_mass_offset) * m_small.weight_at(z)
        u_large = math.exp(m_large.log_mass_offset) * m_large.weight_at(z)
        assert u_small <= u_large * (1 + 1e-6) + 1e-12


def test_ratio_examples():
    env = make_env(9, radius=2)
    domain = list(l1_ball((0, 0), 2).iter_sites())
    m0 = evolve(env, domain, 0.0)
    assert localisation_ratio(m0, (0, 0)) == 1.0
    assert localisation_ratio(m0, (1, 0)) == 0.0
    with pytest.raises(KeyError):
        localisation_ratio(m0, (9, 9))
    # weights are scale free by construction
    m1 = evolve(env, domain, 1.5)
    assert abs(m1.weights.sum() - 1.0) <= 1e-12
    assert 0.0 <= localisation_ratio(m1, (0, 0)) <= 1.0


def test_nonnegativity():
    env = make_env(10, radius=4)
    m = evolve(env, list(l1_ball((0, 0), 4).iter_sites()), 3.0)
    assert m.weights.min() >= 0.0


def test_custom_start_site():
    env = make_env(11, radius=3)
    domain = list(l1_ball((0, 0), 2).iter_sites())
    m = evolve(env, domain, 0.0, start=(1, 0))
    assert m.weight_at((1, 0)) == 1.0


def test_snapshot_roundtrip(tmp_path):
    env = make_env(12, radius=2)
    m = evolve(env, list(l1_ball((0, 0), 2).iter_sites()), 1.0)
    path = tmp_path / "snap.csv"
    export_snapshot(m, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(m.domain)
    for row, z, w in zip(rows, m.domain, m.weights):
        assert (int(row["z0"]), int(row["z1"])) == z
        assert float(row["weight"]) == float(w)
        assert float(row["log_mass_offset"]) == m.log_mass_offset
