import csv

import numpy as np
import pytest

from bamlab.lattice import l1_ball
from bamlab.operators import assemble, assemble_from_fields, assemble_torus, export_entries_csv
from bamlab.spectral import principal_eigenpair

from conftest import make_env, override_fields


def test_single_site_matrix():
    env = make_env(1, radius=1)
    op = assemble(env, [(0, 0)])
    expected = env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0))
    assert op.to_dense() == pytest.approx(np.array([[expected]]))


def test_empty_domain_rejected():
    env = make_env(2, radius=1)
    with pytest.raises(ValueError):
        assemble(env, [])


def test_constant_traps_reduce_to_plain_anderson():
    env = make_env(3, radius=2)
    env = override_fields(env, sigma=np.ones(len(env.box)))
    op = assemble(env, list(l1_ball((0, 0), 2).iter_sites()))
    dense = op.to_dense()
    off = dense[~np.eye(len(op.domain), dtype=bool)]
    vals = set(np.round(off[off != 0.0], 12))
    assert vals == {0.25}
    for i, z in enumerate(op.domain):
        assert dense[i, i] == pytest.approx(env.xi_at(z) - 1.0)


def test_two_site_hand_assembly():
    env = make_env(4, radius=2)
    sites = [(0, 0), (1, 0)]
    xi = {(0, 0): 3.0, (1, 0): 1.0}
    sigma = {(0, 0): 2.0, (1, 0): 1.0}
    xi_arr = env.xi.copy()
    sg_arr = env.sigma.copy()
    for z in sites:
        xi_arr[env.box.index_of(z)] = xi[z]
        sg_arr[env.box.index_of(z)] = sigma[z]
    env = override_fields(env, xi=xi_arr, sigma=sg_arr)
    op = assemble(env, sites)
    assert op.to_dense() == pytest.approx(np.array([[2.5, 0.25], [0.125, 0.0]]))


def test_matvec_zero_and_single():
    env = make_env(5, radius=1)
    op = assemble(env, [(0, 0)])
    assert op.matvec(np.zeros(1)) == pytest.approx(np.zeros(1))
    v = op.matvec(np.ones(1))
    assert v[0] == pytest.approx(env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0)))


def test_matvec_length_mismatch():
    env = make_env(6, radius=1)
    op = assemble(env, list(l1_ball((0, 0), 1).iter_sites()))
    with pytest.raises(ValueError):
        op.matvec(np.ones(3))


def test_matvec_agrees_with_dense_and_linear():
    rng = np.random.default_rng(11)
    env = make_env(7, radius=6)
    sites = sorted(
        {env.box.site_at(int(i)) for i in rng.choice(len(env.box), size=50, replace=False)}
    )
    op = assemble(env, sites)
    dense = op.to_dense()
    u = rng.normal(size=len(sites))
    v = rng.normal(size=len(sites))
    assert np.max(np.abs(op.matvec(u) - dense @ u)) <= 1e-12
    lhs = op.matvec(2.0 * u + 3.0 * v)
    rhs = 2.0 * op.matvec(u) + 3.0 * op.matvec(v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_similarity_spectra_agree():
    rng = np.random.default_rng(12)
    for seed in range(5):
        env = make_env(20 + seed, radius=6)
        sites = sorted(
            {env.box.site_at(int(i)) for i in rng.choice(len(env.box), size=30, replace=False)}
        )
        a = np.linalg.eigvals(assemble(env, sites).to_dense())
        s = np.linalg.eigvalsh(assemble(env, sites, symmetrize=True).to_dense())
        assert np.max(np.abs(np.sort(a.real) - np.sort(s))) <= 1e-9


def test_symmetrized_matrix_is_symmetric():
    env = make_env(13, radius=3)
    op = assemble(env, list(l1_ball((0, 0), 3).iter_sites()), symmetrize=True)
    dense = op.to_dense()
    assert np.max(np.abs(dense - dense.T)) <= 1e-12


def test_torus_zero_potential_columns_sum_to_zero():
    rng = np.random.default_rng(14)
    side, d = 5, 2
    import itertools

    sites = list(itertools.product(range(side), repeat=d))
    sigma = {z: float(1.0 + rng.random()) for z in sites}
    xi = {z: 0.0 for z in sites}
    op = assemble_torus(xi, sigma, side)
    cols = np.asarray(op.to_dense().sum(axis=0)).ravel()
    assert np.max(np.abs(cols)) <= 1e-12


def test_dirichlet_zero_potential_columns_nonpositive():
    env = make_env(15, radius=3)
    env = override_fields(env, xi=np.zeros(len(env.box)))
    op = assemble(env, list(l1_ball((0, 0), 3).iter_sites()))
    cols = np.asarray(op.to_dense().sum(axis=0)).ravel()
    assert np.max(cols) <= 1e-12


def test_monotonicity_hooks():
    # raising xi(y) raises lambda; raising sigma(y) off the peak lowers it
    rng = np.random.default_rng(16)
    for trial in range(20):
        env = make_env(100 + trial, radius=3)
        base = principal_eigenpair(env, (0, 0), 2).lam
        sites = list(l1_ball((0, 0), 2).iter_sites())
        y = sites[int(rng.integers(0, len(sites)))]
        bumped = env.xi.copy()
        bumped[env.box.index_of(y)] += 0.1
        up = principal_eigenpair(override_fields(env, xi=bumped), (0, 0), 2).lam
        assert up >= base - 1e-12

        peak = max(sites, key=env.xi_at)
        y2 = next(z for z in sites if z != peak)
        if base > env.xi_at(y2):
            heavier = env.sigma.copy()
            heavier[env.box.index_of(y2)] *= 2.0
            down = principal_eigenpair(override_fields(env, sigma=heavier), (0, 0), 2).lam
            assert down <= base + 1e-12


def test_entries_csv_roundtrip(tmp_path):
    env = make_env(17, radius=2)
    op = assemble(env, list(l1_ball((0, 0), 1).iter_sites()))
    path = tmp_path / "entries.csv"
    export_entries_csv(op, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    dense = op.to_dense()
    rebuilt = np.zeros_like(dense)
    for row in rows:
        rebuilt[int(row["row"]), int(row["col"])] = float(row["value"])
    assert np.array_equal(rebuilt, dense)


def test_assemble_from_fields_requires_sites():
    with pytest.raises(ValueError):
        assemble_from_fields((), [], [])
