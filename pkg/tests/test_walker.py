import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bamlab.config import LabConfig
from bamlab.environment import build_scales, sample_environment
from bamlab.evolution import evolve
from bamlab.lattice import l1_ball, l1_norm, origin
from bamlab.localisation import psi_functional, top_k
from bamlab.walker import (
    Path,
    chemical_distance,
    find_good_path,
    fk_estimate,
    path_weight,
    simulate_btm,
)

from conftest import make_env, override_fields


class TestTrajectories:
    def test_holding_time_mean(self):
        env = make_env(1, radius=1)
        rng = np.random.default_rng(0)
        holds = []
        for _ in range(20_000):
            tr = simulate_btm(env, (0, 0), 1e12, rng)
            holds.append(tr.jump_times[0])
        sigma = env.sigma_at((0, 0))
        se = sigma / math.sqrt(len(holds))
        assert abs(float(np.mean(holds)) - sigma) <= 3 * se

    def test_neighbour_choice_uniform(self):
        env = make_env(2, radius=1)
        rng = np.random.default_rng(1)
        counts = {}
        for _ in range(8000):
            tr = simulate_btm(env, (0, 0), 1e12, rng)
            step = tr.sites[1]
            counts[step] = counts.get(step, 0) + 1
        freq = np.array(sorted(counts.values()))
        chi2 = float(((freq - 2000.0) ** 2 / 2000.0).sum())
        p = 1.0 - stats.chi2.cdf(chi2, df=3)
        assert p > 1e-3

    def test_unit_traps_jump_count_poisson(self):
        env = make_env(3, radius=30)
        env = override_fields(env, sigma=np.ones(len(env.box)))
        rng = np.random.default_rng(2)
        t = 5.0
        counts = np.array([
            len(simulate_btm(env, (0, 0), t, rng).jump_times) for _ in range(4000)
        ])
        mean, var = float(counts.mean()), float(counts.var())
        se = math.sqrt(t / len(counts))
        assert abs(mean - t) <= 3 * se
        assert abs(var - t) <= 5 * math.sqrt(2 * t * t / len(counts))

    def test_structure(self):
        env = make_env(4, radius=3)
        rng = np.random.default_rng(3)
        tr = simulate_btm(env, (0, 0), 50.0, rng)
        for a, b in zip(tr.sites, tr.sites[1:]):
            assert l1_norm(tuple(x - y for x, y in zip(a, b))) == 1
        assert all(t1 < t2 for t1, t2 in zip(tr.jump_times, tr.jump_times[1:]))


class TestFeynmanKac:
    def test_time_zero(self):
        env = make_env(5, radius=2)
        rng = np.random.default_rng(4)
        est, se = fk_estimate(env, 0.0, (0, 0), 1000, rng)
        assert est == 1.0
        est, _ = fk_estimate(env, 0.0, (1, 0), 1000, rng)
        assert est == 0.0

    def test_minimum_samples(self):
        env = make_env(6, radius=1)
        with pytest.raises(ValueError):
            fk_estimate(env, 1.0, (0, 0), 10, np.random.default_rng(0))

    def test_single_site_box(self):
        env = make_env(7, radius=0, center=(0, 0))
        rng = np.random.default_rng(5)
        t = 1.5
        est, se = fk_estimate(env, t, (0, 0), 200_000, rng)
        expected = math.exp(t * (env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0))))
        assert abs(est - expected) <= 3 * max(se, 1e-12)

    def test_agrees_with_evolution(self):
        rng = np.random.default_rng(6)
        box = l1_ball((0, 0), 6)
        env = make_env(8, radius=6)
        mass = evolve(env, list(box.iter_sites()), 2.0)
        for target in [(0, 0), (1, 1), (2, 0)]:
            est, se = fk_estimate(env, 2.0, target, 60_000, rng)
            truth = math.exp(mass.log_mass_offset) * mass.weight_at(target)
            assert abs(est - truth) <= 3 * max(se, 1e-12)

    def test_all_zero_batch(self):
        env = make_env(9, radius=1)
        rng = np.random.default_rng(7)
        est, se = fk_estimate(env, 0.5, (0, 1), 1000, rng)
        if est == 0.0:
            assert se == 0.0


class TestPathWeight:
    def test_empty_path(self):
        env = make_env(10, radius=1)
        assert path_weight(Path(sites=[(0, 0)]), 99.0, env) == 1.0

    def test_one_step_value(self):
        env = make_env(11, radius=1)
        env.sigma[env.box.index_of((0, 0))] = 1.0
        gamma = env.xi_at((0, 0)) + 1.0
        w = path_weight(Path(sites=[(0, 0), (1, 0)]), gamma, env)
        assert w == pytest.approx(0.125, abs=1e-12)

    def test_gamma_precondition(self):
        env = make_env(12, radius=1)
        gamma = env.xi_at((0, 0)) - 0.5
        with pytest.raises(ValueError):
            path_weight(Path(sites=[(0, 0), (1, 0)]), gamma, env)

    def test_invalid_path_rejected(self):
        with pytest.raises(ValueError):
            Path(sites=[(0, 0), (2, 0)])

    def test_monte_carlo_cross_check(self):
        # empirical stopped weight of a fixed 3-step path
        env = make_env(13, radius=4)
        p = Path(sites=[(0, 0), (1, 0), (1, 1), (0, 1)])
        gamma = max(env.xi_at(z) for z in p.sites[:-1]) + 0.7
        w = path_weight(p, gamma, env)
        rng = np.random.default_rng(8)
        n = 1_000_000
        d = env.d
        vals = np.ones(n)
        alive = np.ones(n, dtype=bool)
        for step in range(3):
            z = p.sites[step]
            holds = rng.exponential(env.sigma_at(z), size=n)
            vals[alive] *= np.exp((env.xi_at(z) - gamma) * holds[alive])
            moves = rng.integers(0, 2 * d, size=n)
            from bamlab.lattice import neighbours

            target_idx = neighbours(z).index(p.sites[step + 1])
            alive &= moves == target_idx
        est = float(np.mean(np.where(alive, vals, 0.0)))
        se = float(np.std(np.where(alive, vals, 0.0)) / math.sqrt(n))
        assert abs(est - w) <= 3 * max(se, 1e-12)

    @given(st.floats(0.5, 5.0), st.floats(0.1, 3.0))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_gamma_and_sigma(self, bump, scale):
        env = make_env(14, radius=2)
        p = Path(sites=[(0, 0), (1, 0), (1, 1)])
        gamma0 = max(env.xi_at(z) for z in p.sites[:-1]) + 0.5
        w0 = path_weight(p, gamma0, env)
        assert path_weight(p, gamma0 + bump, env) <= w0 + 1e-15
        heavier = env.sigma.copy()
        for z in p.sites[:-1]:
            heavier[env.box.index_of(z)] *= 1.0 + scale
        env2 = override_fields(env, sigma=heavier)
        assert path_weight(p, gamma0, env2) <= w0 + 1e-15


class TestChemicalDistance:
    def test_all_open_equals_l1(self):
        region = l1_ball((0, 0), 40)
        rng = np.random.default_rng(9)
        for _ in range(1000):
            u = (int(rng.integers(-8, 9)), int(rng.integers(-8, 9)))
            v = (int(rng.integers(-8, 9)), int(rng.integers(-8, 9)))
            d = chemical_distance(lambda y: True, u, v, region)
            assert d == l1_norm(tuple(a - b for a, b in zip(u, v)))

    def test_detour(self):
        region = l1_ball((0, 0), 10)
        closed = {(1, 0)}
        assert chemical_distance(lambda y: y not in closed, (0, 0), (2, 0), region) == 4

    def test_blocked_target(self):
        region = l1_ball((0, 0), 10)
        ring = {z for z in l1_ball((3, 0), 1).iter_sites()}
        d = chemical_distance(lambda y: y not in ring, (0, 0), (3, 0), region,
                              endpoint_exempt=False)
        assert d == math.inf
        # with the endpoint exempt the neighbour ring still blocks
        d2 = chemical_distance(lambda y: y not in ring, (0, 0), (3, 0), region,
                               endpoint_exempt=True)
        assert d2 == math.inf

    def test_endpoint_exempt_variant(self):
        region = l1_ball((0, 0), 5)
        closed = {(2, 0)}
        assert chemical_distance(lambda y: y not in closed, (0, 0), (2, 0), region) == math.inf
        assert chemical_distance(
            lambda y: y not in closed, (0, 0), (2, 0), region, endpoint_exempt=True
        ) == 2

    def test_lower_bound_property(self):
        region = l1_ball((0, 0), 15)
        rng = np.random.default_rng(10)
        mask = {z for z in region.iter_sites() if rng.random() > 0.2}
        for _ in range(50):
            v = (int(rng.integers(-5, 6)), int(rng.integers(-5, 6)))
            d = chemical_distance(lambda y: y in mask, (0, 0), v, region)
            assert d >= l1_norm(v)

    def test_percentile_decreases_with_open_density(self):
        # 95th percentile of d/|v| falls towards 1 as the closed fraction shrinks
        rng = np.random.default_rng(11)
        v = (15, 15)
        region = l1_ball((0, 0), 45)
        region_sites = list(region.iter_sites())
        percentiles = []
        for q in (0.2, 0.1, 0.05):
            ratios = []
            for _ in range(120):
                closed = {z for z in region_sites if rng.random() < q}
                closed.discard((0, 0))
                closed.discard(v)
                dist = chemical_distance(lambda y: y not in closed, (0, 0), v, region)
                ratios.append(dist / l1_norm(v))
            percentiles.append(float(np.percentile(ratios, 95)))
        assert percentiles[0] >= percentiles[1] >= percentiles[2]
        assert percentiles[2] >= 1.0


def _good_path_replica(rep):
    cfg = LabConfig(trap_kind="weibull", mu=3.0, rho=1.0)
    pot, trap, d = cfg.potential(), cfg.trap(), cfg.dimension
    t = math.exp(math.e**2)
    scales = build_scales(t, pot, trap, d)
    box = l1_ball(origin(d), int(scales.L_t) + 2 * scales.R_L)
    seed = np.random.SeedSequence(entropy=314159, spawn_key=(rep,))
    env = sample_environment(box, pot, trap, seed)
    psi = psi_functional(env, scales, 0.0)
    finite = psi.finite_items()
    if not finite:
        return None
    z = top_k(psi, 1)[0][0]
    if z == origin(d):
        return None
    p = find_good_path(env, scales, z)
    if p is None:
        return False
    slack_bound = l1_norm(z) * (1.0 + _good_path_slack(scales, pot, trap))
    assert len(p) <= slack_bound
    assert p.sites[0] == origin(d) and p.sites[-1] == z
    return True


def _good_path_slack(scales, pot, trap):
    from bamlab.environment import good_path_length_slack

    return good_path_length_slack(scales, pot, trap)


class TestGoodPaths:
    def test_benign_environment_straight_path(self, lw_trap):
        env = make_env(15, radius=20)
        env = override_fields(env, xi=np.zeros(len(env.box)), sigma=np.ones(len(env.box)))
        scales = build_scales(16.5, env.pot, env.trap, 2)
        z = (4, -3)
        p = find_good_path(env, scales, z)
        assert p is not None
        assert len(p) == l1_norm(z)
        assert p.sites[0] == (0, 0) and p.sites[-1] == z
        # a shortest path moves monotonically towards the target
        for a, b in zip(p.sites, p.sites[1:]):
            assert l1_norm(tuple(x - y for x, y in zip(z, b))) < l1_norm(
                tuple(x - y for x, y in zip(z, a))
            )

    def test_blocked_ring_returns_none(self):
        env = make_env(16, radius=10)
        xi = np.zeros(len(env.box))
        for y in l1_ball((0, 0), 2).iter_sites():
            if l1_norm(y) == 1:
                xi[env.box.index_of(y)] = -1e6
        env = override_fields(env, xi=xi, sigma=np.ones(len(env.box)))
        scales = build_scales(16.5, env.pot, env.trap, 2)
        assert find_good_path(env, scales, (5, 0)) is None

    def test_origin_target_rejected(self):
        env = make_env(17, radius=3)
        scales = build_scales(16.5, env.pot, env.trap, 2)
        with pytest.raises(ValueError):
            find_good_path(env, scales, (0, 0))

    def test_success_frequency_at_desk_scale(self):
        # ensemble trend check: good paths to the localisation site exist in
        # at least 90% of replicas (threshold chosen empirically)
        with ProcessPoolExecutor(max_workers=2) as ex:
            results = [r for r in ex.map(_good_path_replica, range(200)) if r is not None]
        assert len(results) >= 150
        assert float(np.mean(results)) >= 0.90
