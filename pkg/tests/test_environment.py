import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bamlab.environment import (
    BudgetError,
    PotentialDistribution,
    ScaleError,
    TrapDistribution,
    build_scales,
    estimate_A,
    ln_ln,
    ln_ln_ln,
    sample_environment,
    scale_a,
    truncate_potential,
)
from bamlab.lattice import l1_ball

from conftest import make_env


class TestDistributions:
    def test_de_tail_value(self, de_pot):
        # P(xi > 0) = exp(-e^0) = e^{-1}
        assert de_pot.tail(0.0) == pytest.approx(math.exp(-1.0), abs=1e-15)

    def test_de_empirical_tail(self, de_pot):
        rng = np.random.default_rng(42)
        draws = de_pot.sample(rng.random(1_000_000))
        p = math.exp(-1.0)
        freq = float(np.mean(draws > 0.0))
        se = math.sqrt(p * (1 - p) / 1_000_000)
        assert abs(freq - p) <= 3 * se

    def test_lw_empirical_tail(self):
        # P(sigma > e) = exp(-(ln e)^2) = e^{-1}
        trap = TrapDistribution.log_weibull(2.0)
        rng = np.random.default_rng(43)
        draws = trap.sample(rng.random(1_000_000))
        p = math.exp(-1.0)
        freq = float(np.mean(draws > math.e))
        se = math.sqrt(p * (1 - p) / 1_000_000)
        assert abs(freq - p) <= 3 * se

    def test_lw_mu_validation(self):
        with pytest.raises(ValueError):
            TrapDistribution.log_weibull(1.0)
        with pytest.raises(ValueError):
            TrapDistribution.log_weibull(0.5)

    def test_traps_never_below_essinf(self):
        rng = np.random.default_rng(7)
        for trap in (
            TrapDistribution.log_weibull(1.5),
            TrapDistribution.pareto(2.0),
            TrapDistribution.weibull(2.0),
            TrapDistribution.constant(0.7),
        ):
            draws = trap.sample(rng.random(1_000_000))
            assert float(np.min(draws)) >= trap.delta_sigma - 1e-12

    def test_log_log_tail_slope_is_inverse_rho(self):
        pot = PotentialDistribution.double_exponential(2.5)
        h = 1e-5
        for r in (-1.0, 0.0, 2.0, 5.0):
            slope = (pot.log_log_tail(r + h) - pot.log_log_tail(r - h)) / (2 * h)
            assert abs(slope - 1.0 / 2.5) <= 1e-8

    def test_table_potential_matches_de(self, de_pot):
        rs = np.linspace(-30.0, 30.0, 601)
        tab = PotentialDistribution.from_table(rs, rs / 1.0, rho=1.0)
        xs = np.array([-2.0, 0.0, 1.5])
        assert np.allclose(tab.tail(xs), de_pot.tail(xs), rtol=1e-10)
        u = np.array([0.2, 0.5, 0.9])
        assert np.allclose(tab.sample(u), de_pot.sample(u), atol=1e-8)


class TestSampling:
    def test_same_seed_identical(self, de_pot, lw_trap):
        box = l1_ball((0, 0), 5)
        e1 = sample_environment(box, de_pot, lw_trap, 12345)
        e2 = sample_environment(box, de_pot, lw_trap, 12345)
        assert np.array_equal(e1.xi, e2.xi)
        assert np.array_equal(e1.sigma, e2.sigma)

    def test_different_seed_differs(self, de_pot, lw_trap):
        box = l1_ball((0, 0), 5)
        e1 = sample_environment(box, de_pot, lw_trap, 1)
        e2 = sample_environment(box, de_pot, lw_trap, 2)
        assert not np.array_equal(e1.xi, e2.xi)

    def test_empirical_exceedance_count_at_a_L(self, de_pot, lw_trap):
        # fraction of sites above a_L is L^{-d}, pooled over environments
        L, d, n_env = 100, 2, 20
        a = scale_a(L, de_pot, d)
        assert de_pot.tail(a) == pytest.approx(L ** (-d), rel=1e-9)
        box = l1_ball((0, 0), L)
        count = 0
        for s in range(n_env):
            env = sample_environment(box, de_pot, lw_trap, 9000 + s)
            count += int(np.count_nonzero(env.xi > a))
        mean = n_env * len(box) * L ** (-d)
        se = math.sqrt(n_env * len(box) * L ** (-d))
        assert abs(count - mean) <= 4 * se


class TestScales:
    def test_scale_a_closed_form(self, de_pot):
        t = math.e**math.e
        assert scale_a(t, de_pot, 2) == pytest.approx(math.log(2 * math.e), abs=1e-12)
        pot2 = PotentialDistribution.double_exponential(2.0)
        assert scale_a(t, pot2, 2) == pytest.approx(2 * math.log(2 * math.e), abs=1e-12)

    def test_scale_a_slow_convergence(self, de_pot):
        t = 1e12
        ratio = scale_a(t, de_pot, 2) / ln_ln(t)
        assert abs(ratio - 1.0) <= 0.25

    def test_scale_a_too_small(self, de_pot):
        with pytest.raises(ScaleError):
            scale_a(1.2, de_pot, 2)

    def test_build_scales_examples(self, de_pot):
        trap = TrapDistribution.log_weibull(2.0)
        t = math.exp(math.e**2)
        s = build_scales(t, de_pot, trap, 2)
        assert s.d_t == pytest.approx(1.0 / (2 * math.e**2), rel=1e-12)
        assert s.L_t == pytest.approx(2 * t, rel=1e-12)
        assert s.r_t == pytest.approx(t * s.d_t / math.log(2.0), rel=1e-12)
        # q_sigma at mu = 2, rho = 1, d = 2: e^2 / 2
        assert s.q_sigma == pytest.approx(math.e**2 / 2.0, rel=1e-12)

    def test_mesoscopic_radius_monotone(self, de_pot, lw_trap):
        prev = 0
        for t in (16.0, 30.0, 100.0, 1000.0, 1e6):
            s = build_scales(t, de_pot, lw_trap, 2)
            assert s.R_L >= 1
            assert s.R_L >= prev
            prev = s.R_L

    def test_h_satisfies_defining_inequality(self, de_pot):
        trap = TrapDistribution.weibull(3.0)
        for t in (30.0, 1e3, 1e8, 1e30):
            s = build_scales(t, de_pot, trap, 2)
            assert 0 < s.h_t <= 1.0
            if s.h_t < 1.0:
                rhs = 10.0 * max(
                    1.0 / math.log(s.a_t),
                    float(trap.tail(math.exp(s.h_t**2 * math.log(s.a_t)))),
                    float(de_pot.lower_cdf(-s.a_t * s.h_t**2)),
                )
                assert s.h_t >= rhs - 1e-9

    def test_t_below_ee_rejected(self, de_pot, lw_trap):
        with pytest.raises(ScaleError):
            build_scales(10.0, de_pot, lw_trap, 2)

    def test_iterated_log_conventions(self):
        assert ln_ln(1.0) == 0.0
        assert ln_ln_ln(5.0) == 0.0
        assert ln_ln_ln(math.e**math.e) == 0.0

    def test_L_star_consistency(self, de_pot, lw_trap):
        # r evaluated at the inverted point recovers t
        from bamlab.environment import _distance_scale, _invert_distance_scale

        for t in (30.0, 200.0, 1618.0):
            u = _invert_distance_scale(t, de_pot, 2)
            assert u is not None
            assert _distance_scale(u, de_pot, 2) == pytest.approx(t, rel=1e-6)
            s = build_scales(t, de_pot, lw_trap, 2)
            assert s.L_star == pytest.approx(u * ln_ln(u), rel=1e-6)
            assert s.R_star >= 1


class TestTruncation:
    def test_center_untouched_when_large(self):
        env = make_env(5, radius=3)
        env.xi[env.box.index_of((0, 0))] = 10.0
        out = truncate_potential(env, (0, 0), 200.0)
        assert out.xi_at((0, 0)) == 10.0

    def test_off_center_clamped(self):
        env = make_env(6, radius=3)
        env.xi[env.box.index_of((1, 0))] = 10.0
        L = 200.0
        out = truncate_potential(env, (0, 0), L)
        level = scale_a(L, env.pot, 2) - 4.0 / env.trap.delta_sigma
        assert out.xi_at((1, 0)) == pytest.approx(level, abs=1e-12)

    def test_idempotent(self):
        env = make_env(7, radius=3)
        once = truncate_potential(env, (0, 0), 150.0)
        twice = truncate_potential(once, (0, 0), 150.0)
        assert np.array_equal(once.xi, twice.xi)

    @given(st.floats(-20, 20), st.floats(-20, 20))
    @settings(max_examples=50, deadline=None)
    def test_truncation_idempotence_property(self, v_center, v_off):
        env = make_env(8, radius=1)
        env.xi[env.box.index_of((0, 0))] = v_center
        env.xi[env.box.index_of((0, 1))] = v_off
        once = truncate_potential(env, (0, 0), 60.0)
        twice = truncate_potential(once, (0, 0), 60.0)
        assert np.array_equal(once.xi, twice.xi)


class TestEstimateA:
    def test_budget_error(self, de_pot, lw_trap):
        with pytest.raises(BudgetError):
            estimate_A(30.0, de_pot, lw_trap, 2, seed=1, m_samples=100)

    def test_below_a_t_and_bracket(self, de_pot, lw_trap):
        t = 25.0
        a = scale_a(t, de_pot, 2)
        val = estimate_A(t, de_pot, lw_trap, 2, seed=2, m_samples=80_000)
        assert val <= a + 1e-9
        assert val >= a - 5.0

    def test_quantile_monotonicity(self, de_pot, lw_trap):
        t = 25.0
        lo = estimate_A(t, de_pot, lw_trap, 2, seed=3, m_samples=80_000,
                        level=1.0 - 2.0 * t**-2)
        hi = estimate_A(t, de_pot, lw_trap, 2, seed=3, m_samples=80_000,
                        level=1.0 - t**-2)
        assert lo <= hi

    def test_constant_traps_radius_zero_closed_form(self, de_pot):
        # lambda-hat = clipped xi - 1, so the quantile is the clipped-DE quantile
        trap = TrapDistribution.constant(1.0)
        t, d = 25.0, 2
        m = 200_000
        val = estimate_A(t, de_pot, trap, d, seed=4, m_samples=m, radius=0)
        # analytic (1 - t^{-d}) quantile of xi - 1 (clipping far below)
        q = 1.0 - t ** (-d)
        x = math.log(-math.log(q))  # tail(x) = 1 - q
        expected = x - 1.0
        # Monte Carlo quantile error: density at the point
        dens = float(de_pot.density(x))
        se = math.sqrt(q * (1 - q) / m) / dens
        assert abs(val - expected) <= 4 * se
