"""Random environments and the deterministic scale family.

The potential field xi and the trapping landscape sigma are i.i.d. across
sites and independent of each other.  Both are sampled by inverse-CDF
transforms of uniforms drawn in a fixed (lexicographic) site order, so an
environment is fully determined by its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .lattice import Ball, Site, l1_ball, l1_norm, origin

E = math.e
EE = math.e**math.e


class ScaleError(ValueError):
    """Raised when a scale is requested outside its domain of definition."""


class BudgetError(ValueError):
    """Monte Carlo budget too small for the requested quantile."""


def ln_ln(t: float) -> float:
    """Iterated logarithm ln ln (t v e)."""
    return math.log(math.log(max(t, E)))


def ln_ln_ln(t: float) -> float:
    """Iterated logarithm ln ln ln (t v e^e)."""
    return math.log(math.log(math.log(max(t, EE))))


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class PotentialDistribution:
    """Upper-tail family of the potential field xi.

    ``log_log_tail`` is F(r) = ln(-ln P(xi > r)); for the exactly
    double-exponential family F(r) = r / rho.
    """

    kind: str
    rho: float = 1.0
    gamma: float = 1.0
    table_r: Optional[np.ndarray] = None
    table_f: Optional[np.ndarray] = None

    @staticmethod
    def double_exponential(rho: float) -> "PotentialDistribution":
        if rho <= 0:
            raise ValueError("rho must be positive")
        return PotentialDistribution(kind="double_exponential", rho=float(rho))

    @staticmethod
    def weibull(gamma: float) -> "PotentialDistribution":
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        return PotentialDistribution(kind="weibull", gamma=float(gamma))

    @staticmethod
    def from_table(r: np.ndarray, f: np.ndarray, rho: float) -> "PotentialDistribution":
        """Tabulated F on an increasing grid; rho is the limit of 1/F'."""
        r = np.asarray(r, dtype=float)
        f = np.asarray(f, dtype=float)
        if r.ndim != 1 or r.shape != f.shape or len(r) < 2:
            raise ValueError("need matching 1-d tables with >= 2 points")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("tables must be strictly increasing")
        return PotentialDistribution(kind="table", rho=float(rho), table_r=r, table_f=f)

    # -- tails ---------------------------------------------------------

    def tail(self, x):
        """P(xi > x)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            if self.kind == "double_exponential":
                out = np.exp(-np.exp(x / self.rho))
            elif self.kind == "weibull":
                out = np.where(x > 0, np.exp(-np.maximum(x, 0.0) ** self.gamma), 1.0)
            else:
                out = np.exp(-np.exp(self._table_F(x)))
        return out if out.ndim else float(out)

    def lower_cdf(self, x):
        """P(xi <= x)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            if self.kind == "double_exponential":
                out = -np.expm1(-np.exp(x / self.rho))
            else:
                out = 1.0 - np.asarray(self.tail(x))
        return out if out.ndim else float(out)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            if self.kind == "double_exponential":
                u = np.exp(x / self.rho)
                out = u / self.rho * np.exp(-u)
            elif self.kind == "weibull":
                xp = np.maximum(x, 0.0)
                out = np.where(
                    x > 0, self.gamma * xp ** (self.gamma - 1.0) * np.exp(-(xp**self.gamma)), 0.0
                )
            else:
                h = 1e-6
                out = (self.lower_cdf(x + h) - self.lower_cdf(x - h)) / (2 * h)
        return out if out.ndim else float(out)

    def log_log_tail(self, r):
        """F(r) = ln(-ln P(xi > r))."""
        r = np.asarray(r, dtype=float)
        if self.kind == "double_exponential":
            out = r / self.rho
        elif self.kind == "weibull":
            out = self.gamma * np.log(r)
        else:
            out = self._table_F(r)
        return out if out.ndim else float(out)

    def _table_F(self, r):
        # linear continuation beyond the table ends
        tr, tf = self.table_r, self.table_f
        slope_lo = (tf[1] - tf[0]) / (tr[1] - tr[0])
        slope_hi = (tf[-1] - tf[-2]) / (tr[-1] - tr[-2])
        out = np.interp(r, tr, tf)
        out = np.where(r < tr[0], tf[0] + (r - tr[0]) * slope_lo, out)
        out = np.where(r > tr[-1], tf[-1] + (r - tr[-1]) * slope_hi, out)
        return out

    def sample(self, u):
        """Inverse-tail transform of uniforms in (0, 1): P(X > x) = u maps to x."""
        u = np.maximum(np.asarray(u, dtype=float), 1e-300)
        if self.kind == "double_exponential":
            out = self.rho * np.log(-np.log(u))
        elif self.kind == "weibull":
            out = (-np.log(u)) ** (1.0 / self.gamma)
        else:
            g = np.log(-np.log(u))
            tr, tf = self.table_r, self.table_f
            slope_lo = (tf[1] - tf[0]) / (tr[1] - tr[0])
            slope_hi = (tf[-1] - tf[-2]) / (tr[-1] - tr[-2])
            out = np.interp(g, tf, tr)
            out = np.where(g < tf[0], tr[0] + (g - tf[0]) / slope_lo, out)
            out = np.where(g > tf[-1], tr[-1] + (g - tf[-1]) / slope_hi, out)
        return out if out.ndim else float(out)

    def solve_exceedance_level(self, target: float) -> float:
        """a solving e^{F(a)} = target, clamped below at 1."""
        if target <= 1.0:
            raise ScaleError(f"no exceedance level: target {target} <= 1")
        g = math.log(target)
        if self.kind == "double_exponential":
            a = self.rho * g
        elif self.kind == "weibull":
            a = target ** (1.0 / self.gamma)
        else:
            tf, tr = self.table_f, self.table_r
            if g <= tf[0]:
                slope = (tf[1] - tf[0]) / (tr[1] - tr[0])
                a = tr[0] + (g - tf[0]) / slope
            elif g >= tf[-1]:
                slope = (tf[-1] - tf[-2]) / (tr[-1] - tr[-2])
                a = tr[-1] + (g - tf[-1]) / slope
            else:
                a = brentq(lambda r: float(self._table_F(np.asarray(r))) - g, tr[0], tr[-1])
        return max(float(a), 1.0)

    def local_rho(self, a: float) -> float:
        """1/F'(a); constant for the double-exponential family."""
        if self.kind == "double_exponential":
            return self.rho
        if self.kind == "weibull":
            return a / self.gamma
        h = max(1e-6, 1e-6 * abs(a))
        slope = (self.log_log_tail(a + h) - self.log_log_tail(a - h)) / (2 * h)
        return 1.0 / slope


@dataclass(frozen=True)
class TrapDistribution:
    """Law of the trapping landscape sigma; sigma >= delta_sigma > 0."""

    kind: str
    mu: Optional[float] = None
    value: float = 1.0

    @staticmethod
    def constant(c: float) -> "TrapDistribution":
        if c <= 0:
            raise ValueError("constant trap must be positive")
        return TrapDistribution(kind="constant", value=float(c))

    @staticmethod
    def log_weibull(mu: float) -> "TrapDistribution":
        if mu <= 1:
            raise ValueError("log-Weibull traps require mu > 1")
        return TrapDistribution(kind="log_weibull", mu=float(mu))

    @staticmethod
    def pareto(mu: float) -> "TrapDistribution":
        if mu <= 0:
            raise ValueError("Pareto traps require mu > 0")
        return TrapDistribution(kind="pareto", mu=float(mu))

    @staticmethod
    def weibull(mu: float) -> "TrapDistribution":
        if mu <= 0:
            raise ValueError("Weibull traps require mu > 0")
        return TrapDistribution(kind="weibull", mu=float(mu))

    @property
    def delta_sigma(self) -> float:
        return self.value if self.kind == "constant" else 1.0

    @property
    def unbounded(self) -> bool:
        return self.kind != "constant"

    def tail(self, x):
        """P(sigma > x)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            if self.kind == "constant":
                out = np.where(x < self.value, 1.0, 0.0)
            elif self.kind == "log_weibull":
                out = np.where(x >= 1, np.exp(-np.abs(np.log(np.maximum(x, 1.0))) ** self.mu), 1.0)
            elif self.kind == "pareto":
                out = np.where(x >= 1, np.maximum(x, 1.0) ** (-self.mu), 1.0)
            else:
                out = np.where(x >= 1, np.exp(-np.maximum(x - 1.0, 0.0) ** self.mu), 1.0)
        return out if out.ndim else float(out)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.kind == "constant":
                out = np.zeros_like(x)
            elif self.kind == "log_weibull":
                lx = np.log(np.maximum(x, 1.0))
                out = np.where(
                    x > 1, self.mu * lx ** (self.mu - 1.0) / np.maximum(x, 1.0) * np.exp(-(lx**self.mu)), 0.0
                )
            elif self.kind == "pareto":
                out = np.where(x > 1, self.mu * np.maximum(x, 1.0) ** (-self.mu - 1.0), 0.0)
            else:
                xm = np.maximum(x - 1.0, 0.0)
                out = np.where(x > 1, self.mu * xm ** (self.mu - 1.0) * np.exp(-(xm**self.mu)), 0.0)
        return out if out.ndim else float(out)

    def sample(self, u):
        u = np.maximum(np.asarray(u, dtype=float), 1e-300)
        if self.kind == "constant":
            out = np.full_like(u, self.value)
        elif self.kind == "log_weibull":
            out = np.exp((-np.log(u)) ** (1.0 / self.mu))
        elif self.kind == "pareto":
            out = u ** (-1.0 / self.mu)
        else:
            out = 1.0 + (-np.log(u)) ** (1.0 / self.mu)
        return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# sampled environments


@dataclass
class Environment:
    """A realisation of (xi, sigma) over a finite ball, plus its provenance."""

    box: Ball
    xi: np.ndarray
    sigma: np.ndarray
    pot: PotentialDistribution
    trap: TrapDistribution
    seed: object

    def __post_init__(self):
        n = len(self.box)
        if len(self.xi) != n or len(self.sigma) != n:
            raise ValueError("field length does not match box")

    @property
    def d(self) -> int:
        return self.box.d

    def xi_at(self, z: Site) -> float:
        return float(self.xi[self.box.index_of(z)])

    def sigma_at(self, z: Site) -> float:
        return float(self.sigma[self.box.index_of(z)])


def sample_environment(box: Ball, pot: PotentialDistribution, trap: TrapDistribution, seed) -> Environment:
    """Sample i.i.d. fields over the box; deterministic in (box, seed).

    Uniforms are drawn in lexicographic site order, xi first then sigma.
    """
    rng = np.random.default_rng(seed)
    n = len(box)
    xi = pot.sample(rng.random(n))
    sigma = trap.sample(rng.random(n))
    return Environment(box=box, xi=xi, sigma=sigma, pot=pot, trap=trap, seed=seed)


# ---------------------------------------------------------------------------
# deterministic scales


@dataclass
class ScaleSet:
    """All deterministic scales attached to a time horizon t."""

    t: float
    d: int
    rho: float
    a_t: float
    d_t: float
    r_t: float
    L_t: float
    R_L: int
    h_t: float
    s_xi: float
    s_sigma: float
    L_star: Optional[float] = None
    R_star: Optional[int] = None
    q_sigma: Optional[float] = None
    q_xi: dict = field(default_factory=dict)
    A_t: Optional[float] = None


def scale_a(t: float, pot: PotentialDistribution, d: int) -> float:
    """Exceedance level a with e^{F(a)} = d ln t (so P(xi > a_L) = L^{-d})."""
    if t <= 1.0 or d * math.log(t) <= 1.0:
        raise ScaleError(f"t = {t} too small: need d ln t > 1")
    return pot.solve_exceedance_level(d * math.log(t))


def mesoscopic_radius(L: float, d: int) -> int:
    """R_L = ceil((ln L)^{0.7/d}), floored at 1."""
    if L <= 1.0:
        return 1
    return max(1, math.ceil(math.log(L) ** (0.7 / d)))


def _solve_h(a_t: float, pot: PotentialDistribution, trap: TrapDistribution) -> float:
    ln_a = math.log(a_t) if a_t > 1.0 else 0.0

    def shortfall(h: float) -> float:
        if ln_a <= 0.0:
            return -1.0
        rhs = 10.0 * max(
            1.0 / ln_a,
            float(trap.tail(math.exp(h * h * ln_a))),
            float(pot.lower_cdf(-a_t * h * h)),
        )
        return h - rhs

    if shortfall(1.0) < 0.0:
        return 1.0
    lo, hi = 1e-12, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if shortfall(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def _distance_scale(u: float, pot: PotentialDistribution, d: int) -> float:
    a = scale_a(u, pot, d)
    dd = pot.local_rho(a) / (d * math.log(u))
    l3 = ln_ln_ln(u)
    return u * dd / l3 if l3 > 0 else math.inf


def _invert_distance_scale(t: float, pot: PotentialDistribution, d: int) -> Optional[float]:
    """u on the increasing branch with r_u = t, or None when r never reaches down to t."""
    lo = EE * 1.01
    grid = np.exp(np.linspace(math.log(lo), math.log(max(t, lo) * 1e6), 400))
    vals = np.array([_distance_scale(float(u), pot, d) for u in grid])
    i_min = int(np.argmin(vals))
    if vals[i_min] > t:
        return None
    hi_idx = i_min
    while hi_idx < len(grid) - 1 and vals[hi_idx] < t:
        hi_idx += 1
    if vals[hi_idx] < t:
        return None
    u_lo, u_hi = float(grid[i_min]), float(grid[hi_idx])
    if abs(vals[i_min] - t) < 1e-12:
        return u_lo
    return float(brentq(lambda u: _distance_scale(u, pot, d) - t, u_lo, u_hi, xtol=1e-9 * t))


def build_scales(t: float, pot: PotentialDistribution, trap: TrapDistribution, d: int) -> ScaleSet:
    """Populate every deterministic scale used downstream of a time horizon t."""
    if t < EE:
        raise ScaleError(f"t = {t} below e^e")
    a_t = scale_a(t, pot, d)
    rho = pot.local_rho(a_t)
    lnt = math.log(t)
    l3 = ln_ln_ln(t)
    d_t = rho / (d * lnt)
    r_t = t * d_t / l3 if l3 > 0 else math.inf
    L_t = t * ln_ln(t)
    R_L = mesoscopic_radius(L_t, d)
    h_t = _solve_h(a_t, pot, trap)
    s_xi = a_t * h_t * h_t
    s_sigma = math.exp(h_t * h_t * math.log(a_t)) if a_t > 1.0 else 1.0

    u_star = _invert_distance_scale(t, pot, d)
    if u_star is None:
        L_star, R_star = None, None
    else:
        L_star = u_star * ln_ln(u_star)
        R_star = mesoscopic_radius(L_star, d)

    q_sigma = None
    q_xi: dict = {}
    if trap.kind == "log_weibull":
        mu = trap.mu
        q_sigma = (1.0 / mu) * (d / rho) * lnt / ln_ln(t) ** (mu - 1.0)
        from .localisation import radii_of_influence  # deferred: avoids import cycle

        infl = radii_of_influence(mu, rho, trap.delta_sigma, d)
        if infl.rho_xi >= 1:
            interface = set(infl.f_xi)
            for y in l1_ball(origin(d), infl.rho_xi).iter_sites():
                if y == origin(d) or y in interface:
                    continue
                q_xi[y] = rho * math.log(infl.cbar[y] if y in infl.cbar else _cbar(y, mu, rho, trap.delta_sigma, d)) + rho * (
                    mu - 1.0 - 2.0 * l1_norm(y)
                ) * l3

    return ScaleSet(
        t=t,
        d=d,
        rho=rho,
        a_t=a_t,
        d_t=d_t,
        r_t=r_t,
        L_t=L_t,
        R_L=R_L,
        h_t=h_t,
        s_xi=s_xi,
        s_sigma=s_sigma,
        L_star=L_star,
        R_star=R_star,
        q_sigma=q_sigma,
        q_xi=q_xi,
    )


def _cbar(y: Site, mu: float, rho: float, delta_sigma: float, d: int) -> float:
    from .lattice import shortest_path_count

    n = shortest_path_count(y)
    return mu * n * n / (2 * d * rho * delta_sigma) ** (2 * l1_norm(y) - 1)


def good_path_length_slack(scales: ScaleSet, pot: PotentialDistribution, trap: TrapDistribution) -> float:
    """h*_t: geometric mean of the admissible window endpoints."""
    window_lo = max(float(trap.tail(scales.s_sigma)), float(pot.lower_cdf(-scales.s_xi)))
    return math.sqrt(scales.h_t * window_lo)


# ---------------------------------------------------------------------------
# truncation and the Monte Carlo tail level


def truncate_potential(env: Environment, center: Site, L: float) -> Environment:
    """Clip xi at the level a_L - 4/delta_sigma away from center, floor it at center."""
    delta_sigma = env.trap.delta_sigma
    c_star = 4.0 / delta_sigma
    level = scale_a(L, env.pot, env.d) - c_star
    xi = np.minimum(env.xi, level)
    ci = env.box.index_of(center)
    xi[ci] = max(env.xi[ci], level + 1.0 / delta_sigma)
    return replace(env, xi=xi)


def estimate_A(
    t: float,
    pot: PotentialDistribution,
    trap: TrapDistribution,
    d: int,
    seed,
    m_samples: Optional[int] = None,
    radius: Optional[int] = None,
    level: Optional[float] = None,
) -> float:
    """Empirical (1 - t^{-d})-quantile of the truncated principal eigenvalue.

    ``radius`` overrides the mesoscopic ball radius (testing hook);
    ``level`` overrides the quantile level.
    """
    required = 100.0 * t**d
    if m_samples is None:
        m_samples = math.ceil(required)
    if m_samples < required:
        raise BudgetError(f"need at least {math.ceil(required)} samples, got {m_samples}")
    from .spectral import sample_truncated_eigenvalues  # deferred: avoids import cycle

    samples = sample_truncated_eigenvalues(t, pot, trap, d, m_samples, seed, radius=radius)
    q = 1.0 - t ** (-d) if level is None else level
    return float(np.quantile(samples, q))
