"""High exceedances, penalised eigenvalue functionals, and local profiles.

The localisation site is the penalised-functional argmax, with ties broken
towards the lexicographically largest site (coordinate 0 compared first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, ScaleSet, scale_a
from .lattice import Site, l1_ball, l1_norm, origin, shortest_path_count, sphere_sites
from .spectral import SpectralError, eigenvalue_two_radius, principal_eigenpair

NEG_INF = float("-inf")


@dataclass
class PsiMap:
    """Penalised functional over the high-exceedance set (-inf elsewhere)."""

    t: float
    c: float
    delta: float
    sites: tuple[Site, ...]
    lam: np.ndarray
    psi: np.ndarray
    ok: np.ndarray
    failures: dict = field(default_factory=dict)

    def value(self, z: Site) -> float:
        for i, s in enumerate(self.sites):
            if s == z:
                return float(self.psi[i]) if self.ok[i] else math.nan
        return NEG_INF

    def finite_items(self) -> list[tuple[Site, float]]:
        return [
            (s, float(p))
            for s, p, good in zip(self.sites, self.psi, self.ok)
            if good and math.isfinite(p)
        ]

    def as_dict(self) -> dict:
        return {s: float(p) for s, p, good in zip(self.sites, self.psi, self.ok) if good}


@dataclass(frozen=True)
class InfluenceData:
    """Radii of influence with their interface site sets and tilt constants."""

    rho_xi: int
    rho_sigma: int
    f_xi: tuple[Site, ...]
    f_sigma: tuple[Site, ...]
    cbar: dict


@dataclass
class LocalProfile:
    """Shifted/scaled environment around a candidate localisation centre."""

    center: Site
    m: int
    xi_shift: dict
    sigma_raw: dict
    sigma_center_ratio: float
    influence: InfluenceData
    delta_sigma: float

    def in_event(self, f_t: float, g_t: float) -> tuple[bool, bool]:
        """Membership of the profile rectangles at window widths (f_t, g_t)."""
        infl = self.influence
        interface_xi = set(infl.f_xi)
        interface_sigma = set(infl.f_sigma)
        xi_ok = True
        for y, v in self.xi_shift.items():
            pinned = l1_norm(y) <= infl.rho_xi and y not in interface_xi
            lim = f_t if pinned else g_t
            if not (-lim < v < lim):
                xi_ok = False
                break
        sigma_ok = abs(self.sigma_center_ratio - 1.0) < f_t
        if sigma_ok:
            for y, v in self.sigma_raw.items():
                if y == origin(len(self.center)):
                    continue
                if l1_norm(y) <= infl.rho_sigma and y not in interface_sigma:
                    good = self.delta_sigma < v < self.delta_sigma + f_t
                else:
                    good = self.delta_sigma + f_t < v < g_t
                if not good:
                    sigma_ok = False
                    break
        return xi_ok, sigma_ok


def default_exceedance_window(trap) -> float:
    """delta below the leading exceedance level; kept under delta_sigma^{-1}."""
    return min(0.5, trap.delta_sigma / 2.0)


def high_exceedances(env: Environment, L: float, eta: float) -> tuple[Site, ...]:
    """Sites of B_L where the potential exceeds a_L - eta."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    a_L = scale_a(L, env.pot, env.d)
    idx = np.flatnonzero(env.xi > a_L - eta)
    out = []
    for i in idx:
        z = env.box.site_at(int(i))
        if l1_norm(z) <= L:
            out.append(z)
    out.sort()
    return tuple(out)


def separated_site(env: Environment, L: float, z: Site, R: int) -> bool:
    """Exceedance-separation check: no second value above a_L - 4/delta_sigma
    inside B_{2R}(z)."""
    a_L = scale_a(L, env.pot, env.d)
    cut = a_L - 4.0 / env.trap.delta_sigma
    for y in l1_ball(z, 2 * R).iter_sites():
        if y == z or y not in env.box:
            continue
        if env.xi[env.box.index_of(y)] >= cut:
            return False
    return True


def _penalty(t: float, c: float, z: Site) -> float:
    from .environment import ln_ln_ln

    rate = max(ln_ln_ln(t) - c, 0.0)
    return rate * l1_norm(z) / t


def _psi_from_solver(env, scales, c, delta, solver) -> PsiMap:
    if delta is None:
        delta = default_exceedance_window(env.trap)
    exceed = high_exceedances(env, scales.L_t, delta)
    lam = np.full(len(exceed), np.nan)
    psi = np.full(len(exceed), np.nan)
    ok = np.zeros(len(exceed), dtype=bool)
    failures = {}
    for i, z in enumerate(exceed):
        try:
            lam[i] = solver(z)
        except SpectralError as exc:
            failures[z] = str(exc)
            continue
        psi[i] = lam[i] - _penalty(scales.t, c, z)
        ok[i] = True
    return PsiMap(t=scales.t, c=c, delta=delta, sites=exceed, lam=lam, psi=psi, ok=ok,
                  failures=failures)


def psi_functional(env: Environment, scales: ScaleSet, c: float = 0.0,
                   delta: float | None = None, tol: float = 1e-10) -> PsiMap:
    """Penalised principal eigenvalue at the mesoscopic radius."""

    def solver(z: Site) -> float:
        return principal_eigenpair(env, z, scales.R_L, tol=tol).lam

    return _psi_from_solver(env, scales, c, delta, solver)


def top_k(psi_map: PsiMap, k: int) -> list[tuple[Site, float]]:
    """k best (site, value) pairs; ties go to the lexicographically larger site."""
    if k < 1:
        raise ValueError("k must be >= 1")
    items = psi_map.finite_items()
    if len(items) < k:
        raise ValueError(f"only {len(items)} finite values, need {k}")
    items.sort(key=lambda sv: (-sv[1], tuple(-c for c in sv[0])))
    return items[:k]


def cbar_constant(y: Site, mu: float, rho: float, delta_sigma: float, d: int) -> float:
    """Interface tilt constant mu n(y)^2 / (2 d rho delta_sigma)^{2|y|-1}."""
    n = shortest_path_count(y)
    return mu * n * n / (2 * d * rho * delta_sigma) ** (2 * l1_norm(y) - 1)


def radii_of_influence(mu: float, rho: float, delta_sigma: float, d: int) -> InfluenceData:
    """Neighbourhood sizes within which the two fields decide the argmax.

    Interface sets are nonempty exactly at integer parities of mu where a
    radius jumps: odd mu >= 3 for the potential, even mu for the traps.
    """
    if mu <= 1:
        raise ValueError("mu must exceed 1")
    rho_xi = max(0, math.floor((mu - 1) / 2))
    rho_sigma = max(0, math.floor(mu / 2))
    is_int = abs(mu - round(mu)) < 1e-12
    f_xi: tuple[Site, ...] = ()
    f_sigma: tuple[Site, ...] = ()
    if is_int and round(mu) % 2 == 1 and round(mu) >= 3:
        f_xi = tuple(sphere_sites(origin(d), rho_xi))
    if is_int and round(mu) % 2 == 0:
        f_sigma = tuple(sphere_sites(origin(d), rho_sigma))
    cbar = {y: cbar_constant(y, mu, rho, delta_sigma, d) for y in (*f_xi, *f_sigma)}
    return InfluenceData(rho_xi=rho_xi, rho_sigma=rho_sigma, f_xi=f_xi, f_sigma=f_sigma,
                         cbar=cbar)


def psi_local(env: Environment, scales: ScaleSet, influence: InfluenceData,
              c: float = 0.0, delta: float | None = None, tol: float = 1e-10) -> PsiMap:
    """Penalised functional built from the two-radius eigenvalue, which sees
    the potential only within rho_xi and the traps only within rho_sigma."""

    def solver(z: Site) -> float:
        return eigenvalue_two_radius(env, z, influence.rho_xi, influence.rho_sigma, tol=tol)

    return _psi_from_solver(env, scales, c, delta, solver)


def local_profile(env: Environment, scales: ScaleSet, influence: InfluenceData,
                  center: Site, m: int) -> LocalProfile:
    """Shift the potential by its predicted in-radius levels and scale the
    centre trap by its predicted depth."""
    if m < influence.rho_sigma:
        raise ValueError("m must be at least rho_sigma")
    d = env.d
    xi_shift = {}
    sigma_raw = {}
    for y in l1_ball(origin(d), m).iter_sites():
        z = tuple(c0 + y0 for c0, y0 in zip(center, y))
        if y != origin(d):
            xi_shift[y] = env.xi_at(z) - scales.q_xi.get(y, 0.0)
        sigma_raw[y] = env.sigma_at(z)
    if scales.q_sigma is None:
        raise ValueError("profile scales undefined for this trap family")
    ratio = env.sigma_at(center) / scales.q_sigma
    return LocalProfile(center=center, m=m, xi_shift=xi_shift, sigma_raw=sigma_raw,
                        sigma_center_ratio=ratio, influence=influence,
                        delta_sigma=env.trap.delta_sigma)


def profile_kappa(mu: float) -> float:
    """Concentration exponent from the halving recursion; the smallest
    positive member of both ladders."""
    k = 0.5 * min(mu - 1.0, 1.0)
    kt = k
    positives = [v for v in (k, kt) if v > 0]
    n = 1
    while k > 0:
        k = min(k / 2.0, max(mu - 2 * n, 0.0) / 2.0)
        kt = min(k / 2.0, max(mu - 2 * n - 1.0, 0.0) / 2.0)
        positives.extend(v for v in (k, kt) if v > 0)
        n += 1
    return min(positives)


def default_profile_windows(scales: ScaleSet, mu: float) -> tuple[float, float]:
    """(f_t, g_t) for the profile rectangles."""
    from .environment import ln_ln, ln_ln_ln

    kappa = profile_kappa(mu)
    f_t = ln_ln(scales.t) ** (-kappa / 2.0)
    g_t = 10.0 * ln_ln_ln(scales.t)
    return f_t, g_t
