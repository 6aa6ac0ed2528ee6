"""Exact limit objects: the Laplace law of the rescaled site, the joint
order-statistics density with its Poisson-record sampler, the normalised
tail curve, and the tilted interface densities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .environment import PotentialDistribution, TrapDistribution
from .lattice import Site, l1_norm
from .localisation import InfluenceData


def laplace_density(x) -> float:
    """Product of standard Laplace marginals, prod_i (1/2) e^{-|x_i|}."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.prod(0.5 * np.exp(-np.abs(x))))


def laplace_marginal_cdf(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x < 0, 0.5 * np.exp(x), 1.0 - 0.5 * np.exp(-x))
    return out if out.ndim else float(out)


def laplace_sample(d: int, rng: np.random.Generator) -> np.ndarray:
    """One draw with i.i.d. coordinates, sampled as sign times Exp(1)."""
    signs = 2.0 * rng.integers(0, 2, size=d) - 1.0
    return signs * rng.exponential(1.0, size=d)


@dataclass
class OrderStatSample:
    k: int
    z: np.ndarray      # (k, d) continuum locations
    psi: np.ndarray    # (k,) strictly decreasing levels


def order_stat_density(k: int, z_list, psi_list, d: int) -> float:
    """Joint density of the top-k rescaled maximisers and their levels."""
    z = np.asarray(z_list, dtype=float).reshape(k, d)
    psi = np.asarray(psi_list, dtype=float).reshape(k)
    if np.any(np.diff(psi) >= 0):
        return 0.0
    expo = np.abs(z).sum() + psi.sum() + 2.0**d * math.exp(-psi[-1])
    return math.exp(-expo)


def sample_order_stats(k: int, d: int, rng: np.random.Generator) -> OrderStatSample:
    """Top-k record representation of the Poisson process with intensity
    2^d e^{-lambda} d lambda, paired with independent product-Laplace sites."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gaps = rng.exponential(1.0, size=k)
    psi = -np.log(np.cumsum(gaps)) + d * math.log(2.0)
    z = np.stack([laplace_sample(d, rng) for _ in range(k)])
    return OrderStatSample(k=k, z=z, psi=psi)


def top_level_cdf(x, d: int):
    """P(psi_1 <= x) = exp(-2^d e^{-x}), the void probability above x."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-(2.0**d) * np.exp(-x))
    return out if out.ndim else float(out)


def tail_curve(s_grid) -> np.ndarray:
    """Theoretical normalised eigenvalue tail, s -> e^{-s}."""
    return np.exp(-np.asarray(s_grid, dtype=float))


@dataclass
class TiltedDensity:
    """Exponentially tilted version of a base marginal, normalised by quadrature."""

    kind: str            # "xi" or "sigma"
    tilt: float
    norm: float
    _pdf_raw: object
    _grid: np.ndarray
    _cdf_grid: np.ndarray

    def pdf(self, x):
        out = np.asarray(self._pdf_raw(x), dtype=float) / self.norm
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self._grid, self._cdf_grid, left=0.0, right=1.0)
        return out if out.ndim else float(out)


def nu_density(kind: str, y: Site, influence: InfluenceData,
               pot: PotentialDistribution, trap: TrapDistribution) -> TiltedDensity:
    """Interface law at offset y: the base marginal tilted by e^{cbar x / rho}
    (potential) or e^{cbar delta_sigma / x} (trap); zero tilt off-interface."""
    if kind not in ("xi", "sigma"):
        raise ValueError("kind must be 'xi' or 'sigma'")
    interface = influence.f_xi if kind == "xi" else influence.f_sigma
    tilt = influence.cbar.get(y, 0.0) if y in interface else 0.0

    if kind == "xi":
        rho = pot.rho

        def raw(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(over="ignore"):
                return np.exp(np.minimum(tilt * x / rho, 700.0)) * pot.density(x)

        lo, hi = -60.0 * rho, 20.0 * rho
    else:
        ds = trap.delta_sigma

        def raw(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(over="ignore", divide="ignore"):
                return np.where(x > ds, np.exp(tilt * ds / np.maximum(x, ds)) * trap.density(x), 0.0)

        hi = float(trap.sample(1e-14)) * 4.0 + 10.0
        lo = ds

    norm, err = quad(lambda x: float(raw(x)), lo, hi, limit=400)
    if not (norm > 0.0 and math.isfinite(norm)):
        raise ValueError("tilted density is not integrable")
    if err > 1e-6 * norm:
        raise ValueError(f"normalisation quadrature too loose: {err / norm:.2e} relative")

    grid = np.linspace(lo, hi, 20001)
    vals = np.asarray(raw(grid), dtype=float) / norm
    cdf = np.concatenate(([0.0], np.cumsum((vals[1:] + vals[:-1]) * 0.5 * np.diff(grid))))
    cdf = np.clip(cdf / cdf[-1], 0.0, 1.0)
    return TiltedDensity(kind=kind, tilt=tilt, norm=norm, _pdf_raw=raw, _grid=grid,
                         _cdf_grid=cdf)
