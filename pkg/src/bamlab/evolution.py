"""Time evolution of the lattice Cauchy problem u' = (Delta sigma^{-1} + xi) u.

The integrator runs an embedded Dormand-Prince 5(4) pair on the linear
system and renormalises the state to unit l1 mass after every accepted
step, accumulating the log mass separately, so solutions that grow like
exp(t * lambda) never overflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .environment import Environment
from .lattice import Site, origin
from .operators import assemble


class EvolutionError(RuntimeError):
    pass


# Dormand-Prince 5(4) tableau
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_ERR = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


@dataclass
class MassFunction:
    """Solution snapshot: l1-normalised weights plus the log of the total mass."""

    domain: tuple[Site, ...]
    index: dict
    weights: np.ndarray
    log_mass_offset: float
    t: float

    def weight_at(self, z: Site) -> float:
        i = self.index.get(z)
        if i is None:
            raise KeyError(z)
        return float(self.weights[i])

    def log_mass_at(self, z: Site) -> float:
        w = self.weight_at(z)
        return self.log_mass_offset + (math.log(w) if w > 0 else -math.inf)

    @property
    def log_total_mass(self) -> float:
        return self.log_mass_offset


def _rk_step(matrix: sparse.csr_matrix, v: np.ndarray, h: float):
    k = []
    for stage in range(6):
        y = v
        if stage:
            y = v + h * sum(a * ki for a, ki in zip(_A[stage], k))
        k.append(matrix @ y)
    y5 = v + h * sum(b * ki for b, ki in zip(_B5[:6], k))
    k.append(matrix @ y5)
    err = h * sum(e * ki for e, ki in zip(_ERR, k))
    return y5, err


def evolve_matrix(matrix: sparse.csr_matrix, start_index: int, t_end: float,
                  rel_tol: float = 1e-8, max_steps: int = 5_000_000):
    """Integrate v' = M v from a point mass, with per-step l1 renormalisation.

    Returns (weights, log_mass_offset, steps).
    """
    n = matrix.shape[0]
    if not (0 <= start_index < n):
        raise ValueError("start index outside domain")
    v = np.zeros(n)
    v[start_index] = 1.0
    log_mass = 0.0
    if t_end == 0.0:
        return v, log_mass, 0

    atol = 1e-14
    scale_guess = float(np.abs(matrix).sum(axis=1).max()) + 1.0
    h = min(t_end, 0.1 / scale_guess)
    t = 0.0
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            raise EvolutionError(f"step budget exhausted at t = {t:.6g}")
        h = min(h, t_end - t)
        if h < 1e-14 * max(1.0, t_end):
            raise EvolutionError(
                f"step size underflow at t = {t:.6g} (h = {h:.3e}); system too stiff"
            )
        y5, err = _rk_step(matrix, v, h)
        scale = atol + rel_tol * np.maximum(np.abs(v), np.abs(y5))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if err_norm <= 1.0:
            t += h
            y5 = np.maximum(y5, 0.0)
            mass = float(y5.sum())
            if mass <= 0.0 or not math.isfinite(mass):
                raise EvolutionError(f"mass collapsed or overflowed at t = {t:.6g}")
            log_mass += math.log(mass)
            v = y5 / mass
            steps += 1
            factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
            h *= min(5.0, max(0.2, factor))
        else:
            h *= max(0.1, 0.9 * err_norm ** -0.2)
    return v, log_mass, steps


def evolve(env: Environment, domain, t_end: float, rel_tol: float = 1e-8,
           start: Site | None = None) -> MassFunction:
    """Solve the Cauchy problem on ``domain`` up to t_end, started from a
    point mass (the origin by default)."""
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    op = assemble(env, domain, symmetrize=False)
    if start is None:
        start = origin(env.d)
    if start not in op.index:
        raise ValueError("start site not in domain")
    weights, log_mass, _ = evolve_matrix(op.matrix, op.index[start], t_end, rel_tol=rel_tol)
    return MassFunction(domain=op.domain, index=op.index, weights=weights,
                        log_mass_offset=log_mass, t=t_end)


def localisation_ratio(mass: MassFunction, z: Site) -> float:
    """u(t, z) / U(t); the weights are already l1-normalised."""
    return mass.weight_at(z)


def export_snapshot(mass: MassFunction, path) -> None:
    d = len(mass.domain[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{k}" for k in range(d)] + ["weight", "log_mass_offset", "t"])
        for z, w in zip(mass.domain, mass.weights):
            writer.writerow(list(z) + [repr(float(w)), repr(mass.log_mass_offset), repr(mass.t)])
