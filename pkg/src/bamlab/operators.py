"""Sparse assembly of the trapped Anderson operator on finite site sets.

The operator acts as

    (A f)(z) = sum_{|y-z|=1, y in domain} (2d)^{-1} sigma(y)^{-1} f(y)
               - sigma(z)^{-1} f(z) + xi(z) f(z)

with zero Dirichlet boundary conditions outside the domain.  A is similar
to the symmetric matrix S obtained by conjugating with sqrt(sigma), which
is what the eigensolvers use.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .environment import Environment
from .lattice import Site, neighbours


@dataclass
class SparseOperator:
    domain: tuple[Site, ...]
    index: dict
    matrix: sparse.csr_matrix
    diag_potential: np.ndarray
    sigma: np.ndarray
    symmetrized: bool

    @property
    def n(self) -> int:
        return len(self.domain)

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"vector length {v.shape} does not match domain size {self.n}")
        return self.matrix @ v

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def entries(self):
        """Iterate (row, col, value) triples of the stored matrix."""
        coo = self.matrix.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            yield int(r), int(c), float(v)


def assemble_from_fields(sites, xi_values, sigma_values, symmetrize: bool = False) -> SparseOperator:
    """Assemble on an explicit site list (must be lexicographically sorted)."""
    sites = tuple(sites)
    if not sites:
        raise ValueError("empty domain")
    index = {z: i for i, z in enumerate(sites)}
    xi = np.asarray(xi_values, dtype=float)
    sigma = np.asarray(sigma_values, dtype=float)
    n = len(sites)
    d = len(sites[0])
    two_d = 2.0 * d
    inv_sigma = 1.0 / sigma
    inv_sqrt = 1.0 / np.sqrt(sigma)

    rows, cols, vals = [], [], []
    for i, z in enumerate(sites):
        for y in neighbours(z):
            j = index.get(y)
            if j is None:
                continue
            rows.append(i)
            cols.append(j)
            if symmetrize:
                vals.append(inv_sqrt[i] * inv_sqrt[j] / two_d)
            else:
                vals.append(inv_sigma[j] / two_d)
    diag = xi - inv_sigma
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag.tolist())
    matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SparseOperator(
        domain=sites,
        index=index,
        matrix=matrix,
        diag_potential=diag,
        sigma=sigma,
        symmetrized=symmetrize,
    )


def assemble(env: Environment, domain, symmetrize: bool = False) -> SparseOperator:
    """Dirichlet restriction of the operator to ``domain`` (subset of env.box)."""
    sites = sorted(domain)
    if not sites:
        raise ValueError("empty domain")
    idx = [env.box.index_of(z) for z in sites]
    xi = env.xi[idx]
    sigma = env.sigma[idx]
    return assemble_from_fields(sites, xi, sigma, symmetrize=symmetrize)


def assemble_torus(xi: dict, sigma: dict, side: int, symmetrize: bool = False) -> SparseOperator:
    """Operator on the d-dimensional torus (Z/side)^d, no Dirichlet cut.

    ``xi`` and ``sigma`` map sites with coordinates in [0, side) to values.
    """
    sites = tuple(sorted(xi.keys()))
    if set(sigma.keys()) != set(sites):
        raise ValueError("xi and sigma must share the same sites")
    d = len(sites[0])
    if len(sites) != side**d:
        raise ValueError("expected all sites of the torus")
    index = {z: i for i, z in enumerate(sites)}
    xi_v = np.array([xi[z] for z in sites], dtype=float)
    sig_v = np.array([sigma[z] for z in sites], dtype=float)
    inv_sigma = 1.0 / sig_v
    inv_sqrt = 1.0 / np.sqrt(sig_v)
    two_d = 2.0 * d

    rows, cols, vals = [], [], []
    for i, z in enumerate(sites):
        for k in range(d):
            for step in (-1, 1):
                y = z[:k] + ((z[k] + step) % side,) + z[k + 1 :]
                j = index[y]
                rows.append(i)
                cols.append(j)
                if symmetrize:
                    vals.append(inv_sqrt[i] * inv_sqrt[j] / two_d)
                else:
                    vals.append(inv_sigma[j] / two_d)
    n = len(sites)
    diag = xi_v - inv_sigma
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag.tolist())
    matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SparseOperator(
        domain=sites,
        index=index,
        matrix=matrix,
        diag_potential=diag,
        sigma=sig_v,
        symmetrized=symmetrize,
    )


def export_entries_csv(op: SparseOperator, path) -> None:
    """Dump (row, col, value) triples for external inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for r, c, v in op.entries():
            writer.writerow([r, c, repr(v)])
