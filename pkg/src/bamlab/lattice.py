"""Finite l1 geometry of Z^d.

Sites are plain integer tuples, ordered lexicographically (coordinate 0
compared first).  Balls enumerate their sites in that order; the
site <-> index maps are pure arithmetic, so even balls with tens of
millions of sites cost no memory beyond what the caller stores on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterator

import numpy as np

Site = tuple[int, ...]


def origin(d: int) -> Site:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return (0,) * d


def l1_norm(z: Site) -> int:
    return sum(abs(c) for c in z)


def l1_distance(z: Site, y: Site) -> int:
    return sum(abs(a - b) for a, b in zip(z, y))


def add(z: Site, y: Site) -> Site:
    return tuple(a + b for a, b in zip(z, y))


def sub(z: Site, y: Site) -> Site:
    return tuple(a - b for a, b in zip(z, y))


def neighbours(z: Site) -> list[Site]:
    """The 2d nearest neighbours of z, lexicographically sorted."""
    out = []
    for i in range(len(z)):
        for step in (-1, 1):
            out.append(z[:i] + (z[i] + step,) + z[i + 1 :])
    out.sort()
    return out


@lru_cache(maxsize=None)
def ball_size(d: int, r: int) -> int:
    """Number of sites in an l1 ball of radius r in Z^d."""
    if r < 0:
        return 0
    if d == 0:
        return 1
    if d == 1:
        return 2 * r + 1
    if d == 2:
        return 2 * r * r + 2 * r + 1
    return sum(ball_size(d - 1, r - abs(v)) for v in range(-r, r + 1))


def _prefix_1d(v: int, rem: int) -> int:
    # sites preceding the coordinate-v block when one more dimension remains
    if v <= 0:
        return (v + rem) * (v + rem)
    total = 2 * rem * rem + 2 * rem + 1
    w = rem - v + 1
    return total - w * w


@dataclass(frozen=True)
class Ball:
    """l1 ball around ``center``; sites indexed in lexicographic order."""

    center: Site
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("negative radius")
        if len(self.center) < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def d(self) -> int:
        return len(self.center)

    def __len__(self) -> int:
        return ball_size(self.d, self.radius)

    def __contains__(self, z: Site) -> bool:
        return len(z) == self.d and l1_distance(z, self.center) <= self.radius

    def index_of(self, z: Site) -> int:
        """Lexicographic rank of z inside the ball (KeyError if outside)."""
        if len(z) != self.d:
            raise KeyError(z)
        idx = 0
        rem = self.radius
        d = self.d
        for k in range(d):
            v = z[k] - self.center[k]
            if abs(v) > rem:
                raise KeyError(z)
            m = d - k - 1
            if m == 0:
                idx += v + rem
            elif m == 1:
                idx += _prefix_1d(v, rem)
            else:
                for w in range(-rem, v):
                    idx += ball_size(m, rem - abs(w))
            rem -= abs(v)
        return idx

    def site_at(self, i: int) -> Site:
        if i < 0 or i >= len(self):
            raise IndexError(i)
        coords = []
        rem = self.radius
        d = self.d
        for k in range(d):
            m = d - k - 1
            if m == 0:
                v = i - rem
                i = 0
            elif m == 1:
                total = 2 * rem * rem + 2 * rem + 1
                if i < (rem + 1) * (rem + 1):
                    v = math.isqrt(i) - rem
                else:
                    v = rem - math.isqrt(total - 1 - i)
                i -= _prefix_1d(v, rem)
            else:
                v = -rem
                while True:
                    blk = ball_size(m, rem - abs(v))
                    if i < blk:
                        break
                    i -= blk
                    v += 1
            coords.append(self.center[k] + v)
            rem -= abs(v)
        return tuple(coords)

    def iter_sites(self) -> Iterator[Site]:
        def rec(prefix: list[int], k: int, rem: int):
            if k == self.d - 1:
                c = self.center[k]
                for v in range(-rem, rem + 1):
                    yield tuple(prefix + [c + v])
                return
            c = self.center[k]
            for v in range(-rem, rem + 1):
                yield from rec(prefix + [c + v], k + 1, rem - abs(v))

        yield from rec([], 0, self.radius)

    @cached_property
    def sites(self) -> tuple[Site, ...]:
        """Materialised site tuple; avoid on very large balls."""
        return tuple(self.iter_sites())

    def coords_array(self) -> np.ndarray:
        """(n, d) int64 array of sites in index order."""
        if self.d == 2:
            r = self.radius
            xs = np.arange(-r, r + 1, dtype=np.int64)
            lengths = 2 * (r - np.abs(xs)) + 1
            starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
            n = int(lengths.sum())
            out = np.empty((n, 2), dtype=np.int64)
            out[:, 0] = np.repeat(xs, lengths) + self.center[0]
            out[:, 1] = (
                np.arange(n)
                - np.repeat(starts + (r - np.abs(xs)), lengths)
                + self.center[1]
            )
            return out
        return np.array(list(self.iter_sites()), dtype=np.int64)

    def index_many(self, coords: np.ndarray) -> np.ndarray:
        """Vectorised index_of for an (n, d) coordinate array (d = 2 fast path)."""
        coords = np.asarray(coords, dtype=np.int64)
        if self.d == 2:
            r = self.radius
            x = coords[:, 0] - self.center[0]
            y = coords[:, 1] - self.center[1]
            if np.any(np.abs(x) + np.abs(y) > r):
                raise KeyError("coordinate outside ball")
            total = 2 * r * r + 2 * r + 1
            w = r - x + 1
            prefix = np.where(x <= 0, (x + r) ** 2, total - w * w)
            return prefix + y + (r - np.abs(x))
        return np.array([self.index_of(tuple(row)) for row in coords], dtype=np.int64)

    def sites_at_many(self, idx: np.ndarray) -> list[Site]:
        return [self.site_at(int(i)) for i in np.asarray(idx)]


def l1_ball(center: Site, r: int) -> Ball:
    """The l1 ball of radius r around center."""
    return Ball(center=center, radius=int(r))


def sphere_sites(center: Site, r: int) -> list[Site]:
    """Sites at l1 distance exactly r from center, lexicographically sorted."""
    if r == 0:
        return [center]
    return [z for z in l1_ball(center, r).iter_sites() if l1_distance(z, center) == r]


def shortest_path_count(y: Site) -> int:
    """Number of length-|y| nearest-neighbour paths from the origin to y.

    Equals the multinomial |y|! / prod_i |y_i|!.
    """
    n = l1_norm(y)
    count = math.factorial(n)
    for c in y:
        count //= math.factorial(abs(c))
    return count


def lex_max(sites) -> Site:
    """Largest site in lexicographic order."""
    return max(sites)
