"""The trap-model walk, its Feynman-Kac estimators, and open-site path search.

The walk holds at z for an Exp(sigma(z)^{-1}) time (mean sigma(z)) and then
jumps to a uniformly chosen nearest neighbour; leaving the box kills it.
Feynman-Kac weights accumulate in the log domain.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, ScaleSet, good_path_length_slack
from .lattice import Ball, Site, l1_distance, l1_norm, neighbours, origin


@dataclass
class Trajectory:
    sites: list[Site]
    jump_times: list[float]
    t_end: float
    exited: bool = False

    def holding_intervals(self):
        """(site, duration) pairs for completed holdings only."""
        times = [0.0] + self.jump_times
        for i in range(len(self.jump_times)):
            yield self.sites[i], times[i + 1] - times[i]


@dataclass
class Path:
    sites: list[Site]

    def __post_init__(self):
        for a, b in zip(self.sites, self.sites[1:]):
            if l1_distance(a, b) != 1:
                raise ValueError("path steps must be nearest neighbours")

    def __len__(self) -> int:
        return len(self.sites) - 1


def simulate_btm(env: Environment, start: Site, t_end: float, rng: np.random.Generator) -> Trajectory:
    """One trajectory of the trap-model walk, killed on box exit."""
    if start not in env.box:
        raise ValueError("start outside box")
    d = env.d
    sites = [start]
    jump_times: list[float] = []
    t = 0.0
    z = start
    while True:
        hold = rng.exponential(env.sigma_at(z))
        if t + hold >= t_end:
            return Trajectory(sites=sites, jump_times=jump_times, t_end=t_end)
        t += hold
        nbrs = neighbours(z)
        z = nbrs[rng.integers(0, 2 * d)]
        jump_times.append(t)
        sites.append(z)
        if z not in env.box:
            return Trajectory(sites=sites, jump_times=jump_times, t_end=t_end, exited=True)


def _neighbour_table(env: Environment) -> np.ndarray:
    """(n, 2d) table of neighbour indices inside the box, -1 where absent."""
    box = env.box
    n = len(box)
    d = env.d
    table = np.full((n, 2 * d), -1, dtype=np.int64)
    for i in range(n):
        z = box.site_at(i)
        for j, y in enumerate(neighbours(z)):
            try:
                table[i, j] = box.index_of(y)
            except KeyError:
                pass
    return table


def fk_estimate(env: Environment, t: float, target: Site, n_samples: int,
                rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo Feynman-Kac value u(t, target) with its standard error."""
    if n_samples < 1_000:
        raise ValueError("need at least 1000 samples")
    box = env.box
    target_idx = box.index_of(target)
    start_idx = box.index_of(origin(env.d))
    if t == 0.0:
        est = 1.0 if target_idx == start_idx else 0.0
        return est, 0.0

    table = _neighbour_table(env)
    two_d = table.shape[1]
    pos = np.full(n_samples, start_idx, dtype=np.int64)
    now = np.zeros(n_samples)
    log_w = np.zeros(n_samples)
    alive = np.ones(n_samples, dtype=bool)
    running = alive.copy()

    while np.any(running):
        idx = np.flatnonzero(running)
        cur = pos[idx]
        hold = rng.exponential(env.sigma[cur])
        t_next = now[idx] + hold
        finished = t_next >= t
        fin = idx[finished]
        log_w[fin] += env.xi[pos[fin]] * (t - now[fin])
        now[fin] = t
        running[fin] = False
        mov = idx[~finished]
        if mov.size:
            log_w[mov] += env.xi[pos[mov]] * hold[~finished]
            now[mov] = t_next[~finished]
            steps = rng.integers(0, two_d, size=mov.size)
            nxt = table[pos[mov], steps]
            dead = nxt < 0
            killed = mov[dead]
            alive[killed] = False
            running[killed] = False
            moved = mov[~dead]
            pos[moved] = nxt[~dead]

    hit = alive & (pos == target_idx)
    if not np.any(hit):
        return 0.0, 0.0
    m = float(np.max(log_w[hit]))
    scaled = np.zeros(n_samples)
    scaled[hit] = np.exp(log_w[hit] - m)
    mean_scaled = float(scaled.mean())
    var_scaled = float(scaled.var(ddof=1))
    est = math.exp(m) * mean_scaled
    se = math.exp(m) * math.sqrt(var_scaled / n_samples)
    return est, se


def path_weight(path: Path, gamma: float, env: Environment) -> float:
    """Product formula for the stopped Feynman-Kac weight along a fixed path."""
    k = len(path)
    if k == 0:
        return 1.0
    d = env.d
    log_sum = 0.0
    for z in path.sites[:-1]:
        xi = env.xi_at(z)
        if gamma <= xi:
            raise ValueError(f"gamma = {gamma} must exceed xi{z} = {xi}")
        log_sum += -math.log(2 * d) - math.log1p(env.sigma_at(z) * (gamma - xi))
    return math.exp(log_sum)


def chemical_distance(open_at, u: Site, v: Site, region, endpoint_exempt: bool = False):
    """BFS shortest open-path length from u to v inside ``region``.

    ``open_at`` is a callable Site -> bool; with ``endpoint_exempt`` the
    target v itself need not be open.  Returns math.inf when no path exists.
    """
    contains = region.__contains__
    if u == v:
        if endpoint_exempt or open_at(u):
            return 0
        return math.inf
    if not open_at(u):
        return math.inf
    dist = {u: 0}
    queue = deque([u])
    while queue:
        z = queue.popleft()
        dz = dist[z]
        for y in neighbours(z):
            if y in dist or not contains(y):
                continue
            if y == v:
                if endpoint_exempt or open_at(v):
                    return dz + 1
                return math.inf
            if open_at(y):
                dist[y] = dz + 1
                queue.append(y)
    return math.inf


def _bfs_path(open_at, start: Site, target: Site, contains) -> list[Site] | None:
    if not open_at(start):
        return None
    if start == target:
        return [start]
    parent: dict[Site, Site | None] = {start: None}
    queue = deque([start])
    while queue:
        z = queue.popleft()
        for y in neighbours(z):
            if y in parent or not contains(y):
                continue
            if y == target:
                path = [y, z]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                path.reverse()
                return path
            if open_at(y):
                parent[y] = z
                queue.append(y)
    return None


def find_good_path(env: Environment, scales: ScaleSet, z: Site) -> Path | None:
    """Shortest path to z through mild potential and shallow traps.

    Open sites have xi > -s_xi and sigma < s_sigma; the endpoint z is
    exempt.  Succeeds only if such a path exists within the macrobox and
    is no longer than |z| (1 + h*).
    """
    if z == origin(env.d):
        raise ValueError("target must differ from the origin")
    box = env.box
    macro = min(int(scales.L_t), box.radius)

    def contains(y: Site) -> bool:
        return l1_norm(y) <= macro and y in box

    s_xi = scales.s_xi
    s_sigma = scales.s_sigma

    def open_at(y: Site) -> bool:
        i = box.index_of(y)
        return env.xi[i] > -s_xi and env.sigma[i] < s_sigma

    if not contains(z):
        return None
    slack = good_path_length_slack(scales, env.pot, env.trap)
    bound = l1_norm(z) * (1.0 + slack)

    def open_or_target(y: Site) -> bool:
        return y == z or open_at(y)

    sites = _bfs_path(open_or_target, origin(env.d), z, contains)
    if sites is None or len(sites) - 1 > bound:
        return None
    return Path(sites=sites)


def export_trajectory_csv(traj: Trajectory, path) -> None:
    d = len(traj.sites[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["jump", "time"] + [f"z{k}" for k in range(d)])
        times = [0.0] + traj.jump_times
        for i, z in enumerate(traj.sites):
            writer.writerow([i, repr(times[i])] + list(z))
