"""Ensemble harness: localisation, tail and profile experiments plus reports.

Replicas are pure functions of (config, time index, replica index), so the
results are independent of worker count and of execution order.  Exact
finite-volume inequalities are tallied per replica; asymptotic statements
are reported as trends over the time grid, never as hard tolerances.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .config import LabConfig
from .environment import (
    BudgetError,
    Environment,
    build_scales,
    sample_environment,
    scale_a,
)
from .evolution import EvolutionError, evolve
from .lattice import Site, l1_ball, l1_norm, origin
from .limitlaw import laplace_marginal_cdf, nu_density, tail_curve
from .localisation import (
    default_exceedance_window,
    local_profile,
    default_profile_windows,
    psi_functional,
    psi_local,
    radii_of_influence,
    separated_site,
    top_k,
)
from .spectral import (
    SpectralError,
    exit_weighted_mass,
    principal_eigenpair,
    sample_truncated_eigenvalues,
)

SLACK = 1e-9
LAPLACE_CAVEAT = "asymptotic law, finite-size trend only"


def ks_test(samples, cdf) -> tuple[float, float]:
    """Two-sided Kolmogorov-Smirnov statistic and p-value against a cdf."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample")
    if samples.size < 20:
        raise ValueError("need at least 20 samples")
    res = stats.kstest(samples, cdf)
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# localisation ensemble


@dataclass
class ReplicaRow:
    t: float
    t_index: int
    replica: int
    seed: str = ""
    degenerate: bool = True
    n_exceedances: int = 0
    eig_failures: int = 0
    z: Optional[Site] = None
    ratio: float = math.nan
    max_weight: float = math.nan
    xi_z: float = math.nan
    sigma_z: float = math.nan
    psi1: float = math.nan
    psi2: float = math.nan
    gap: float = math.nan
    separated: bool = False
    psi_local_agree: Optional[bool] = None
    rescaled_z: Optional[tuple] = None
    apriori_violations: int = 0
    eigbound_violations: int = 0
    cluster_ok: bool = True
    mass_lower_ok: bool = True
    mass_upper_ok: bool = True
    comparison_ok: bool = True


@dataclass
class EnsembleReport:
    config: LabConfig
    rows: list
    aggregates: list
    violations: dict

    @property
    def clean(self) -> bool:
        return all(v == 0 for v in self.violations.values())


def _small_ball_checks(env, z: Site, row: ReplicaRow, rel_tol: float) -> None:
    r = 2
    try:
        pair = principal_eigenpair(env, z, r, tol=1e-10)
    except SpectralError:
        row.eig_failures += 1
        return
    ball = l1_ball(z, r)
    sites = list(ball.iter_sites())
    idx = [env.box.index_of(y) for y in sites]
    sigma = env.sigma[idx]
    zi = sites.index(z)
    phi = pair.phi
    lam = pair.lam

    gamma = lam + 0.5
    try:
        lhs = exit_weighted_mass(env, z, r, gamma)
        rhs = 1.0 + float((1.0 / sigma).max()) * len(sites) / (gamma - lam)
        row.cluster_ok = row.cluster_ok and (lhs <= rhs + SLACK)
    except SpectralError:
        row.eig_failures += 1

    weighted_sq = float(np.sum(phi * phi / sigma))
    for t_check in (1.0, 5.0):
        try:
            m = evolve(env, sites, t_check, rel_tol=rel_tol, start=z)
        except EvolutionError:
            row.eig_failures += 1
            continue
        w = m.weights
        log_u = m.log_mass_offset
        wz = float(w[sites.index(z)])
        if wz > 0:
            log_return = log_u + math.log(wz) - t_check * lam
            lower = (phi[zi] ** 2 / sigma[zi]) / weighted_sq
            row.mass_lower_ok = bool(row.mass_lower_ok and (math.exp(log_return) >= lower - SLACK))
        else:
            row.mass_lower_ok = False
        log_total = log_u - t_check * lam
        upper = float(np.abs(phi).sum()) / phi[zi]
        row.mass_upper_ok = bool(row.mass_upper_ok and (math.exp(log_total) <= upper + SLACK))
        bound = float(sigma[zi]) * weighted_sq / phi[zi] ** 3
        row.comparison_ok = bool(row.comparison_ok and np.all(w <= bound * phi + SLACK))


def _localisation_replica(args) -> ReplicaRow:
    cfg, t, t_index, rep = args
    pot, trap = cfg.potential(), cfg.trap()
    d = cfg.dimension
    scales = build_scales(t, pot, trap, d)
    macro = int(scales.L_t)
    box = l1_ball(origin(d), macro + 2 * scales.R_L)
    seed = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(t_index, rep))
    env = sample_environment(box, pot, trap, seed)
    delta = cfg.delta if cfg.delta > 0 else default_exceedance_window(trap)

    row = ReplicaRow(t=t, t_index=t_index, replica=rep, seed=f"{cfg.seed}:{t_index}:{rep}")
    psi = psi_functional(env, scales, 0.0, delta)
    row.n_exceedances = len(psi.sites)
    row.eig_failures = len(psi.failures)
    finite = psi.finite_items()
    if not finite:
        return row
    row.degenerate = False

    best = top_k(psi, 1)[0]
    z, row.psi1 = best
    row.z = z
    if len(finite) >= 2:
        row.psi2 = top_k(psi, 2)[1][1]
        row.gap = row.psi1 - row.psi2
    row.xi_z = env.xi_at(z)
    row.sigma_z = env.sigma_at(z)
    row.rescaled_z = tuple(c / scales.r_t for c in z)

    a_macro = scale_a(scales.L_t, pot, d)
    sep_flags = {}
    for i, site in enumerate(psi.sites):
        if not psi.ok[i]:
            continue
        lam = float(psi.lam[i])
        ball = l1_ball(site, scales.R_L)
        vals_idx = [env.box.index_of(y) for y in ball.iter_sites()]
        xi_ball = env.xi[vals_idx]
        sig_ball = env.sigma[vals_idx]
        if lam > float(xi_ball.max()) + SLACK or lam < float((xi_ball - 1.0 / sig_ball).max()) - SLACK:
            row.apriori_violations += 1
        sep = separated_site(env, scales.L_t, site, scales.R_L)
        sep_flags[site] = sep
        if sep and lam > env.xi_at(site) - 0.5 / env.sigma_at(site) + SLACK:
            row.eigbound_violations += 1
    row.separated = sep_flags.get(z, False)

    if trap.kind == "log_weibull":
        infl = radii_of_influence(trap.mu, pot.rho, trap.delta_sigma, d)
        ploc = psi_local(env, scales, infl, 0.0, delta)
        if ploc.finite_items():
            row.psi_local_agree = top_k(ploc, 1)[0][0] == z

    domain = list(l1_ball(origin(d), macro).iter_sites())
    try:
        mass = evolve(env, domain, t, rel_tol=cfg.evolve_rtol)
        row.ratio = mass.weight_at(z)
        row.max_weight = float(mass.weights.max())
    except EvolutionError:
        row.eig_failures += 1

    _small_ball_checks(env, z, row, cfg.evolve_rtol)
    return row


def _parallel_map(fn, payloads, workers: int):
    if len(payloads) <= 1 or workers == 1:
        return [fn(p) for p in payloads]
    max_workers = workers if workers > 0 else (os.cpu_count() or 1)
    if max_workers == 1:
        return [fn(p) for p in payloads]
    chunk = max(1, len(payloads) // (4 * max_workers))
    with ProcessPoolExecutor(max_workers=max_workers) as ex:
        return list(ex.map(fn, payloads, chunksize=chunk))


def run_localisation_experiment(cfg: LabConfig) -> EnsembleReport:
    """Sample, localise and evolve ``cfg.replicas`` environments per horizon."""
    cfg = cfg.validate()
    if cfg.replicas < 20:
        raise ValueError("need at least 20 replicas")
    payloads = [
        (cfg, float(t), ti, rep)
        for ti, t in enumerate(cfg.t_list)
        for rep in range(cfg.replicas)
    ]
    rows = _parallel_map(_localisation_replica, payloads, cfg.workers)
    rows.sort(key=lambda r: (r.t_index, r.replica))

    pot = cfg.potential()
    aggregates = []
    violations = {
        "apriori": 0,
        "eigbound_separated": 0,
        "cluster": 0,
        "mass_lower": 0,
        "mass_upper": 0,
        "comparison": 0,
    }
    for ti, t in enumerate(cfg.t_list):
        sub = [r for r in rows if r.t_index == ti]
        good = [r for r in sub if not r.degenerate]
        n_deg = len(sub) - len(good)
        if n_deg > 0.2 * len(sub):
            raise RuntimeError(
                f"{n_deg}/{len(sub)} degenerate replicas at t = {t}; aggregates would be meaningless"
            )
        for r in sub:
            violations["apriori"] += r.apriori_violations
            violations["eigbound_separated"] += r.eigbound_violations
            violations["cluster"] += 0 if r.cluster_ok else 1
            violations["mass_lower"] += 0 if r.mass_lower_ok else 1
            violations["mass_upper"] += 0 if r.mass_upper_ok else 1
            violations["comparison"] += 0 if r.comparison_ok else 1
        a_t = scale_a(float(t), pot, cfg.dimension)
        ratios = np.array([r.ratio for r in good if math.isfinite(r.ratio)])
        max_w = np.array([r.max_weight for r in good if math.isfinite(r.max_weight)])
        sigmas = np.array([r.sigma_z for r in good])
        xi_err = np.array([abs(r.xi_z - a_t) for r in good])
        coords = np.array([c for r in good if r.rescaled_z for c in r.rescaled_z])
        agree = [r.psi_local_agree for r in good if r.psi_local_agree is not None]
        ks_stat, ks_p = (math.nan, math.nan)
        if coords.size >= 20:
            ks_stat, ks_p = ks_test(coords, laplace_marginal_cdf)
        aggregates.append(
            {
                "t": float(t),
                "a_t": a_t,
                "n_rows": len(sub),
                "n_degenerate": n_deg,
                "median_ratio": float(np.median(ratios)) if ratios.size else math.nan,
                "median_max_weight": float(np.median(max_w)) if max_w.size else math.nan,
                "median_sigma_z": float(np.median(sigmas)) if sigmas.size else math.nan,
                "median_abs_xi_err": float(np.median(xi_err)) if xi_err.size else math.nan,
                "agree_fraction": float(np.mean(agree)) if agree else math.nan,
                "ks_rescaled_site_stat": ks_stat,
                "ks_rescaled_site_p": ks_p,
                "ks_caveat": LAPLACE_CAVEAT,
            }
        )
    return EnsembleReport(config=cfg, rows=rows, aggregates=aggregates, violations=violations)


# ---------------------------------------------------------------------------
# tail experiment


@dataclass
class TailRow:
    s: float
    level: float
    count: int
    empirical: float
    std_error: float
    theory: float


@dataclass
class TailTable:
    t: float
    d: int
    m_samples: int
    a_t: float
    d_t: float
    A_t: float
    rows: list


def run_tail_experiment(cfg: LabConfig, t: float, s_grid, m_samples: int,
                        seed: Optional[int] = None) -> TailTable:
    """Empirical normalised tail of the truncated eigenvalue against e^{-s}.

    The reference level is the (1 - t^{-d}) empirical quantile of the same
    sample, so the s = 0 row is pinned near 1 by construction.
    """
    cfg = cfg.validate()
    pot, trap, d = cfg.potential(), cfg.trap(), cfg.dimension
    s_grid = sorted(float(s) for s in s_grid)
    required = 100.0 * t**d * math.exp(max(s_grid + [0.0]))
    if m_samples < required:
        raise BudgetError(f"need at least {math.ceil(required)} samples, got {m_samples}")
    if seed is None:
        seed = cfg.seed
    samples = sample_truncated_eigenvalues(t, pot, trap, d, m_samples, seed)
    scales = build_scales(t, pot, trap, d)
    big_a = float(np.quantile(samples, 1.0 - t ** (-d)))
    theory = tail_curve(s_grid)
    rows = []
    norm = t**d
    for s, th in zip(s_grid, theory):
        level = big_a + s * scales.d_t
        count = int(np.count_nonzero(samples > level))
        p_hat = count / m_samples
        rows.append(
            TailRow(
                s=s,
                level=level,
                count=count,
                empirical=norm * p_hat,
                std_error=norm * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / m_samples),
                theory=float(th),
            )
        )
    return TailTable(t=t, d=d, m_samples=m_samples, a_t=scales.a_t, d_t=scales.d_t,
                     A_t=big_a, rows=rows)


# ---------------------------------------------------------------------------
# profile experiment


@dataclass
class ProfileRow:
    t: float
    t_index: int
    replica: int
    degenerate: bool = True
    z: Optional[Site] = None
    sigma_ratio: float = math.nan
    xi_shift: dict = field(default_factory=dict)
    sigma_raw: dict = field(default_factory=dict)
    in_event_xi: Optional[bool] = None
    in_event_sigma: Optional[bool] = None


@dataclass
class ProfileReport:
    config: LabConfig
    m: int
    rows: list
    aggregates: list


def _profile_replica(args) -> ProfileRow:
    cfg, t, t_index, rep, m = args
    pot, trap = cfg.potential(), cfg.trap()
    d = cfg.dimension
    scales = build_scales(t, pot, trap, d)
    macro = int(scales.L_t)
    margin = max(2 * scales.R_L, m)
    box = l1_ball(origin(d), macro + margin)
    seed = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(t_index, rep))
    env = sample_environment(box, pot, trap, seed)
    delta = cfg.delta if cfg.delta > 0 else default_exceedance_window(trap)

    row = ProfileRow(t=t, t_index=t_index, replica=rep)
    psi = psi_functional(env, scales, 0.0, delta)
    if not psi.finite_items():
        return row
    row.degenerate = False
    z = top_k(psi, 1)[0][0]
    row.z = z
    infl = radii_of_influence(trap.mu, pot.rho, trap.delta_sigma, d)
    prof = local_profile(env, scales, infl, z, m)
    row.sigma_ratio = prof.sigma_center_ratio
    row.xi_shift = prof.xi_shift
    row.sigma_raw = prof.sigma_raw
    f_t, g_t = default_profile_windows(scales, trap.mu)
    row.in_event_xi, row.in_event_sigma = prof.in_event(f_t, g_t)
    return row


def run_profile_experiment(cfg: LabConfig) -> ProfileReport:
    """Local environment statistics around the localisation site.

    Requires log-Weibull traps (finite radii of influence) and a
    double-exponential potential.
    """
    cfg = cfg.validate()
    if cfg.trap_kind != "log_weibull" or cfg.potential_kind != "double_exponential":
        raise ValueError("profile experiment needs log_weibull traps and a double_exponential potential")
    pot, trap, d = cfg.potential(), cfg.trap(), cfg.dimension
    infl = radii_of_influence(trap.mu, pot.rho, trap.delta_sigma, d)
    m = cfg.profile_m if cfg.profile_m > 0 else max(infl.rho_sigma, infl.rho_xi) + 1
    if m < infl.rho_sigma:
        raise ValueError("profile_m below rho_sigma")

    payloads = [
        (cfg, float(t), ti, rep, m)
        for ti, t in enumerate(cfg.t_list)
        for rep in range(cfg.replicas)
    ]
    rows = _parallel_map(_profile_replica, payloads, cfg.workers)
    rows.sort(key=lambda r: (r.t_index, r.replica))

    interface_xi = set(infl.f_xi)
    interface_sigma = set(infl.f_sigma)
    offsets = [y for y in l1_ball(origin(d), m).iter_sites() if y != origin(d)]
    aggregates = []
    for ti, t in enumerate(cfg.t_list):
        good = [r for r in rows if r.t_index == ti and not r.degenerate]
        n_deg = cfg.replicas - len(good)
        if n_deg > 0.2 * cfg.replicas:
            raise RuntimeError(f"{n_deg}/{cfg.replicas} degenerate replicas at t = {t}")
        agg = {
            "t": float(t),
            "n_rows": cfg.replicas,
            "n_degenerate": n_deg,
            "in_event_xi_fraction": float(np.mean([r.in_event_xi for r in good])) if good else math.nan,
            "in_event_sigma_fraction": float(np.mean([r.in_event_sigma for r in good])) if good else math.nan,
        }
        ratios = np.array([r.sigma_ratio for r in good])
        agg["sigma_ratio_median"] = float(np.median(ratios)) if ratios.size else math.nan
        agg["sigma_ratio_iqr"] = (
            float(np.subtract(*np.percentile(ratios, [75, 25]))) if ratios.size else math.nan
        )
        coord_stats = []
        for y in offsets:
            xi_vals = np.array([r.xi_shift[y] for r in good])
            sg_vals = np.array([r.sigma_raw[y] for r in good])
            if l1_norm(y) > infl.rho_xi:
                ref = "base"
                stat, p = ks_test(xi_vals, cfg.potential().lower_cdf) if xi_vals.size >= 20 else (math.nan, math.nan)
            elif y in interface_xi:
                nu = nu_density("xi", y, infl, pot, trap)
                ref = f"nu_xi(c={nu.tilt})"
                stat, p = ks_test(xi_vals, nu.cdf) if xi_vals.size >= 20 else (math.nan, math.nan)
            else:
                ref = "pinned"
                stat, p = (math.nan, math.nan)
            coord_stats.append(
                {
                    "field": "xi",
                    "y": y,
                    "reference": ref,
                    "ks_stat": stat,
                    "ks_p": p,
                    "median": float(np.median(xi_vals)) if xi_vals.size else math.nan,
                }
            )
            if l1_norm(y) > infl.rho_sigma:
                ref = "base"
                stat, p = ks_test(sg_vals, lambda x: 1.0 - trap.tail(x)) if sg_vals.size >= 20 else (math.nan, math.nan)
            elif y in interface_sigma:
                nu = nu_density("sigma", y, infl, pot, trap)
                ref = f"nu_sigma(c={nu.tilt})"
                stat, p = ks_test(sg_vals, nu.cdf) if sg_vals.size >= 20 else (math.nan, math.nan)
            else:
                ref = "pinned_at_essinf"
                stat, p = (math.nan, math.nan)
            coord_stats.append(
                {
                    "field": "sigma",
                    "y": y,
                    "reference": ref,
                    "ks_stat": stat,
                    "ks_p": p,
                    "median": float(np.median(sg_vals)) if sg_vals.size else math.nan,
                }
            )
        agg["coords"] = coord_stats
        aggregates.append(agg)
    return ProfileReport(config=cfg, m=m, rows=rows, aggregates=aggregates)


# ---------------------------------------------------------------------------
# report emission


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _svg_histogram(values, path, bins: int = 30, title: str = "") -> None:
    values = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    width, height, pad = 640, 400, 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<title>{title}</title>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if values.size:
        counts, edges = np.histogram(values, bins=bins)
        top = max(1, counts.max())
        bar_w = (width - 2 * pad) / bins
        for i, c in enumerate(counts):
            h = (height - 2 * pad) * c / top
            x = pad + i * bar_w
            y = height - pad - h
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{h:.2f}" '
                f'fill="steelblue" stroke="black" stroke-width="0.5"/>'
            )
        parts.append(
            f'<text x="{pad}" y="{height - 8}" font-size="12">[{edges[0]:.4g}, {edges[-1]:.4g}]</text>'
        )
    parts.append(f'<text x="{pad}" y="20" font-size="14">{title}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


REPLICA_COLUMNS_FIXED = [
    "t", "t_index", "replica", "seed", "degenerate", "n_exceedances", "eig_failures",
    "ratio", "max_weight", "xi_z", "sigma_z", "psi1", "psi2", "gap", "separated",
    "psi_local_agree", "apriori_violations", "eigbound_violations",
    "cluster_ok", "mass_lower_ok", "mass_upper_ok", "comparison_ok",
]

AGGREGATE_COLUMNS = [
    "t", "a_t", "n_rows", "n_degenerate", "median_ratio", "median_max_weight",
    "median_sigma_z", "median_abs_xi_err", "agree_fraction",
    "ks_rescaled_site_stat", "ks_rescaled_site_p", "ks_caveat",
]


def _emit_localisation(report: EnsembleReport, outdir: str) -> list:
    d = report.config.dimension
    z_cols = [f"z{k}" for k in range(d)] + [f"rescaled_z{k}" for k in range(d)]
    header = REPLICA_COLUMNS_FIXED + z_cols
    rows = []
    for r in report.rows:
        base = [
            r.t, r.t_index, r.replica, r.seed, r.degenerate, r.n_exceedances,
            r.eig_failures, r.ratio, r.max_weight, r.xi_z, r.sigma_z, r.psi1,
            r.psi2, r.gap, r.separated, r.psi_local_agree, r.apriori_violations,
            r.eigbound_violations, r.cluster_ok, r.mass_lower_ok, r.mass_upper_ok,
            r.comparison_ok,
        ]
        zc = list(r.z) if r.z is not None else [None] * d
        rc = list(r.rescaled_z) if r.rescaled_z is not None else [None] * d
        rows.append(base + zc + rc)
    paths = []
    p = os.path.join(outdir, "localisation_replicas.csv")
    _write_csv(p, header, rows)
    paths.append(p)

    p = os.path.join(outdir, "localisation_aggregates.csv")
    _write_csv(
        p,
        AGGREGATE_COLUMNS,
        [[a[c] for c in AGGREGATE_COLUMNS] for a in report.aggregates],
    )
    paths.append(p)

    p = os.path.join(outdir, "summary.txt")
    with open(p, "w") as fh:
        fh.write("localisation experiment\n")
        fh.write("=======================\n")
        for line in report.config.echo_lines():
            fh.write(line + "\n")
        fh.write("\n")
        for a in report.aggregates:
            fh.write(
                f"t = {a['t']}: median ratio at Z {a['median_ratio']:.6g}, "
                f"median peak weight {a['median_max_weight']:.6g}, "
                f"median sigma(Z) {a['median_sigma_z']:.6g}, "
                f"median |xi(Z) - a_t| {a['median_abs_xi_err']:.6g}, "
                f"local-functional agreement {a['agree_fraction']:.6g}, "
                f"degenerate {a['n_degenerate']}/{a['n_rows']}\n"
            )
            fh.write(
                f"    rescaled-site KS {a['ks_rescaled_site_stat']:.6g} "
                f"(p = {a['ks_rescaled_site_p']:.3g}; {a['ks_caveat']})\n"
            )
        fh.write("\ninequality tallies (exact finite-volume bounds):\n")
        for name, count in report.violations.items():
            fh.write(f"    {name}: {count} violations\n")
        fh.write("INEQUALITIES OK\n" if report.clean else "INEQUALITY VIOLATIONS PRESENT\n")
    paths.append(p)

    p = os.path.join(outdir, "ratio_hist.svg")
    _svg_histogram([r.ratio for r in report.rows if not r.degenerate], p,
                   title="localisation ratio u(t, Z)/U(t)")
    paths.append(p)
    p = os.path.join(outdir, "rescaled_site_hist.svg")
    coords = [c for r in report.rows if r.rescaled_z for c in r.rescaled_z]
    _svg_histogram(coords, p, title="rescaled site coordinates")
    paths.append(p)
    return paths


TAIL_COLUMNS = ["s", "level", "count", "empirical", "std_error", "theory"]


def _emit_tail(table: TailTable, outdir: str) -> list:
    p = os.path.join(outdir, "tail.csv")
    _write_csv(
        p,
        TAIL_COLUMNS,
        [[r.s, r.level, r.count, r.empirical, r.std_error, r.theory] for r in table.rows],
    )
    meta = os.path.join(outdir, "tail_meta.txt")
    with open(meta, "w") as fh:
        fh.write(
            f"t = {table.t}\nd = {table.d}\nm_samples = {table.m_samples}\n"
            f"a_t = {table.a_t!r}\nd_t = {table.d_t!r}\nA_t = {table.A_t!r}\n"
        )
    return [p, meta]


def _emit_profile(report: ProfileReport, outdir: str) -> list:
    d = report.config.dimension
    offsets = sorted({y for r in report.rows if not r.degenerate for y in r.xi_shift})
    def tag(y):
        return "_".join(str(c) for c in y)

    header = (
        ["t", "t_index", "replica", "degenerate", "sigma_ratio", "in_event_xi", "in_event_sigma"]
        + [f"z{k}" for k in range(d)]
        + [f"xi_shift@{tag(y)}" for y in offsets]
        + [f"sigma@{tag(y)}" for y in offsets]
    )
    rows = []
    for r in report.rows:
        zc = list(r.z) if r.z is not None else [None] * d
        xi_vals = [r.xi_shift.get(y) for y in offsets]
        sg_vals = [r.sigma_raw.get(y) for y in offsets]
        rows.append(
            [r.t, r.t_index, r.replica, r.degenerate, r.sigma_ratio, r.in_event_xi,
             r.in_event_sigma] + zc + xi_vals + sg_vals
        )
    paths = []
    p = os.path.join(outdir, "profile_rows.csv")
    _write_csv(p, header, rows)
    paths.append(p)

    p = os.path.join(outdir, "profile_aggregates.csv")
    agg_rows = []
    for a in report.aggregates:
        for c in a["coords"]:
            agg_rows.append(
                [a["t"], c["field"], tag(c["y"]), c["reference"], c["ks_stat"], c["ks_p"],
                 c["median"], a["sigma_ratio_median"], a["sigma_ratio_iqr"],
                 a["in_event_xi_fraction"], a["in_event_sigma_fraction"], a["n_degenerate"]]
            )
    _write_csv(
        p,
        ["t", "field", "y", "reference", "ks_stat", "ks_p", "median",
         "sigma_ratio_median", "sigma_ratio_iqr", "in_event_xi_fraction",
         "in_event_sigma_fraction", "n_degenerate"],
        agg_rows,
    )
    paths.append(p)
    return paths


def emit_report(report, outdir: str) -> list:
    """Write CSV tables, a text summary and static SVG histograms."""
    os.makedirs(outdir, exist_ok=True)
    if isinstance(report, EnsembleReport):
        return _emit_localisation(report, outdir)
    if isinstance(report, TailTable):
        return _emit_tail(report, outdir)
    if isinstance(report, ProfileReport):
        return _emit_profile(report, outdir)
    raise TypeError(f"no emitter for {type(report).__name__}")


# ---------------------------------------------------------------------------
# selftest


def run_selftest(verbose: bool = True) -> int:
    """Fast invariant suite; returns the number of failed checks."""
    from .environment import PotentialDistribution, TrapDistribution
    from .evolution import localisation_ratio
    from .lattice import l1_ball as ball, shortest_path_count
    from .limitlaw import laplace_density, order_stat_density
    from .spectral import path_expansion_eigenvalue
    from .walker import Path, chemical_distance, path_weight

    checks = []

    def check(name, fn):
        checks.append((name, fn))

    check("ball sizes in d = 2", lambda: all(
        len(ball((0, 0), r)) == 2 * r * r + 2 * r + 1 for r in range(11)))
    check("shortest path counts", lambda: (
        shortest_path_count((1, 0)) == 1
        and shortest_path_count((1, 1)) == 2
        and shortest_path_count((2, 1)) == 3))

    pot = PotentialDistribution.double_exponential(1.0)
    trap = TrapDistribution.log_weibull(2.0)
    check("exceedance level closed form", lambda: abs(
        scale_a(math.e**math.e, pot, 2) - math.log(2 * math.e)) < 1e-12)

    def _sampling_deterministic():
        b = ball((0, 0), 3)
        e1 = sample_environment(b, pot, trap, 7)
        e2 = sample_environment(b, pot, trap, 7)
        return np.array_equal(e1.xi, e2.xi) and np.array_equal(e1.sigma, e2.sigma)

    check("sampling deterministic in the seed", _sampling_deterministic)

    def _single_site_identity():
        b = ball((0, 0), 2)
        env = sample_environment(b, pot, trap, 11)
        pair = principal_eigenpair(env, (0, 0), 0)
        return abs(pair.lam - (env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0)))) < 1e-12

    check("single-site eigenvalue identity", _single_site_identity)

    def _expansion_agrees():
        b = ball((0, 0), 4)
        env = sample_environment(b, pot, trap, 13)
        xi = env.xi.copy()
        c = b.index_of((0, 0))
        others = np.delete(np.arange(len(b)), c)
        xi[c] = xi[others].max() + 3.0
        env2 = Environment(box=b, xi=xi, sigma=env.sigma, pot=pot, trap=trap, seed=13)
        lam_pe = path_expansion_eigenvalue(env2, (0, 0), 2, tol=1e-11)
        lam_pi = principal_eigenpair(env2, (0, 0), 2, tol=1e-11).lam
        return abs(lam_pe - lam_pi) < 1e-8

    check("loop expansion matches power iteration", _expansion_agrees)

    def _evolution_identity():
        b = ball((0, 0), 1)
        env = sample_environment(b, pot, trap, 17)
        m = evolve(env, [(0, 0)], 3.0)
        expected = 3.0 * (env.xi_at((0, 0)) - 1.0 / env.sigma_at((0, 0)))
        return abs(m.log_mass_offset - expected) < 1e-8 and localisation_ratio(m, (0, 0)) == 1.0

    check("single-site evolution identity", _evolution_identity)

    def _path_weight_value():
        b = ball((0, 0), 1)
        env = sample_environment(b, pot, trap, 19)
        xi0 = env.xi_at((0, 0))
        env.sigma[b.index_of((0, 0))] = 1.0
        w = path_weight(Path(sites=[(0, 0), (1, 0)]), xi0 + 1.0, env)
        return abs(w - 0.125) < 1e-12

    check("one-step path weight", _path_weight_value)

    def _chem_dist():
        region = ball((0, 0), 6)
        closed = {(1, 0)}
        dist = chemical_distance(lambda y: y not in closed, (0, 0), (2, 0), region)
        return dist == 4

    check("chemical distance around one closed site", _chem_dist)

    check("order-statistics density value", lambda: abs(
        order_stat_density(1, [(0.0, 0.0)], [0.0], 2) - math.exp(-4.0)) < 1e-12)
    check("Laplace density at the origin", lambda: abs(
        laplace_density((0.0, 0.0)) - 0.25) < 1e-15)
    check("normalised tail curve", lambda: (
        float(tail_curve([0.0])[0]) == 1.0
        and abs(float(tail_curve([1.0])[0]) - math.exp(-1.0)) < 1e-15))

    failures = 0
    for name, fn in checks:
        try:
            good = bool(fn())
        except Exception as exc:  # a selftest must not crash the CLI
            good = False
            name = f"{name} (error: {exc})"
        if verbose:
            print(("ok   - " if good else "FAIL - ") + name)
        failures += 0 if good else 1
    return failures
