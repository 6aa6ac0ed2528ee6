"""Command-line front end.

Subcommands: gen, eig, evolve, localise, tail, profile, limitlaw, selftest.
Every command reads an optional key-value config file; flags override
config keys.  Outputs go only to the chosen output directory (flag --out,
else $BAMLAB_OUT, else ./bamlab_out).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from .config import ConfigError, LabConfig, apply_overrides, load_config
from .environment import ScaleError, build_scales, sample_environment, scale_a
from .evolution import EvolutionError, evolve, export_snapshot
from .lattice import l1_ball, origin
from .localisation import radii_of_influence
from .spectral import SpectralError, principal_eigenpair, path_expansion_eigenvalue
from . import experiments
from .limitlaw import laplace_sample, order_stat_density, sample_order_stats


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bamlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
        p.add_argument("--t", type=float, help="single time horizon override")
        p.add_argument("--replicas", type=int, help="ensemble size override")
        return p

    p = common(sub.add_parser("gen", help="sample and dump an environment"))
    p.add_argument("--radius", type=int, help="box radius (default from --t)")

    p = common(sub.add_parser("eig", help="eigenvalue diagnostics at a site"))
    p.add_argument("--radius", type=int, help="ball radius (default mesoscopic)")
    p.add_argument("--site", default="0", help="comma-separated site, e.g. 1,0")

    common(sub.add_parser("evolve", help="solve the Cauchy problem and dump the snapshot"))
    common(sub.add_parser("localise", help="run the localisation ensemble"))

    p = common(sub.add_parser("tail", help="truncated-eigenvalue tail experiment"))
    p.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count")
    p.add_argument("--s-grid", default="-1,0,1", help="comma-separated s values")

    common(sub.add_parser("profile", help="local-profile ensemble"))

    p = common(sub.add_parser("limitlaw", help="dump limit-law samples and densities"))
    p.add_argument("--k", type=int, default=2, help="order statistics depth")
    p.add_argument("--n", type=int, default=10_000, help="number of draws")

    common(sub.add_parser("selftest", help="run the fast invariant suite"))
    return parser


def _load(args) -> LabConfig:
    cfg = load_config(args.config) if args.config else LabConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "replicas", None) is not None:
        overrides["replicas"] = args.replicas
    if getattr(args, "t", None) is not None:
        overrides["t_list"] = (args.t,)
    return apply_overrides(cfg, **overrides)


def _outdir(cfg: LabConfig) -> str:
    path = cfg.out_dir()
    os.makedirs(path, exist_ok=True)
    return path


def _cmd_gen(cfg: LabConfig, args) -> int:
    pot, trap, d = cfg.potential(), cfg.trap(), cfg.dimension
    if args.radius is not None:
        radius = args.radius
    else:
        t = cfg.t_list[0]
        scales = build_scales(t, pot, trap, d)
        radius = int(scales.L_t) + 2 * scales.R_L
    box = l1_ball(origin(d), radius)
    env = sample_environment(box, pot, trap, cfg.seed)
    out = os.path.join(_outdir(cfg), "environment.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{k}" for k in range(d)] + ["xi", "sigma"])
        for i in range(len(box)):
            writer.writerow(list(box.site_at(i)) + [repr(float(env.xi[i])), repr(float(env.sigma[i]))])
    print(f"wrote {out} ({len(box)} sites, seed {cfg.seed})")
    return 0


def _cmd_eig(cfg: LabConfig, args) -> int:
    pot, trap, d = cfg.potential(), cfg.trap(), cfg.dimension
    t = cfg.t_list[0]
    scales = build_scales(t, pot, trap, d)
    r = args.radius if args.radius is not None else scales.R_L
    site = tuple(int(x) for x in args.site.split(","))
    if len(site) == 1 and d > 1:
        site = site + (0,) * (d - 1)
    box = l1_ball(origin(d), int(scales.L_t) + 2 * max(r, scales.R_L))
    env = sample_environment(box, pot, trap, cfg.seed)
    pair = principal_eigenpair(env, site, r)
    ball = l1_ball(site, r)
    idx = [env.box.index_of(z) for z in ball.iter_sites()]
    lo = float((env.xi[idx] - 1.0 / env.sigma[idx]).max())
    hi = float(env.xi[idx].max())
    print(f"lambda_{r}({site}) = {pair.lam!r} (residual {pair.residual:.2e}, {pair.iterations} iterations)")
    print(f"a priori bounds: {lo!r} <= lambda <= {hi!r} -> {'ok' if lo - 1e-9 <= pair.lam <= hi + 1e-9 else 'VIOLATED'}")
    sep = env.xi_at(site) - max(
        float(env.xi[i]) for i in idx if env.box.site_at(i) != site
    ) if len(idx) > 1 else math.inf
    if sep >= 2.0 / trap.delta_sigma:
        lam_pe = path_expansion_eigenvalue(env, site, r)
        print(f"loop expansion agrees to {abs(lam_pe - pair.lam):.2e}")
    else:
        print("site not separated enough for the loop expansion")
    return 0


def _cmd_evolve(cfg: LabConfig, args) -> int:
    pot, trap, d = cfg.potential(), cfg.trap(), cfg.dimension
    t = cfg.t_list[0]
    scales = build_scales(t, pot, trap, d)
    box = l1_ball(origin(d), int(scales.L_t))
    env = sample_environment(box, pot, trap, cfg.seed)
    mass = evolve(env, list(box.iter_sites()), t, rel_tol=cfg.evolve_rtol)
    out = os.path.join(_outdir(cfg), "snapshot.csv")
    export_snapshot(mass, out)
    print(f"wrote {out}; ln U({t}) = {mass.log_total_mass!r}")
    return 0


def _cmd_localise(cfg: LabConfig, args) -> int:
    report = experiments.run_localisation_experiment(cfg)
    paths = experiments.emit_report(report, _outdir(cfg))
    for p in paths:
        print(f"wrote {p}")
    if not report.clean:
        print("exact inequality violations present", file=sys.stderr)
        return 1
    return 0


def _cmd_tail(cfg: LabConfig, args) -> int:
    t = cfg.t_list[0]
    s_grid = [float(x) for x in args.s_grid.split(",")]
    m = args.samples
    if m is None:
        m = math.ceil(100.0 * t**cfg.dimension * math.exp(max(s_grid + [0.0])))
    table = experiments.run_tail_experiment(cfg, t, s_grid, m)
    paths = experiments.emit_report(table, _outdir(cfg))
    for p in paths:
        print(f"wrote {p}")
    for row in table.rows:
        print(
            f"s = {row.s:+.2f}: empirical {row.empirical:.4f} +- {row.std_error:.4f}, "
            f"theory {row.theory:.4f}"
        )
    return 0


def _cmd_profile(cfg: LabConfig, args) -> int:
    report = experiments.run_profile_experiment(cfg)
    paths = experiments.emit_report(report, _outdir(cfg))
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_limitlaw(cfg: LabConfig, args) -> int:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dimension
    outdir = _outdir(cfg)
    out = os.path.join(outdir, "order_stats.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["draw"]
            + [f"psi{i + 1}" for i in range(args.k)]
            + [f"z{i + 1}_{k}" for i in range(args.k) for k in range(d)]
        )
        for j in range(args.n):
            s = sample_order_stats(args.k, d, rng)
            writer.writerow(
                [j]
                + [repr(float(v)) for v in s.psi]
                + [repr(float(c)) for row in s.z for c in row]
            )
    print(f"wrote {out}")
    out = os.path.join(outdir, "laplace_samples.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw"] + [f"x{k}" for k in range(d)])
        for j in range(args.n):
            writer.writerow([j] + [repr(float(c)) for c in laplace_sample(d, rng)])
    print(f"wrote {out}")
    out = os.path.join(outdir, "order_stat_density_k1.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["psi", "density_at_origin"])
        for psi in np.linspace(-3, 8, 111):
            val = order_stat_density(1, [origin(d)], [psi], d)
            writer.writerow([repr(float(psi)), repr(float(val))])
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "eig": _cmd_eig,
    "evolve": _cmd_evolve,
    "localise": _cmd_localise,
    "tail": _cmd_tail,
    "profile": _cmd_profile,
    "limitlaw": _cmd_limitlaw,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "selftest":
        failures = experiments.run_selftest()
        print("selftest:", "all checks passed" if failures == 0 else f"{failures} failures")
        return 0 if failures == 0 else 1
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"bamlab: {exc}", file=sys.stderr)
        print("run 'bamlab --help' for usage", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg, args)
    except (ScaleError, SpectralError, EvolutionError, ValueError) as exc:
        print(f"bamlab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
