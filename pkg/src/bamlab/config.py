"""Key-value experiment configuration shared by the CLI and the harness.

Config files are plain ``key = value`` lines; ``#`` starts a comment.
Recognised keys:

    dimension        lattice dimension d (default 2)
    rho              double-exponential scale of the potential (default 1.0)
    potential_kind   double_exponential | weibull (default double_exponential)
    gamma            Weibull potential shape (default 1.0)
    trap_kind        constant | log_weibull | pareto | weibull (default log_weibull)
    mu               trap tail parameter (default 3.0)
    trap_constant    value of constant traps (default 1.0)
    seed             master seed, 64-bit integer (default 20260810)
    t_list           comma-separated time horizons (default 16.5, 54.6, 90.0)
    replicas         ensemble size per time horizon (default 100)
    workers          worker processes, 0 = all cores (default 0)
    delta            exceedance window, 0 = automatic (default 0)
    profile_m        profile neighbourhood radius, 0 = automatic (default 0)
    evolve_rtol      integrator relative tolerance (default 1e-8)
    out              output directory (default $BAMLAB_OUT or ./bamlab_out)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .environment import PotentialDistribution, TrapDistribution


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabConfig:
    dimension: int = 2
    rho: float = 1.0
    potential_kind: str = "double_exponential"
    gamma: float = 1.0
    trap_kind: str = "log_weibull"
    mu: float = 3.0
    trap_constant: float = 1.0
    seed: int = 20260810
    t_list: tuple = (16.5, 54.6, 90.0)
    replicas: int = 100
    workers: int = 0
    delta: float = 0.0
    profile_m: int = 0
    evolve_rtol: float = 1e-8
    out: str = ""

    def validate(self) -> "LabConfig":
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.potential_kind not in ("double_exponential", "weibull"):
            raise ConfigError(f"unknown potential_kind {self.potential_kind!r}")
        if self.trap_kind not in ("constant", "log_weibull", "pareto", "weibull"):
            raise ConfigError(f"unknown trap_kind {self.trap_kind!r}")
        if self.trap_kind == "log_weibull" and self.mu <= 1:
            raise ConfigError("log_weibull traps need mu > 1")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if not self.t_list:
            raise ConfigError("t_list must not be empty")
        return self

    def potential(self) -> PotentialDistribution:
        if self.potential_kind == "weibull":
            return PotentialDistribution.weibull(self.gamma)
        return PotentialDistribution.double_exponential(self.rho)

    def trap(self) -> TrapDistribution:
        if self.trap_kind == "constant":
            return TrapDistribution.constant(self.trap_constant)
        if self.trap_kind == "pareto":
            return TrapDistribution.pareto(self.mu)
        if self.trap_kind == "weibull":
            return TrapDistribution.weibull(self.mu)
        return TrapDistribution.log_weibull(self.mu)

    def out_dir(self) -> str:
        if self.out:
            return self.out
        return os.environ.get("BAMLAB_OUT", os.path.join(".", "bamlab_out"))

    def echo_lines(self) -> list[str]:
        """Reproducibility echo; omits execution-only knobs (workers, out)."""
        skip = {"workers", "out"}
        lines = []
        for f in fields(self):
            if f.name in skip:
                continue
            v = getattr(self, f.name)
            if f.name == "t_list":
                v = ", ".join(repr(float(x)) for x in v)
            lines.append(f"{f.name} = {v}")
        return lines


_FLOAT_KEYS = {"rho", "gamma", "mu", "trap_constant", "delta", "evolve_rtol"}
_INT_KEYS = {"dimension", "seed", "replicas", "workers", "profile_m"}
_STR_KEYS = {"potential_kind", "trap_kind", "out"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _INT_KEYS:
            return int(raw)
        if key == "t_list":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if key in _STR_KEYS:
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    raise ConfigError(f"unknown config key {key!r}")


def load_config(path: str) -> LabConfig:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            key = key.strip()
            values[key] = _parse_value(key, raw)
    return replace(LabConfig(), **values).validate()


def apply_overrides(cfg: LabConfig, **overrides) -> LabConfig:
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return cfg.validate()
    return replace(cfg, **updates).validate()
