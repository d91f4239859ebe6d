"""Flat key=value run configuration with dotted sections.

Toolchain-neutral text format::

    manifold.kind = sphere_cap
    manifold.dim  = 2
    grid.n        = 512
    solver.p      = 5.0
    solver.dt     = 1e-3
    solver.t_max  = 2.0
    profile.name  = zonal_cos
    profile.auto_scale = true
    profile.margin = 0.21
    sweep.p       = 4, 5, 6          # sweep axes, used by the sweep command

'#' starts a comment; booleans are true/false.  Unknown keys are rejected
so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .solver import RunConfig


class ConfigError(ValueError):
    """Malformed configuration file or value."""


# config key -> (RunConfig attribute, parser)
_BOOL = {"true": True, "false": False, "yes": True, "no": False,
         "on": True, "off": False, "1": True, "0": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


_SCALAR_KEYS = {
    "manifold.kind": ("kind", str),
    "manifold.dim": ("dim", int),
    "manifold.rmax": ("r_max", float),
    "manifold.warp_file": ("warp_file", str),
    "grid.n": ("n_cells", int),
    "grid.bc": ("bc", str),
    "solver.p": ("p", float),
    "solver.linear": ("linear", _parse_bool),
    "solver.dt": ("dt", float),
    "solver.t_max": ("t_max", float),
    "solver.threshold": ("threshold", float),
    "solver.tol": ("solve_tol", float),
    "solver.stride": ("stride", int),
    "solver.adaptive": ("adaptive", _parse_bool),
    "profile.name": ("profile", str),
    "profile.center": ("center", float),
    "profile.width": ("width", float),
    "profile.file": ("table_file", str),
    "profile.amplitude": ("amplitude", float),
    "profile.auto_scale": ("auto_scale", _parse_bool),
    "profile.margin": ("margin", float),
}

_SWEEP_KEYS = {
    "sweep.p": ("p_values", float),
    "sweep.amplitude_factor": ("amplitude_factors", float),
    "sweep.n": ("n_values", int),
    "sweep.dt": ("dt_values", float),
}


@dataclass
class ExperimentSpec:
    """A base run plus sweep axes (cartesian product) and output paths."""
    base: RunConfig
    p_values: list = field(default_factory=list)
    amplitude_factors: list = field(default_factory=list)
    n_values: list = field(default_factory=list)
    dt_values: list = field(default_factory=list)

    def sweep_points(self):
        """(p, amplitude_factor, n, dt) grid in spec order; None entries
        mean 'keep the base value'."""
        ps = self.p_values or [None]
        amps = self.amplitude_factors or [None]
        ns = self.n_values or [None]
        dts = self.dt_values or [None]
        return [(p, a, n, dt) for p in ps for a in amps for n in ns for dt in dts]

    def config_for(self, p, amp_factor, n, dt) -> RunConfig:
        cfg = replace(self.base)
        if p is not None:
            cfg.p = p
        if n is not None:
            cfg.n_cells = n
        if dt is not None:
            cfg.dt = dt
        if amp_factor is not None:
            # factors scale the zero-energy threshold amplitude A*(p)
            cfg.auto_scale = True
            cfg.amplitude = None
            cfg.margin = amp_factor - 1.0
        return cfg


def parse_config_text(text: str, source: str = "<config>") -> ExperimentSpec:
    base = RunConfig()
    sweeps: dict[str, list] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        if key in _SCALAR_KEYS:
            attr, conv = _SCALAR_KEYS[key]
            try:
                setattr(base, attr, conv(value))
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        elif key in _SWEEP_KEYS:
            attr, conv = _SWEEP_KEYS[key]
            try:
                sweeps[attr] = [conv(v.strip()) for v in value.split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad list for {key}: {exc}") from None
            if not sweeps[attr]:
                raise ConfigError(f"{source}:{lineno}: empty sweep axis {key!r}")
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return ExperimentSpec(base=base, **sweeps)


def load_config(path) -> ExperimentSpec:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))
