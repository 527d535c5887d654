"""Run configuration: dataclasses plus a small INI loader.

Configurations describe a square domain with one or more injected notches and
the discretization of both solver flavors (single uniform mesh, and the
two-mesh global/local split).  Bundled scenario files live in
``hydrofrac/configs`` and can be addressed by bare name (``example1``) from
the command line.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .constitutive import MaterialParams

__all__ = [
    "Notch",
    "SolverOptions",
    "RunConfig",
    "load_config",
    "bundled_config_path",
]


@dataclass
class Notch:
    """Straight injection notch from ``a`` to ``b`` with a total inflow rate."""

    a: tuple
    b: tuple
    rate: float = 0.0

    @property
    def length(self) -> float:
        return float(np.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1]))


@dataclass
class SolverOptions:
    """Iteration controls shared by both solvers.

    ``refactor_every`` is the number of modified-Newton iterations tolerated
    on a stale Jacobian factorization before it is rebuilt.  ``max_halvings``
    bounds the internal time-step subdivision on convergence failures.

    ``gl_floor`` guards the relative interface-imbalance measures: norms are
    taken relative to ``max(current scale, gl_floor)``, so exchange errors
    far below the working scale of traces and multiplier moments count as
    converged even while those quantities are still essentially zero (early
    times, before pressure reaches the interface).
    """

    newton_rtol: float = 1e-9
    newton_atol: float = 1e-11
    newton_max: int = 40
    refactor_every: int = 8
    stagger_tol: float = 1e-5
    stagger_max: int = 150
    gl_tol: float = 1e-6
    gl_max: int = 150
    gl_floor: float = 1e-2
    max_halvings: int = 6


@dataclass
class RunConfig:
    """Complete description of a run (domain, meshes, time, material, IO)."""

    extent: float = 80.0
    global_cells: int = 20
    level: int = 3
    single_cells: int = 160
    buffer_layers: int = 2
    extend_threshold: float = 0.4
    dt: float = 0.1
    t_end: float = 15.0
    quad_order: int = 2
    material: MaterialParams = field(default_factory=MaterialParams)
    notches: list = field(default_factory=list)
    opts: SolverOptions = field(default_factory=SolverOptions)
    output_dir: str = "out"
    vtk_every: int = 0

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise ValueError(
                f"t_end={self.t_end} is not a whole number of steps of dt={self.dt}"
            )
        return n

    @property
    def h_global(self) -> float:
        return self.extent / self.global_cells

    @property
    def h_local(self) -> float:
        return self.h_global / 2**self.level


def _fill(section, obj, names):
    for name, conv in names.items():
        if section is not None and name in section:
            setattr(obj, name, conv(section[name]))


def load_config(path) -> RunConfig:
    """Read a :class:`RunConfig` from an INI file.

    Notches are given in sections named ``[notch]``, ``[notch.1]``,
    ``[notch.2]``, ... with a ``segment = x0 y0 x1 y1`` line and an optional
    ``rate``.  Missing values fall back to the dataclass defaults.
    """
    cp = configparser.ConfigParser()
    read = cp.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")

    cfg = RunConfig()
    _fill(cp["domain"] if cp.has_section("domain") else None, cfg, {"extent": float})
    _fill(
        cp["mesh"] if cp.has_section("mesh") else None,
        cfg,
        {"global_cells": int, "level": int, "single_cells": int, "quad_order": int},
    )
    _fill(
        cp["adaptivity"] if cp.has_section("adaptivity") else None,
        cfg,
        {"buffer_layers": int, "extend_threshold": float},
    )
    _fill(
        cp["time"] if cp.has_section("time") else None,
        cfg,
        {"dt": float, "t_end": float},
    )
    if cp.has_section("material"):
        # configparser lowercases option names; the modulus field is "E"
        mat_kwargs = {
            ("E" if k == "e" else k): float(v) for k, v in cp["material"].items()
        }
        cfg.material = MaterialParams(**mat_kwargs)
    if cp.has_section("solver"):
        _fill(
            cp["solver"],
            cfg.opts,
            {
                "newton_rtol": float,
                "newton_atol": float,
                "newton_max": int,
                "refactor_every": int,
                "stagger_tol": float,
                "stagger_max": int,
                "gl_tol": float,
                "gl_max": int,
                "max_halvings": int,
            },
        )
    if cp.has_section("output"):
        if "dir" in cp["output"]:
            cfg.output_dir = cp["output"]["dir"]
        if "vtk_every" in cp["output"]:
            cfg.vtk_every = int(cp["output"]["vtk_every"])

    for name in cp.sections():
        if name == "notch" or name.startswith("notch."):
            vals = [float(x) for x in cp[name]["segment"].split()]
            if len(vals) != 4:
                raise ValueError(f"[{name}] segment must be 'x0 y0 x1 y1'")
            rate = float(cp[name].get("rate", 0.0))
            cfg.notches.append(Notch(a=(vals[0], vals[1]), b=(vals[2], vals[3]), rate=rate))
    return cfg


def bundled_config_path(name: str) -> Path:
    """Filesystem path of a bundled scenario (``example1``, ``example2``)."""
    fname = name if name.endswith(".cfg") else f"{name}.cfg"
    ref = resources.files("hydrofrac") / "configs" / fname
    with resources.as_file(ref) as p:
        return Path(p)
