"""Command-line entry points: run scenarios, compare runs, self-verify.

Subcommands
-----------
``run-single``
    Integrate a scenario on the uniform fine mesh; writes ``single.csv``
    (time series) and optional VTK snapshots.
``run-gl``
    Integrate with the adaptive global/local solver; writes ``gl.csv``,
    ``gl_diag.csv`` (interface iteration log) and optional VTK snapshots of
    both meshes.
``compare``
    Pointwise relative comparison of the crack-pressure traces of two runs;
    exits 0 when every step agrees within ``--rtol``, 1 otherwise.
``verify``
    Fast derivative/closed-form/invariant battery; exits 0 on success, 1 on
    a failed check, 2 on an execution error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, bundled_config_path, load_config
from .mesh import build_structured
from .solver_gl import GlobalLocalSolver
from .solver_single import SingleScaleSolver
from .vtkio import TimeSeriesWriter, compare_timeseries, write_gl_diag, write_vtk

__all__ = ["main", "run_single", "run_gl"]


def _resolve_config(name_or_path: str) -> RunConfig:
    p = Path(name_or_path)
    if not p.exists():
        p = bundled_config_path(name_or_path)
    return load_config(p)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.t_end is not None:
        cfg.t_end = args.t_end
    if args.dt is not None:
        cfg.dt = args.dt
    if args.out is not None:
        cfg.output_dir = args.out
    if args.vtk_every is not None:
        cfg.vtk_every = args.vtk_every
    return cfg


def _progress(step, n_steps, rec, every=10):
    if step % every == 0 or step == n_steps:
        print(
            f"step {step:4d}/{n_steps}  t={rec.t:8.3f}  "
            f"p_crack={rec.p_crack_max:.6g}  dofs={rec.total_dofs}  "
            f"wall={rec.wall_ms:.0f} ms",
            file=sys.stderr,
            flush=True,
        )


def run_single(cfg: RunConfig, csv_name="single.csv", quiet=False):
    """Run the single-mesh solver over the configured time window."""
    mesh = build_structured(cfg.extent, cfg.single_cells, cfg.single_cells)
    solver = SingleScaleSolver(
        mesh, cfg.material, cfg.notches, cfg.opts, cfg.quad_order
    )
    out = Path(cfg.output_dir)
    n_steps = cfg.n_steps
    with TimeSeriesWriter(out / csv_name) as ts:
        for step in range(1, n_steps + 1):
            rec = solver.advance(cfg.dt)
            ts.write(rec)
            if not quiet:
                _progress(step, n_steps, rec)
            if cfg.vtk_every and (step % cfg.vtk_every == 0 or step == n_steps):
                write_vtk(
                    out / "vtk" / f"single_{step:04d}.vtk",
                    mesh,
                    {
                        "displacement": solver.u,
                        "pressure": solver.p,
                        "phasefield": solver.d,
                    },
                )
    return solver


def run_gl(cfg: RunConfig, csv_name="gl.csv", diag_name="gl_diag.csv", quiet=False):
    """Run the global/local solver over the configured time window."""
    mesh_G = build_structured(cfg.extent, cfg.global_cells, cfg.global_cells)
    solver = GlobalLocalSolver(
        mesh_G,
        cfg.material,
        cfg.notches,
        cfg.level,
        cfg.opts,
        cfg.quad_order,
        cfg.buffer_layers,
        cfg.extend_threshold,
    )
    out = Path(cfg.output_dir)
    n_steps = cfg.n_steps
    with TimeSeriesWriter(out / csv_name) as ts:
        for step in range(1, n_steps + 1):
            rec = solver.advance(cfg.dt)
            ts.write(rec)
            if not quiet:
                _progress(step, n_steps, rec)
            if cfg.vtk_every and (step % cfg.vtk_every == 0 or step == n_steps):
                write_vtk(
                    out / "vtk" / f"gl_local_{step:04d}.vtk",
                    solver.mesh_L,
                    {
                        "displacement": solver.u_L,
                        "pressure": solver.p_L,
                        "phasefield": solver.d_L,
                    },
                )
                write_vtk(
                    out / "vtk" / f"gl_global_{step:04d}.vtk",
                    solver.mesh_G,
                    {
                        "displacement": solver.u_G,
                        "pressure": solver.p_G,
                        "phasefield": solver.d_G,
                    },
                )
    write_gl_diag(out / diag_name, solver.gl_diag)
    return solver


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="hydrofrac",
        description="Phase-field hydraulic fracture: uniform-mesh and "
        "global/local solvers.",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    for name in ("run-single", "run-gl"):
        rp = sub.add_parser(name)
        rp.add_argument("--config", required=True, help="bundled name or path")
        rp.add_argument("--t-end", type=float, default=None)
        rp.add_argument("--dt", type=float, default=None)
        rp.add_argument("--out", default=None)
        rp.add_argument("--vtk-every", type=int, default=None)
        rp.add_argument("--quiet", action="store_true")

    cp = sub.add_parser("compare")
    cp.add_argument("csv_a")
    cp.add_argument("csv_b")
    cp.add_argument("--rtol", type=float, default=0.1)
    cp.add_argument("--column", default="p_crack_max")

    sub.add_parser("verify")

    args = ap.parse_args(argv)
    try:
        if args.cmd in ("run-single", "run-gl"):
            cfg = _apply_overrides(_resolve_config(args.config), args)
            if args.cmd == "run-single":
                run_single(cfg, quiet=args.quiet)
            else:
                run_gl(cfg, quiet=args.quiet)
            return 0
        if args.cmd == "compare":
            ok, max_rel, detail = compare_timeseries(
                args.csv_a, args.csv_b, args.rtol, args.column
            )
            print(("PASS: " if ok else "FAIL: ") + detail)
            return 0 if ok else 1
        if args.cmd == "verify":
            from .verification import run_quick_checks

            checks = run_quick_checks()
            width = max(len(n) for n, _, _ in checks)
            ok_all = True
            for name, ok, detail in checks:
                ok_all &= ok
                print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
            return 0 if ok_all else 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
