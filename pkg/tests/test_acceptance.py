"""Shipping gate: the numbered acceptance battery.

One test per criterion; each prints a single ``criterion NN: PASS/FAIL``
line with the measured quantity, so ``pytest -v -rP tests/test_acceptance.py``
reads as a checklist.  Criteria 1-5 are fast oracle/property checks.
Criteria 6-11 score two desk-scale scenario marches (shared session
fixtures) and take minutes: the horizontal-notch scenario on both solvers,
and the two-notch merging scenario on the global/local solver.
"""

import time

import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from hydrofrac import assembly as asm
from hydrofrac import constitutive as cst
from hydrofrac.adaptivity import cell_max_phase
from hydrofrac.config import Notch, SolverOptions, bundled_config_path, load_config
from hydrofrac.mesh import build_structured
from hydrofrac.solver_gl import GlobalLocalSolver
from hydrofrac.solver_single import SingleScaleSolver
from hydrofrac.verification import (
    composite_reference_march,
    fd_stress_error,
    fd_tangent_errors,
    phase_field_uniform_error,
    pressure_source_uniform_error,
)
from hydrofrac.vtkio import (
    TimeSeriesWriter,
    compare_timeseries,
    read_timeseries,
    write_gl_diag,
)


def _report(num, ok, detail):
    print(f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"criterion {num:02d}: {detail}"


# ===========================================================================
# 1-5: fast oracle and property checks
# ===========================================================================

def test_criterion_01_stress_matches_energy_derivative():
    t0 = time.perf_counter()
    err = fd_stress_error(n_trials=20, seed=11)
    g0 = cst.degradation(0.0)
    g1 = cst.degradation(1.0)
    gp1 = cst.degradation_prime(1.0)
    dt = time.perf_counter() - t0
    ok = err < 1e-5 and g0 == 1.0 and g1 == 0.0 and gp1 == 0.0 and dt < 1.0
    _report(
        1, ok,
        f"stress-vs-energy FD rel err {err:.3e} (tol 1e-5); "
        f"g(0)={g0:g}, g(1)={g1:g}, g'(1)={gp1:g} (exact); {dt:.2f}s (<1s)",
    )


def test_criterion_02_assembled_tangents_match_residual_fd():
    t0 = time.perf_counter()
    e_uu, e_up, e_pu = fd_tangent_errors(n=4, seed=3)
    dt = time.perf_counter() - t0
    worst = max(e_uu, e_up, e_pu)
    ok = worst < 1e-5 and dt < 10.0
    _report(
        2, ok,
        f"tangent FD rel errs uu={e_uu:.3e} up={e_up:.3e} pu={e_pu:.3e} "
        f"(tol 1e-5); {dt:.2f}s (<10s)",
    )


def test_criterion_03_uniform_history_closed_form():
    t0 = time.perf_counter()
    err = phase_field_uniform_error(H=4e-6, n=6)
    dt = time.perf_counter() - t0
    ok = err < 1e-10 and dt < 1.0
    _report(3, ok, f"phase-field closed-form err {err:.3e} (tol 1e-10); {dt:.2f}s (<1s)")


def test_criterion_04_sealed_box_pressure_step():
    t0 = time.perf_counter()
    params = cst.MaterialParams()
    rate, dt_step = 1e-3, 0.25
    worst = 0.0
    # per-step closed form: pressure grows by (storage modulus) * dt * rate
    for k in (1, 2, 3):
        err = pressure_source_uniform_error(params, rate=rate, dt=dt_step, n=5)
        exact = params.biot_modulus * dt_step * rate
        worst = max(worst, err / exact)
    dt = time.perf_counter() - t0
    ok = worst < 1e-8 and dt < 1.0
    _report(4, ok, f"sealed-box step rel err {worst:.3e} (tol 1e-8); {dt:.2f}s (<1s)")


def test_criterion_05_gl_matches_monolithic_reference_frozen_phase():
    t0 = time.perf_counter()
    params = cst.MaterialParams()
    notches = [Notch(a=(36.0, 40.0), b=(44.0, 40.0), rate=2e-3)]
    mesh_G = build_structured(80.0, 10, 10)
    foot = tuple(
        mesh_G.cell_index(ix, iy) for ix in (4, 5) for iy in (4, 5)
    )
    opts = SolverOptions(
        gl_tol=1e-8, newton_rtol=1e-10, newton_atol=5e-13, gl_max=120
    )

    def make():
        return GlobalLocalSolver(
            mesh_G, params, notches, level=2, opts=opts,
            footprint=foot, freeze_phase_field=True,
        )

    ref = make()
    uG, uL, _, pG, pL, _ = composite_reference_march(ref, 0.2, 3)
    gl = make()
    for _ in range(3):
        gl.advance(0.2)

    def rel(a, b):
        return float(np.linalg.norm(np.asarray(a) - np.asarray(b))
                     / np.linalg.norm(b))

    cmpl = np.setdiff1d(np.arange(mesh_G.n_nodes), gl.fict_interior)
    errs = {
        "u_G": rel(gl.u_G.reshape(-1), uG.reshape(-1)),
        "u_L": rel(gl.u_L.reshape(-1), uL.reshape(-1)),
        "p_G": rel(gl.p_G[cmpl], pG[cmpl]),
        "p_L": rel(gl.p_L, pL),
    }
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    ok = worst < 1e-6 and dt < 30.0
    _report(
        5, ok,
        "frozen-phase GL vs monolithic two-mesh reference, rel errs "
        + " ".join(f"{k}={v:.2e}" for k, v in errs.items())
        + f" (tol 1e-6); {dt:.1f}s (<30s)",
    )


# ===========================================================================
# desk-scale scenario marches shared by criteria 6-11
# ===========================================================================

def _cell_keys(lmap, mesh_L):
    corner = mesh_L.cells[:, 0]
    return [tuple(int(v) for v in xy) for xy in lmap.node_keys[corner]]


def _broken_merge_state(mesh_L, d_L, thr=0.9):
    """(number of connected {d > thr} regions, True when one region spans
    from the left notch band to the right notch line)."""
    broken = np.flatnonzero(d_L > thr)
    if broken.size == 0:
        return 0, False
    pos = -np.ones(mesh_L.n_nodes, dtype=int)
    pos[broken] = np.arange(broken.size)
    cells = mesh_L.cells
    ii, jj = [], []
    for a in range(4):
        for b in range(a + 1, 4):
            both = (pos[cells[:, a]] >= 0) & (pos[cells[:, b]] >= 0)
            ii.append(pos[cells[both, a]])
            jj.append(pos[cells[both, b]])
    ii = np.concatenate(ii)
    jj = np.concatenate(jj)
    adj = coo_matrix(
        (np.ones(ii.size), (ii, jj)), shape=(broken.size, broken.size)
    )
    n_comp, label = connected_components(adj, directed=False)
    xs = mesh_L.nodes[broken, 0]
    spans = False
    for c in range(n_comp):
        x_c = xs[label == c]
        if x_c.min() <= 36.0 + 1e-9 and x_c.max() >= 50.0 - 1e-9:
            spans = True
            break
    return n_comp, spans


def _march_gl(cfg, csv_path, diag_path, track_merge=False):
    mesh_G = build_structured(cfg.extent, cfg.global_cells, cfg.global_cells)
    gl = GlobalLocalSolver(
        mesh_G, cfg.material, cfg.notches, cfg.level, cfg.opts,
        cfg.quad_order, cfg.buffer_layers, cfg.extend_threshold,
    )
    out = {
        "trace": [], "dofs": [], "H_ok": True, "d_ok": True,
        "tip_clear": True, "footprints": [frozenset(gl.lmap.footprint)],
        "conv_rows": [], "merge_step": None, "n_steps": cfg.n_steps,
    }
    H_prev = gl.H_L.copy()
    keys_prev = _cell_keys(gl.lmap, gl.mesh_L)
    t0 = time.perf_counter()
    with TimeSeriesWriter(csv_path) as ts:
        for step in range(1, cfg.n_steps + 1):
            n_diag = len(gl.gl_diag)
            rec = gl.advance(cfg.dt)
            ts.write(rec)
            out["trace"].append(rec.p_crack_max)
            out["dofs"].append(rec.total_dofs)

            if gl.d_L.min() < -1e-10 or gl.d_L.max() > 1.0 + 1e-10:
                out["d_ok"] = False
            if np.abs(gl.d_G).max() > 1e-10:
                out["d_ok"] = False

            keys = _cell_keys(gl.lmap, gl.mesh_L)
            where = {k: i for i, k in enumerate(keys)}
            old_rows, new_rows = [], []
            for i, k in enumerate(keys_prev):
                j = where.get(k)
                if j is not None:
                    old_rows.append(i)
                    new_rows.append(j)
            if not np.all(gl.H_L[new_rows] >= H_prev[old_rows]):
                out["H_ok"] = False
            H_prev, keys_prev = gl.H_L.copy(), keys

            out["footprints"].append(frozenset(gl.lmap.footprint))
            adj = np.isin(gl.mesh_L.cells, gl.itf.loc_nodes).any(axis=1)
            tip = float(cell_max_phase(gl.mesh_L, gl.qd_L, gl.d_L)[adj].max())
            if tip > 0.5:
                out["tip_clear"] = False

            iters = [r for r in gl.gl_diag[n_diag:] if r[2] == "iter"]
            if iters:
                out["conv_rows"].append(iters[-1])

            if track_merge and out["merge_step"] is None:
                n_comp, spans = _broken_merge_state(gl.mesh_L, gl.d_L)
                if spans:
                    out["merge_step"] = step
    out["wall_s"] = time.perf_counter() - t0
    write_gl_diag(diag_path, gl.gl_diag)
    out["solver"] = gl
    return out


def _march_single(cfg, csv_path):
    mesh = build_structured(cfg.extent, cfg.single_cells, cfg.single_cells)
    s = SingleScaleSolver(mesh, cfg.material, cfg.notches, cfg.opts, cfg.quad_order)
    out = {"trace": [], "dofs": [], "H_ok": True, "d_ok": True}
    H_prev = s.history.copy()
    t0 = time.perf_counter()
    with TimeSeriesWriter(csv_path) as ts:
        for _ in range(cfg.n_steps):
            rec = s.advance(cfg.dt)
            ts.write(rec)
            out["trace"].append(rec.p_crack_max)
            out["dofs"].append(rec.total_dofs)
            if s.d.min() < -1e-10 or s.d.max() > 1.0 + 1e-10:
                out["d_ok"] = False
            if not np.all(s.history >= H_prev):
                out["H_ok"] = False
            H_prev = s.history.copy()
    out["wall_s"] = time.perf_counter() - t0
    out["solver"] = s
    return out


@pytest.fixture(scope="session")
def example1(tmp_path_factory):
    """Horizontal-notch scenario on both solvers (criteria 6, 7, 9, 10)."""
    cfg = load_config(bundled_config_path("example1"))
    out = tmp_path_factory.mktemp("accept_ex1")
    cfg.output_dir = str(out)
    cfg.vtk_every = 0
    gl = _march_gl(cfg, out / "gl.csv", out / "gl_diag.csv")
    sg = _march_single(cfg, out / "single.csv")
    return {"cfg": cfg, "gl": gl, "single": sg,
            "gl_csv": out / "gl.csv", "single_csv": out / "single.csv"}


@pytest.fixture(scope="session")
def example2(tmp_path_factory):
    """Two-notch merging scenario, global/local solver (criteria 8, 9, 11)."""
    cfg = load_config(bundled_config_path("example2"))
    out = tmp_path_factory.mktemp("accept_ex2")
    cfg.output_dir = str(out)
    cfg.vtk_every = 0
    gl = _march_gl(cfg, out / "gl.csv", out / "gl_diag.csv", track_merge=True)
    return {"cfg": cfg, "gl": gl}


# ===========================================================================
# 6-11
# ===========================================================================

@pytest.mark.slow
def test_criterion_06_gl_tracks_single_scale_pressure_trace(example1):
    ok_cmp, max_rel, detail = compare_timeseries(
        example1["gl_csv"], example1["single_csv"], rtol=0.10
    )

    def rise_peak_drop(trace):
        a = np.asarray(trace)
        i = int(np.argmax(a))
        return 0 < i < len(a) - 1 and a[0] < 0.5 * a[i] and a[-1] < 0.9 * a[i]

    shape_gl = rise_peak_drop(example1["gl"]["trace"])
    shape_sg = rise_peak_drop(example1["single"]["trace"])
    wall = example1["gl"]["wall_s"] + example1["single"]["wall_s"]
    ok = ok_cmp and shape_gl and shape_sg
    _report(
        6, ok,
        f"{detail} (tol 10%); rise-peak-drop gl={shape_gl} single={shape_sg}; "
        f"wall {wall:.0f}s (target <600s)",
    )


@pytest.mark.slow
def test_criterion_07_dof_economy(example1):
    gl_dofs = read_timeseries(example1["gl_csv"])["total_dofs"][-1]
    sg_dofs = read_timeseries(example1["single_csv"])["total_dofs"][-1]
    ratio = float(gl_dofs) / float(sg_dofs)
    ok = ratio <= 0.35
    _report(
        7, ok,
        f"final active unknowns {gl_dofs:.0f} vs {sg_dofs:.0f} "
        f"= {100 * ratio:.1f}% (limit 35%)",
    )


@pytest.mark.slow
def test_criterion_08_two_notches_merge(example2):
    gl = example2["gl"]
    merge_step = gl["merge_step"]
    grew = len(gl["footprints"][-1]) > len(gl["footprints"][0])
    ok = merge_step is not None and merge_step <= gl["n_steps"] and grew
    _report(
        8, ok,
        f"broken regions linked at step {merge_step}/{gl['n_steps']}; "
        f"footprint {len(gl['footprints'][0])} -> {len(gl['footprints'][-1])} "
        f"coarse cells; wall {gl['wall_s']:.0f}s (target <900s)",
    )


@pytest.mark.slow
def test_criterion_09_irreversibility_and_bounds(example1, example2):
    flags = {
        "ex1-gl-H": example1["gl"]["H_ok"],
        "ex1-gl-d": example1["gl"]["d_ok"],
        "ex1-single-H": example1["single"]["H_ok"],
        "ex1-single-d": example1["single"]["d_ok"],
        "ex2-gl-H": example2["gl"]["H_ok"],
        "ex2-gl-d": example2["gl"]["d_ok"],
    }
    ok = all(flags.values())
    _report(
        9, ok,
        "history nondecreasing and d in [-1e-10, 1+1e-10] on every accepted "
        "step: " + " ".join(f"{k}={v}" for k, v in flags.items()),
    )


@pytest.mark.slow
def test_criterion_10_multiplier_equilibrium(example1):
    rows = example1["gl"]["conv_rows"]
    worst = max(max(r[6], r[7]) for r in rows)
    ok = bool(rows) and worst <= 1e-6
    _report(
        10, ok,
        f"worst converged-step mortar moment imbalance {worst:.2e} "
        f"(tol 1e-6 relative) over {len(rows)} steps",
    )


@pytest.mark.slow
def test_criterion_11_footprint_monotone_and_tip_contained(example2):
    fps = example2["gl"]["footprints"]
    nested = all(a <= b for a, b in zip(fps[:-1], fps[1:]))
    tip_clear = example2["gl"]["tip_clear"]
    ok = nested and tip_clear
    _report(
        11, ok,
        f"footprint nested over {len(fps) - 1} steps: {nested}; no d>0.5 "
        f"quadrature cell touching the coupling interface: {tip_clear}",
    )
