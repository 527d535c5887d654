"""Predictor/corrector growth of the refined local domain.

After a trial step the *predictor* flags uncovered global cells that must join
the footprint: whenever a covered cell contains quadrature points whose phase
field exceeds a marking threshold, every uncovered cell within a Chebyshev
radius of ``buffer_layers`` around it is marked.  The *corrector* then extends
the footprint, transfers the local state onto the larger local mesh and
re-solves the step, so accepted steps always keep the crack tip at least the
buffer width away from the coupling interface.

State transfer is exact on retained nodes and cells (matched through
resolution-global lattice keys); newly covered regions inherit their
displacement and pressure from the global solution by Q1 interpolation, a
zero phase field, and history/volume-ratio states re-evaluated from the
transferred displacement.
"""

from __future__ import annotations

import numpy as np

from . import assembly as asm
from . import constitutive as cst
from .mesh import Mesh, footprint_connected, interp_structured, refine_footprint

__all__ = [
    "cell_max_phase",
    "mark_extension",
    "extend_footprint",
    "transfer_state",
]


def cell_max_phase(mesh_L: Mesh, qd, d_L) -> np.ndarray:
    """Per-local-cell maximum of the phase field over quadrature points."""
    return asm.interp_qp(mesh_L, qd, d_L).max(axis=1)


def mark_extension(mesh_G: Mesh, lmap, d_cell_max, threshold, buffer_layers):
    """Uncovered global cells to add, by the buffered high-phase predictor.

    Parameters
    ----------
    d_cell_max : (n_local_cells,) ndarray
        Output of :func:`cell_max_phase`.

    Returns
    -------
    sorted list of global cell ids (empty when no growth is needed).
    """
    covered = set(lmap.footprint)
    hot_parents = set(int(g) for g in np.unique(lmap.parent_cell[d_cell_max >= threshold]))
    marks = set()
    for gc in hot_parents:
        ix, iy = mesh_G.cell_coords(gc)
        for dj in range(-buffer_layers, buffer_layers + 1):
            for di in range(-buffer_layers, buffer_layers + 1):
                jx, jy = ix + di, iy + dj
                if 0 <= jx < mesh_G.nx and 0 <= jy < mesh_G.ny:
                    c = mesh_G.cell_index(jx, jy)
                    if c not in covered:
                        marks.add(c)
    return sorted(marks)


def extend_footprint(mesh_G: Mesh, lmap, marks, level):
    """Refine the union footprint; returns ``(local, lmap, interface)``."""
    footprint = sorted(set(lmap.footprint) | set(int(c) for c in marks))
    if not footprint_connected(mesh_G, footprint):
        raise RuntimeError("extended footprint lost edge-connectivity")
    return refine_footprint(mesh_G, footprint, level)


def transfer_state(
    mesh_G,
    old_local,
    old_lmap,
    new_local,
    new_lmap,
    qd_new,
    params,
    u_L,
    p_L,
    d_L,
    history,
    J_prev,
    u_G,
    p_G,
):
    """Carry the local state onto an extended local mesh.

    Returns ``(u, p, d, history, J_prev)`` on the new mesh.  Retained nodes
    and cells (identified by fine-lattice keys) keep their values bitwise;
    new nodes take globally interpolated displacement/pressure and zero phase
    field; new cells evaluate history and previous volume ratio from the
    transferred displacement.
    """
    old_nodes = old_lmap.node_lookup()
    nn = new_local.n_nodes
    u = np.empty((nn, 2))
    p = np.empty(nn)
    d = np.zeros(nn)

    keys = new_lmap.node_keys
    old_id = np.array(
        [old_nodes.get((int(a), int(b)), -1) for a, b in keys], dtype=int
    )
    kept = old_id >= 0
    u[kept] = u_L[old_id[kept]]
    p[kept] = p_L[old_id[kept]]
    d[kept] = d_L[old_id[kept]]
    if np.any(~kept):
        pts = new_local.nodes[~kept]
        u[~kept] = interp_structured(mesh_G, u_G, pts)
        p[~kept] = interp_structured(mesh_G, p_G, pts)

    # per-cell states: match by the lattice key of the lower-left corner
    old_cell_of = {
        (int(a), int(b)): c
        for c, (a, b) in enumerate(old_lmap.node_keys[old_local.cells[:, 0]])
    }
    nq = history.shape[1]
    H_new = np.empty((new_local.n_cells, nq))
    J_new = np.empty((new_local.n_cells, nq))
    fresh = []
    for c in range(new_local.n_cells):
        key = tuple(int(x) for x in new_lmap.node_keys[new_local.cells[c, 0]])
        oc = old_cell_of.get(key, -1)
        if oc >= 0:
            H_new[c] = history[oc]
            J_new[c] = J_prev[oc]
        else:
            fresh.append(c)
    if fresh:
        fresh = np.array(fresh, dtype=int)
        F = cst.deformation_gradient(asm.grad_qp(new_local, qd_new, u, cell_ids=fresh))
        H_new[fresh] = cst.crack_driving_force(F, params)
        J_new[fresh] = np.linalg.det(F)
    return u, p, d, H_new, J_new
