"""Vectorized finite-element assembly on structured square-cell meshes.

Because every cell of a :class:`~hydrofrac.mesh.Mesh` is an axis-aligned
square of edge ``h``, the geometry map is the same affine map for all cells:
physical shape-function gradients and quadrature weights are computed once per
(mesh, order) pair and reused.  All assemblers accept an optional ``cell_ids``
selection so that sub-domain operators (e.g. the complement of a fictitious
region) reuse the same code path.

Field layout conventions:

* displacement ``u``: array of shape ``(n_nodes, 2)``; the flattened dof order
  interleaves components, node ``a`` owning dofs ``2a`` and ``2a + 1``;
* pressure ``p`` and phase field ``d``: arrays of shape ``(n_nodes,)``;
* history/driving-force states: arrays of shape ``(n_cells, n_qp)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import constitutive as cst
from .mesh import Mesh, eval_basis, quadrature

__all__ = [
    "QuadData",
    "quad_data",
    "interp_qp",
    "grad_qp",
    "qp_points",
    "mech_residual",
    "mech_tangent",
    "mech_pressure_coupling",
    "pressure_mech_coupling",
    "pressure_system",
    "phase_field_system",
    "update_history",
    "mass_matrix",
    "stiffness_matrix",
    "edges_on_segment",
    "edge_load_vector",
    "traction_vector",
]


# ---------------------------------------------------------------------------
# Quadrature precomputation
# ---------------------------------------------------------------------------

@dataclass
class QuadData:
    """Per-(mesh, order) quadrature tables shared by all cells.

    Attributes
    ----------
    N : (nq, 4) ndarray
        Shape values at quadrature points.
    dNdX : (nq, 4, 2) ndarray
        Physical shape gradients (identical for every square cell).
    wdet : (nq,) ndarray
        Quadrature weights times the Jacobian determinant.
    ref_points : (nq, 2) ndarray
    order : int
    """

    N: np.ndarray
    dNdX: np.ndarray
    wdet: np.ndarray
    ref_points: np.ndarray
    order: int

    @property
    def n_qp(self) -> int:
        return len(self.wdet)


def quad_data(mesh: Mesh, order: int = 2) -> QuadData:
    """Build the shared quadrature tables for a structured mesh."""
    pts, wts = quadrature(order)
    N = np.empty((len(pts), 4))
    dN = np.empty((len(pts), 4, 2))
    for q, (xi, eta) in enumerate(pts):
        N[q], dN[q] = eval_basis(xi, eta)
    jac = mesh.h / 2.0
    return QuadData(
        N=N,
        dNdX=dN / jac,
        wdet=wts * jac * jac,
        ref_points=pts,
        order=order,
    )


def _cells(mesh: Mesh, cell_ids):
    if cell_ids is None:
        return mesh.cells
    return mesh.cells[np.asarray(cell_ids, dtype=int)]


# ---------------------------------------------------------------------------
# Quadrature-point evaluation
# ---------------------------------------------------------------------------

def interp_qp(mesh: Mesh, qd: QuadData, nodal: np.ndarray, cell_ids=None):
    """Interpolate a nodal field to quadrature points.

    Returns ``(n_cells, nq)`` for scalars and ``(n_cells, nq, m)`` for
    node-wise vectors of width ``m``.
    """
    vals = nodal[_cells(mesh, cell_ids)]  # (nc, 4[, m])
    if vals.ndim == 2:
        return np.einsum("qa,ca->cq", qd.N, vals)
    return np.einsum("qa,cam->cqm", qd.N, vals)


def grad_qp(mesh: Mesh, qd: QuadData, nodal: np.ndarray, cell_ids=None):
    """Reference-configuration gradients at quadrature points.

    Scalars give ``(n_cells, nq, 2)``; vector fields give the Jacobian
    ``(n_cells, nq, 2, 2)`` with ``out[c, q, i, J] = d v_i / d X_J``.
    """
    vals = nodal[_cells(mesh, cell_ids)]
    if vals.ndim == 2:
        return np.einsum("qaJ,ca->cqJ", qd.dNdX, vals)
    return np.einsum("qaJ,cai->cqiJ", qd.dNdX, vals)


def qp_points(mesh: Mesh, qd: QuadData, cell_ids=None):
    """Physical coordinates of all quadrature points, ``(n_cells, nq, 2)``."""
    xy = mesh.nodes[_cells(mesh, cell_ids)]
    return np.einsum("qa,cam->cqm", qd.N, xy)


def _deformation(mesh, qd, u, cell_ids):
    return cst.deformation_gradient(grad_qp(mesh, qd, u, cell_ids))


# ---------------------------------------------------------------------------
# Scatter helpers
# ---------------------------------------------------------------------------

def _scatter_vector(cells, cell_vec, n_dofs, ncomp):
    """Accumulate per-cell dof vectors ``(nc, 4, ncomp)`` into a flat vector."""
    out = np.zeros(n_dofs)
    idx = (ncomp * cells[:, :, None] + np.arange(ncomp)).ravel()
    np.add.at(out, idx, cell_vec.ravel())
    return out

def _csr(cells_r, cells_c, cell_mat, shape, ncomp_r, ncomp_c):
    """Assemble per-cell blocks ``(nc, 4*ncomp_r, 4*ncomp_c)`` into CSR."""
    rows = (ncomp_r * cells_r[:, :, None] + np.arange(ncomp_r)).reshape(len(cells_r), -1)
    cols = (ncomp_c * cells_c[:, :, None] + np.arange(ncomp_c)).reshape(len(cells_c), -1)
    r = np.repeat(rows, cols.shape[1], axis=1).ravel()
    c = np.tile(cols, (1, rows.shape[1])).ravel()
    return sp.coo_matrix((cell_mat.ravel(), (r, c)), shape=shape).tocsr()


# ---------------------------------------------------------------------------
# Mechanics
# ---------------------------------------------------------------------------

def mech_residual(mesh, qd, u, d, p, params, cell_ids=None):
    """Internal-force residual of the quasi-static momentum balance.

    ``R[(a, i)] = sum_qp w P[i, J] dN_a/dX_J`` with the total stress of
    :func:`~hydrofrac.constitutive.first_pk_stress` evaluated from nodal
    ``u``, ``d`` and ``p``.
    """
    cells = _cells(mesh, cell_ids)
    F = _deformation(mesh, qd, u, cell_ids)
    dq = interp_qp(mesh, qd, d, cell_ids)
    pq = interp_qp(mesh, qd, p, cell_ids)
    P = cst.first_pk_stress(F, dq, pq, params)
    cell_vec = np.einsum("q,cqiJ,qaJ->cai", qd.wdet, P, qd.dNdX, optimize=True)
    return _scatter_vector(cells, cell_vec, 2 * mesh.n_nodes, 2)


def mech_tangent(mesh, qd, u, d, p, params, cell_ids=None):
    """Consistent tangent of :func:`mech_residual` with respect to ``u``."""
    cells = _cells(mesh, cell_ids)
    F = _deformation(mesh, qd, u, cell_ids)
    dq = interp_qp(mesh, qd, d, cell_ids)
    pq = interp_qp(mesh, qd, p, cell_ids)
    A = cst.mechanics_tangent(F, dq, pq, params)
    ke = np.einsum("q,cqiJkL,qaJ,qbL->caibk", qd.wdet, A, qd.dNdX, qd.dNdX, optimize=True)
    nc = len(cells)
    n = 2 * mesh.n_nodes
    return _csr(cells, cells, ke.reshape(nc, 8, 8), (n, n), 2, 2)


def mech_pressure_coupling(mesh, qd, u, params, cell_ids=None):
    """Derivative of the momentum residual with respect to nodal pressure.

    Returns the ``(2 n_nodes, n_nodes)`` matrix with entries
    ``sum_qp w (dP/dp)[i, J] dN_a/dX_J N_b``.
    """
    cells = _cells(mesh, cell_ids)
    F = _deformation(mesh, qd, u, cell_ids)
    dPdp = cst.stress_pressure_tangent(F, params)
    ke = np.einsum("q,cqiJ,qaJ,qb->caib", qd.wdet, dPdp, qd.dNdX, qd.N, optimize=True)
    nc = len(cells)
    return _csr(
        cells, cells, ke.reshape(nc, 8, 4), (2 * mesh.n_nodes, mesh.n_nodes), 2, 1
    )


# ---------------------------------------------------------------------------
# Fluid mass balance
# ---------------------------------------------------------------------------

def pressure_mech_coupling(mesh, qd, u, params, cell_ids=None):
    """Derivative of the storage term with respect to ``u``.

    The fluid content rate contains ``alpha (J - J_n)``; its linearization in
    ``u`` is ``alpha J F^-T : grad(du)``, giving the ``(n_nodes, 2 n_nodes)``
    block ``sum_qp w alpha J F^-T[i, J] N_b dN_a/dX_J`` (row ``b``, column
    ``(a, i)``).  Permeability changes with ``u`` are neglected here, which
    leaves Newton with an inexact but convergent Jacobian.
    """
    cells = _cells(mesh, cell_ids)
    F = _deformation(mesh, qd, u, cell_ids)
    J = np.linalg.det(F)
    FinvT = np.linalg.inv(np.swapaxes(F, -1, -2))
    w = params.biot_alpha * qd.wdet[None, :] * J
    ke = np.einsum("cq,cqiJ,qb,qaJ->cbai", w, FinvT, qd.N, qd.dNdX, optimize=True)
    nc = len(cells)
    return _csr(
        cells, cells, ke.reshape(nc, 4, 8), (mesh.n_nodes, 2 * mesh.n_nodes), 1, 2
    )


def pressure_system(
    mesh,
    qd,
    u,
    d,
    p_prev,
    J_prev,
    dt,
    params,
    h_e=None,
    cell_ids=None,
    source_density=None,
):
    """Matrix and right-hand side of the backward-Euler mass balance in ``p``.

    Discretizes ``(1/M)(p - p_n) + alpha (J - J_n) - dt-integrated flux`` with
    the mobility of :func:`~hydrofrac.constitutive.permeability` frozen at the
    current ``(u, d)`` state, so the system is linear in ``p``:

    ``[(1/M) Mass + dt Stiff_K] p = (1/M) Mass p_n - Load(alpha (J - J_n))
    + dt Source``.

    Parameters
    ----------
    J_prev : (n_cells, nq) ndarray or None
        Volume ratio at the previous time level on the same quadrature grid
        (``None`` means the undeformed value 1).
    h_e : float or None
        Element size in the crack-opening estimate; defaults to ``mesh.h``.
    source_density : (n_cells_sel, nq) ndarray or None
        Volumetric fluid source rate at quadrature points.

    Returns
    -------
    A : csr_matrix, shape ``(n_nodes, n_nodes)``
    rhs : ndarray, shape ``(n_nodes,)``
    """
    cells = _cells(mesh, cell_ids)
    nc = len(cells)
    n = mesh.n_nodes
    if h_e is None:
        h_e = mesh.h

    F = _deformation(mesh, qd, u, cell_ids)
    J = np.linalg.det(F)
    dq = interp_qp(mesh, qd, d, cell_ids)
    gdq = grad_qp(mesh, qd, d, cell_ids)
    K = cst.permeability(F, dq, gdq, h_e, params)

    mass_e = np.einsum("q,qa,qb->ab", qd.wdet, qd.N, qd.N)
    me = np.broadcast_to(mass_e / params.biot_modulus, (nc, 4, 4))
    se = dt * np.einsum("q,cqJL,qaJ,qbL->cab", qd.wdet, K, qd.dNdX, qd.dNdX, optimize=True)
    A = _csr(cells, cells, me + se, (n, n), 1, 1)

    pq_prev = interp_qp(mesh, qd, p_prev, cell_ids)
    if J_prev is None:
        J_prev = np.ones_like(J)
    stor = pq_prev / params.biot_modulus - params.biot_alpha * (J - J_prev)
    if source_density is not None:
        stor = stor + dt * source_density
    rhs_cell = np.einsum("q,cq,qb->cb", qd.wdet, stor, qd.N, optimize=True)
    rhs = _scatter_vector(cells, rhs_cell[:, :, None], n, 1)
    return A, rhs


def pressure_residual(
    mesh, qd, u, d, p, p_prev, J_prev, dt, params, h_e=None, cell_ids=None,
    source_density=None,
):
    """Residual of the mass balance at a given ``p`` (for monolithic Newton)."""
    A, rhs = pressure_system(
        mesh, qd, u, d, p_prev, J_prev, dt, params, h_e, cell_ids, source_density
    )
    return A @ p - rhs, A


# ---------------------------------------------------------------------------
# Phase field
# ---------------------------------------------------------------------------

def phase_field_system(mesh, qd, history, params, cell_ids=None):
    """Linear system of the phase-field evolution equation.

    The strong form ``2 psi_c (d - l^2 lap d) + 2 (d - 1) H = 0`` is
    discretized with a row-lumped reaction/source pair,

    ``[diag(L) + 2 psi_c l^2 Stiff] d = b``,
    ``L_a = sum_qp w 2 (psi_c + H) N_a``,  ``b_a = sum_qp w 2 H N_a``,

    which makes the matrix an M-matrix and bounds the solution by the nodal
    maximum principle: ``0 <= d <= max H / (psi_c + max H) < 1`` up to
    roundoff, with prescribed nodes handled separately.

    Parameters
    ----------
    history : (n_cells_sel, nq) ndarray
        Running maximum of the crack driving force at quadrature points.

    Returns
    -------
    A : csr_matrix
    b : ndarray
    """
    cells = _cells(mesh, cell_ids)
    n = mesh.n_nodes
    psi_c = params.psi_c
    l2 = params.length_scale**2

    lump = np.einsum("q,cq,qa->ca", qd.wdet, 2.0 * (psi_c + history), qd.N, optimize=True)
    diag = np.zeros(n)
    np.add.at(diag, cells.ravel(), lump.ravel())

    stiff_e = np.einsum("q,qaJ,qbJ->ab", qd.wdet, qd.dNdX, qd.dNdX)
    se = np.broadcast_to(2.0 * psi_c * l2 * stiff_e, (len(cells), 4, 4))
    A = _csr(cells, cells, np.ascontiguousarray(se), (n, n), 1, 1)
    A = A + sp.diags(diag)

    b_cell = np.einsum("q,cq,qa->ca", qd.wdet, 2.0 * history, qd.N, optimize=True)
    b = _scatter_vector(cells, b_cell[:, :, None], n, 1)
    return A.tocsr(), b


def update_history(mesh, qd, u, history, params, cell_ids=None):
    """Elementwise-max update of the crack driving history (irreversible)."""
    F = _deformation(mesh, qd, u, cell_ids)
    drive = cst.crack_driving_force(F, params)
    return np.maximum(history, drive)


# ---------------------------------------------------------------------------
# Generic scalar operators
# ---------------------------------------------------------------------------

def mass_matrix(mesh, qd, cell_ids=None):
    """Consistent scalar mass matrix."""
    cells = _cells(mesh, cell_ids)
    me = np.einsum("q,qa,qb->ab", qd.wdet, qd.N, qd.N)
    me = np.broadcast_to(me, (len(cells), 4, 4))
    n = mesh.n_nodes
    return _csr(cells, cells, np.ascontiguousarray(me), (n, n), 1, 1)


def stiffness_matrix(mesh, qd, cell_ids=None):
    """Scalar Laplacian stiffness matrix."""
    cells = _cells(mesh, cell_ids)
    se = np.einsum("q,qaJ,qbJ->ab", qd.wdet, qd.dNdX, qd.dNdX)
    se = np.broadcast_to(se, (len(cells), 4, 4))
    n = mesh.n_nodes
    return _csr(cells, cells, np.ascontiguousarray(se), (n, n), 1, 1)


# ---------------------------------------------------------------------------
# Edge integrals: injection lines, tractions, flux loads
# ---------------------------------------------------------------------------

def edges_on_segment(mesh: Mesh, a, b, tol=None):
    """Mesh edges (as node-id pairs) lying on the segment ``a``-``b``.

    Collects horizontal/vertical lattice edges both of whose endpoints are
    within ``tol`` of the segment.  Intended for axis-aligned notch and
    injection lines that coincide with mesh lines.
    """
    from .mesh import segment_point_distance

    if tol is None:
        tol = 1e-9 * mesh.h
    near = segment_point_distance(mesh.nodes, a, b) <= tol
    ids = np.nonzero(near)[0]
    near_set = set(int(i) for i in ids)
    edges = set()
    for cell in mesh.cells:
        for k in range(4):
            u_, v_ = int(cell[k]), int(cell[(k + 1) % 4])
            if u_ in near_set and v_ in near_set:
                edges.add((min(u_, v_), max(u_, v_)))
    return np.array(sorted(edges), dtype=int).reshape(-1, 2)


def edge_load_vector(nodes_xy, edges, n_nodes):
    """Nodal weights of a unit line density over the given edges.

    ``out[a] = sum over edges of (edge length / 2)`` for each endpoint, exact
    for piecewise-linear traces of Q1 fields.
    """
    out = np.zeros(n_nodes)
    if len(edges) == 0:
        return out
    lens = np.linalg.norm(nodes_xy[edges[:, 1]] - nodes_xy[edges[:, 0]], axis=1)
    np.add.at(out, edges[:, 0], 0.5 * lens)
    np.add.at(out, edges[:, 1], 0.5 * lens)
    return out


def traction_vector(mesh: Mesh, edges, traction):
    """Consistent load vector of a constant traction on boundary edges."""
    w = edge_load_vector(mesh.nodes, np.asarray(edges, dtype=int), mesh.n_nodes)
    out = np.zeros(2 * mesh.n_nodes)
    out[0::2] = w * traction[0]
    out[1::2] = w * traction[1]
    return out
