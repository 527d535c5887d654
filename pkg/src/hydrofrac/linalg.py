"""Sparse linear algebra: constrained solves, mortar coupling and interface
(Schur) stiffness extraction.

The interface machinery works in terms of *trace dof positions*: the coarse
trace carries one multiplier dof per global trace node (see
:class:`~hydrofrac.mesh.Interface`), scalars for pressure and, after
:func:`expand_to_vector`, interleaved pairs for displacement.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Interface

__all__ = [
    "apply_dirichlet",
    "Factorization",
    "mortar_matrices",
    "expand_to_vector",
    "schur_complement",
    "energy_norm",
]


# ---------------------------------------------------------------------------
# Constrained sparse systems
# ---------------------------------------------------------------------------

def apply_dirichlet(A, b, dofs, values=None):
    """Symmetric elimination of prescribed dofs from ``A x = b``.

    Returns modified copies ``(A', b')`` with unit diagonal rows on the
    prescribed dofs, the prescribed values moved to the right-hand side of the
    remaining equations, and ``b'[dofs] = values``.
    """
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=int)
    if values is None:
        values = np.zeros(len(dofs))
    values = np.broadcast_to(np.asarray(values, dtype=float), (len(dofs),))
    keep = np.ones(n)
    keep[dofs] = 0.0
    x0 = np.zeros(n)
    x0[dofs] = values
    b = b - A @ x0
    P = sp.diags(keep)
    A = (P @ A @ P + sp.diags(1.0 - keep)).tocsr()
    b = b * keep
    b[dofs] = values
    return A, b


class Factorization:
    """Cached sparse LU factorization with a content-based refresh guard.

    Modified-Newton style reuse: the factorization survives until
    :meth:`refresh` is called with a new matrix.
    """

    def __init__(self, A=None):
        self._lu = None
        if A is not None:
            self.refresh(A)

    def refresh(self, A):
        self._lu = spla.splu(sp.csc_matrix(A))
        return self

    @property
    def ready(self) -> bool:
        return self._lu is not None

    def solve(self, b):
        if self._lu is None:
            raise RuntimeError("factorization has not been computed yet")
        return self._lu.solve(np.asarray(b))


# ---------------------------------------------------------------------------
# Mortar coupling on the interface trace
# ---------------------------------------------------------------------------

def mortar_matrices(interface: Interface, glob_xy, loc_xy):
    """Scalar mortar matrices of the coarse-multiplier trace space.

    Returns
    -------
    D : (m, m) ndarray
        Coarse trace mass matrix, ``D[i, j] = integral theta_i theta_j ds``.
    B : (m, M) ndarray
        Cross mass against the fine trace, ``B[i, a] = integral theta_i
        psi_a ds``; two-point Gauss per fine sub-edge (exact for the
        piecewise-quadratic integrand).

    For nested traces ``B @ interface.prolong == D`` holds to roundoff.
    """
    m, M = interface.n_mult, interface.n_fine
    D = np.zeros((m, m))
    B = np.zeros((m, M))
    if m == 0:
        return D, B
    gq = (np.array([-1.0, 1.0]) / np.sqrt(3.0) + 1.0) / 2.0  # on [0, 1]
    gw = np.array([0.5, 0.5])
    for e, (i0, i1) in enumerate(interface.coarse_edges):
        ga = glob_xy[interface.glob_nodes[i0]]
        gb = glob_xy[interface.glob_nodes[i1]]
        L = interface.edge_len[e]
        D[np.ix_((i0, i1), (i0, i1))] += L / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        tang = (gb - ga) / (L * L)
        for a0, a1 in interface.fine_edges[e]:
            xu = loc_xy[interface.loc_nodes[a0]]
            xv = loc_xy[interface.loc_nodes[a1]]
            tu = float(np.dot(xu - ga, tang))
            tv = float(np.dot(xv - ga, tang))
            for xi, w in zip(gq, gw):
                t = tu + xi * (tv - tu)
                ds = w * abs(tv - tu) * L
                theta = (1.0 - t, t)
                psi = (1.0 - xi, xi)
                for ii, th in zip((i0, i1), theta):
                    B[ii, a0] += ds * th * psi[0]
                    B[ii, a1] += ds * th * psi[1]
    return D, B


def expand_to_vector(mat):
    """Expand a scalar trace operator to interleaved 2-vector dofs."""
    return np.kron(np.asarray(mat), np.eye(2))


def energy_norm(vec, D):
    """``sqrt(v^T D v)`` for a (semi-)definite trace metric ``D``."""
    return float(np.sqrt(max(np.dot(vec, D @ vec), 0.0)))


# ---------------------------------------------------------------------------
# Interface stiffness via Schur complements
# ---------------------------------------------------------------------------

def schur_complement(A, keep, free_mask=None):
    """Static condensation of ``A`` onto the dofs ``keep``.

    Parameters
    ----------
    A : sparse matrix
        Symmetric-structure tangent operator.
    keep : int array
        Dofs retained by the condensation (the interface trace).
    free_mask : bool array or None
        Dofs participating at all; eliminated-but-not-kept dofs are the
        interior.  Prescribed (Dirichlet) dofs are excluded by passing a mask
        with ``False`` there.  ``keep`` must be free.

    Returns
    -------
    S : (len(keep), len(keep)) ndarray
        ``A_kk - A_ki inv(A_ii) A_ik``.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    keep = np.asarray(keep, dtype=int)
    if free_mask is None:
        free_mask = np.ones(n, dtype=bool)
    if not np.all(free_mask[keep]):
        raise ValueError("kept dofs must be free (not Dirichlet-prescribed)")
    interior_mask = free_mask.copy()
    interior_mask[keep] = False
    interior = np.nonzero(interior_mask)[0]

    A_kk = A[np.ix_(keep, keep)].toarray()
    if len(interior) == 0:
        return A_kk
    A_ii = A[np.ix_(interior, interior)].tocsc()
    A_ik = A[np.ix_(interior, keep)].toarray()
    A_ki = A[np.ix_(keep, interior)].toarray()
    lu = spla.splu(A_ii)
    return A_kk - A_ki @ lu.solve(A_ik)
