"""Two-mesh global/local solver with Robin-type interface exchange.

The fracture process zone is resolved on a fine *local* mesh covering an
adaptive footprint of coarse cells; the remaining structure is carried by the
coarse *global* mesh.  The two discretizations are tied along the footprint
boundary by a mortar multiplier space living on the coarse trace nodes.

Each time step iterates:

1. a staggered solve on the local domain (phase field, then mechanics, then
   pressure), where the interface condition is a Robin row
   ``D lam_loc + K_cmp w = Lam_loc`` coupling the multiplier to the mortar
   trace ``w`` of the local field, with ``K_cmp`` the trace Schur complement
   of the surrounding (complement) structure — the exact far-field stiffness
   at the frozen step-start state;
2. moment recovery and a complementary Robin load for the global problem;
3. a global solve with the mortar trace prescribed on the interface
   (mechanics on the complement cells only, with the covered region removed;
   pressure on the full mesh, the covered region acting as a coarse shadow
   that also carries the injection as a volume source);
4. a consistency update of the interface trace through the locally-condensed
   stiffness ``K_loc`` (the mortar restriction of the fine-trace Schur
   complement), whose mismatch with the mortar trace measures the remaining
   interface imbalance.

Convergence requires both trace imbalance and the mismatch of the two
multiplier moment vectors (which must be equal and opposite) to fall under
``gl_tol``.  After a converged step, the footprint predictor of
:mod:`~hydrofrac.adaptivity` may grow the local domain, in which case the
step is re-solved on the extended footprint (corrector).
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from . import adaptivity as adapt
from . import assembly as asm
from . import constitutive as cst
from .config import SolverOptions
from .linalg import (
    Factorization,
    apply_dirichlet,
    energy_norm,
    expand_to_vector,
    mortar_matrices,
    schur_complement,
)
from .mesh import Mesh, cells_intersecting_segment, refine_footprint
from .solver_single import (
    ConvergenceError,
    StepRecord,
    injection_vector,
    notch_pin_nodes,
)

__all__ = ["GlobalLocalSolver", "initial_footprint"]


def _interleave(nodes):
    nodes = np.asarray(nodes, dtype=int)
    return np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()


def _node_adjacency(mesh: Mesh) -> sp.csr_matrix:
    """Node-to-node adjacency through shared cells (for connectivity labels)."""
    c = mesh.cells
    i = np.repeat(c, c.shape[1], axis=1).ravel()
    j = np.tile(c, (1, c.shape[1])).ravel()
    return sp.csr_matrix(
        (np.ones(len(i)), (i, j)), shape=(mesh.n_nodes, mesh.n_nodes)
    )


def initial_footprint(mesh_G: Mesh, notches, buffer_layers: int):
    """Bounding box of all notch-intersecting cells, dilated by the buffer.

    Using one common bounding box keeps multi-notch footprints edge-connected
    from the start.
    """
    cells = []
    for nt in notches:
        cells.extend(cells_intersecting_segment(mesh_G, nt.a, nt.b))
    if not cells:
        raise ValueError("no global cells intersect the notch segments")
    coords = np.array([mesh_G.cell_coords(c) for c in sorted(set(cells))])
    i0 = max(coords[:, 0].min() - buffer_layers, 0)
    i1 = min(coords[:, 0].max() + buffer_layers, mesh_G.nx - 1)
    j0 = max(coords[:, 1].min() - buffer_layers, 0)
    j1 = min(coords[:, 1].max() + buffer_layers, mesh_G.ny - 1)
    return [
        mesh_G.cell_index(ix, iy)
        for iy in range(j0, j1 + 1)
        for ix in range(i0, i1 + 1)
    ]


class GlobalLocalSolver:
    """Adaptive two-mesh solver; see the module docstring for the scheme."""

    def __init__(
        self,
        mesh_G: Mesh,
        params: cst.MaterialParams,
        notches,
        level: int,
        opts: SolverOptions = None,
        quad_order: int = 2,
        buffer_layers: int = 2,
        extend_threshold: float = 0.4,
        footprint=None,
        freeze_phase_field: bool = False,
    ):
        self.mesh_G = mesh_G
        self.params = params
        self.notches = list(notches)
        self.level = level
        self.opts = opts or SolverOptions()
        self.quad_order = quad_order
        self.buffer_layers = buffer_layers
        self.extend_threshold = extend_threshold
        self.freeze_phase_field = freeze_phase_field

        self.qd_G = asm.quad_data(mesh_G, quad_order)
        ext = mesh_G.boundary_nodes(exterior_only=True)
        self._ext_nodes_G = ext
        self._u_fixed_ext_G = _interleave(ext)

        nG = mesh_G.n_nodes
        self.u_G = np.zeros((nG, 2))
        self.p_G = np.zeros(nG)
        self.d_G = np.zeros(nG)  # the coarse model carries no fracture
        self.J_prev_G = np.ones((mesh_G.n_cells, self.qd_G.n_qp))
        self.t = 0.0
        self.gl_diag = []  # rows: (step, t, kind, k, e_u, e_p, b_u, b_p, d_drift, n_cells)
        self._step_index = 0

        if footprint is None:
            footprint = initial_footprint(mesh_G, self.notches, buffer_layers)
        self._install_footprint(sorted(footprint), fresh=True)

    # ------------------------------------------------------------------
    # footprint installation / extension
    # ------------------------------------------------------------------

    def _install_footprint(self, footprint, fresh, transfer_from=None):
        mesh_L, lmap, itf = refine_footprint(self.mesh_G, footprint, self.level)
        if itf.is_empty:
            raise ValueError("footprint covers the whole domain; nothing to couple")
        if np.intersect1d(itf.glob_nodes, self._ext_nodes_G).size:
            raise ValueError(
                "the local footprint must not touch the outer boundary"
            )
        self.mesh_L, self.lmap, self.itf = mesh_L, lmap, itf
        self.qd_L = asm.quad_data(mesh_L, self.quad_order)

        # interface operators -------------------------------------------------
        # ``mortar_matrices`` couples multiplier moments to the *trace* of the
        # fine mesh; widen the cross-mass to full local vectors so residuals
        # and Jacobians can be written against whole-domain arrays.
        D, B_tr = mortar_matrices(itf, self.mesh_G.nodes, mesh_L.nodes)
        n_fine = itf.n_fine
        sel = sp.csr_matrix(
            (np.ones(n_fine), (np.arange(n_fine), np.asarray(itf.loc_nodes))),
            shape=(n_fine, mesh_L.n_nodes),
        )
        self.D = D
        self.B = sp.csr_matrix(B_tr) @ sel
        self.Dv = expand_to_vector(D)
        self.Bv = sp.kron(self.B, sp.identity(2), format="csr")
        self.P = itf.prolong
        self.Pv = expand_to_vector(self.P)
        self.tr_uG = _interleave(itf.glob_nodes)
        self.tr_pG = np.asarray(itf.glob_nodes, dtype=int)
        self.tr_uL = _interleave(itf.loc_nodes)
        self.tr_pL = np.asarray(itf.loc_nodes, dtype=int)

        # Rigid modes of the floating local patch restricted to the interface.
        # The displacement-trace recovery inverts the local interface
        # stiffness, which is blind to these, so trace agreement is measured
        # modulo this subspace (their force balance is checked separately).
        # The patch may consist of several disconnected pieces, each floating
        # independently: one translation pair and one rotation per piece.
        n_cmp, labels = csgraph.connected_components(
            _node_adjacency(mesh_L), directed=False
        )
        mult_cmp = labels[self.B.indices[self.B.indptr[:-1]]]
        xy = self.mesh_G.nodes[itf.glob_nodes]
        m = itf.n_mult
        Z = np.zeros((2 * m, 3 * n_cmp))
        for c in range(n_cmp):
            sel_c = mult_cmp == c
            Z[0::2, 3 * c][sel_c] = 1.0
            Z[1::2, 3 * c + 1][sel_c] = 1.0
            Z[0::2, 3 * c + 2][sel_c] = -xy[sel_c, 1]
            Z[1::2, 3 * c + 2][sel_c] = xy[sel_c, 0]
        self._rigid_Z = Z
        self._rigid_G = Z.T @ (self.Dv @ Z)

        # cells and pins ------------------------------------------------------
        covered = np.zeros(self.mesh_G.n_cells, dtype=bool)
        covered[list(lmap.footprint)] = True
        self.cmpl_cells = np.nonzero(~covered)[0]
        fict_nodes = np.unique(self.mesh_G.cells[list(lmap.footprint)])
        cmpl_nodes = np.unique(self.mesh_G.cells[self.cmpl_cells])
        self.fict_interior = np.setdiff1d(fict_nodes, cmpl_nodes)
        self.u_fixed_G = np.sort(
            np.concatenate([self._u_fixed_ext_G, _interleave(self.fict_interior)])
        )
        ext_L = mesh_L.boundary_nodes(exterior_only=True)
        self.u_fixed_L = _interleave(ext_L)
        self.p_fixed_L = np.sort(ext_L)
        if self.freeze_phase_field:
            self.d_pins_L = np.zeros(0, dtype=int)
        else:
            self.d_pins_L = notch_pin_nodes(mesh_L, self.notches)
        self.inject_L = injection_vector(mesh_L, self.notches)
        self.shadow_G = self._shadow_source()

        # state ---------------------------------------------------------------
        nL = mesh_L.n_nodes
        if fresh:
            self.u_L = np.zeros((nL, 2))
            self.p_L = np.zeros(nL)
            self.d_L = np.zeros(nL)
            self.d_L[self.d_pins_L] = 1.0
            self.H_L = np.zeros((mesh_L.n_cells, self.qd_L.n_qp))
            self.J_prev_L = np.ones((mesh_L.n_cells, self.qd_L.n_qp))
        else:
            (old_local, old_lmap, u, p, d, H, Jp) = transfer_from
            self.u_L, self.p_L, self.d_L, self.H_L, self.J_prev_L = (
                adapt.transfer_state(
                    self.mesh_G, old_local, old_lmap, mesh_L, self.lmap,
                    self.qd_L, self.params, u, p, d, H, Jp, self.u_G, self.p_G,
                )
            )
            self.d_L[self.d_pins_L] = 1.0
            # the newly covered region is now represented by the local mesh;
            # the coarse surrogate holds no skeleton there
            self.u_G[self.fict_interior] = 0.0

        self._fact_L = Factorization()
        self._fact_Gu = Factorization()

    def _shadow_source(self):
        """Volume source density on fictitious cells mirroring the injection."""
        src = np.zeros((self.mesh_G.n_cells, self.qd_G.n_qp))
        covered = set(self.lmap.footprint)
        area = self.mesh_G.h ** 2
        for nt in self.notches:
            if nt.rate == 0.0:
                continue
            cells = cells_intersecting_segment(self.mesh_G, nt.a, nt.b)
            missing = [c for c in cells if c not in covered]
            if missing:
                raise ValueError(
                    f"notch cells {missing[:4]} are outside the local footprint"
                )
            src[cells] += nt.rate / (len(cells) * area)
        return src

    # ------------------------------------------------------------------
    # measurements
    # ------------------------------------------------------------------

    @property
    def total_dofs(self) -> int:
        """Unknowns carried by the split model: bulk fields on both meshes
        plus multiplier and trace dofs on the interface."""
        return 4 * (self.mesh_G.n_nodes + self.mesh_L.n_nodes) + 6 * self.itf.n_mult

    def crack_pressure(self, d_open: float = 0.9) -> float:
        on = self.d_L > d_open
        return float(self.p_L[on].max()) if np.any(on) else 0.0

    # ------------------------------------------------------------------
    # interface stiffness (per-substep Schur complements)
    # ------------------------------------------------------------------

    def _refresh_interface_stiffness(self, dt):
        nG, nL = self.mesh_G.n_nodes, self.mesh_L.n_nodes

        free_uG = np.ones(2 * nG, dtype=bool)
        free_uG[self.u_fixed_G] = False
        A = asm.mech_tangent(
            self.mesh_G, self.qd_G, self.u_G, self.d_G, self.p_G, self.params,
            cell_ids=self.cmpl_cells,
        )
        self.Kcmp_u = schur_complement(A, self.tr_uG, free_uG)

        free_uL = np.ones(2 * nL, dtype=bool)
        free_uL[self.u_fixed_L] = False
        A = asm.mech_tangent(
            self.mesh_L, self.qd_L, self.u_L, self.d_L, self.p_L, self.params
        )
        S_L = schur_complement(A, self.tr_uL, free_uL)
        self.Kloc_u = self.Pv.T @ S_L @ self.Pv

        free_pG = np.ones(nG, dtype=bool)
        free_pG[self._ext_nodes_G] = False
        free_pG[self.fict_interior] = False
        A, _ = asm.pressure_system(
            self.mesh_G, self.qd_G, self.u_G, self.d_G, self.p_G,
            self.J_prev_G[self.cmpl_cells], dt, self.params,
            cell_ids=self.cmpl_cells,
        )
        self.Kcmp_p = schur_complement(A, self.tr_pG, free_pG)

        free_pL = np.ones(nL, dtype=bool)
        free_pL[self.p_fixed_L] = False
        A, _ = asm.pressure_system(
            self.mesh_L, self.qd_L, self.u_L, self.d_L, self.p_L,
            self.J_prev_L, dt, self.params,
        )
        S_Lp = schur_complement(A, self.tr_pL, free_pL)
        self.Kloc_p = self.P.T @ S_Lp @ self.P

        self._fact_L = Factorization()
        self._fact_Gu = Factorization()

    # ------------------------------------------------------------------
    # local solves
    # ------------------------------------------------------------------

    def _solve_local_phase(self, history):
        A, b = asm.phase_field_system(self.mesh_L, self.qd_L, history, self.params)
        A, b = apply_dirichlet(A, b, self.d_pins_L, 1.0)
        return Factorization(A).solve(b)

    def _local_residual(
        self, u, p, lam_u, w_u, lam_p, w_p, Lam_u, Lam_p, dt, p_step, J_step
    ):
        """Residual blocks of the coupled local boundary value problem.

        Unknown layout: displacement, pressure, then per field a multiplier
        block and an interface half-step trace block.  The momentum and fluid
        rows are solved together because fully degraded cells have vanishing
        drained stiffness: only the storage coupling keeps their volumetric
        motion bounded, so splitting the two fields is non-contractive
        precisely where the fracture lives.
        """
        A_pp, rhs = asm.pressure_system(
            self.mesh_L, self.qd_L, u, self.d_L, p_step, J_step, dt, self.params
        )
        r_u = asm.mech_residual(
            self.mesh_L, self.qd_L, u, self.d_L, p, self.params
        ) - self.Bv.T @ lam_u
        r_u[self.u_fixed_L] = 0.0
        r_p = A_pp @ p - rhs - dt * self.inject_L - self.B.T @ lam_p
        r_p[self.p_fixed_L] = 0.0
        r_mu = self.Dv @ lam_u + self.Kcmp_u @ w_u - Lam_u
        r_cu = self.Bv @ u.reshape(-1) - self.Dv @ w_u
        r_mp = self.D @ lam_p + self.Kcmp_p @ w_p - Lam_p
        r_cp = self.B @ p - self.D @ w_p
        return (r_u, r_p, r_mu, r_cu, r_mp, r_cp), A_pp

    def _local_jacobian(self, u, p, A_pp):
        K = asm.mech_tangent(self.mesh_L, self.qd_L, u, self.d_L, p, self.params)
        C = asm.mech_pressure_coupling(self.mesh_L, self.qd_L, u, self.params)
        A_pu = asm.pressure_mech_coupling(self.mesh_L, self.qd_L, u, self.params)
        n2 = 2 * self.mesh_L.n_nodes
        n = self.mesh_L.n_nodes
        m = self.itf.n_mult
        Dv = sp.csr_matrix(self.Dv)
        Dm = sp.csr_matrix(self.D)
        J = sp.bmat(
            [
                [K, C, -sp.csr_matrix(self.Bv.T), None, None, None],
                [A_pu, A_pp, None, None, -sp.csr_matrix(self.B.T), None],
                [sp.csr_matrix((2 * m, n2)), None, Dv,
                 sp.csr_matrix(self.Kcmp_u), None, None],
                [sp.csr_matrix(self.Bv), None, None, -Dv, None, None],
                [None, sp.csr_matrix((m, n)), None, None, Dm,
                 sp.csr_matrix(self.Kcmp_p)],
                [None, sp.csr_matrix(self.B), None, None, None, -Dm],
            ],
            format="csr",
        )
        fixed = np.concatenate([self.u_fixed_L, n2 + self.p_fixed_L])
        J, _ = apply_dirichlet(J, np.zeros(J.shape[0]), fixed, 0.0)
        return J

    def _solve_local(
        self, Lam_u, Lam_p, dt, p_step, J_step, lam_u0, w_u0, lam_p0, w_p0
    ):
        """Newton on the coupled local saddle system.

        Returns ``(lam_u, w_u, lam_p, w_p, iters)`` and stores the converged
        bulk fields in ``u_L``/``p_L``.
        """
        opts = self.opts
        u, p = self.u_L.copy(), self.p_L.copy()
        lam_u, w_u = lam_u0.copy(), w_u0.copy()
        lam_p, w_p = lam_p0.copy(), w_p0.copy()
        n2 = 2 * self.mesh_L.n_nodes
        n = self.mesh_L.n_nodes
        m = self.itf.n_mult
        splits = np.cumsum([n2, n, 2 * m, 2 * m, m])
        res, A_pp = self._local_residual(
            u, p, lam_u, w_u, lam_p, w_p, Lam_u, Lam_p, dt, p_step, J_step
        )
        refs = [0.0] * 6  # largest residual norm seen per block
        since = 0
        for it in range(opts.newton_max):
            rn = [np.linalg.norm(r) for r in res]
            refs = [max(a, b) for a, b in zip(refs, rn)]
            if all(
                r <= max(opts.newton_rtol * ref, opts.newton_atol)
                for r, ref in zip(rn, refs)
            ):
                self.u_L, self.p_L = u, p
                return lam_u, w_u, lam_p, w_p, it
            if not self._fact_L.ready or since >= opts.refactor_every:
                self._fact_L.refresh(self._local_jacobian(u, p, A_pp))
                since = 0
            dx = self._fact_L.solve(-np.concatenate(res))
            du, dp, dlu, dwu, dlp, dwp = np.split(dx, splits)
            step = 1.0
            for _ in range(8):
                trial = (
                    u + step * du.reshape(-1, 2), p + step * dp,
                    lam_u + step * dlu, w_u + step * dwu,
                    lam_p + step * dlp, w_p + step * dwp,
                )
                try:
                    res, A_pp = self._local_residual(
                        *trial, Lam_u, Lam_p, dt, p_step, J_step
                    )
                    break
                except cst.NonAdmissibleState:
                    step *= 0.5
            else:
                raise ConvergenceError("local solve cannot stay admissible")
            u, p, lam_u, w_u, lam_p, w_p = trial
            since += 1
        raise ConvergenceError(
            "local Newton stalled (" +
            ", ".join(f"{np.linalg.norm(r):.2e}" for r in res) + ")"
        )

    # ------------------------------------------------------------------
    # global solves
    # ------------------------------------------------------------------

    def _global_mech_residual(self, u):
        return asm.mech_residual(
            self.mesh_G, self.qd_G, u, self.d_G, self.p_G, self.params,
            cell_ids=self.cmpl_cells,
        )

    def _solve_global_mech(self, u_half):
        opts = self.opts
        fixed = np.concatenate([self.u_fixed_G, self.tr_uG])
        vals = np.concatenate([np.zeros(len(self.u_fixed_G)), u_half])
        u = self.u_G.copy()
        u.reshape(-1)[fixed] = vals
        R = self._global_mech_residual(u)
        R[fixed] = 0.0
        ref = 0.0  # largest residual norm seen in this loop
        since = 0
        for it in range(opts.newton_max):
            rn = np.linalg.norm(R)
            ref = max(ref, rn)
            if rn <= max(opts.newton_rtol * ref, opts.newton_atol):
                self.u_G = u
                r = self._global_mech_residual(u)
                return r[self.tr_uG], it
            if not self._fact_Gu.ready or since >= opts.refactor_every:
                A = asm.mech_tangent(
                    self.mesh_G, self.qd_G, u, self.d_G, self.p_G, self.params,
                    cell_ids=self.cmpl_cells,
                )
                A, _ = apply_dirichlet(A, np.zeros(A.shape[0]), fixed, 0.0)
                self._fact_Gu.refresh(A)
                since = 0
            dx = self._fact_Gu.solve(-R)
            step = 1.0
            for _ in range(8):
                u_t = u + step * dx.reshape(-1, 2)
                try:
                    R = self._global_mech_residual(u_t)
                    break
                except cst.NonAdmissibleState:
                    step *= 0.5
            else:
                raise ConvergenceError("global mechanics cannot stay admissible")
            u = u_t
            R[fixed] = 0.0
            since += 1
        raise ConvergenceError("global mechanics Newton stalled")

    def _solve_global_pressure(self, p_half, dt, p_step, J_step):
        A, rhs = asm.pressure_system(
            self.mesh_G, self.qd_G, self.u_G, self.d_G, p_step, J_step, dt,
            self.params, source_density=self.shadow_G,
        )
        fixed = np.concatenate([self._ext_nodes_G, self.tr_pG])
        vals = np.concatenate([np.zeros(len(self._ext_nodes_G)), p_half])
        A2, b2 = apply_dirichlet(A, rhs, fixed, vals)
        self.p_G = Factorization(A2).solve(b2)
        # complement-side reaction: the moment exchanged with the local domain
        A_c, rhs_c = asm.pressure_system(
            self.mesh_G, self.qd_G, self.u_G, self.d_G, p_step,
            J_step[self.cmpl_cells], dt, self.params, cell_ids=self.cmpl_cells,
        )
        r = A_c @ self.p_G - rhs_c
        return r[self.tr_pG]

    # ------------------------------------------------------------------
    # coupled substep
    # ------------------------------------------------------------------

    def _gl_substep(self, dt):
        """One backward-Euler step of size dt on the coupled two-mesh system."""
        opts = self.opts
        p_G_step, J_G_step = self.p_G.copy(), self.J_prev_G
        p_L_step, J_L_step = self.p_L.copy(), self.J_prev_L
        H_step = self.H_L

        self._refresh_interface_stiffness(dt)

        # stateless initialization of the complement moments at the old state
        rC_u = self._global_mech_residual(self.u_G)[self.tr_uG]
        A_c, rhs_c = asm.pressure_system(
            self.mesh_G, self.qd_G, self.u_G, self.d_G, p_G_step,
            J_G_step[self.cmpl_cells], dt, self.params, cell_ids=self.cmpl_cells,
        )
        rC_p = (A_c @ self.p_G - rhs_c)[self.tr_pG]

        uG_flat = self.u_G.reshape(-1)
        Lam_u = self.Kcmp_u @ uG_flat[self.tr_uG] - rC_u
        Lam_p = self.Kcmp_p @ self.p_G[self.tr_pG] - rC_p

        m = self.itf.n_mult
        lam_u, lam_p = np.zeros(2 * m), np.zeros(m)
        u_half = uG_flat[self.tr_uG].copy()
        p_half = self.p_G[self.tr_pG].copy()
        d_prev = self.d_L.copy()
        r_prev = None
        omega = 1.0
        newton_total = 0
        for k in range(1, opts.gl_max + 1):
            # -- local pass: phase field, then coupled poroelasticity --------
            if not self.freeze_phase_field:
                H_trial = asm.update_history(
                    self.mesh_L, self.qd_L, self.u_L, H_step, self.params
                )
                d_hat = self._solve_local_phase(H_trial)
                # Dynamic (Aitken) relaxation of the phase iterate.  At a
                # propagation snap-through the plain alternation has gain near
                # +/-1 and creeps or limit-cycles; the secant weight below
                # targets the fixed point directly and leaves it unchanged.
                # Safe here because the history field is committed only on
                # acceptance, so an overshoot is recoverable.
                r = d_hat - self.d_L
                if r_prev is not None:
                    dr = r - r_prev
                    den = float(dr @ dr)
                    if den > 0.0:
                        omega = float(
                            np.clip(-omega * (r_prev @ dr) / den, 0.05, 100.0)
                        )
                r_prev = r
                self.d_L = np.clip(self.d_L + omega * r, 0.0, 1.0)
                self._omega_last = omega
            lam_u, u_half, lam_p, p_half, nit = self._solve_local(
                Lam_u, Lam_p, dt, p_L_step, J_L_step,
                lam_u, u_half, lam_p, p_half,
            )
            newton_total += nit

            rL_u = self.Dv @ lam_u
            rL_p = self.D @ lam_p
            LamG_u = self.Kloc_u @ u_half - rL_u
            LamG_p = self.Kloc_p @ p_half - rL_p

            # -- global solves ------------------------------------------------
            rC_u, _ = self._solve_global_mech(u_half)
            rC_p = self._solve_global_pressure(p_half, dt, p_G_step, J_G_step)

            u_gam = np.linalg.lstsq(self.Kloc_u, LamG_u - rC_u, rcond=None)[0]
            p_gam = np.linalg.lstsq(self.Kloc_p, LamG_p - rC_p, rcond=None)[0]

            Lam_u = self.Kcmp_u @ u_half - rC_u
            Lam_p = self.Kcmp_p @ p_half - rC_p

            floor = opts.gl_floor
            gap_u = u_gam - u_half
            gap_u -= self._rigid_Z @ np.linalg.solve(
                self._rigid_G, self._rigid_Z.T @ (self.Dv @ gap_u)
            )
            e_u = energy_norm(gap_u, self.Dv) / max(
                energy_norm(u_half, self.Dv), energy_norm(u_gam, self.Dv), floor
            )
            e_p = energy_norm(p_gam - p_half, self.D) / max(
                energy_norm(p_half, self.D), energy_norm(p_gam, self.D), floor
            )
            b_u = np.linalg.norm(rC_u + rL_u) / max(
                np.linalg.norm(rC_u), np.linalg.norm(rL_u), floor
            )
            b_p = np.linalg.norm(rC_p + rL_p) / max(
                np.linalg.norm(rC_p), np.linalg.norm(rL_p), floor
            )
            d_drift = float(np.max(np.abs(self.d_L - d_prev)))
            d_prev = self.d_L.copy()
            self.gl_diag.append(
                (
                    self._step_index, self.t + dt, "iter", k,
                    e_u, e_p, b_u, b_p, d_drift, len(self.lmap.footprint),
                )
            )
            if (
                max(e_u, e_p, b_u, b_p) <= opts.gl_tol
                and d_drift <= opts.stagger_tol
            ):
                break
        else:
            raise ConvergenceError(
                f"interface exchange did not balance in {opts.gl_max} "
                f"iterations (e_u={e_u:.2e}, e_p={e_p:.2e}, "
                f"b_u={b_u:.2e}, b_p={b_p:.2e})"
            )

        # accept substep
        if not self.freeze_phase_field:
            self.H_L = asm.update_history(
                self.mesh_L, self.qd_L, self.u_L, H_step, self.params
            )
        F_L = cst.deformation_gradient(asm.grad_qp(self.mesh_L, self.qd_L, self.u_L))
        self.J_prev_L = np.linalg.det(F_L)
        F_G = cst.deformation_gradient(asm.grad_qp(self.mesh_G, self.qd_G, self.u_G))
        self.J_prev_G = np.linalg.det(F_G)
        self.t += dt
        return k, newton_total

    # ------------------------------------------------------------------
    # time stepping with halving and footprint correction
    # ------------------------------------------------------------------

    def _snapshot(self):
        return {
            "u_G": self.u_G.copy(), "p_G": self.p_G.copy(),
            "J_prev_G": self.J_prev_G.copy(),
            "u_L": self.u_L.copy(), "p_L": self.p_L.copy(),
            "d_L": self.d_L.copy(), "H_L": self.H_L.copy(),
            "J_prev_L": self.J_prev_L.copy(), "t": self.t,
            "mesh_L": self.mesh_L, "lmap": self.lmap,
        }

    def _restore(self, snap):
        if snap["mesh_L"] is not self.mesh_L:
            raise RuntimeError("cannot restore a snapshot across a mesh change")
        for k in ("u_G", "p_G", "J_prev_G", "u_L", "p_L", "d_L", "H_L", "J_prev_L"):
            setattr(self, k, snap[k].copy())
        self.t = snap["t"]

    def _run_substeps(self, dt):
        target = self.t + dt
        sub = dt
        counts = [0, 0, 0]  # substeps, gl iters, stagger passes
        while self.t < target - 1e-12 * dt:
            snap = self._snapshot()
            try:
                k, s = self._gl_substep(min(sub, target - self.t))
                counts[0] += 1
                counts[1] += k
                counts[2] += s
            except ConvergenceError:
                self._restore(snap)
                sub *= 0.5
                if sub < dt / 2**self.opts.max_halvings:
                    raise
        self.t = target
        return counts

    def advance(self, dt: float) -> StepRecord:
        """One nominal step: substep integration plus footprint correction."""
        t_wall = time.perf_counter()
        self._step_index += 1
        start = self._snapshot()
        counts = None
        for corrector in range(16):
            counts = self._run_substeps(dt)
            marks = adapt.mark_extension(
                self.mesh_G,
                self.lmap,
                adapt.cell_max_phase(self.mesh_L, self.qd_L, self.d_L),
                self.extend_threshold,
                self.buffer_layers,
            )
            if not marks:
                break
            self.gl_diag.append(
                (
                    self._step_index, start["t"] + dt, "extend", len(marks),
                    0.0, 0.0, 0.0, 0.0, 0.0,
                    len(self.lmap.footprint) + len(marks),
                )
            )
            # rewind to the step start and re-solve on the extended footprint
            footprint = sorted(set(self.lmap.footprint) | set(marks))
            self.u_G, self.p_G = start["u_G"].copy(), start["p_G"].copy()
            self.J_prev_G = start["J_prev_G"].copy()
            self.t = start["t"]
            self._install_footprint(
                footprint,
                fresh=False,
                transfer_from=(
                    start["mesh_L"], start["lmap"], start["u_L"], start["p_L"],
                    start["d_L"], start["H_L"], start["J_prev_L"],
                ),
            )
            start = self._snapshot()
        else:
            raise ConvergenceError("footprint correction did not settle")
        return StepRecord(
            t=self.t,
            p_crack_max=self.crack_pressure(),
            total_dofs=self.total_dofs,
            gl_iters=counts[1],
            wall_ms=1e3 * (time.perf_counter() - t_wall),
            stagger_iters=counts[1],
            newton_iters=counts[2],
            substeps=counts[0],
        )
