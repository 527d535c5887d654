"""Self-checks: derivative verification, analytic solutions, and a monolithic
reference solve of the coupled two-mesh system.

Everything here is independent of the iterative solution paths it is used to
judge: derivatives are compared against central differences of the underlying
scalar functionals, uniform-state solutions against closed forms, and the
global/local exchange against a single Newton solve of the full coupled
algebraic system (both meshes, mortar ties and multipliers as one unknown
vector).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import constitutive as cst
from .linalg import Factorization, apply_dirichlet
from .mesh import build_structured

__all__ = [
    "fd_stress_error",
    "fd_tangent_errors",
    "phase_field_uniform_error",
    "pressure_source_uniform_error",
    "composite_reference_step",
    "composite_reference_march",
    "run_quick_checks",
]


# ---------------------------------------------------------------------------
# Pointwise derivative checks
# ---------------------------------------------------------------------------

def _pseudo_energy(F, d, p, params):
    """Potential whose F-derivative is the total stress: degraded elastic
    energy plus the pressure-volume coupling ``-alpha p (J - 1)``."""
    J = np.linalg.det(F)
    g = cst.degradation(d) + cst.G_FLOOR
    return float(
        g * cst.elastic_energy(F, params) - params.biot_alpha * p * (J - 1.0)
    )


def fd_stress_error(params=None, n_trials=8, seed=7, eps=1e-6) -> float:
    """Max relative error of the stress against central differences."""
    params = params or cst.MaterialParams()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        F = np.eye(2) + 0.1 * rng.standard_normal((2, 2))
        if np.linalg.det(F) < 0.3:
            continue
        d = rng.uniform(0.0, 1.0)
        p = rng.uniform(-0.1, 0.1)
        P = cst.first_pk_stress(F, d, p, params)
        Pfd = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                Fp, Fm = F.copy(), F.copy()
                Fp[i, j] += eps
                Fm[i, j] -= eps
                Pfd[i, j] = (
                    _pseudo_energy(Fp, d, p, params)
                    - _pseudo_energy(Fm, d, p, params)
                ) / (2.0 * eps)
        worst = max(worst, np.abs(P - Pfd).max() / max(np.abs(P).max(), 1e-12))
    return worst


def _random_state(mesh, rng, amp=1e-3):
    u = amp * rng.standard_normal((mesh.n_nodes, 2))
    p = 0.05 * rng.standard_normal(mesh.n_nodes)
    d = rng.uniform(0.0, 0.8, mesh.n_nodes)
    return u, p, d


def fd_tangent_errors(params=None, n=4, seed=3, eps=1e-7):
    """Relative FD errors of the three assembled coupling tangents on an
    ``n x n`` mesh: (momentum w.r.t. u, momentum w.r.t. p, storage w.r.t. u).

    The storage check runs at zero pressure, where the (intentionally
    untracked) permeability variation drops out of the mass-balance residual
    and the declared tangent is the complete derivative.
    """
    params = params or cst.MaterialParams()
    mesh = build_structured(1.0, n, n)
    qd = asm.quad_data(mesh, 2)
    rng = np.random.default_rng(seed)
    u, p, d = _random_state(mesh, rng)
    nn = mesh.n_nodes

    K = asm.mech_tangent(mesh, qd, u, d, p, params).toarray()
    Kfd = np.zeros_like(K)
    for a in range(2 * nn):
        up, um = u.copy().reshape(-1), u.copy().reshape(-1)
        up[a] += eps
        um[a] -= eps
        Kfd[:, a] = (
            asm.mech_residual(mesh, qd, up.reshape(-1, 2), d, p, params)
            - asm.mech_residual(mesh, qd, um.reshape(-1, 2), d, p, params)
        ) / (2 * eps)
    err_uu = np.abs(K - Kfd).max() / np.abs(K).max()

    C = asm.mech_pressure_coupling(mesh, qd, u, params).toarray()
    Cfd = np.zeros_like(C)
    for b in range(nn):
        pp, pm = p.copy(), p.copy()
        pp[b] += eps
        pm[b] -= eps
        Cfd[:, b] = (
            asm.mech_residual(mesh, qd, u, d, pp, params)
            - asm.mech_residual(mesh, qd, u, d, pm, params)
        ) / (2 * eps)
    err_up = np.abs(C - Cfd).max() / np.abs(C).max()

    # storage coupling at p = 0 (see docstring)
    p0 = np.zeros(nn)
    dt = 0.1
    J_prev = np.ones((mesh.n_cells, qd.n_qp))

    def p_residual(u_nodal):
        A, rhs = asm.pressure_system(
            mesh, qd, u_nodal, d, p0, J_prev, dt, params
        )
        return A @ p0 - rhs

    Apu = asm.pressure_mech_coupling(mesh, qd, u, params).toarray()
    Afd = np.zeros_like(Apu)
    for a in range(2 * nn):
        up, um = u.copy().reshape(-1), u.copy().reshape(-1)
        up[a] += eps
        um[a] -= eps
        Afd[:, a] = (
            p_residual(up.reshape(-1, 2)) - p_residual(um.reshape(-1, 2))
        ) / (2 * eps)
    err_pu = np.abs(Apu - Afd).max() / np.abs(Apu).max()
    return err_uu, err_up, err_pu


# ---------------------------------------------------------------------------
# Closed-form solution checks
# ---------------------------------------------------------------------------

def phase_field_uniform_error(params=None, H=4e-6, n=6) -> float:
    """Error of the unconstrained phase-field solve under uniform history
    against the closed form ``d = H / (psi_c + H)``."""
    params = params or cst.MaterialParams(length_scale=0.25)
    mesh = build_structured(1.0, n, n)
    qd = asm.quad_data(mesh, 2)
    hist = np.full((mesh.n_cells, qd.n_qp), H)
    A, b = asm.phase_field_system(mesh, qd, hist, params)
    d = Factorization(A.tocsc()).solve(b)
    exact = H / (params.psi_c + H)
    return float(np.abs(d - exact).max())


def pressure_source_uniform_error(params=None, rate=1e-3, dt=0.25, n=5) -> float:
    """Error of one sealed backward-Euler step under a uniform volume source
    against ``p = M dt rate`` (undeformed, initially unpressurized)."""
    params = params or cst.MaterialParams()
    mesh = build_structured(1.0, n, n)
    qd = asm.quad_data(mesh, 2)
    nn, nc = mesh.n_nodes, mesh.n_cells
    src = np.full((nc, qd.n_qp), rate)
    A, rhs = asm.pressure_system(
        mesh, qd, np.zeros((nn, 2)), np.zeros(nn), np.zeros(nn),
        np.ones((nc, qd.n_qp)), dt, params, source_density=src,
    )
    p = Factorization(A.tocsc()).solve(rhs)
    return float(np.abs(p - params.biot_modulus * dt * rate).max())


# ---------------------------------------------------------------------------
# Monolithic reference for the coupled two-mesh system
# ---------------------------------------------------------------------------

def composite_reference_step(gl, dt, rtol=1e-10, atol=1e-12, max_iter=30):
    """One backward-Euler step of the frozen-phase-field coupled system,
    solved monolithically: both meshes, mortar ties and both multiplier
    fields in a single Newton iteration.

    This shares the residual definitions (hence the discrete problem) with
    the global/local solver but none of its iteration structure, providing an
    independent target the interface exchange must reproduce.

    Returns ``(u_G, u_L, lam_u, p_G, p_L, lam_p)``.
    """
    if not gl.freeze_phase_field:
        raise ValueError("reference solve requires freeze_phase_field=True")
    G, L = gl.mesh_G, gl.mesh_L
    qG, qL = gl.qd_G, gl.qd_L
    params = gl.params
    nG, nL, m = G.n_nodes, L.n_nodes, gl.itf.n_mult
    oUG, oUL = 0, 2 * nG
    oLu = oUL + 2 * nL
    oPG = oLu + 2 * m
    oPL = oPG + nG
    oLp = oPL + nL
    N = oLp + m

    E_uG = sp.csr_matrix(
        (np.ones(2 * m), (np.arange(2 * m), gl.tr_uG)), shape=(2 * m, 2 * nG)
    )
    E_pG = sp.csr_matrix(
        (np.ones(m), (np.arange(m), gl.tr_pG)), shape=(m, nG)
    )
    Dv, Bv = sp.csr_matrix(gl.Dv), sp.csr_matrix(gl.Bv)
    Ds, Bs = sp.csr_matrix(gl.D), sp.csr_matrix(gl.B)

    p_G_step, p_L_step = gl.p_G.copy(), gl.p_L.copy()
    J_G_step, J_L_step = gl.J_prev_G, gl.J_prev_L
    d_G, d_L = gl.d_G, gl.d_L

    # The coupled problem lives on complement + local domain: the coarse
    # surrogate inside the footprint is iteration scaffolding, not part of
    # the discrete system, so its interior pressure nodes are pinned here
    # just as the interior displacement nodes already are.
    fixed = np.concatenate(
        [
            oUG + gl.u_fixed_G,
            oUL + gl.u_fixed_L,
            oPG + gl._ext_nodes_G,
            oPG + gl.fict_interior,
            oPL + gl.p_fixed_L,
        ]
    ).astype(int)

    x = np.zeros(N)
    x[oUG:oUL] = gl.u_G.reshape(-1)
    x[oUL:oLu] = gl.u_L.reshape(-1)
    x[oPG:oPL] = gl.p_G
    x[oPL:oLp] = gl.p_L

    def unpack(x):
        return (
            x[oUG:oUL].reshape(-1, 2),
            x[oUL:oLu].reshape(-1, 2),
            x[oLu:oPG],
            x[oPG:oPL],
            x[oPL:oLp],
            x[oLp:],
        )

    def residual(x):
        uG, uL, lu, pG, pL, lp = unpack(x)
        A_ppG, rhsG = asm.pressure_system(
            G, qG, uG, d_G, p_G_step, J_G_step[gl.cmpl_cells], dt, params,
            cell_ids=gl.cmpl_cells,
        )
        A_ppL, rhsL = asm.pressure_system(
            L, qL, uL, d_L, p_L_step, J_L_step, dt, params
        )
        R = np.concatenate(
            [
                asm.mech_residual(G, qG, uG, d_G, pG, params, cell_ids=gl.cmpl_cells)
                - E_uG.T @ (gl.Dv @ lu),
                asm.mech_residual(L, qL, uL, d_L, pL, params) + gl.Bv.T @ lu,
                gl.Bv @ uL.reshape(-1) - gl.Dv @ (E_uG @ x[oUG:oUL]),
                A_ppG @ pG - rhsG - E_pG.T @ (gl.D @ lp),
                A_ppL @ pL - (rhsL + dt * gl.inject_L) + gl.B.T @ lp,
                gl.B @ pL - gl.D @ (E_pG @ x[oPG:oPL]),
            ]
        )
        R[fixed] = 0.0
        return R, (A_ppG, A_ppL)

    R, (A_ppG, A_ppL) = residual(x)
    ref = max(np.linalg.norm(R), atol)
    for _ in range(max_iter):
        if np.linalg.norm(R) <= max(rtol * ref, atol):
            break
        uG, uL, lu, pG, pL, lp = unpack(x)
        K_G = asm.mech_tangent(G, qG, uG, d_G, pG, params, cell_ids=gl.cmpl_cells)
        K_L = asm.mech_tangent(L, qL, uL, d_L, pL, params)
        C_G = asm.mech_pressure_coupling(G, qG, uG, params, cell_ids=gl.cmpl_cells)
        C_L = asm.mech_pressure_coupling(L, qL, uL, params)
        ApuG = asm.pressure_mech_coupling(G, qG, uG, params, cell_ids=gl.cmpl_cells)
        ApuL = asm.pressure_mech_coupling(L, qL, uL, params)
        J = sp.bmat(
            [
                [K_G, None, -E_uG.T @ Dv, C_G, None, None],
                [None, K_L, Bv.T, None, C_L, None],
                [-Dv @ E_uG, Bv, None, None, None, None],
                [ApuG, None, None, A_ppG, None, -E_pG.T @ Ds],
                [None, ApuL, None, None, A_ppL, Bs.T],
                [None, None, None, -Ds @ E_pG, Bs, None],
            ],
            format="csr",
        )
        J, _ = apply_dirichlet(J, np.zeros(N), fixed, 0.0)
        x = x + Factorization(J).solve(-R)
        R, (A_ppG, A_ppL) = residual(x)
    else:
        raise RuntimeError("monolithic reference Newton did not converge")
    uG, uL, lu, pG, pL, lp = unpack(x)
    return uG, uL, lu, pG, pL, lp


def composite_reference_march(gl, dt, n_steps, **kw):
    """March ``n_steps`` monolithic reference steps, writing the accepted
    state back into ``gl`` after each (fields, reference volume ratios,
    time).  Returns the final ``composite_reference_step`` tuple.
    """
    out = None
    for _ in range(n_steps):
        out = composite_reference_step(gl, dt, **kw)
        uG, uL, _, pG, pL, _ = out
        gl.u_G, gl.u_L = uG.copy(), uL.copy()
        gl.p_G, gl.p_L = pG.copy(), pL.copy()
        F_L = cst.deformation_gradient(asm.grad_qp(gl.mesh_L, gl.qd_L, gl.u_L))
        gl.J_prev_L = np.linalg.det(F_L)
        F_G = cst.deformation_gradient(asm.grad_qp(gl.mesh_G, gl.qd_G, gl.u_G))
        gl.J_prev_G = np.linalg.det(F_G)
        gl.t += dt
    return out


# ---------------------------------------------------------------------------
# Quick-check battery (CLI `verify`)
# ---------------------------------------------------------------------------

def run_quick_checks():
    """Fast invariant battery; returns list of (name, passed, detail)."""
    out = []

    e = fd_stress_error()
    out.append(("stress-vs-finite-difference", e < 1e-5, f"rel err {e:.3e}"))

    e_uu, e_up, e_pu = fd_tangent_errors()
    out.append(
        (
            "tangents-vs-finite-difference",
            max(e_uu, e_up, e_pu) < 1e-5,
            f"rel err uu={e_uu:.3e} up={e_up:.3e} pu={e_pu:.3e}",
        )
    )

    e = phase_field_uniform_error()
    out.append(("phase-field-uniform-closed-form", e < 1e-10, f"abs err {e:.3e}"))

    e = pressure_source_uniform_error()
    out.append(("uniform-source-pressure-rise", e < 1e-8, f"abs err {e:.3e}"))

    # mortar nesting on a refined footprint
    from .linalg import mortar_matrices
    from .mesh import refine_footprint

    mesh = build_structured(8.0, 8, 8)
    fp = [mesh.cell_index(i, j) for i in range(2, 6) for j in range(3, 6)]
    loc, lmap, itf = refine_footprint(mesh, fp, 2)
    D, B = mortar_matrices(itf, mesh.nodes, loc.nodes)
    gap = np.abs(B @ itf.prolong - D).max()
    out.append(("mortar-nesting-identity", gap < 1e-12, f"max gap {gap:.3e}"))

    # series-spring Schur complement
    from .linalg import schur_complement

    A = sp.csr_matrix(np.array([[2.0 + 9.0, -9.0], [-9.0, 9.0]]))
    S = schur_complement(A, np.array([1]))
    out.append(
        (
            "schur-series-spring",
            abs(S[0, 0] - 18.0 / 11.0) < 1e-14,
            f"S={S[0, 0]!r} expected {18.0 / 11.0!r}",
        )
    )
    return out
