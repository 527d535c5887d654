"""Single-mesh staggered solver for pressurized phase-field fracture.

Each time step alternates between

1. the linear phase-field update driven by the running maximum of the crack
   driving force (irreversibility enters through that history, not through
   constraints on the increment), and
2. a monolithic Newton solve of the coupled momentum / fluid-mass system at
   fixed phase field,

until the phase-field update stagnates.  The Newton loop uses a cached
("modified") Jacobian factorization that is refreshed only when convergence
degrades, and backtracks on trial states with non-positive volume ratio.

Fluid is injected along notch lines as a consistent line source; the notch
itself is represented by pinning the phase field to one on nodes within one
cell size of the notch segments (held for all time).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import constitutive as cst
from .config import Notch, SolverOptions
from .linalg import Factorization, apply_dirichlet
from .mesh import Mesh, segment_point_distance

__all__ = ["ConvergenceError", "StepRecord", "SingleScaleSolver"]


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve exhausts its iteration budget."""


@dataclass
class StepRecord:
    """Per-step monitor data mirrored into the run time series."""

    t: float
    p_crack_max: float
    total_dofs: int
    gl_iters: int
    wall_ms: float
    stagger_iters: int = 0
    newton_iters: int = 0
    substeps: int = 1


def notch_pin_nodes(mesh: Mesh, notches) -> np.ndarray:
    """Nodes within one cell size of any notch segment (phase field pinned 1)."""
    pins = np.zeros(mesh.n_nodes, dtype=bool)
    for nt in notches:
        dist = segment_point_distance(mesh.nodes, nt.a, nt.b)
        pins |= dist <= mesh.h * (1.0 + 1e-9)
    return np.nonzero(pins)[0]


def injection_vector(mesh: Mesh, notches) -> np.ndarray:
    """Nodal line-source vector normalized so each notch injects its rate.

    The rate of a notch is distributed uniformly along its segment: the
    contribution is ``(rate / length) * integral N_a ds`` over the mesh edges
    lying on the segment.
    """
    out = np.zeros(mesh.n_nodes)
    for nt in notches:
        if nt.rate == 0.0:
            continue
        edges = asm.edges_on_segment(mesh, nt.a, nt.b)
        if len(edges) == 0:
            raise ValueError(
                f"notch {nt.a}-{nt.b} does not lie on mesh lines of h={mesh.h}"
            )
        w = asm.edge_load_vector(mesh.nodes, edges, mesh.n_nodes)
        length = w.sum()
        out += (nt.rate / length) * w
    return out


class SingleScaleSolver:
    """Staggered phase-field poroelasticity on one uniform mesh."""

    def __init__(
        self,
        mesh: Mesh,
        params: cst.MaterialParams,
        notches,
        opts: SolverOptions = None,
        quad_order: int = 2,
    ):
        self.mesh = mesh
        self.params = params
        self.notches = list(notches)
        self.opts = opts or SolverOptions()
        self.qd = asm.quad_data(mesh, quad_order)

        ext = mesh.boundary_nodes(exterior_only=True)
        self.u_fixed = np.sort(np.concatenate([2 * ext, 2 * ext + 1]))
        self.p_fixed = np.sort(ext)
        self.d_pins = notch_pin_nodes(mesh, self.notches)
        self.inject = injection_vector(mesh, self.notches)

        n = mesh.n_nodes
        self.u = np.zeros((n, 2))
        self.p = np.zeros(n)
        self.d = np.zeros(n)
        self.d[self.d_pins] = 1.0
        self.history = np.zeros((mesh.n_cells, self.qd.n_qp))
        self.J_prev = np.ones((mesh.n_cells, self.qd.n_qp))
        self.t = 0.0

        self._fact = Factorization()
        self._fixed_up = np.concatenate([self.u_fixed, 2 * n + self.p_fixed])

    # -- measurements ------------------------------------------------------

    @property
    def total_dofs(self) -> int:
        """Displacement, pressure and phase-field unknowns carried by the run."""
        return 4 * self.mesh.n_nodes

    def crack_pressure(self, d_open: float = 0.9) -> float:
        """Largest nodal pressure on the open crack (phase field > d_open)."""
        on = self.d > d_open
        return float(self.p[on].max()) if np.any(on) else 0.0

    def volume_ratio_qp(self) -> np.ndarray:
        F = cst.deformation_gradient(asm.grad_qp(self.mesh, self.qd, self.u))
        return np.linalg.det(F)

    # -- phase field -------------------------------------------------------

    def solve_phase_field(self, history) -> np.ndarray:
        A, b = asm.phase_field_system(self.mesh, self.qd, history, self.params)
        A, b = apply_dirichlet(A, b, self.d_pins, 1.0)
        return Factorization(A).solve(b)

    # -- coupled u-p Newton at fixed phase field ----------------------------

    def _up_residual(self, u, p, d, dt, p_step, J_step):
        R_u = asm.mech_residual(self.mesh, self.qd, u, d, p, self.params)
        A_pp, rhs = asm.pressure_system(
            self.mesh, self.qd, u, d, p_step, J_step, dt, self.params
        )
        R_p = A_pp @ p - rhs - dt * self.inject
        R = np.concatenate([R_u, R_p])
        R[self._fixed_up] = 0.0
        return R, A_pp

    def _up_jacobian(self, u, p, d, dt, A_pp):
        K = asm.mech_tangent(self.mesh, self.qd, u, d, p, self.params)
        C = asm.mech_pressure_coupling(self.mesh, self.qd, u, self.params)
        A_pu = asm.pressure_mech_coupling(self.mesh, self.qd, u, self.params)
        J = sp.bmat([[K, C], [A_pu, A_pp]], format="csr")
        n_all = J.shape[0]
        J, _ = apply_dirichlet(J, np.zeros(n_all), self._fixed_up, 0.0)
        return J

    def solve_up(self, d, dt, p_step, J_step):
        """Monolithic Newton for (u, p); returns the iteration count."""
        opts = self.opts
        u, p = self.u, self.p
        R, A_pp = self._up_residual(u, p, d, dt, p_step, J_step)
        n2 = 2 * self.mesh.n_nodes
        # Relative reference: largest residual seen in this loop.  (The initial
        # residual can be identically zero, e.g. the stress-free first step.)
        ref_u = ref_p = 0.0
        since_refactor = 0  # reuse any factorization cached from earlier solves
        for it in range(opts.newton_max):
            ru = np.linalg.norm(R[:n2])
            rp = np.linalg.norm(R[n2:])
            ref_u, ref_p = max(ref_u, ru), max(ref_p, rp)
            ok_u = ru <= max(opts.newton_rtol * ref_u, opts.newton_atol)
            ok_p = rp <= max(opts.newton_rtol * ref_p, opts.newton_atol)
            if ok_u and ok_p:
                self.u, self.p = u, p
                return it
            if not self._fact.ready or since_refactor >= opts.refactor_every:
                self._fact.refresh(self._up_jacobian(u, p, d, dt, A_pp))
                since_refactor = 0
            dx = self._fact.solve(-R)
            step = 1.0
            for _ in range(8):
                u_try = u + step * dx[:n2].reshape(-1, 2)
                p_try = p + step * dx[n2:]
                try:
                    R_try, A_pp = self._up_residual(u_try, p_try, d, dt, p_step, J_step)
                    break
                except cst.NonAdmissibleState:
                    step *= 0.5
            else:
                raise ConvergenceError("Newton step cannot reach an admissible state")
            u, p, R = u_try, p_try, R_try
            since_refactor += 1
        raise ConvergenceError(
            f"u-p Newton did not converge in {opts.newton_max} iterations "
            f"(|R_u|={np.linalg.norm(R[:n2]):.3e}, |R_p|={np.linalg.norm(R[n2:]):.3e})"
        )

    # -- time stepping -------------------------------------------------------

    def step(self, dt: float):
        """One staggered time step of size ``dt`` (no subdivision here)."""
        opts = self.opts
        p_step = self.p.copy()
        J_step = self.J_prev
        H_step = self.history
        newton_total = 0
        r_prev = None
        omega = 1.0
        for it in range(1, opts.stagger_max + 1):
            H_trial = asm.update_history(self.mesh, self.qd, self.u, H_step, self.params)
            d_hat = self.solve_phase_field(H_trial)
            # Dynamic (Aitken) relaxation: at a propagation snap-through the
            # plain alternation has gain near +/-1 and creeps or limit-cycles;
            # the secant weight targets the fixed point directly and leaves it
            # unchanged.  Recoverable because the history field is committed
            # only on step acceptance.
            r = d_hat - self.d
            if r_prev is not None:
                dr = r - r_prev
                den = float(dr @ dr)
                if den > 0.0:
                    omega = float(np.clip(-omega * (r_prev @ dr) / den, 0.05, 100.0))
            r_prev = r
            d_new = np.clip(self.d + omega * r, 0.0, 1.0)
            delta_d = float(np.max(np.abs(d_new - self.d)))
            self.d = d_new
            newton_total += self.solve_up(self.d, dt, p_step, J_step)
            if delta_d < opts.stagger_tol:
                break
        else:
            raise ConvergenceError(
                f"staggered loop did not settle in {opts.stagger_max} passes "
                f"(last phase-field change {delta_d:.3e})"
            )
        self.history = asm.update_history(self.mesh, self.qd, self.u, H_step, self.params)
        self.J_prev = self.volume_ratio_qp()
        self.t += dt
        return it, newton_total

    def _snapshot(self):
        return (
            self.u.copy(),
            self.p.copy(),
            self.d.copy(),
            self.history.copy(),
            self.J_prev.copy(),
            self.t,
        )

    def _restore(self, snap):
        self.u, self.p, self.d, self.history, self.J_prev, self.t = (
            snap[0].copy(),
            snap[1].copy(),
            snap[2].copy(),
            snap[3].copy(),
            snap[4].copy(),
            snap[5],
        )

    def advance(self, dt: float) -> StepRecord:
        """Advance by one nominal step, halving internally on failures."""
        t_wall = time.perf_counter()
        target = self.t + dt
        sub = dt
        substeps = 0
        stagger_iters = 0
        newton_iters = 0
        while self.t < target - 1e-12 * dt:
            snap = self._snapshot()
            try:
                s_it, n_it = self.step(min(sub, target - self.t))
                substeps += 1
                stagger_iters += s_it
                newton_iters += n_it
            except ConvergenceError:
                self._restore(snap)
                self._fact = Factorization()
                sub *= 0.5
                if sub < dt / 2**self.opts.max_halvings:
                    raise
        self.t = target
        return StepRecord(
            t=self.t,
            p_crack_max=self.crack_pressure(),
            total_dofs=self.total_dofs,
            gl_iters=0,
            wall_ms=1e3 * (time.perf_counter() - t_wall),
            stagger_iters=stagger_iters,
            newton_iters=newton_iters,
            substeps=substeps,
        )
