"""Constitutive model: compressible Neo-Hookean skeleton, Biot-type fluid
coupling, quadratic degradation and a crack-opening permeability.

All functions accept either a single evaluation point or a batch: tensors have
shape ``(..., 2, 2)`` and scalars shape ``(...,)``.  Plane strain is assumed
throughout, i.e. the out-of-plane stretch is one, so the volume ratio ``J``
equals the determinant of the in-plane deformation gradient and all in-plane
blocks of three-dimensional tensors close under the formulas used here.

Units follow the parameter table of the bundled configurations: stresses and
pressures in GPa, lengths in meters, time in seconds.  The Darcy and crack
mobilities are used with their literal tabulated magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NonAdmissibleState",
    "MaterialParams",
    "degradation",
    "degradation_prime",
    "deformation_gradient",
    "elastic_energy",
    "crack_driving_force",
    "first_pk_stress",
    "mechanics_tangent",
    "stress_pressure_tangent",
    "fluid_pressure",
    "fluid_content",
    "permeability",
    "crack_surface_density",
]

# residual stiffness retained on fully broken material so that tangent
# operators stay invertible; applied consistently in energy, stress and
# tangent evaluations
G_FLOOR = 1.0e-8


class NonAdmissibleState(RuntimeError):
    """Raised when a trial deformation state has non-positive volume ratio."""


@dataclass
class MaterialParams:
    """Poroelastic and fracture parameters.

    Attributes
    ----------
    E, nu : float
        Young's modulus [GPa] and Poisson ratio of the drained skeleton.
    biot_modulus : float
        Storage modulus M [GPa].
    biot_alpha : float
        Effective-stress coupling coefficient B.
    darcy_mobility : float
        Bulk permeability over fluid viscosity, used literally [m^2/(GPa s)
        by the table convention].
    crack_mobility : float
        Poiseuille-type channel mobility prefactor for open cracks.
    crack_exponent : float
        Power on the phase field gating the crack permeability.
    sigma_c : float
        Critical tensile strength [GPa] setting the fracture threshold.
    length_scale : float
        Phase-field regularization length [m].
    """

    E: float = 15.96
    nu: float = 0.2
    biot_modulus: float = 12.5
    biot_alpha: float = 0.79
    darcy_mobility: float = 2.0e-11
    crack_mobility: float = 83.3
    crack_exponent: float = 50.0
    sigma_c: float = 0.005
    length_scale: float = 1.0

    mu: float = field(init=False)
    beta: float = field(init=False)
    psi_c: float = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must be in [0, 0.5), got {self.nu}")
        if self.E <= 0.0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        self.mu = self.E / (2.0 * (1.0 + self.nu))
        self.beta = 2.0 * self.nu / (1.0 - 2.0 * self.nu)
        self.psi_c = self.sigma_c**2 / (2.0 * self.E)


# ---------------------------------------------------------------------------
# Degradation
# ---------------------------------------------------------------------------

def degradation(d):
    """Quadratic stiffness degradation ``(1 - d)^2``."""
    return (1.0 - np.asarray(d)) ** 2


def degradation_prime(d):
    """Derivative of :func:`degradation`."""
    return -2.0 * (1.0 - np.asarray(d))


def _g_num(d):
    """Degradation with the residual floor used inside energy and stress."""
    return degradation(d) + G_FLOOR


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

def deformation_gradient(grad_u):
    """In-plane deformation gradient ``F = I + grad_u``."""
    grad_u = np.asarray(grad_u, dtype=float)
    return grad_u + np.eye(2)


def _det2(F):
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def _inv_transpose2(F, J):
    """Inverse transpose of in-plane F given its determinant."""
    FinvT = np.empty_like(F)
    FinvT[..., 0, 0] = F[..., 1, 1]
    FinvT[..., 0, 1] = -F[..., 1, 0]
    FinvT[..., 1, 0] = -F[..., 0, 1]
    FinvT[..., 1, 1] = F[..., 0, 0]
    return FinvT / J[..., None, None]


def _admissible_J(F):
    J = _det2(np.asarray(F, dtype=float))
    if np.any(J <= 0.0):
        raise NonAdmissibleState(
            f"non-positive volume ratio encountered (min J = {np.min(J):.3e})"
        )
    return J


# ---------------------------------------------------------------------------
# Energy, stress and tangents
# ---------------------------------------------------------------------------

def elastic_energy(F, params: MaterialParams):
    """Undegraded volumetric-compressible Neo-Hookean energy density.

    ``psi(F) = mu/2 * (tr(F^T F) + 1 - 3) + mu/beta * (J^-beta - 1)``
    with the plane-strain out-of-plane stretch contributing the ``+1``.
    Vanishes at ``F = I`` and is minimized there.
    """
    F = np.asarray(F, dtype=float)
    J = _admissible_J(F)
    i1 = np.einsum("...ij,...ij->...", F, F) + 1.0
    mu, beta = params.mu, params.beta
    return 0.5 * mu * (i1 - 3.0) + (mu / beta) * (J ** (-beta) - 1.0)


def crack_driving_force(F, params: MaterialParams):
    """Positive part of the elastic energy over the fracture threshold.

    The running maximum of this quantity over time is the irreversibility
    history that sources the phase-field equation.
    """
    return np.maximum(elastic_energy(F, params) - params.psi_c, 0.0)


def first_pk_stress(F, d, p, params: MaterialParams):
    """Total first Piola-Kirchhoff stress (in-plane block).

    ``P = g(d) mu (F - J^-beta F^-T) - alpha p J F^-T``

    The effective (skeleton) part degrades with the phase field; the pore
    pressure contribution does not.
    """
    F = np.asarray(F, dtype=float)
    J = _admissible_J(F)
    FinvT = _inv_transpose2(F, J)
    g = _g_num(d)
    mu = params.mu
    Jb = (J ** (-params.beta))[..., None, None]
    Pel = mu * (F - Jb * FinvT)
    cpl = (params.biot_alpha * np.asarray(p) * J)[..., None, None]
    return g[..., None, None] * Pel - cpl * FinvT


def mechanics_tangent(F, d, p, params: MaterialParams):
    """Derivative of :func:`first_pk_stress` with respect to ``F``.

    Returns
    -------
    A : (..., 2, 2, 2, 2) ndarray
        ``A[iJkL] = d P[iJ] / d F[kL]`` with both the degraded elastic part
        and the geometric part of the pressure coupling.
    """
    F = np.asarray(F, dtype=float)
    J = _admissible_J(F)
    FinvT = _inv_transpose2(F, J)
    g = _g_num(d)
    mu, beta = params.mu, params.beta
    Jb = J ** (-beta)

    eye = np.eye(2)
    II = np.einsum("ik,JL->iJkL", eye, eye)
    TT = np.einsum("...iJ,...kL->...iJkL", FinvT, FinvT)
    TX = np.einsum("...iL,...kJ->...iJkL", FinvT, FinvT)

    gel = g[..., None, None, None, None]
    Ael = mu * (II + Jb[..., None, None, None, None] * (beta * TT + TX))
    apJ = (params.biot_alpha * np.asarray(p) * J)[..., None, None, None, None]
    return gel * Ael - apJ * (TT - TX)


def stress_pressure_tangent(F, params: MaterialParams):
    """Derivative of the total stress with respect to pore pressure:
    ``dP/dp = -alpha J F^-T``."""
    F = np.asarray(F, dtype=float)
    J = _admissible_J(F)
    return -params.biot_alpha * J[..., None, None] * _inv_transpose2(F, J)


# ---------------------------------------------------------------------------
# Fluid state
# ---------------------------------------------------------------------------

def fluid_pressure(theta, J, params: MaterialParams):
    """Pore pressure from fluid content variation and volume ratio:
    ``p = M (theta - alpha (J - 1))``."""
    return params.biot_modulus * (
        np.asarray(theta) - params.biot_alpha * (np.asarray(J) - 1.0)
    )


def fluid_content(p, J, params: MaterialParams):
    """Inverse of :func:`fluid_pressure`: ``theta = p/M + alpha (J - 1)``."""
    return np.asarray(p) / params.biot_modulus + params.biot_alpha * (
        np.asarray(J) - 1.0
    )


# ---------------------------------------------------------------------------
# Permeability
# ---------------------------------------------------------------------------

def permeability(F, d, grad_d, h_e, params: MaterialParams):
    """Reference-configuration mobility tensor for the Darcy flux.

    The bulk part is the pull-back of an isotropic spatial mobility,
    ``m_D J C^-1``.  Open cracks add a Poiseuille-type channel term acting in
    the crack plane,

    ``d^zeta  m_C  w^2  J (C^-1 - C^-1 n (C^-1 n)^T)``,

    where ``n`` is the unit reference normal (along ``grad_d``) and the
    opening ``w = (stretch_perp - 1) h_e`` is clamped at zero.  The transverse
    stretch satisfies ``stretch_perp^2 = |grad_d|^2 / (grad_d . C^-1 grad_d)``;
    the clamp activates the channel only where ``n . C^-1 n < 1``, which by
    the Cauchy-Schwarz inequality keeps the full tensor positive
    semi-definite.

    Parameters
    ----------
    F : (..., 2, 2) ndarray
    d : (...,) ndarray
    grad_d : (..., 2) ndarray
        Reference gradient of the phase field.
    h_e : float
        Element size entering the opening estimate.
    """
    F = np.asarray(F, dtype=float)
    d = np.asarray(d, dtype=float)
    grad_d = np.asarray(grad_d, dtype=float)
    J = _admissible_J(F)
    FinvT = _inv_transpose2(F, J)
    Cinv = np.einsum("...iA,...iB->...AB", FinvT, FinvT)
    K = params.darcy_mobility * J[..., None, None] * Cinv

    norm2 = np.einsum("...A,...A->...", grad_d, grad_d)
    active = norm2 > 0.0
    if np.any(active):
        n = np.where(
            active[..., None], grad_d / np.sqrt(np.where(active, norm2, 1.0))[..., None], 0.0
        )
        q = np.einsum("...A,...AB,...B->...", n, Cinv, n)
        stretch = 1.0 / np.sqrt(np.maximum(q, 1e-300))
        w = np.maximum(stretch - 1.0, 0.0) * h_e
        Cn = np.einsum("...AB,...B->...A", Cinv, n)
        plane = Cinv - np.einsum("...A,...B->...AB", Cn, Cn)
        gate = np.where(active, d**params.crack_exponent * params.crack_mobility * w**2 * J, 0.0)
        K = K + gate[..., None, None] * plane
    return K


# ---------------------------------------------------------------------------
# Fracture surface density (diagnostic)
# ---------------------------------------------------------------------------

def crack_surface_density(d, grad_d, params: MaterialParams):
    """Regularized crack surface density ``d^2/(2 l) + (l/2)|grad d|^2``."""
    d = np.asarray(d, dtype=float)
    grad_d = np.asarray(grad_d, dtype=float)
    l = params.length_scale
    return d**2 / (2.0 * l) + 0.5 * l * np.einsum("...A,...A->...", grad_d, grad_d)
