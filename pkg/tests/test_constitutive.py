"""Material model: energies, stresses, tangents, permeability, pressure law."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrofrac import constitutive as cst
from hydrofrac.constitutive import MaterialParams


@pytest.fixture(scope="module")
def params():
    return MaterialParams()


# ---------------------------------------------------------------------------
# parameter derivations
# ---------------------------------------------------------------------------

def test_derived_moduli(params):
    assert params.mu == pytest.approx(6.65)
    assert params.beta == pytest.approx(2.0 / 3.0)
    # fracture threshold energy density from the tensile strength
    assert params.psi_c == pytest.approx(7.832080200501253e-07, rel=1e-14)


def test_param_validation():
    with pytest.raises(ValueError):
        MaterialParams(nu=0.5)
    with pytest.raises(ValueError):
        MaterialParams(E=-1.0)


# ---------------------------------------------------------------------------
# degradation
# ---------------------------------------------------------------------------

def test_degradation_constraints_exact():
    g, gp = cst.degradation, cst.degradation_prime
    assert g(0.0) == 1.0
    assert g(1.0) == 0.0
    assert gp(1.0) == 0.0
    assert gp(0.5) < 0.0


@given(st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_degradation_prime_is_derivative(d):
    eps = 1e-7
    lo, hi = max(d - eps, 0.0), min(d + eps, 1.0)
    fd = (cst.degradation(hi) - cst.degradation(lo)) / (hi - lo)
    assert cst.degradation_prime(d) == pytest.approx(fd, abs=1e-6)


# ---------------------------------------------------------------------------
# kinematics and energy
# ---------------------------------------------------------------------------

def test_energy_zero_at_identity(params):
    assert cst.elastic_energy(np.eye(2), params) == pytest.approx(0.0, abs=1e-15)


def test_energy_positive_away_from_identity(params):
    rng = np.random.default_rng(0)
    for _ in range(20):
        F = np.eye(2) + 0.2 * rng.standard_normal((2, 2))
        if np.linalg.det(F) <= 0.05:
            continue
        if np.allclose(F, np.eye(2)):
            continue
        assert cst.elastic_energy(F, params) > 0.0


def test_energy_rotation_invariance(params):
    rng = np.random.default_rng(1)
    F = np.eye(2) + 0.1 * rng.standard_normal((2, 2))
    th = 0.3
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert cst.elastic_energy(Q @ F, params) == pytest.approx(
        cst.elastic_energy(F, params), rel=1e-12
    )


def test_nonadmissible_state_raises(params):
    F = np.diag([1.0, -0.5])
    with pytest.raises(cst.NonAdmissibleState):
        cst.elastic_energy(F, params)


def test_driving_force_thresholded(params):
    # tiny strains stay below the fracture threshold -> zero driving force
    F = np.eye(2) * (1.0 + 1e-6)
    assert cst.crack_driving_force(F, params) == 0.0
    F = np.eye(2) * 1.05
    assert cst.crack_driving_force(F, params) > 0.0


def test_driving_force_is_positive_part(params):
    F = np.eye(2) * 1.05
    psi = cst.elastic_energy(F, params)
    assert cst.crack_driving_force(F, params) == pytest.approx(
        psi - params.psi_c, rel=1e-12
    )


# ---------------------------------------------------------------------------
# stress and tangents vs finite differences of the pseudo-energy
# ---------------------------------------------------------------------------

def _pseudo_energy(F, d, p, params):
    J = np.linalg.det(F)
    g = cst.degradation(d) + cst.G_FLOOR
    return g * cst.elastic_energy(F, params) - params.biot_alpha * p * (J - 1.0)


def _random_admissible_F(rng, amp=0.1):
    while True:
        F = np.eye(2) + amp * rng.standard_normal((2, 2))
        if np.linalg.det(F) > 0.3:
            return F


def test_stress_matches_fd(params):
    rng = np.random.default_rng(7)
    eps = 1e-6
    for _ in range(20):
        F = _random_admissible_F(rng)
        d = rng.uniform(0, 1)
        p = rng.uniform(-0.1, 0.1)
        P = cst.first_pk_stress(F, d, p, params)
        for i in range(2):
            for j in range(2):
                Fp, Fm = F.copy(), F.copy()
                Fp[i, j] += eps
                Fm[i, j] -= eps
                fd = (
                    _pseudo_energy(Fp, d, p, params)
                    - _pseudo_energy(Fm, d, p, params)
                ) / (2 * eps)
                assert P[i, j] == pytest.approx(fd, rel=2e-5, abs=1e-9)


def test_stress_vanishes_at_reference(params):
    P = cst.first_pk_stress(np.eye(2), 0.0, 0.0, params)
    np.testing.assert_allclose(P, 0.0, atol=1e-14)


def test_pressure_part_of_stress(params):
    # at F = I the pressure contributes -alpha*p*I (Terzaghi split)
    p = 0.02
    P = cst.first_pk_stress(np.eye(2), 0.0, p, params)
    np.testing.assert_allclose(P, -params.biot_alpha * p * np.eye(2), rtol=1e-12)


def test_mechanics_tangent_matches_fd(params):
    rng = np.random.default_rng(3)
    eps = 1e-6
    for _ in range(6):
        F = _random_admissible_F(rng)
        d = rng.uniform(0, 0.9)
        p = rng.uniform(-0.05, 0.05)
        A = cst.mechanics_tangent(F, d, p, params)
        for k in range(2):
            for l in range(2):
                Fp, Fm = F.copy(), F.copy()
                Fp[k, l] += eps
                Fm[k, l] -= eps
                fd = (
                    cst.first_pk_stress(Fp, d, p, params)
                    - cst.first_pk_stress(Fm, d, p, params)
                ) / (2 * eps)
                np.testing.assert_allclose(
                    A[:, :, k, l], fd, rtol=5e-5, atol=1e-8
                )


def test_stress_pressure_tangent_matches_fd(params):
    rng = np.random.default_rng(5)
    eps = 1e-6
    F = _random_admissible_F(rng)
    dPdp = cst.stress_pressure_tangent(F, params)
    fd = (
        cst.first_pk_stress(F, 0.3, eps, params)
        - cst.first_pk_stress(F, 0.3, -eps, params)
    ) / (2 * eps)
    np.testing.assert_allclose(dPdp, fd, rtol=1e-7, atol=1e-12)


# ---------------------------------------------------------------------------
# fluid laws
# ---------------------------------------------------------------------------

def test_fluid_pressure_closed_form(params):
    # p = M (theta - alpha (J-1)); at J=1: p = M theta
    assert cst.fluid_pressure(0.01, 1.0, params) == pytest.approx(0.125)
    assert cst.fluid_pressure(0.0, 1.0, params) == 0.0


def test_fluid_content_inverts_pressure(params):
    theta, J = 0.037, 1.02
    p = cst.fluid_pressure(theta, J, params)
    assert cst.fluid_content(p, J, params) == pytest.approx(theta, rel=1e-12)


def test_permeability_closed_crack_is_darcy(params):
    # u = 0 (F = I): no opening, crack term inactive even at d = 1
    F = np.eye(2)
    K0 = cst.permeability(F, 0.0, np.zeros(2), 1.0, params)
    K1 = cst.permeability(F, 1.0, np.array([1.0, 0.0]), 1.0, params)
    np.testing.assert_allclose(K0, params.darcy_mobility * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(K1, K0, rtol=1e-12)


def test_permeability_open_crack_closed_form(params):
    # uniaxial stretch normal to the crack: evaluate the channel term exactly
    h_e = 0.5
    lam = 1.4
    F = np.diag([1.0, lam])  # crack along x, opening in y
    grad_d = np.array([0.0, 1.0])  # unit normal is y
    K = cst.permeability(F, 1.0, grad_d, h_e, params)
    w = (lam - 1.0) * h_e  # stretch_perp = lam for this F and n
    J = lam
    # C^-1 = diag(1, lam^-2); C^-1 n = (0, lam^-2)
    plane = np.diag([1.0, lam**-2 - lam**-4])
    expect = params.darcy_mobility * J * np.diag([1.0, lam**-2])
    expect += params.crack_mobility * w**2 * J * plane
    np.testing.assert_allclose(K, expect, rtol=1e-12)
    # channel dwarfs the bulk mobility by many orders once the crack opens
    assert K[0, 0] > 1e9 * params.darcy_mobility


def test_permeability_gates_with_phase(params):
    # d^zeta with zeta = 50 makes the channel negligible at d = 0.5
    F = np.diag([1.0, 1.3])
    grad_d = np.array([0.0, 1.0])
    K_half = cst.permeability(F, 0.5, grad_d, 1.0, params)
    K_open = cst.permeability(F, 1.0, grad_d, 1.0, params)
    darcy = params.darcy_mobility * np.linalg.det(F) * np.linalg.inv(F.T @ F)
    np.testing.assert_allclose(K_half, darcy, rtol=1e-3)
    assert (K_half[0, 0] - darcy[0, 0]) == pytest.approx(
        0.5**params.crack_exponent * (K_open[0, 0] - darcy[0, 0]), rel=1e-10
    )


def test_permeability_no_negative_width(params):
    # compression (lam < 1) must not create a channel
    F = np.diag([1.0, 0.8])
    grad_d = np.array([0.0, 1.0])
    K = cst.permeability(F, 1.0, grad_d, 1.0, params)
    J = 0.8
    np.testing.assert_allclose(
        K, params.darcy_mobility * J * np.linalg.inv(F.T @ F), rtol=1e-10
    )


def test_permeability_spd(params):
    rng = np.random.default_rng(11)
    for _ in range(20):
        F = _random_admissible_F(rng, amp=0.2)
        grad_d = rng.standard_normal(2)
        K = cst.permeability(F, rng.uniform(0, 1), grad_d, 0.5, params)
        np.testing.assert_allclose(K, K.T, atol=1e-15)
        assert np.linalg.eigvalsh(K).min() > 0.0


# ---------------------------------------------------------------------------
# crack surface density
# ---------------------------------------------------------------------------

def test_crack_density_zero_for_intact(params):
    assert cst.crack_surface_density(0.0, np.zeros(2), params) == 0.0


def test_crack_density_quadratic_parts():
    prm = MaterialParams(length_scale=2.0)
    val = cst.crack_surface_density(0.6, np.zeros(2), prm)
    assert val == pytest.approx(0.6**2 / (2 * 2.0), rel=1e-12)
    val = cst.crack_surface_density(0.0, np.array([0.3, 0.4]), prm)
    assert val == pytest.approx(2.0 / 2 * 0.25, rel=1e-12)
