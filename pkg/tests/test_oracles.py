"""
Pruebas de los oráculos de referencia: integrador de orden 8, métricas de
desviación, exponente característico y periodo por cuadratura.
"""

import math

import numpy as np
import pytest
from scipy import special

from data.drive_models import DuffingModel, MathieuModel, PendulumModel, TargetPotential
from services import oracles
from utils.error_handler import NonMonotonic, Unstable, ZeroReference


# ── Integrador ───────────────────────────────────────────────────────────────

def test_harmonic_oscillator_trajectory():
    trajectory = oracles.integrate(DuffingModel(linear=1.0), 0.7, 0.0, (0.0, 50.0))
    xi = np.linspace(0.0, 50.0, 101)
    np.testing.assert_allclose(trajectory(xi), 0.7 * np.cos(xi), atol=1e-9)
    np.testing.assert_allclose(trajectory.velocity(xi), -0.7 * np.sin(xi), atol=1e-9)
    assert trajectory.n_steps > 0 and trajectory.n_evaluations > trajectory.n_steps


def test_observed_order_is_eighth():
    assert oracles.observed_order() > 7.0


def test_energy_is_conserved_for_duffing():
    model = DuffingModel(linear=1.0, cubic=0.5)
    trajectory = oracles.integrate(model, 0.8, 0.0, (0.0, 200.0))
    assert oracles.energy_drift(model, trajectory, np.linspace(0.0, 200.0, 500)) <= 1e-9


def test_energy_drift_requires_autonomous_model():
    trajectory = oracles.integrate(MathieuModel(q=0.2), 0.1, 0.0, (0.0, 5.0))
    with pytest.raises(ValueError):
        oracles.energy_drift(MathieuModel(q=0.2), trajectory, [1.0])


def test_integrator_config_rejects_bad_tolerances():
    with pytest.raises(ValueError):
        oracles.IntegratorConfig(rel_tol=0.0, abs_tol=1e-12)


# ── Desviación ───────────────────────────────────────────────────────────────

def test_identical_trajectories_have_zero_deviation():
    reference = lambda xi: np.cos(np.asarray(xi))
    report = oracles.deviation(reference, reference, xi_max=20.0, n_samples=200)
    assert report.max_dev == 0.0
    assert report.xi[0] == pytest.approx(0.1) and report.xi[-1] == pytest.approx(20.0)


def test_deviation_is_normalized_by_initial_value():
    reference = lambda xi: 2.0 * np.cos(np.asarray(xi))
    shifted = lambda xi: 2.0 * np.cos(np.asarray(xi)) + 0.02
    report = oracles.deviation(reference, shifted, xi_max=10.0, n_samples=50)
    assert report.max_dev == pytest.approx(0.01, rel=1e-12)


def test_zero_reference_rejected():
    with pytest.raises(ZeroReference):
        oracles.deviation(lambda xi: np.sin(np.asarray(xi)), lambda xi: np.sin(np.asarray(xi)), 10.0, 10)


def test_initial_state_from_fundamental_only():
    from data.harmonic_basis import CoefficientTable, build_index_set
    from services.hb_solver import HbSolution

    index_set = build_index_set(1, 2)
    coeffs = CoefficientTable.from_mapping(index_set, {(0, 1): 0.3, (1, 1): -0.05, (0, 2): 0.01})
    solution = HbSolution(coeffs, 0.6, 0.0, 0, True)
    u0, v0 = oracles.initial_state_from_solution(solution)
    assert u0 == pytest.approx(0.26)
    assert v0 == 0.0


# ── Exponente característico ─────────────────────────────────────────────────

def test_monodromy_is_symplectic():
    assert abs(np.linalg.det(oracles.monodromy_matrix(0.3, 0.0)) - 1.0) <= 1e-10


def test_small_q_exponent_matches_kapitza_limit():
    q = 0.05
    beta = oracles.characteristic_exponent(q, 0.0)
    assert beta == pytest.approx(q / math.sqrt(2), rel=1e-3)


def test_unstable_point_rejected():
    with pytest.raises(Unstable):
        oracles.characteristic_exponent(1.0, 0.0)


# ── Cuadratura ───────────────────────────────────────────────────────────────

def test_duffing_quadrature_shift():
    shift = oracles.relative_shift_quadrature(TargetPotential(c_coeffs={4: 0.005}), 0.5)
    assert shift == pytest.approx(0.0009375, abs=2e-6)


def test_harmonic_well_has_no_shift():
    assert oracles.relative_shift_quadrature(TargetPotential(c_coeffs={4: 0.0}), 0.3) == 0.0


def test_quadrature_matches_zero_crossing_period():
    model = DuffingModel(linear=1.0, cubic=0.6)
    amplitude = 0.7
    trajectory = oracles.integrate(model, amplitude, 0.0, (0.0, 60.0))
    measured = 2.0 * math.pi / oracles.zero_crossing_period(trajectory)
    exact = oracles.period_quadrature(TargetPotential(c_coeffs={4: 0.3}), 1.0, amplitude)
    assert measured == pytest.approx(exact, rel=1e-9)


def test_pendulum_period_matches_quadrature():
    """1 - cos u = 1/2 (u^2 - u^4/12 + u^6/360 - u^8/20160 + ...); el resto es < 1e-12 en u0 = 0.2."""
    amplitude = 0.2
    trajectory = oracles.integrate(PendulumModel(gravity=1.0), amplitude, 0.0, (0.0, 60.0))
    measured = 2.0 * math.pi / oracles.zero_crossing_period(trajectory)
    well = TargetPotential(c_coeffs={4: -1.0 / 12.0, 6: 1.0 / 360.0, 8: -1.0 / 20160.0})
    exact = oracles.period_quadrature(well, 1.0, amplitude)

    assert abs(measured - exact) <= 1e-9, f"RK {measured:.15f} vs cuadratura {exact:.15f}"
    assert exact == pytest.approx(0.5 * math.pi / special.ellipk(math.sin(0.5 * amplitude) ** 2), abs=1e-11)


def test_non_monotonic_well_rejected():
    with pytest.raises(NonMonotonic):
        oracles.relative_shift_quadrature(TargetPotential(c_coeffs={4: -1.0}), 1.0)


def test_quadrature_requires_c_coefficients():
    with pytest.raises(ValueError):
        oracles.relative_shift_quadrature(TargetPotential(eps_coeffs={2: 0.1}), 0.5)
