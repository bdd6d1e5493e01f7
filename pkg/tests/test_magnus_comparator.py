"""
Pruebas del comparador Floquet-Magnus: álgebra de corchetes de Lie,
fuerza efectiva de Kapitza y predicción de controles.
"""

import math

import pytest
import sympy

from data.drive_models import DuffingModel, MathieuModel, OpticalLatticeModel
from services.magnus_comparator import (
    U,
    V,
    FourierVectorField,
    MagnusComparator,
    PolyVectorField,
    beta_from_c2,
    effective_force_2nd_order,
    effective_force_for,
    lie_bracket,
)
from utils.error_handler import NonCanonical, NoRoot


@pytest.fixture
def comparator():
    return MagnusComparator()


# ── Corchetes de Lie ─────────────────────────────────────────────────────────

def _fields():
    f = PolyVectorField.from_exprs(V, -U - U ** 3)
    g = PolyVectorField.from_exprs(0, U ** 2)
    h = PolyVectorField.from_exprs(U * V, V ** 2)
    return f, g, h


def test_bracket_is_antisymmetric():
    f, g, h = _fields()
    for a, b in ((f, g), (g, h), (f, h)):
        assert (lie_bracket(a, b) + lie_bracket(b, a)).is_zero


def test_bracket_satisfies_jacobi_identity():
    f, g, h = _fields()
    total = (lie_bracket(f, lie_bracket(g, h))
             + lie_bracket(g, lie_bracket(h, f))
             + lie_bracket(h, lie_bracket(f, g)))
    assert total.is_zero


def test_force_only_fields_commute():
    g = PolyVectorField.from_exprs(0, U ** 3)
    k = PolyVectorField.from_exprs(0, U + U ** 5)
    assert lie_bracket(g, k).is_zero


def test_fourier_field_requires_conjugate_pairs():
    half = PolyVectorField.from_exprs(0, U)
    with pytest.raises(ValueError):
        FourierVectorField({0: PolyVectorField.from_exprs(V, -U), 1: half})
    with pytest.raises(ValueError):
        FourierVectorField({1: half, -1: half})


# ── Fuerza efectiva ──────────────────────────────────────────────────────────

def test_linear_mathieu_effective_stiffness():
    q = 0.3
    c2, _ = effective_force_for(MathieuModel(q=q)).numeric()
    assert c2 == pytest.approx(q ** 2 / 2, rel=1e-12)
    assert beta_from_c2(c2) == pytest.approx(q / math.sqrt(2), rel=1e-12)


def test_mathieu_quartic_anharmonicity():
    model = MathieuModel(q=0.3, alpha_ac={4: -0.2}, alpha_dc={4: 0.01})
    _, c_coeffs = effective_force_for(model).numeric()
    expected = (2 * 0.01 + 4 * 0.09 * -0.2) / 0.09
    assert c_coeffs[4] == pytest.approx(expected, rel=1e-10)
    assert c_coeffs[4] == pytest.approx(-0.57778, abs=1e-5)


def test_duffing_effective_force_is_the_force():
    c2, c_coeffs = effective_force_for(DuffingModel(linear=1.0, cubic=0.8)).numeric()
    assert c2 == pytest.approx(1.0)
    assert c_coeffs[4] == pytest.approx(0.4)
    assert c_coeffs[6] == pytest.approx(0.0)


def test_beta_from_non_positive_stiffness_is_nan():
    assert math.isnan(beta_from_c2(0.0))


def test_even_powers_break_parity():
    field = FourierVectorField({0: PolyVectorField.from_exprs(V, -U - U ** 2)})
    with pytest.raises(NonCanonical):
        effective_force_2nd_order(field)


def test_velocity_dependent_force_rejected():
    field = FourierVectorField({0: PolyVectorField.from_exprs(V, -U + V)})
    with pytest.raises(NonCanonical):
        effective_force_2nd_order(field, parity_symmetric=False)


def test_symbolic_control_stays_affine(comparator):
    model = MathieuModel(q=0.2, alpha_dc={4: 0.0})
    symbol, effective = comparator.symbolic_effective_force(model, "alpha_dc_4")
    assert effective.c_coeffs[4].free_symbols == {symbol}
    assert sympy.degree(sympy.expand(effective.c_coeffs[4]), symbol) == 1


# ── Predicción de controles ──────────────────────────────────────────────────

def test_predicted_dc_control_for_quartic_target(comparator):
    q = 0.05
    model = MathieuModel(q=q, alpha_ac={4: -0.2}, alpha_dc={4: 0.0})
    prediction = comparator.predict_control(model, "alpha_dc_4", 0.4)

    assert prediction.value == pytest.approx(0.6 * q ** 2, rel=1e-9)
    assert prediction.beta_fm == pytest.approx(q / math.sqrt(2), rel=1e-12)
    assert prediction.c_coeffs[4] == pytest.approx(0.4, rel=1e-9)


def test_no_root_when_control_cannot_reach_target(comparator):
    with pytest.raises(NoRoot):
        comparator.predict_control(MathieuModel(q=0.3), "q", 0.4)


def test_unextracted_order_rejected(comparator):
    with pytest.raises(ValueError):
        comparator.predict_control(MathieuModel(q=0.3, alpha_dc={4: 0.0}), "alpha_dc_4", 0.4, k=10)


def test_lattice_truncation_is_stable(comparator):
    assert comparator.truncation_stability(OpticalLatticeModel(v0=0.2, lam=0.53)) <= 1e-12
