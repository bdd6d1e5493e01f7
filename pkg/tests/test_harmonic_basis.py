"""
Pruebas de la base armónica: conjuntos de índices, operador MDFT,
guardas de muestreo y reducción en la grilla de referencia.
"""

import math

import numpy as np
import pytest

from data.harmonic_basis import (
    CoefficientTable,
    FrequencyPair,
    HarmonicIndexSet,
    SamplingGrid,
    analyze,
    build_index_set,
    build_operator,
    evaluate_real_time,
    find_collisions,
    projection_residual,
    reduce_for_grid,
    synthesize,
)
from utils.error_handler import RankDeficient, SamplingGuardrailError, SolverError


# ── Conjuntos de índices ─────────────────────────────────────────────────────

def test_index_set_size_without_k0_row():
    index_set = build_index_set(7, 8)
    assert len(index_set) == 15 * 8
    assert index_set.M == 7 and index_set.K == 8
    assert (0, 1) in index_set


def test_k0_row_restricted_to_non_negative_m_at_zero_phase():
    index_set = build_index_set(3, 2, include_k0=True, theta=0.0)
    k0 = [entry for entry in index_set if entry[1] == 0]
    assert k0 == [(0, 0), (1, 0), (2, 0), (3, 0)]


def test_k0_row_complete_at_generic_phase():
    index_set = build_index_set(3, 2, include_k0=True, theta=0.3)
    assert sum(1 for entry in index_set if entry[1] == 0) == 7


def test_index_set_requires_fundamental():
    with pytest.raises(ValueError):
        HarmonicIndexSet(((1, 1), (0, 2)))


def test_index_set_rejects_duplicates():
    with pytest.raises(ValueError):
        HarmonicIndexSet(((0, 1), (0, 1)))


def test_truncated_keeps_k0_row():
    index_set = build_index_set(2, 4, include_k0=True).truncated(1)
    assert max(k for _, k in index_set) == 1
    assert (0, 0) in index_set


def test_frequency_pair_requires_positive_omega():
    with pytest.raises(ValueError):
        FrequencyPair(0.0, 2.0)
    assert FrequencyPair(0.3, 2.0).beta == pytest.approx(0.3)


# ── Operador MDFT ────────────────────────────────────────────────────────────

@pytest.mark.parametrize("M, K, include_k0, theta", [
    (0, 1, False, 0.0),
    (2, 3, False, 0.0),
    (3, 2, True, 0.0),
    (2, 2, True, 0.7),
])
def test_mdft_round_trip(M, K, include_k0, theta):
    index_set = build_index_set(M, K, include_k0, theta)
    operator = build_operator(index_set, SamplingGrid.for_index_set(index_set), FrequencyPair(0.41, 2.0), theta)
    amplitudes = np.random.default_rng(11).normal(size=len(index_set))
    coeffs = CoefficientTable(index_set, amplitudes, theta)

    recovered = analyze(operator, synthesize(operator, coeffs))
    assert np.max(np.abs(recovered.amplitudes - amplitudes)) <= 1e-10


def test_samples_in_span_have_no_projection_residual():
    index_set = build_index_set(1, 2)
    operator = build_operator(index_set, SamplingGrid.for_index_set(index_set), FrequencyPair(1.0, 2.0))
    coeffs = CoefficientTable.from_mapping(index_set, {(0, 1): 1.0, (1, 2): -0.3})
    assert projection_residual(operator, synthesize(operator, coeffs)) <= 1e-12


def test_sub_nyquist_grid_is_rejected():
    index_set = build_index_set(2, 3)
    with pytest.raises(SolverError):
        build_operator(index_set, SamplingGrid(5, 5), FrequencyPair(1.0, 2.0))


def test_guardrail_lists_violations():
    index_set = build_index_set(7, 8)
    violations = SamplingGrid(15, 15).guardrail_violations(index_set)
    assert len(violations) == 1 and "m_xi" in violations[0]


def test_aliased_columns_are_reported():
    index_set = build_index_set(7, 8)
    with pytest.raises((RankDeficient, SamplingGuardrailError)) as info:
        build_operator(index_set, SamplingGrid(15, 15), FrequencyPair(1.0, 2.0))
    if isinstance(info.value, RankDeficient):
        assert info.value.context["collisions"]


def test_find_collisions_detects_parallel_columns():
    s_matrix = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 1.0], [0.0, 0.0, 1.0]])
    collisions = find_collisions(s_matrix, [(0, 1), (1, 1), (0, 2)])
    assert ((0, 1), (1, 1)) in collisions


def test_reference_grid_drops_highest_harmonic():
    index_set = build_index_set(7, 8)
    grid = SamplingGrid(15, 15, reference_grid=True)
    reduced, dropped = reduce_for_grid(index_set, grid)

    assert len(dropped) == 15
    assert all(k == 8 for _, k in dropped)
    assert max(k for _, k in reduced) == 7
    operator = build_operator(reduced, grid, FrequencyPair(0.5, 2.0))
    assert operator.s_matrix.shape == (225, 105)


# ── Tiempo real ──────────────────────────────────────────────────────────────

def test_real_time_restriction_of_fundamental():
    index_set = build_index_set(0, 1)
    coeffs = CoefficientTable(index_set, np.array([0.5]))
    xi = np.linspace(0.0, 10.0, 7)
    values = evaluate_real_time(coeffs, FrequencyPair(1.3, 2.0), xi)
    np.testing.assert_allclose(values, 0.5 * np.cos(1.3 * xi), atol=1e-15)


def test_real_time_derivatives_match_finite_differences():
    index_set = build_index_set(2, 2)
    coeffs = CoefficientTable(index_set, np.random.default_rng(3).normal(size=len(index_set)), 0.2)
    freqs = FrequencyPair(0.37, 2.0)
    xi = np.array([0.3, 1.7, 4.2])
    h = 1e-5

    u_plus = evaluate_real_time(coeffs, freqs, xi + h)
    u_minus = evaluate_real_time(coeffs, freqs, xi - h)
    first = evaluate_real_time(coeffs, freqs, xi, derivative=1)
    second = evaluate_real_time(coeffs, freqs, xi, derivative=2)

    np.testing.assert_allclose(first, (u_plus - u_minus) / (2 * h), rtol=1e-6, atol=1e-8)
    second_fd = (u_plus - 2 * evaluate_real_time(coeffs, freqs, xi) + u_minus) / h ** 2
    np.testing.assert_allclose(second, second_fd, rtol=1e-3, atol=1e-4)


def test_real_time_rejects_unknown_derivative():
    coeffs = CoefficientTable(build_index_set(0, 1), np.array([1.0]))
    with pytest.raises(ValueError):
        evaluate_real_time(coeffs, FrequencyPair(1.0, 2.0), np.array([0.0]), derivative=3)


def test_coefficient_table_shape_is_checked():
    with pytest.raises(ValueError):
        CoefficientTable(build_index_set(1, 1), np.zeros(2))


def test_table_for_other_set_rejected_by_operator():
    index_set = build_index_set(1, 1)
    operator = build_operator(index_set, SamplingGrid.for_index_set(index_set), FrequencyPair(1.0, 2.0))
    with pytest.raises(ValueError):
        synthesize(operator, CoefficientTable.zeros(build_index_set(1, 2)))


def test_collision_free_grid_phase_independence():
    """theta desplaza todas las columnas por igual sin afectar el rango."""
    index_set = build_index_set(1, 2)
    grid = SamplingGrid.for_index_set(index_set)
    for theta in (0.0, 0.5, math.pi / 3):
        operator = build_operator(index_set, grid, FrequencyPair(1.0, 2.0), theta)
        assert np.linalg.matrix_rank(operator.s_matrix) == len(index_set)
