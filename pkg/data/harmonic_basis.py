"""
Base armónica bidimensional para balance armónico multidimensional.

Define la red de índices (m, k), la grilla de muestreo en unidades de fase,
el operador de síntesis/análisis (MDFT) y los multiplicadores de segunda
derivada -(k*omega + m*Omega)^2.

Convención de filas de la grilla: s-mayor, p-menor. La fila i corresponde
a (s, p) con i = (s - 1) * m_zeta + (p - 1), s = 1..m_xi, p = 1..m_zeta.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from config.solver_config import get_logger, SolverConstants
from utils.error_handler import RankDeficient, SamplingGuardrailError

Entry = Tuple[int, int]

logger = get_logger(__name__)

# Columnas con |coseno del ángulo| por encima de esto se consideran paralelas
_PARALLEL_TOLERANCE = 1e-9


def _frozen_array(values: Iterable[float]) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FrequencyPair:
    """Frecuencia secular omega y de forzamiento Omega (tiempo normalizado)."""
    omega: float
    Omega: float = SolverConstants.DRIVE_OMEGA

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0.0):
            raise ValueError(f"omega debe ser positiva y finita: {self.omega}")
        if not (math.isfinite(self.Omega) and self.Omega > 0.0):
            raise ValueError(f"Omega debe ser positiva y finita: {self.Omega}")

    @property
    def beta(self) -> float:
        """Frecuencia secular normalizada 2*omega/Omega."""
        return 2.0 * self.omega / self.Omega


@dataclass(frozen=True)
class HarmonicIndexSet:
    """Conjunto ordenado de pares (m, k) retenidos."""
    entries: Tuple[Entry, ...]
    _positions: Dict[Entry, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple((int(m), int(k)) for m, k in self.entries)
        object.__setattr__(self, "entries", entries)
        self._validate()
        object.__setattr__(self, "_positions", {entry: i for i, entry in enumerate(entries)})

    def _validate(self) -> None:
        if not self.entries:
            raise ValueError("El conjunto de índices no puede estar vacío")
        if (0, 1) not in self.entries:
            raise ValueError("El par (0, 1) debe pertenecer al conjunto (porta A01)")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("El conjunto de índices contiene pares duplicados")
        negative = [entry for entry in self.entries if entry[1] < 0]
        if negative:
            raise ValueError(f"Pares con k negativo: {negative}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.entries)

    def __contains__(self, entry: object) -> bool:
        return entry in self._positions

    @property
    def M(self) -> int:
        """Máximo |m|."""
        return max(abs(m) for m, _ in self.entries)

    @property
    def K(self) -> int:
        """Máximo k."""
        return max(k for _, k in self.entries)

    @property
    def m_values(self) -> np.ndarray:
        return np.array([m for m, _ in self.entries], dtype=float)

    @property
    def k_values(self) -> np.ndarray:
        return np.array([k for _, k in self.entries], dtype=float)

    @property
    def has_k0_row(self) -> bool:
        return any(k == 0 for _, k in self.entries)

    def position(self, entry: Entry) -> int:
        """Posición de (m, k) en el orden de vectorización."""
        try:
            return self._positions[entry]
        except KeyError:
            raise KeyError(f"Par {entry} fuera del conjunto de índices")

    def without(self, dropped: Iterable[Entry]) -> 'HarmonicIndexSet':
        """Copia del conjunto sin los pares indicados, conservando el orden."""
        dropped_set = set(dropped)
        return HarmonicIndexSet(tuple(e for e in self.entries if e not in dropped_set))

    def truncated(self, K: int) -> 'HarmonicIndexSet':
        """Copia con k <= K; la fila k = 0 se conserva."""
        return HarmonicIndexSet(tuple(e for e in self.entries if e[1] <= K))


def build_index_set(M: int, K: int, include_k0: bool = False, theta: float = 0.0) -> HarmonicIndexSet:
    """
    Construye la red NEFS {(m,k): -M <= m <= M, 1 <= k <= K} más la fila k = 0 opcional.

    Con theta = 0 los cosenos de (m, 0) y (-m, 0) coinciden, por lo que la
    fila k = 0 se restringe a m >= 0.

    Args:
        M: Máximo |m| de micromovimiento
        K: Máximo armónico secular (K >= 1)
        include_k0: Habilita la fila k = 0
        theta: Fase global en radianes

    Returns:
        HarmonicIndexSet ordenado m-mayor, k-menor, con la fila k = 0 al final
    """
    if K < 1:
        raise ValueError(f"K debe ser >= 1, recibido {K}")
    if M < 0:
        raise ValueError(f"M debe ser >= 0, recibido {M}")

    entries: List[Entry] = [(m, k) for m in range(-M, M + 1) for k in range(1, K + 1)]

    if include_k0:
        if math.isclose(math.sin(theta), 0.0, abs_tol=1e-15):
            k0_m = range(0, M + 1)
        else:
            k0_m = range(-M, M + 1)
        entries.extend((m, 0) for m in k0_m)

    return HarmonicIndexSet(tuple(entries))


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Amplitudes reales A_mk con fase global compartida theta."""
    index_set: HarmonicIndexSet
    amplitudes: np.ndarray
    theta: float = 0.0

    def __post_init__(self):
        amplitudes = _frozen_array(self.amplitudes)
        if amplitudes.shape != (len(self.index_set),):
            raise ValueError(
                f"Se esperaban {len(self.index_set)} amplitudes, recibidas {amplitudes.shape}"
            )
        object.__setattr__(self, "amplitudes", amplitudes)

    @classmethod
    def zeros(cls, index_set: HarmonicIndexSet, theta: float = 0.0) -> 'CoefficientTable':
        return cls(index_set, np.zeros(len(index_set)), theta)

    @classmethod
    def from_mapping(
            cls,
            index_set: HarmonicIndexSet,
            values: Mapping[Entry, float],
            theta: float = 0.0
    ) -> 'CoefficientTable':
        """Tabla con los valores dados; pares ausentes del conjunto se ignoran."""
        amplitudes = np.zeros(len(index_set))
        for entry, value in values.items():
            if entry in index_set:
                amplitudes[index_set.position(entry)] = value
        return cls(index_set, amplitudes, theta)

    def __getitem__(self, entry: Entry) -> float:
        return float(self.amplitudes[self.index_set.position(entry)])

    def as_dict(self) -> Dict[Entry, float]:
        return {entry: float(a) for entry, a in zip(self.index_set.entries, self.amplitudes)}

    def with_amplitude(self, entry: Entry, value: float) -> 'CoefficientTable':
        amplitudes = self.amplitudes.copy()
        amplitudes[self.index_set.position(entry)] = value
        return CoefficientTable(self.index_set, amplitudes, self.theta)

    def restricted_to(self, index_set: HarmonicIndexSet) -> 'CoefficientTable':
        """Reproyecta sobre otro conjunto de índices (pares nuevos en cero)."""
        return CoefficientTable.from_mapping(index_set, self.as_dict(), self.theta)

    def scaled(self, factor: float) -> 'CoefficientTable':
        return CoefficientTable(self.index_set, self.amplitudes * factor, self.theta)


@dataclass(frozen=True)
class SamplingGrid:
    """Grilla de fases 2*pi*s/m_xi x 2*pi*p/m_zeta."""
    m_xi: int
    m_zeta: int
    reference_grid: bool = False

    def __post_init__(self):
        if self.m_xi < 1 or self.m_zeta < 1:
            raise ValueError(f"Tamaños de grilla inválidos: {self.m_xi} x {self.m_zeta}")

    @classmethod
    def for_index_set(cls, index_set: HarmonicIndexSet) -> 'SamplingGrid':
        """Grilla mínima que satisface Nyquist para el conjunto."""
        return cls(2 * index_set.K + 1, 2 * index_set.M + 1)

    @property
    def xi_phases(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(1, self.m_xi + 1) / self.m_xi

    @property
    def zeta_phases(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(1, self.m_zeta + 1) / self.m_zeta

    @property
    def n_samples(self) -> int:
        return self.m_xi * self.m_zeta

    def guardrail_violations(self, index_set: HarmonicIndexSet) -> List[str]:
        """Lista de incumplimientos de Nyquist para el conjunto dado."""
        problems = []
        if self.m_xi < 2 * index_set.K + 1:
            problems.append(f"m_xi={self.m_xi} < 2K+1={2 * index_set.K + 1}")
        if self.m_zeta < 2 * index_set.M + 1:
            problems.append(f"m_zeta={self.m_zeta} < 2M+1={2 * index_set.M + 1}")
        return problems


@dataclass(frozen=True, eq=False)
class MdftOperator:
    """Operador de síntesis S, proyector de mínimos cuadrados y tabla de d2."""
    index_set: HarmonicIndexSet
    grid: SamplingGrid
    freqs: FrequencyPair
    theta: float
    s_matrix: np.ndarray
    projector: np.ndarray

    @property
    def d2_multipliers(self) -> np.ndarray:
        """-(k*omega + m*Omega)^2 a la frecuencia del operador."""
        return self.d2_at(self.freqs.omega)

    def d2_at(self, omega: float) -> np.ndarray:
        nu = self.index_set.k_values * omega + self.index_set.m_values * self.freqs.Omega
        return -nu * nu

    def d2_domega_at(self, omega: float) -> np.ndarray:
        k = self.index_set.k_values
        nu = k * omega + self.index_set.m_values * self.freqs.Omega
        return -2.0 * nu * k

    @property
    def drive_phases(self) -> np.ndarray:
        """Fase del forzamiento Omega*zeta_p por fila de muestreo."""
        return np.tile(self.grid.zeta_phases, self.grid.m_xi)

    @property
    def n_samples(self) -> int:
        return self.grid.n_samples


def _synthesis_matrix(index_set: HarmonicIndexSet, grid: SamplingGrid, theta: float) -> np.ndarray:
    xi, zeta = np.meshgrid(grid.xi_phases, grid.zeta_phases, indexing="ij")
    xi = xi.ravel()
    zeta = zeta.ravel()
    return np.cos(
        np.outer(xi, index_set.k_values) + np.outer(zeta, index_set.m_values) + theta
    )


def find_collisions(s_matrix: np.ndarray, entries: Sequence[Entry]) -> List[Tuple[Entry, Optional[Entry]]]:
    """
    Pares de columnas paralelas y columnas nulas del operador.

    Una columna nula se reporta como (entrada, None).
    """
    norms = np.linalg.norm(s_matrix, axis=0)
    scale = math.sqrt(s_matrix.shape[0])
    collisions: List[Tuple[Entry, Optional[Entry]]] = []

    null_mask = norms < 1e-12 * scale
    for idx in np.flatnonzero(null_mask):
        collisions.append((entries[idx], None))

    live = np.flatnonzero(~null_mask)
    normalized = s_matrix[:, live] / norms[live]
    gram = np.abs(normalized.T @ normalized)
    rows, cols = np.nonzero(np.triu(gram, k=1) > 1.0 - _PARALLEL_TOLERANCE)
    for i, j in zip(rows, cols):
        collisions.append((entries[live[i]], entries[live[j]]))
    return collisions


def build_operator(
        index_set: HarmonicIndexSet,
        grid: SamplingGrid,
        freqs: FrequencyPair,
        theta: float = 0.0
) -> MdftOperator:
    """
    Construye el operador MDFT y su pseudo-inversa por QR.

    Raises:
        RankDeficient: columnas alias o nulas sobre la grilla
        SamplingGuardrailError: grilla bajo Nyquist sin reference_grid
    """
    s_matrix = _synthesis_matrix(index_set, grid, theta)

    if s_matrix.shape[0] < s_matrix.shape[1] or np.linalg.matrix_rank(s_matrix) < s_matrix.shape[1]:
        collisions = find_collisions(s_matrix, index_set.entries)
        preview = ", ".join(
            f"{a}/{b}" if b is not None else f"{a}/nula" for a, b in collisions[:8]
        )
        raise RankDeficient(
            f"Operador MDFT sin rango completo en grilla {grid.m_xi}x{grid.m_zeta}: "
            f"{len(collisions)} colisiones [{preview}]",
            collisions
        )

    violations = grid.guardrail_violations(index_set)
    if violations:
        if not grid.reference_grid:
            raise SamplingGuardrailError(
                f"Grilla bajo Nyquist: {'; '.join(violations)}",
                {"m_xi": grid.m_xi, "m_zeta": grid.m_zeta}
            )
        logger.warning(f"⚠️ Grilla de referencia bajo Nyquist: {'; '.join(violations)}")

    q_factor, r_factor = linalg.qr(s_matrix, mode="economic")
    projector = linalg.solve_triangular(r_factor, q_factor.T)

    s_matrix.setflags(write=False)
    projector.setflags(write=False)
    return MdftOperator(index_set, grid, freqs, float(theta), s_matrix, projector)


def reduce_for_grid(
        index_set: HarmonicIndexSet,
        grid: SamplingGrid,
        theta: float = 0.0
) -> Tuple[HarmonicIndexSet, List[Entry]]:
    """
    Elimina columnas que hacen alias con otra de menor k sobre la grilla.

    Returns:
        (conjunto reducido, pares eliminados)
    """
    s_matrix = _synthesis_matrix(index_set, grid, theta)
    norms = np.linalg.norm(s_matrix, axis=0)
    order = sorted(range(len(index_set)), key=lambda i: (index_set.entries[i][1], abs(index_set.entries[i][0])))

    kept: List[int] = []
    dropped: List[Entry] = []
    for idx in order:
        if norms[idx] < 1e-12 * math.sqrt(s_matrix.shape[0]):
            dropped.append(index_set.entries[idx])
            continue
        column = s_matrix[:, idx] / norms[idx]
        parallel = any(
            abs(column @ (s_matrix[:, j] / norms[j])) > 1.0 - _PARALLEL_TOLERANCE for j in kept
        )
        if parallel:
            dropped.append(index_set.entries[idx])
        else:
            kept.append(idx)

    if (0, 1) in dropped:
        raise RankDeficient("La columna (0, 1) hace alias en la grilla; no se puede reducir", [((0, 1), None)])

    if dropped:
        logger.info(f"📉 Grilla de referencia: {len(dropped)} columnas eliminadas (k máx. {max(k for _, k in dropped)})")
    return index_set.without(dropped), dropped


def _check_table(op: MdftOperator, coeffs: CoefficientTable) -> None:
    if coeffs.index_set != op.index_set:
        raise ValueError("La tabla de coeficientes no corresponde al conjunto del operador")
    if not math.isclose(coeffs.theta, op.theta, abs_tol=1e-15):
        raise ValueError(f"Fase de la tabla ({coeffs.theta}) distinta a la del operador ({op.theta})")


def synthesize(op: MdftOperator, coeffs: CoefficientTable) -> np.ndarray:
    """Valores muestreados u_i = sum A_mk gamma_mk en la grilla."""
    _check_table(op, coeffs)
    return op.s_matrix @ coeffs.amplitudes


def _check_samples(op: MdftOperator, samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (op.n_samples,):
        raise ValueError(f"Se esperaban {op.n_samples} muestras, recibidas {samples.shape}")
    return samples


def projection_residual(op: MdftOperator, samples: np.ndarray) -> float:
    """Norma euclídea de la parte de las muestras fuera del span de S."""
    samples = _check_samples(op, samples)
    return float(np.linalg.norm(samples - op.s_matrix @ (op.projector @ samples)))


def analyze(op: MdftOperator, samples: np.ndarray) -> CoefficientTable:
    """Proyección por mínimos cuadrados de las muestras sobre las columnas armónicas."""
    samples = _check_samples(op, samples)
    amplitudes = op.projector @ samples
    logger.debug(f"Residuo de proyección: {projection_residual(op, samples):.3e}")
    return CoefficientTable(op.index_set, amplitudes, op.theta)


def evaluate_real_time(
        coeffs: CoefficientTable,
        freqs: FrequencyPair,
        xi: np.ndarray,
        derivative: int = 0
) -> np.ndarray:
    """
    Evalúa la función de prueba sobre el tiempo real xi = zeta.

    derivative = 0, 1 o 2 selecciona u, u' o u''.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    index_set = coeffs.index_set
    nu = index_set.k_values * freqs.omega + index_set.m_values * freqs.Omega
    phase = np.outer(xi, nu) + coeffs.theta

    if derivative == 0:
        basis = np.cos(phase)
    elif derivative == 1:
        basis = -np.sin(phase) * nu
    elif derivative == 2:
        basis = -np.cos(phase) * nu * nu
    else:
        raise ValueError(f"Orden de derivada no soportado: {derivative}")
    return basis @ coeffs.amplitudes
