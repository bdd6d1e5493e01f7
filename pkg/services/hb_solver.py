"""
Servicio de balance armónico directo.

Resuelve W(a; b) = 0 en espacio de coeficientes:
    R = d2(omega) * u~ - P F(S u~, fases de forzamiento)
con A01 prescrito y las incógnitas b = [A_mk libres, omega].
"""

import math
import threading
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.solver_config import get_logger, SolverConstants
from data.drive_models import DriveModel
from data.harmonic_basis import (
    CoefficientTable,
    FrequencyPair,
    HarmonicIndexSet,
    MdftOperator,
    SamplingGrid,
    build_operator,
    evaluate_real_time,
)
from services.newton_solver import DampedNewtonSolver, NewtonResult
from utils.error_handler import ConfigError, NonFinite, NotConverged, log_service_error


@dataclass(frozen=True, eq=False)
class ForwardProblem:
    """Un problema directo: modelo, base, grilla y condiciones (A01, theta)."""
    model: DriveModel
    index_set: HarmonicIndexSet
    grid: SamplingGrid
    a01: float
    theta: float = 0.0
    omega_guess: Optional[float] = None
    coeff_guess: Optional[CoefficientTable] = None
    Omega: float = SolverConstants.DRIVE_OMEGA

    def __post_init__(self):
        if not (math.isfinite(self.a01) and self.a01 >= 0.0):
            raise ConfigError(f"A01 debe ser finita y >= 0: {self.a01}")
        if self.omega_guess is not None and not (math.isfinite(self.omega_guess) and self.omega_guess > 0.0):
            raise ConfigError(f"omega_guess debe ser positiva: {self.omega_guess}")

    def with_updates(self, **changes: Any) -> 'ForwardProblem':
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class HbSolution:
    """Solución de balance armónico con diagnósticos del Newton."""
    coeffs: CoefficientTable
    omega: float
    residual_norm: float
    iterations: int
    converged: bool
    Omega: float = SolverConstants.DRIVE_OMEGA
    residual_trace: Tuple[float, ...] = ()

    @property
    def beta(self) -> float:
        """Frecuencia secular normalizada 2*omega/Omega."""
        return 2.0 * self.omega / self.Omega

    @property
    def freqs(self) -> FrequencyPair:
        return FrequencyPair(self.omega, self.Omega)

    def diagnostics(self, label: str) -> Dict[str, Any]:
        """Registro de diagnóstico serializable para el manifiesto."""
        return {
            "label": label,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "omega": self.omega,
            "residual_trace": list(self.residual_trace),
        }


class BalanceEquations:
    """
    Residuo y linealización del balance armónico para un operador y A01 fijos.

    El modelo se pasa en cada llamada para que el sistema apilado pueda
    variar los parámetros de control sin reconstruir el operador.

    Residuo y Jacobiano se expresan relativos a A01 (filas divididas por
    A01 cuando A01 > 0): la tolerancia del Newton vale igual en todos los
    bloques de amplitud.
    """

    def __init__(self, operator: MdftOperator, a01: float):
        self.operator = operator
        self.a01 = float(a01)
        self.scale = 1.0 / self.a01 if self.a01 > 0.0 else 1.0
        self.fixed_position = operator.index_set.position((0, 1))
        self.free_positions = np.array(
            [i for i in range(len(operator.index_set)) if i != self.fixed_position], dtype=int
        )
        self.phases = operator.drive_phases

    @property
    def size(self) -> int:
        return len(self.operator.index_set)

    def coefficients(self, free: np.ndarray) -> np.ndarray:
        full = np.empty(self.size)
        full[self.free_positions] = free
        full[self.fixed_position] = self.a01
        return full

    def free_from(self, coeffs: CoefficientTable) -> np.ndarray:
        return np.asarray(coeffs.amplitudes)[self.free_positions].copy()

    def _sample(self, model: DriveModel, full: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        samples = self.operator.s_matrix @ full
        forces = model.accel(samples, self.phases)
        if not np.all(np.isfinite(forces)):
            raise NonFinite(f"Aceleración no finita del modelo {model.name}")
        return samples, forces

    def residual(self, model: DriveModel, free: np.ndarray, omega: float) -> np.ndarray:
        full = self.coefficients(free)
        _, forces = self._sample(model, full)
        return self.scale * (self.operator.d2_at(omega) * full - self.operator.projector @ forces)

    def linearization(
            self,
            model: DriveModel,
            free: np.ndarray,
            omega: float
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns:
            (R, dR/d(libres), dR/domega)
        """
        full = self.coefficients(free)
        samples, forces = self._sample(model, full)
        residual = self.scale * (self.operator.d2_at(omega) * full - self.operator.projector @ forces)

        stiffness = model.accel_du(samples, self.phases)
        coupled = self.operator.projector @ (stiffness[:, None] * self.operator.s_matrix)
        jac_full = self.scale * (np.diag(self.operator.d2_at(omega)) - coupled)
        d_omega = self.scale * self.operator.d2_domega_at(omega) * full
        return residual, jac_full[:, self.free_positions], d_omega

    def control_columns(self, model: DriveModel, free: np.ndarray, names: Sequence[str]) -> np.ndarray:
        """dR/d(control) = -P dF/dp en las muestras."""
        full = self.coefficients(free)
        samples = self.operator.s_matrix @ full
        columns = [
            -self.scale * self.operator.projector @ np.broadcast_to(model.accel_dp(samples, self.phases, name), samples.shape)
            for name in names
        ]
        return np.column_stack(columns) if columns else np.zeros((self.size, 0))


class HarmonicBalanceSolver:
    """Servicio de soluciones directas, continuación y reconstrucción."""

    SERVICE_NAME = "HarmonicBalanceSolver"

    def __init__(self, newton: Optional[DampedNewtonSolver] = None):
        """Inicializa el servicio con su Newton y una caché de operadores."""
        self.newton = newton or DampedNewtonSolver()
        self.logger = get_logger(__name__)
        self._operators: Dict[Tuple, MdftOperator] = {}
        self._lock = threading.Lock()

    # ------------------------------------------------------------------
    # Construcción
    # ------------------------------------------------------------------

    def operator_for(self, index_set: HarmonicIndexSet, grid: SamplingGrid, theta: float,
                     Omega: float = SolverConstants.DRIVE_OMEGA) -> MdftOperator:
        """Operador MDFT cacheado (S y P no dependen de omega)."""
        key = (index_set.entries, grid, float(theta), float(Omega))
        with self._lock:
            cached = self._operators.get(key)
        if cached is not None:
            return cached
        operator = build_operator(index_set, grid, FrequencyPair(1.0, Omega), theta)
        with self._lock:
            self._operators.setdefault(key, operator)
        return operator

    def equations_for(self, problem: ForwardProblem) -> BalanceEquations:
        operator = self.operator_for(problem.index_set, problem.grid, problem.theta, problem.Omega)
        return BalanceEquations(operator, problem.a01)

    def initial_unknowns(self, problem: ForwardProblem) -> np.ndarray:
        """Vector [A libres, omega] a partir de las semillas del problema o del modelo."""
        equations = self.equations_for(problem)
        seed_omega, seed_amplitudes = problem.model.initial_guess(problem.index_set, problem.a01)

        if problem.coeff_guess is not None:
            table = CoefficientTable.from_mapping(
                problem.index_set, problem.coeff_guess.as_dict(), problem.theta
            )
        else:
            table = CoefficientTable.from_mapping(problem.index_set, seed_amplitudes, problem.theta)

        omega = problem.omega_guess if problem.omega_guess is not None else seed_omega
        return np.append(equations.free_from(table), omega)

    # ------------------------------------------------------------------
    # Residuo y Jacobiano
    # ------------------------------------------------------------------

    def assemble_residual(self, problem: ForwardProblem, unknowns: np.ndarray) -> np.ndarray:
        """Residuo de longitud |conjunto| para [A libres, omega]."""
        equations = self.equations_for(problem)
        unknowns = np.asarray(unknowns, dtype=float)
        return equations.residual(problem.model, unknowns[:-1], unknowns[-1])

    def jacobian(self, problem: ForwardProblem, unknowns: np.ndarray) -> np.ndarray:
        """Jacobiano analítico cuadrado [dR/dA libres | dR/domega]."""
        equations = self.equations_for(problem)
        unknowns = np.asarray(unknowns, dtype=float)
        _, jac_free, d_omega = equations.linearization(problem.model, unknowns[:-1], unknowns[-1])
        return np.column_stack([jac_free, d_omega])

    # ------------------------------------------------------------------
    # Resolución
    # ------------------------------------------------------------------

    def _to_solution(self, problem: ForwardProblem, equations: BalanceEquations,
                     result: NewtonResult) -> HbSolution:
        amplitudes = equations.coefficients(result.x[:-1])
        return HbSolution(
            coeffs=CoefficientTable(problem.index_set, amplitudes, problem.theta),
            omega=float(result.x[-1]),
            residual_norm=result.residual_norm,
            iterations=result.iterations,
            converged=result.converged,
            Omega=problem.Omega,
            residual_trace=tuple(result.residual_trace),
        )

    def _positive_branch(self, problem: ForwardProblem, solution: HbSolution) -> HbSolution:
        """
        Lleva una solución con omega < 0 a la rama espejo con omega > 0.

        Con sin(theta) = 0 los términos cos(k omega xi + m Omega xi + theta)
        son pares, así que (A_mk, -omega) y (A_-m,k, omega) describen el mismo
        movimiento. Si el espejo no existe (theta genérica, omega = 0 o
        columnas ausentes) la solución queda marcada sin convergencia.
        """
        index_set = problem.index_set
        mirrored_set = all((-m, k) in index_set for m, k in index_set if k > 0)
        if solution.omega == 0.0 or not mirrored_set or abs(math.sin(problem.theta)) > 1e-15:
            self.logger.warning(f"⚠️ HB convergió a omega={solution.omega:.6g} sin rama espejo positiva")
            return replace(solution, converged=False)

        mirrored = {
            (m, k): (solution.coeffs[(-m, k)] if k > 0 else value)
            for (m, k), value in solution.coeffs.as_dict().items()
        }
        self.logger.debug(f"🔁 Rama espejo: omega {solution.omega:.12f} -> {-solution.omega:.12f}")
        return replace(
            solution,
            coeffs=CoefficientTable.from_mapping(index_set, mirrored, problem.theta),
            omega=-solution.omega,
        )

    def solve_forward(self, problem: ForwardProblem) -> HbSolution:
        """
        Newton amortiguado sobre [A libres, omega].

        Raises:
            NotConverged: con el mejor iterado como HbSolution en `best_iterate`
        """
        equations = self.equations_for(problem)
        model = problem.model

        def residual_fn(x: np.ndarray) -> np.ndarray:
            return equations.residual(model, x[:-1], x[-1])

        def jacobian_fn(x: np.ndarray) -> np.ndarray:
            _, jac_free, d_omega = equations.linearization(model, x[:-1], x[-1])
            return np.column_stack([jac_free, d_omega])

        try:
            result = self.newton.solve(
                residual_fn, jacobian_fn, self.initial_unknowns(problem), label=f"hb[{model.name}]"
            )
        except NonFinite as e:
            log_service_error(self.SERVICE_NAME, e, {"model": repr(model), "a01": problem.a01})
            raise

        solution = self._to_solution(problem, equations, result)
        if solution.omega <= 0.0:
            solution = self._positive_branch(problem, solution)
        if not solution.converged:
            raise NotConverged(
                f"Balance armónico sin convergencia: |R|={solution.residual_norm:.3e} "
                f"tras {solution.iterations} iteraciones",
                best_iterate=solution,
                residual_norm=solution.residual_norm,
                residual_trace=solution.residual_trace,
            )

        self.logger.debug(
            f"✅ HB {model.name}: omega={solution.omega:.12f}, |R|={solution.residual_norm:.2e}, "
            f"{solution.iterations} iteraciones"
        )
        return solution

    def solve_fixed_omega(self, problem: ForwardProblem, omega: float) -> HbSolution:
        """
        Re-resuelve las amplitudes libres con omega fija (Gauss-Newton sobre
        |conjunto| ecuaciones y |conjunto| - 1 incógnitas).

        Raises:
            NotConverged: el residuo no baja de la tolerancia con esa omega
        """
        equations = self.equations_for(problem)
        model = problem.model

        def residual_fn(x: np.ndarray) -> np.ndarray:
            return equations.residual(model, x, omega)

        def jacobian_fn(x: np.ndarray) -> np.ndarray:
            return equations.linearization(model, x, omega)[1]

        x0 = self.initial_unknowns(problem.with_updates(omega_guess=omega))[:-1]
        result = self.newton.solve(residual_fn, jacobian_fn, x0, label=f"hb[{model.name}, omega fija]")
        solution = HbSolution(
            coeffs=CoefficientTable(problem.index_set, equations.coefficients(result.x), problem.theta),
            omega=float(omega),
            residual_norm=result.residual_norm,
            iterations=result.iterations,
            converged=result.converged,
            Omega=problem.Omega,
            residual_trace=tuple(result.residual_trace),
        )
        if not solution.converged:
            raise NotConverged(
                f"Balance armónico con omega={omega:.12f} fija sin convergencia: |R|={solution.residual_norm:.3e}",
                best_iterate=solution,
                residual_norm=solution.residual_norm,
                residual_trace=solution.residual_trace,
            )
        return solution

    def solve_ofs(self, problem: ForwardProblem) -> HbSolution:
        """Solución de Floquet ordinaria: mismo problema con K = 1."""
        ofs_set = problem.index_set.truncated(1)
        guess = problem.coeff_guess.restricted_to(ofs_set) if problem.coeff_guess is not None else None
        return self.solve_forward(problem.with_updates(index_set=ofs_set, coeff_guess=guess))

    def continue_in_parameter(
            self,
            problem: ForwardProblem,
            param_name: str,
            values: Sequence[float]
    ) -> List[HbSolution]:
        """
        Barrido secuencial con arranque en caliente desde el punto anterior.

        Los puntos sin convergencia se registran (converged=False) y el
        barrido continúa desde la última solución convergida.
        """
        values = list(values)
        steps = np.diff(values)
        if len(values) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ConfigError(f"Valores de continuación no monótonos para {param_name}")

        solutions: List[HbSolution] = []
        current = problem
        failures = 0

        for value in values:
            point = current.with_updates(model=current.model.with_param(param_name, value))
            try:
                solution = self.solve_forward(point)
                current = point.with_updates(coeff_guess=solution.coeffs, omega_guess=solution.omega)
            except NotConverged as e:
                failures += 1
                log_service_error(self.SERVICE_NAME, e, {param_name: value})
                solution = e.best_iterate
                # Conserva el arranque de la última solución convergida
                current = current.with_updates(model=point.model)
            solutions.append(solution)

        self.logger.info(
            f"📈 Continuación en {param_name}: {len(values) - failures}/{len(values)} puntos convergidos"
        )
        return solutions

    def reconstruct_trajectory(self, solution: HbSolution, xi_samples: Sequence[float]) -> np.ndarray:
        """u(xi) sobre la restricción de tiempo real xi = zeta."""
        return evaluate_real_time(solution.coeffs, solution.freqs, np.asarray(xi_samples, dtype=float))


def same_branch(first: HbSolution, second: HbSolution,
                coeff_tolerance: float = 1e-8, omega_tolerance: float = 1e-10) -> bool:
    """Indica si dos soluciones del mismo problema pertenecen a la misma rama."""
    if first.coeffs.index_set != second.coeffs.index_set:
        return False
    delta = np.max(np.abs(first.coeffs.amplitudes - second.coeffs.amplitudes))
    return bool(delta <= coeff_tolerance and abs(first.omega - second.omega) <= omega_tolerance)


# Instancia global perezosa del solver
_solver: Optional[HarmonicBalanceSolver] = None


def get_solver() -> HarmonicBalanceSolver:
    """Retorna la instancia global del solver directo."""
    global _solver
    if _solver is None:
        _solver = HarmonicBalanceSolver()
    return _solver


# Funciones de conveniencia
def assemble_residual(problem: ForwardProblem, unknowns: np.ndarray) -> np.ndarray:
    return get_solver().assemble_residual(problem, unknowns)


def jacobian(problem: ForwardProblem, unknowns: np.ndarray) -> np.ndarray:
    return get_solver().jacobian(problem, unknowns)


def solve_forward(problem: ForwardProblem) -> HbSolution:
    return get_solver().solve_forward(problem)


def continue_in_parameter(problem: ForwardProblem, param_name: str, values: Sequence[float]) -> List[HbSolution]:
    return get_solver().continue_in_parameter(problem, param_name, values)


def reconstruct_trajectory(solution: HbSolution, xi_samples: Sequence[float]) -> np.ndarray:
    return get_solver().reconstruct_trajectory(solution, xi_samples)
