"""
Oráculos independientes de verdad de referencia.

Integración Runge-Kutta de orden 8 (DOP853 de scipy) con salida densa,
métricas de desviación de trayectorias, exponente característico por
monodromía y periodo exacto por cuadratura para potenciales conservativos.
"""

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize

from config.solver_config import get_config, get_logger, SolverConstants
from data.drive_models import DriveModel, DuffingModel, MathieuModel, TargetPotential
from utils.error_handler import (
    NonFinite,
    NonMonotonic,
    StepSizeUnderflow,
    Unstable,
    ZeroReference,
    log_service_error,
)

logger = get_logger(__name__)

SERVICE_NAME = "Oracles"

# Tolerancias que fuerzan la aceptación de todo paso en modo de paso fijo
_FIXED_STEP_TOLERANCE = 1e6

TrajectoryFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntegratorConfig:
    """Configuración del integrador adaptativo."""
    rel_tol: float
    abs_tol: float
    max_step: float = math.inf
    method: str = "DOP853"

    def __post_init__(self):
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError(f"Tolerancias deben ser positivas: {self.rel_tol}, {self.abs_tol}")
        if not self.max_step > 0.0:
            raise ValueError(f"max_step debe ser positivo: {self.max_step}")

    @classmethod
    def default(cls) -> 'IntegratorConfig':
        config = get_config()
        return cls(rel_tol=config.rk_rel_tol, abs_tol=config.rk_abs_tol)


@dataclass(frozen=True, eq=False)
class DenseTrajectory:
    """Trayectoria integrada consultable en cualquier xi del intervalo."""
    interpolant: sp_integrate.OdeSolution
    xi_span: Tuple[float, float]
    n_steps: int
    n_evaluations: int

    def __call__(self, xi) -> np.ndarray:
        return self.interpolant(np.asarray(xi, dtype=float))[0]

    def velocity(self, xi) -> np.ndarray:
        return self.interpolant(np.asarray(xi, dtype=float))[1]

    def diagnostics(self, label: str) -> Dict[str, Any]:
        """Registro del integrador para el manifiesto."""
        return {
            "label": label,
            "solver": "rk8",
            "converged": True,
            "xi_span": list(self.xi_span),
            "n_steps": self.n_steps,
            "n_evaluations": self.n_evaluations,
        }


@dataclass(frozen=True)
class DeviationReport:
    """Desviación normalizada |du(xi)/u(0)| sobre (0, xi_max]."""
    samples: Tuple[Tuple[float, float], ...]
    max_dev: float
    window: Tuple[float, float]

    @property
    def xi(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])


def _rhs(model: DriveModel, Omega: float):
    def rhs(xi: float, state: np.ndarray) -> np.ndarray:
        acceleration = model.accel(state[0], Omega * xi)
        if not np.isfinite(acceleration):
            raise NonFinite(f"Aceleración no finita en xi={xi:.6g}", {"u": float(state[0])})
        return np.array([state[1], float(acceleration)])
    return rhs


def integrate(
        model: DriveModel,
        u0: float,
        v0: float,
        xi_span: Tuple[float, float],
        config: Optional[IntegratorConfig] = None,
        Omega: float = SolverConstants.DRIVE_OMEGA
) -> DenseTrajectory:
    """
    Integra u'' = F(u, Omega xi) con DOP853 adaptativo y salida densa.

    Raises:
        StepSizeUnderflow: el integrador no pudo avanzar
        NonFinite: el modelo devolvió aceleraciones no finitas
    """
    if not (math.isfinite(u0) and math.isfinite(v0)):
        raise NonFinite(f"Estado inicial no finito: ({u0}, {v0})")
    config = config or IntegratorConfig.default()

    try:
        result = sp_integrate.solve_ivp(
            _rhs(model, Omega),
            xi_span,
            [u0, v0],
            method=config.method,
            rtol=config.rel_tol,
            atol=config.abs_tol,
            max_step=config.max_step,
            dense_output=True,
        )
    except NonFinite as e:
        log_service_error(SERVICE_NAME, e, {"model": repr(model)})
        raise

    if result.status == -1:
        error = StepSizeUnderflow(f"Integración fallida: {result.message}", {"model": repr(model)})
        log_service_error(SERVICE_NAME, error)
        raise error

    logger.debug(f"RK8 {model.name}: {len(result.t) - 1} pasos, {result.nfev} evaluaciones")
    return DenseTrajectory(result.sol, (float(xi_span[0]), float(xi_span[1])), len(result.t) - 1, result.nfev)


def fixed_step_integrate(
        model: DriveModel,
        u0: float,
        v0: float,
        xi_end: float,
        n_steps: int,
        Omega: float = SolverConstants.DRIVE_OMEGA
) -> np.ndarray:
    """Estado final con el mismo esquema DOP853 a paso fijo xi_end/n_steps."""
    step = xi_end / n_steps
    result = sp_integrate.solve_ivp(
        _rhs(model, Omega),
        (0.0, xi_end),
        [u0, v0],
        method="DOP853",
        first_step=step,
        max_step=step,
        rtol=_FIXED_STEP_TOLERANCE,
        atol=_FIXED_STEP_TOLERANCE,
    )
    return result.y[:, -1]


def observed_order(n_steps: int = 12) -> float:
    """Orden observado por duplicación de pasos sobre u'' = -u en [0, 2 pi]."""
    oscillator = DuffingModel(linear=1.0)
    errors = []
    for n in (n_steps, 2 * n_steps):
        final = fixed_step_integrate(oscillator, 1.0, 0.0, 2.0 * math.pi, n)
        errors.append(abs(final[0] - 1.0))
    return math.log2(errors[0] / errors[1])


def initial_state_from_solution(solution) -> Tuple[float, float]:
    """
    Estado inicial (u0, v0) consistente con la función de prueba en xi = 0.

    Args:
        solution: HbSolution convergida
    """
    coeffs = solution.coeffs
    nu = coeffs.index_set.k_values * solution.omega + coeffs.index_set.m_values * solution.Omega
    u0 = float(np.sum(coeffs.amplitudes) * math.cos(coeffs.theta))
    v0 = float(-np.sum(coeffs.amplitudes * nu) * math.sin(coeffs.theta))
    return u0, v0 + 0.0


def deviation(
        traj_ref: TrajectoryFn,
        traj_test: TrajectoryFn,
        xi_max: Optional[float] = None,
        n_samples: Optional[int] = None
) -> DeviationReport:
    """
    Desviación normalizada en una grilla uniforme sobre (0, xi_max].

    Raises:
        ZeroReference: u_ref(0) = 0
    """
    config = get_config()
    xi_max = xi_max if xi_max is not None else config.xi_max
    n_samples = n_samples if n_samples is not None else config.deviation_samples

    reference_start = float(np.atleast_1d(traj_ref(np.array([0.0])))[0])
    if reference_start == 0.0:
        raise ZeroReference("La trayectoria de referencia parte de u(0) = 0")

    xi = np.linspace(xi_max / n_samples, xi_max, n_samples)
    values = np.abs(np.asarray(traj_test(xi)) - np.asarray(traj_ref(xi))) / abs(reference_start)
    return DeviationReport(
        samples=tuple(zip(xi.tolist(), values.tolist())),
        max_dev=float(np.max(values)),
        window=(0.0, float(xi_max)),
    )


def monodromy_matrix(q: float, a: float, Omega: float = SolverConstants.DRIVE_OMEGA) -> np.ndarray:
    """Matriz de monodromía de Mathieu lineal sobre un periodo de forzamiento."""
    model = MathieuModel(q=q, a=a)
    period = 2.0 * math.pi / Omega
    columns = []
    for u0, v0 in ((1.0, 0.0), (0.0, 1.0)):
        trajectory = integrate(model, u0, v0, (0.0, period), Omega=Omega)
        columns.append([float(trajectory(period)), float(trajectory.velocity(period))])
    return np.array(columns).T


def characteristic_exponent(q: float, a: float, Omega: float = SolverConstants.DRIVE_OMEGA) -> float:
    """
    beta = arccos(traza/2) / pi para Mathieu lineal.

    Raises:
        Unstable: |traza|/2 > 1
    """
    half_trace = 0.5 * float(np.trace(monodromy_matrix(q, a, Omega)))
    if abs(half_trace) > 1.0:
        raise Unstable(f"(q={q}, a={a}) fuera de la región estable: traza/2 = {half_trace:.12g}")
    return math.acos(half_trace) / math.pi


def _well_excess(potential: TargetPotential, amplitude: float) -> Callable[[np.ndarray], np.ndarray]:
    """x(u) tal que V(A) - V(u) = 1/2 w0^2 (A^2 - u^2)(1 + x(u))."""
    coefficients = potential.c_coeffs

    def excess(u: np.ndarray) -> np.ndarray:
        total = np.zeros_like(u)
        for k, c_k in coefficients.items():
            total = total + c_k * sum(amplitude ** (k - 2 - 2 * j) * u ** (2 * j) for j in range(k // 2))
        return total
    return excess


def _check_monotonic(potential: TargetPotential, amplitude: float) -> None:
    u = np.linspace(0.0, amplitude, 2001)[1:]
    slope = u + sum(0.5 * k * c_k * u ** (k - 1) for k, c_k in potential.c_coeffs.items())
    if np.any(slope <= 0.0):
        raise NonMonotonic(
            f"Potencial no creciente en (0, {amplitude}]",
            {"c_coeffs": potential.c_coeffs}
        )


def relative_shift_quadrature(potential: TargetPotential, amplitude: float) -> float:
    """
    w_exacto(A)/w0 - 1 sin cancelación catastrófica.

    Con u = A sin(phi):  w/w0 = (pi/2) / I,  I = int_0^{pi/2} (1 + x)^(-1/2) dphi,
    y el desplazamiento se integra directamente como x / (sqrt(1+x) (1 + sqrt(1+x))).
    """
    if potential.c_coeffs is None:
        raise ValueError("La cuadratura requiere un potencial expresado en C_k")
    if amplitude <= 0.0:
        raise ValueError(f"Amplitud debe ser positiva: {amplitude}")
    _check_monotonic(potential, amplitude)
    excess = _well_excess(potential, amplitude)

    def reciprocal(phi: float) -> float:
        return 1.0 / math.sqrt(1.0 + float(excess(np.array([amplitude * math.sin(phi)]))[0]))

    def deficit(phi: float) -> float:
        x = float(excess(np.array([amplitude * math.sin(phi)]))[0])
        root = math.sqrt(1.0 + x)
        return x / (root * (1.0 + root))

    integral, _ = sp_integrate.quad(reciprocal, 0.0, 0.5 * math.pi, epsabs=1e-14, epsrel=1e-13, limit=200)
    shortfall, _ = sp_integrate.quad(deficit, 0.0, 0.5 * math.pi, epsabs=0.0, epsrel=1e-12, limit=200)
    return shortfall / integral


def period_quadrature(potential: TargetPotential, omega0: float, amplitude: float) -> float:
    """Frecuencia exacta w(A) = 2 pi / T(A) del pozo 1/2 w0^2 (u^2 + sum C_k u^k)."""
    return omega0 * (1.0 + relative_shift_quadrature(potential, amplitude))


def zero_crossing_period(trajectory: DenseTrajectory, xi_max: Optional[float] = None,
                         resolution: int = 20000) -> float:
    """Periodo medido entre cruces por cero de la trayectoria integrada."""
    xi_max = xi_max if xi_max is not None else trajectory.xi_span[1]
    grid = np.linspace(trajectory.xi_span[0], xi_max, resolution)
    values = trajectory(grid)
    crossings = []
    for i in np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0):
        crossings.append(optimize.brentq(lambda x: float(trajectory(x)), grid[i], grid[i + 1], xtol=1e-15))
    if len(crossings) < 3:
        raise ValueError(f"Cruces por cero insuficientes en [0, {xi_max}]: {len(crossings)}")
    # Dos cruces por periodo
    return 2.0 * (crossings[-1] - crossings[0]) / (len(crossings) - 1)


def energy_drift(model: DriveModel, trajectory: DenseTrajectory, xi_samples: Sequence[float]) -> float:
    """Máxima variación relativa de la energía en modelos sin forzamiento."""
    if not model.drive_free:
        raise ValueError(f"El modelo {model.name} no conserva energía")
    xi = np.asarray(xi_samples, dtype=float)
    energy = 0.5 * trajectory.velocity(xi) ** 2 + model.potential_energy(trajectory(xi))
    start = 0.5 * float(trajectory.velocity(trajectory.xi_span[0])) ** 2 + float(
        model.potential_energy(trajectory(trajectory.xi_span[0]))
    )
    return float(np.max(np.abs(energy - start)) / abs(start))
