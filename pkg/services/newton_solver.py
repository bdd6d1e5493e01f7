"""
Newton amortiguado compartido por los problemas directo e inverso.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy import linalg

from config.solver_config import get_config, get_logger
from utils.error_handler import NonFinite

ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class NewtonResult:
    """Resultado de una iteración de Newton (convergida o no)."""
    x: np.ndarray
    residual: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    residual_trace: List[float] = field(default_factory=list)


def max_norm(vector: np.ndarray) -> float:
    return float(np.max(np.abs(vector))) if vector.size else 0.0


class DampedNewtonSolver:
    """Newton con búsqueda lineal por bisección del paso y pulido final."""

    def __init__(
            self,
            tolerance: Optional[float] = None,
            max_iterations: Optional[int] = None,
            max_halvings: Optional[int] = None,
            polish_iterations: Optional[int] = None
    ):
        config = get_config()
        self.tolerance = tolerance if tolerance is not None else config.newton_tolerance
        self.max_iterations = max_iterations if max_iterations is not None else config.max_iterations
        self.max_halvings = max_halvings if max_halvings is not None else config.max_halvings
        self.polish_iterations = polish_iterations if polish_iterations is not None else config.polish_iterations
        self.logger = get_logger(__name__)

    def _newton_step(self, jacobian: np.ndarray, residual: np.ndarray) -> np.ndarray:
        if jacobian.shape[0] != jacobian.shape[1]:
            # Sistema sobredeterminado consistente: paso de Gauss-Newton
            return linalg.lstsq(jacobian, residual)[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            try:
                return linalg.solve(jacobian, residual)
            except linalg.LinAlgError:
                # Jacobiano singular: paso de mínima norma
                return linalg.lstsq(jacobian, residual)[0]

    def _trial(self, residual_fn: ResidualFn, x: np.ndarray):
        try:
            residual = residual_fn(x)
        except NonFinite:
            return None, np.inf
        if not np.all(np.isfinite(residual)):
            return None, np.inf
        return residual, max_norm(residual)

    def solve(
            self,
            residual_fn: ResidualFn,
            jacobian_fn: JacobianFn,
            x0: np.ndarray,
            label: str = "newton"
    ) -> NewtonResult:
        """
        Itera x <- x - t J^-1 R con t = 1, 1/2, 1/4, ... hasta reducir |R|_inf.

        Args:
            residual_fn: Residuo R(x)
            jacobian_fn: Jacobiano dR/dx
            x0: Punto inicial
            label: Etiqueta para logs

        Returns:
            NewtonResult con el mejor iterado
        """
        x = np.array(x0, dtype=float)
        residual = residual_fn(x)
        if not np.all(np.isfinite(residual)):
            raise NonFinite(f"{label}: residuo no finito en el punto inicial")
        norm = max_norm(residual)
        trace = [norm]
        iterations = 0

        while norm > self.tolerance and iterations < self.max_iterations:
            step = self._newton_step(jacobian_fn(x), residual)
            accepted = False
            scale = 1.0
            for _ in range(self.max_halvings + 1):
                candidate = x - scale * step
                trial_residual, trial_norm = self._trial(residual_fn, candidate)
                if trial_norm < norm:
                    x, residual, norm = candidate, trial_residual, trial_norm
                    accepted = True
                    break
                scale *= 0.5

            iterations += 1
            trace.append(norm)
            self.logger.debug(f"{label}: iteración {iterations}, |R|={norm:.3e}, paso={scale:g}")
            if not accepted:
                self.logger.debug(f"{label}: búsqueda lineal agotada en iteración {iterations}")
                break

        converged = norm <= self.tolerance

        if converged:
            # Pulido: pasos completos mientras sigan reduciendo el residuo
            for _ in range(self.polish_iterations):
                if norm == 0.0:
                    break
                candidate = x - self._newton_step(jacobian_fn(x), residual)
                trial_residual, trial_norm = self._trial(residual_fn, candidate)
                if not trial_norm < norm:
                    break
                x, residual, norm = candidate, trial_residual, trial_norm
                iterations += 1
                trace.append(norm)

        return NewtonResult(x, residual, norm, iterations, converged, trace)
