"""
Manejo centralizado de errores para FloquetEngineer.
Define la jerarquía de excepciones del dominio, su severidad, el código
de salida asociado y los registros de falla que terminan en el manifiesto.
"""

import threading
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Dict, Any, List, Optional, Sequence, Tuple

from config.solver_config import get_logger, SolverConstants


class ErrorSeverity(Enum):
    """Niveles de severidad de errores."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


# ---------------------------------------------------------------------------
# Jerarquía de excepciones
# ---------------------------------------------------------------------------

class FloquetError(Exception):
    """Error base del proyecto."""

    severity = ErrorSeverity.HIGH
    exit_code = SolverConstants.EXIT_NOT_CONVERGED

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context = context or {}


class ConfigError(FloquetError):
    """Configuración de corrida inválida."""
    severity = ErrorSeverity.MEDIUM
    exit_code = SolverConstants.EXIT_CONFIG


class ArtifactIOError(FloquetError):
    """Fallo de lectura o escritura de artefactos."""
    severity = ErrorSeverity.CRITICAL
    exit_code = SolverConstants.EXIT_IO


class SolverError(FloquetError):
    """Error numérico de cualquiera de los servicios de cálculo."""


class RankDeficient(SolverError):
    """El operador MDFT no tiene rango columna completo."""

    def __init__(self, message: str, collisions: Sequence[Tuple[Any, Any]] = ()):
        super().__init__(message, {"collisions": [list(map(str, pair)) for pair in collisions]})
        self.collisions = list(collisions)


class SamplingGuardrailError(SolverError):
    """Grilla por debajo del límite de Nyquist sin override explícito."""
    severity = ErrorSeverity.MEDIUM
    exit_code = SolverConstants.EXIT_CONFIG


class NotConverged(SolverError):
    """Newton agotó iteraciones; conserva el mejor iterado."""

    def __init__(
            self,
            message: str,
            best_iterate: Any = None,
            residual_norm: float = float("nan"),
            residual_trace: Sequence[float] = (),
            block_residuals: Optional[Sequence[float]] = None
    ):
        super().__init__(message, {
            "residual_norm": residual_norm,
            "iterations": len(residual_trace),
            "block_residuals": list(block_residuals) if block_residuals is not None else None,
        })
        self.best_iterate = best_iterate
        self.residual_norm = residual_norm
        self.residual_trace = list(residual_trace)
        self.block_residuals = list(block_residuals) if block_residuals is not None else None


class NonFinite(SolverError):
    """El modelo devolvió aceleraciones no finitas."""


class CountMismatch(SolverError):
    """Sistema apilado no cuadrado."""
    severity = ErrorSeverity.MEDIUM
    exit_code = SolverConstants.EXIT_CONFIG


class UnsupportedOrder(SolverError):
    """Orden de anarmonicidad fuera del mapa implementado."""
    severity = ErrorSeverity.MEDIUM
    exit_code = SolverConstants.EXIT_CONFIG


class NonCanonical(SolverError):
    """La fuerza efectiva no conserva la forma [v, F(u)]."""
    severity = ErrorSeverity.CRITICAL


class NoRoot(SolverError):
    """Sin cambio de signo en el intervalo explorado."""


class StepSizeUnderflow(SolverError):
    """El integrador redujo el paso por debajo de la resolución."""


class ZeroReference(SolverError):
    """Desviación normalizada con u(0) = 0."""
    severity = ErrorSeverity.MEDIUM


class Unstable(SolverError):
    """Punto (q, a) fuera de la región estable."""
    severity = ErrorSeverity.MEDIUM


class NonMonotonic(SolverError):
    """Potencial no creciente en el intervalo de cuadratura."""
    severity = ErrorSeverity.MEDIUM


# ---------------------------------------------------------------------------
# Registro de errores
# ---------------------------------------------------------------------------

@dataclass
class ErrorInfo:
    """Información estructurada de un error."""
    timestamp: datetime
    severity: ErrorSeverity
    error_type: str
    message: str
    service: str = ""
    context: Dict[str, Any] = field(default_factory=dict)
    traceback: Optional[str] = None

    def to_record(self) -> Dict[str, Any]:
        """Serializa el error para el manifiesto (sin traceback)."""
        return {
            "service": self.service,
            "error_type": self.error_type,
            "severity": self.severity.value,
            "message": self.message,
            "context": {key: _jsonable(value) for key, value in self.context.items()},
        }


def _jsonable(value: Any) -> Any:
    """Reduce valores de contexto a tipos serializables."""
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


class ErrorHandler:
    """Manejador centralizado de errores."""

    def __init__(self):
        """Inicializa el manejador de errores."""
        self.logger = get_logger(__name__)
        self._lock = threading.Lock()
        self._records: List[ErrorInfo] = []
        self._error_count = 0
        self._last_error_time: Optional[datetime] = None

    def _determine_severity(self, error: Exception) -> ErrorSeverity:
        """Determina la severidad del error basada en su tipo."""
        if isinstance(error, FloquetError):
            return error.severity

        critical_errors = (MemoryError, SystemError, PermissionError)
        high_errors = (ValueError, TypeError, AttributeError, KeyError, ArithmeticError)
        low_errors = (FileNotFoundError,)

        if isinstance(error, critical_errors):
            return ErrorSeverity.CRITICAL
        elif isinstance(error, high_errors):
            return ErrorSeverity.HIGH
        elif isinstance(error, low_errors):
            return ErrorSeverity.LOW
        else:
            return ErrorSeverity.MEDIUM

    def _log_error(self, error_info: ErrorInfo) -> None:
        """Registra el error en los logs con formato estructurado."""
        log_message = self._format_log_message(error_info)

        if error_info.severity == ErrorSeverity.CRITICAL:
            self.logger.critical(log_message)
        elif error_info.severity == ErrorSeverity.HIGH:
            self.logger.error(log_message)
        elif error_info.severity == ErrorSeverity.MEDIUM:
            self.logger.warning(log_message)
        else:
            self.logger.info(log_message)

        if error_info.traceback:
            self.logger.debug(error_info.traceback)

    def _format_log_message(self, error_info: ErrorInfo) -> str:
        """Formatea mensaje de log estructurado."""
        base_message = (
            f"[{error_info.severity.value.upper()}] "
            f"{error_info.error_type}: {error_info.message}"
        )

        if error_info.service:
            base_message += f" | Servicio: {error_info.service}"

        if error_info.context:
            summary = ", ".join(f"{k}={v}" for k, v in list(error_info.context.items())[:4])
            base_message += f" | {summary}"

        return base_message

    def handle_service_error(
            self,
            service_name: str,
            error: Exception,
            context: Optional[Dict[str, Any]] = None
    ) -> ErrorInfo:
        """Registra y loguea un error producido por un servicio."""
        merged_context = dict(getattr(error, "context", {}) or {})
        merged_context.update(context or {})

        error_info = ErrorInfo(
            timestamp=datetime.now(),
            severity=self._determine_severity(error),
            error_type=type(error).__name__,
            message=str(error),
            service=service_name,
            context=merged_context,
            traceback="".join(traceback.format_exception(None, error, error.__traceback__))
        )

        with self._lock:
            self._records.append(error_info)
            self._error_count += 1
            self._last_error_time = error_info.timestamp

        self._log_error(error_info)
        return error_info

    def failure_records(self) -> List[Dict[str, Any]]:
        """Retorna los registros de falla acumulados para el manifiesto."""
        with self._lock:
            return [info.to_record() for info in self._records]

    def reset(self) -> None:
        """Limpia los registros al comenzar una corrida nueva."""
        with self._lock:
            self._records.clear()
            self._error_count = 0
            self._last_error_time = None

    def get_error_statistics(self) -> Dict[str, Any]:
        """Retorna estadísticas básicas de errores."""
        with self._lock:
            by_severity: Dict[str, int] = {}
            for info in self._records:
                by_severity[info.severity.value] = by_severity.get(info.severity.value, 0) + 1
            return {
                'error_count': self._error_count,
                'last_error_time': self._last_error_time.isoformat() if self._last_error_time else None,
                'by_severity': by_severity
            }


def exit_code_for(error: BaseException) -> int:
    """Código de salida del proceso para una excepción."""
    if isinstance(error, FloquetError):
        return error.exit_code
    if isinstance(error, OSError):
        return SolverConstants.EXIT_IO
    return SolverConstants.EXIT_NOT_CONVERGED


# Instancia global del manejador de errores
error_handler = ErrorHandler()


def log_service_error(
        service_name: str,
        error: Exception,
        context: Optional[Dict[str, Any]] = None
) -> None:
    """Función de conveniencia para errores de servicios."""
    error_handler.handle_service_error(service_name, error, context)
