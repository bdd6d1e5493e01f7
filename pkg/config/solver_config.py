"""
Configuración centralizada para FloquetEngineer.
Maneja tolerancias numéricas, rutas de salida, constantes y logging.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class SolverConfig:
    """Configuración inmutable del proceso."""

    # Salida de artefactos
    output_dir: str
    log_level: str

    # Paralelismo de barridos
    max_workers: int

    # Newton amortiguado
    newton_tolerance: float
    max_iterations: int
    max_halvings: int
    polish_iterations: int

    # Oráculo Runge-Kutta
    rk_rel_tol: float
    rk_abs_tol: float

    # Métrica de desviación
    xi_max: float
    deviation_samples: int


class ConfigManager:
    """Gestor de configuración del solver."""

    _instance: Optional['ConfigManager'] = None
    _config: Optional[SolverConfig] = None

    def __new__(cls) -> 'ConfigManager':
        """Implementa patrón Singleton para configuración global."""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self) -> None:
        """Inicializa el gestor si no está configurado."""
        if self._config is None:
            self._config = self._load_config()
            self._setup_logging()

    def _load_config(self) -> SolverConfig:
        """Carga configuración desde variables de entorno."""
        return SolverConfig(
            output_dir=self._get_env("FLOQUET_OUTPUT_DIR", SolverConstants.DEFAULT_OUTPUT_DIR),
            log_level=self._get_env("FLOQUET_LOG_LEVEL", "INFO").upper(),
            max_workers=self._get_positive_int("FLOQUET_MAX_WORKERS", "4"),
            newton_tolerance=self._get_positive_float("FLOQUET_NEWTON_TOL", "1e-10"),
            max_iterations=self._get_positive_int("FLOQUET_MAX_ITERATIONS", "100"),
            max_halvings=self._get_positive_int("FLOQUET_MAX_HALVINGS", "20"),
            polish_iterations=self._get_non_negative_int("FLOQUET_POLISH_ITERATIONS", "2"),
            rk_rel_tol=self._get_positive_float("FLOQUET_RK_RTOL", "1e-12"),
            rk_abs_tol=self._get_positive_float("FLOQUET_RK_ATOL", "1e-14"),
            xi_max=self._get_positive_float("FLOQUET_XI_MAX", "200"),
            deviation_samples=self._get_positive_int("FLOQUET_DEVIATION_SAMPLES", "4000"),
        )

    def _get_env(self, key: str, default: str) -> str:
        """Obtiene variable de entorno con valor por defecto."""
        return os.getenv(key, default)

    def _get_int(self, key: str, default: str, minimum: int) -> int:
        # Import diferido: utils.error_handler depende de este módulo
        from utils.error_handler import ConfigError

        raw = self._get_env(key, default)
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"Variable de entorno {key} no es un entero: {raw!r}", {"variable": key})
        if value < minimum:
            raise ConfigError(f"Variable de entorno {key} debe ser >= {minimum}: {value}", {"variable": key})
        return value

    def _get_positive_int(self, key: str, default: str) -> int:
        """Obtiene un entero positivo del entorno."""
        return self._get_int(key, default, 1)

    def _get_non_negative_int(self, key: str, default: str) -> int:
        return self._get_int(key, default, 0)

    def _get_positive_float(self, key: str, default: str) -> float:
        """Obtiene un real positivo y finito del entorno."""
        from utils.error_handler import ConfigError

        raw = self._get_env(key, default)
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"Variable de entorno {key} no es numérica: {raw!r}", {"variable": key})
        if not (value > 0.0 and math.isfinite(value)):
            raise ConfigError(f"Variable de entorno {key} debe ser positiva y finita: {value}", {"variable": key})
        return value

    def _setup_logging(self) -> None:
        logger = logging.getLogger(SolverConstants.LOGGER_NAME)
        logger.setLevel(getattr(logging, self._config.log_level, logging.INFO))

        if not logger.handlers:
            stream_handler = logging.StreamHandler()
            stream_handler.setFormatter(logging.Formatter(
                "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
            ))
            logger.addHandler(stream_handler)

    @property
    def config(self) -> SolverConfig:
        """Retorna la configuración actual."""
        return self._config

    @staticmethod
    def logger_for(name: str) -> logging.Logger:
        """Retorna un logger colgado del árbol del proyecto."""
        if name == SolverConstants.LOGGER_NAME or name.startswith(SolverConstants.LOGGER_NAME + "."):
            return logging.getLogger(name)
        return logging.getLogger(f"{SolverConstants.LOGGER_NAME}.{name}")


# Constantes del solver
class SolverConstants:
    """Constantes inmutables del proyecto."""

    VERSION = "1.0.0"
    LOGGER_NAME = "floquet_engineer"
    DEFAULT_OUTPUT_DIR = "results"

    # Tiempo normalizado xi = Omega t / 2
    DRIVE_OMEGA = 2.0

    # Escalera de amplitudes de colocación por defecto
    DEFAULT_BLOCKS = (1e-5, 1e-4, 1e-3, 1e-2)

    # Mapa de primer orden C_k -> eps_{k-2}
    EPS_FACTORS = {4: 3.0 / 4.0, 6: 15.0 / 16.0, 8: 35.0 / 32.0}

    # Grilla de referencia 15x15
    REFERENCE_GRID_SIZE = 15

    # Dialecto CSV
    CSV_SIGNIFICANT_DIGITS = 17

    # Comparación Floquet-Magnus frente a balance armónico
    MAGNUS_GAP_THRESHOLD = 0.10
    MAGNUS_DEGREE = 9
    LATTICE_MAX_MODE = 8

    # Códigos de salida
    EXIT_OK = 0
    EXIT_CONFIG = 2
    EXIT_NOT_CONVERGED = 3
    EXIT_IO = 4

    # Artefactos
    MANIFEST_FILE = "manifest.json"
    TRAJECTORY_FILE = "trajectory.csv"
    SOLUTION_FILE = "solution.csv"
    CONTROLS_FILE = "controls.csv"
    VERIFICATION_FILE = "verification.csv"
    SWEEP_FILE = "sweep.csv"
    COMPARE_FILE = "compare.csv"


# Instancia global perezosa: el entorno se lee en el primer get_config(),
# dentro del manejo de errores del launcher
config_manager: Optional[ConfigManager] = None


def get_config_manager() -> ConfigManager:
    """Retorna el gestor global, creándolo al primer uso."""
    global config_manager
    if config_manager is None:
        config_manager = ConfigManager()
    return config_manager


# Acceso directo a la configuración
def get_config() -> SolverConfig:
    """
    Retorna la configuración del solver.

    Raises:
        ConfigError: variable de entorno no numérica o fuera de rango
    """
    return get_config_manager().config


def reset_config() -> None:
    """Descarta la configuración cargada; la próxima lectura vuelve al entorno."""
    global config_manager
    ConfigManager._instance = None
    ConfigManager._config = None
    config_manager = None


def get_logger(name: str) -> logging.Logger:
    """Retorna un logger del árbol del proyecto (no lee el entorno)."""
    return ConfigManager.logger_for(name)
