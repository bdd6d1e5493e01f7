"""
Orquestador principal de FloquetEngineer.
Conecta configuración, servicios, handlers y almacén de artefactos, y
garantiza que el manifiesto se escriba también cuando la corrida falla.
"""

import math
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from config.run_config import RunConfig
from config.solver_config import get_config, get_logger, SolverConstants
from data.artifact_store import ArtifactStore, RunManifest
from data.drive_models import DuffingModel
from data.harmonic_basis import (
    CoefficientTable,
    FrequencyPair,
    SamplingGrid,
    analyze,
    build_index_set,
    build_operator,
    synthesize,
)
from handlers.experiment_handlers import ExperimentContext, ExperimentHandlers, ExperimentOutcome
from services import oracles
from services.hb_solver import ForwardProblem, HarmonicBalanceSolver
from services.inverse_engine import InverseEngine, validate_eps_map
from utils.error_handler import ArtifactIOError, error_handler, exit_code_for, log_service_error


class FloquetEngineer:
    """Orquesta una corrida completa de un experimento."""

    SERVICE_NAME = "FloquetEngineer"

    def __init__(self, run_config: RunConfig, output_dir: Optional[Path] = None):
        """Inicializa el orquestador para una configuración ya validada."""
        self.config = get_config()
        self.logger = get_logger(__name__)
        self.run_config = run_config
        self.output_dir = Path(output_dir or run_config.output.directory or self.config.output_dir)

        self.store: Optional[ArtifactStore] = None
        self.hb_solver: Optional[HarmonicBalanceSolver] = None
        self.engine: Optional[InverseEngine] = None
        self.handlers: Optional[ExperimentHandlers] = None
        self.outcome: Optional[ExperimentOutcome] = None

        self._initialized = False

    def initialize_application(self) -> bool:
        """
        Prepara salida y servicios.

        Returns:
            True si la inicialización fue exitosa
        """
        try:
            self.logger.info(f"🚀 Inicializando FloquetEngineer ({self.run_config.experiment})...")

            # 1. Directorio de salida y almacén de artefactos
            if not self._initialize_output():
                return False

            # 2. Servicios de cálculo y handlers
            if not self._initialize_services():
                return False

            self._initialized = True
            self.logger.info("✅ FloquetEngineer inicializado correctamente")
            return True

        except Exception as e:
            log_service_error(self.SERVICE_NAME, e)
            self.logger.error(f"❌ Error inicializando FloquetEngineer: {e}")
            return False

    def _initialize_output(self) -> bool:
        """Crea el directorio de salida y el almacén."""
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self.store = ArtifactStore(self.output_dir, self.run_config.output.prefix)
            self.logger.info(f"📁 Salida en {self.output_dir}")
            return True
        except OSError as e:
            log_service_error(self.SERVICE_NAME, ArtifactIOError(str(e)), {"component": "output"})
            self.logger.error(f"❌ No se pudo preparar {self.output_dir}: {e}")
            return False

    def _initialize_services(self) -> bool:
        """Instancia servicios con una caché de operadores propia de la corrida."""
        try:
            self.logger.info("⚙️ Inicializando servicios...")
            self.hb_solver = HarmonicBalanceSolver()
            self.engine = InverseEngine(self.hb_solver)
            self.handlers = ExperimentHandlers(hb_solver=self.hb_solver, engine=self.engine)
            return True
        except Exception as e:
            log_service_error(self.SERVICE_NAME, e, {"component": "services"})
            self.logger.error(f"❌ Error inicializando servicios: {e}")
            return False

    def is_initialized(self) -> bool:
        return self._initialized

    def run(self) -> int:
        """
        Ejecuta el experimento configurado y escribe manifest.json.

        Returns:
            Código de salida (0 éxito, 2 configuración, 3 sin convergencia, 4 E/S)
        """
        if not self._initialized and not self.initialize_application():
            return SolverConstants.EXIT_IO

        error_handler.reset()
        experiment = self.run_config.experiment
        manifest = RunManifest(experiment=experiment, config=self.run_config.echo())
        context = ExperimentContext(config=self.run_config, store=self.store)
        exit_code = SolverConstants.EXIT_OK

        try:
            handler = self.handlers.handler_for(experiment)
            with context.timed("total"):
                self.outcome = handler(context)
            self.logger.info(
                f"✅ {experiment} terminado: {len(self.outcome.artifacts)} artefactos, "
                f"{self.outcome.n_solves} resoluciones"
            )
        except Exception as e:
            exit_code = exit_code_for(e)
            log_service_error(self.SERVICE_NAME, e, {"experiment": experiment})
            self.logger.error(f"❌ {experiment} falló (código {exit_code}): {e}")
        finally:
            manifest.solves = context.solves
            manifest.timings = context.timings
            manifest.notes = context.notes
            if self.outcome is not None:
                manifest.notes["outcome"] = self.outcome.status
            manifest.failures = error_handler.failure_records()
            manifest.finish(exit_code)
            try:
                self.store.write_manifest(manifest)
            except ArtifactIOError:
                exit_code = SolverConstants.EXIT_IO

        return exit_code

    def get_system_status(self) -> Dict[str, Any]:
        """Estado resumido del orquestador."""
        return {
            'initialized': self._initialized,
            'experiment': self.run_config.experiment,
            'output_dir': str(self.output_dir),
            'artifacts': [a.name for a in self.store.artifacts] if self.store else [],
            'errors': error_handler.get_error_statistics(),
        }


def create_engineer(run_config: RunConfig, output_dir: Optional[Path] = None) -> Optional[FloquetEngineer]:
    """
    Factory para crear un orquestador inicializado.

    Returns:
        Instancia inicializada o None si falla
    """
    try:
        engineer = FloquetEngineer(run_config, output_dir)
        if engineer.initialize_application():
            return engineer
        get_logger(__name__).error("❌ Error inicializando FloquetEngineer")
        return None
    except Exception as e:
        log_service_error("create_engineer", e)
        get_logger(__name__).error(f"❌ Error creando FloquetEngineer: {e}")
        return None


def run_health_checks() -> Dict[str, Dict[str, Any]]:
    """
    Autochequeos rápidos de los servicios numéricos.

    Returns:
        {nombre: {"ok": bool, "value": float, "bound": float}}
    """
    logger = get_logger(__name__)
    checks: Dict[str, Dict[str, Any]] = {}

    def record(name: str, value: float, bound: float, ok: bool) -> None:
        checks[name] = {"ok": bool(ok), "value": float(value), "bound": float(bound)}

    # Oscilador armónico: omega = 1
    try:
        index_set = build_index_set(0, 1)
        problem = ForwardProblem(DuffingModel(linear=1.0), index_set, SamplingGrid.for_index_set(index_set), 1.0)
        omega = HarmonicBalanceSolver().solve_forward(problem).omega
        record("sho_anchor", abs(omega - 1.0), 1e-12, abs(omega - 1.0) <= 1e-12)
    except Exception as e:
        log_service_error("HealthCheck", e, {"check": "sho_anchor"})
        record("sho_anchor", math.nan, 1e-12, False)

    # Orden observado del integrador
    try:
        order = oracles.observed_order()
        record("integrator_order", order, 7.5, order >= 7.5)
    except Exception as e:
        log_service_error("HealthCheck", e, {"check": "integrator_order"})
        record("integrator_order", math.nan, 7.5, False)

    # Ida y vuelta del MDFT
    try:
        index_set = build_index_set(2, 3)
        operator = build_operator(index_set, SamplingGrid.for_index_set(index_set), FrequencyPair(0.37, 2.0))
        amplitudes = np.random.default_rng(7).normal(size=len(index_set))
        coeffs = CoefficientTable(index_set, amplitudes)
        error = float(np.max(np.abs(analyze(operator, synthesize(operator, coeffs)).amplitudes - amplitudes)))
        record("mdft_round_trip", error, 1e-10, error <= 1e-10)
    except Exception as e:
        log_service_error("HealthCheck", e, {"check": "mdft_round_trip"})
        record("mdft_round_trip", math.nan, 1e-10, False)

    # Determinante de la monodromía
    try:
        drift = abs(float(np.linalg.det(oracles.monodromy_matrix(0.3, 0.0))) - 1.0)
        record("monodromy_determinant", drift, 1e-10, drift <= 1e-10)
    except Exception as e:
        log_service_error("HealthCheck", e, {"check": "monodromy_determinant"})
        record("monodromy_determinant", math.nan, 1e-10, False)

    # Mapa eps <-> C frente a la cuadratura
    try:
        worst = max(entry["rel_error"] for entry in validate_eps_map().values())
        record("eps_map", worst, 1e-2, worst <= 1e-2)
    except Exception as e:
        log_service_error("HealthCheck", e, {"check": "eps_map"})
        record("eps_map", math.nan, 1e-2, False)

    passed = sum(check["ok"] for check in checks.values())
    logger.info(f"🏥 Autochequeos: {passed}/{len(checks)} correctos")
    return checks
