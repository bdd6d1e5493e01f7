"""
Configuración de corridas para FloquetEngineer.
Esquema pydantic de los documentos TOML de experimentos; cualquier clave
desconocida o valor no finito se rechaza antes de calcular nada.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.solver_config import get_logger, SolverConstants
from data.drive_models import DriveModel, TargetPotential, create_model
from data.harmonic_basis import HarmonicIndexSet, SamplingGrid, build_index_set
from utils.error_handler import ConfigError

logger = get_logger(__name__)

Experiment = Literal["forward", "engineer", "sweep", "compare-magnus", "verify"]

# Experimentos que requieren objetivo y controles
TARGETED_EXPERIMENTS = ("engineer", "sweep", "compare-magnus", "verify")

DEFAULT_VERIFY_AMPLITUDES = tuple(float(a) for a in np.logspace(-5, -2, 13))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)


class ModelSection(_Section):
    """Modelo físico: nombre registrado, parámetros y controles."""
    name: Literal["mathieu", "lattice", "duffing", "pendulum"]
    parameters: Dict[str, float] = Field(default_factory=dict)
    controls: List[str] = Field(default_factory=list)


class BasisSection(_Section):
    """Truncamiento armónico y grilla de muestreo."""
    M: int = Field(ge=0)
    K: int = Field(ge=1)
    include_k0: bool = False
    m_xi: Optional[int] = Field(default=None, ge=1)
    m_zeta: Optional[int] = Field(default=None, ge=1)
    # "paper_parity" es la clave pública; "reference_grid" se acepta como alias
    reference_grid: bool = Field(default=False, validation_alias=AliasChoices("paper_parity", "reference_grid"))


class InitialSection(_Section):
    """Condiciones iniciales: A01 directo o escalera de bloques, y theta."""
    a01: Optional[float] = Field(default=None, ge=0.0)
    theta: float = 0.0
    blocks: Optional[List[float]] = None

    @field_validator("blocks")
    @classmethod
    def _increasing(cls, blocks: Optional[List[float]]) -> Optional[List[float]]:
        if blocks is None:
            return blocks
        if not blocks or any(b <= 0.0 for b in blocks):
            raise ValueError("los bloques deben ser amplitudes positivas")
        if any(b2 <= b1 for b1, b2 in zip(blocks, blocks[1:])):
            raise ValueError("los bloques deben ser estrictamente crecientes")
        return blocks


class TargetSection(_Section):
    """Objetivo: anarmonicidades C_k o coeficientes eps_k, nunca ambos."""
    c_4: Optional[float] = None
    c_6: Optional[float] = None
    c_8: Optional[float] = None
    eps_2: Optional[float] = None
    eps_4: Optional[float] = None
    eps_6: Optional[float] = None

    def _family(self, prefix: str) -> Dict[int, float]:
        values = {}
        for name, value in self.model_dump().items():
            if name.startswith(prefix) and value is not None:
                values[int(name.split("_")[1])] = value
        return values

    @model_validator(mode="after")
    def _one_family(self) -> 'TargetSection':
        if bool(self._family("c_")) == bool(self._family("eps_")):
            raise ValueError("el objetivo requiere exactamente una familia: c_k o eps_k")
        return self

    def to_potential(self) -> TargetPotential:
        c_values = self._family("c_")
        if c_values:
            return TargetPotential(c_coeffs=c_values)
        return TargetPotential(eps_coeffs=self._family("eps_"))


class SweepSection(_Section):
    """Barrido lineal de un parámetro fijo del modelo."""
    parameter: str
    start: float
    stop: float
    steps: int = Field(ge=1)

    @model_validator(mode="after")
    def _monotone(self) -> 'SweepSection':
        if self.steps > 1 and self.start == self.stop:
            raise ValueError("barrido degenerado: start == stop con más de un paso")
        return self

    def values(self) -> List[float]:
        return [float(v) for v in np.linspace(self.start, self.stop, self.steps)]


class VerifySection(_Section):
    """Amplitudes de verificación directa del objetivo."""
    amplitudes: Optional[List[float]] = None

    @field_validator("amplitudes")
    @classmethod
    def _positive(cls, amplitudes: Optional[List[float]]) -> Optional[List[float]]:
        if amplitudes is not None and (not amplitudes or any(a <= 0.0 for a in amplitudes)):
            raise ValueError("las amplitudes de verificación deben ser positivas")
        return amplitudes


class OutputSection(_Section):
    """Destino de artefactos."""
    directory: Optional[str] = None
    prefix: str = ""


class RunConfig(_Section):
    """Documento completo de una corrida."""
    experiment: Experiment
    model: ModelSection
    basis: BasisSection
    initial: InitialSection = Field(default_factory=InitialSection)
    target: Optional[TargetSection] = None
    sweep: Optional[SweepSection] = None
    verify: VerifySection = Field(default_factory=VerifySection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _cross_fields(self) -> 'RunConfig':
        controls = self.model.controls
        missing = [c for c in controls if c not in self.model.parameters]
        if missing:
            raise ValueError(f"controles sin valor en [model.parameters]: {missing}")

        if self.experiment == "forward" and self.initial.a01 is None:
            raise ValueError("forward requiere [initial].a01")

        if self.experiment in TARGETED_EXPERIMENTS:
            if self.target is None:
                raise ValueError(f"{self.experiment} requiere una sección [target]")
            if not controls:
                raise ValueError(f"{self.experiment} requiere al menos un control")

        if self.experiment == "engineer" and self.initial.blocks is not None \
                and len(self.initial.blocks) != len(controls) + 1:
            raise ValueError(
                f"engineer requiere len(blocks) = len(controls) + 1: {len(self.initial.blocks)} != {len(controls) + 1}"
            )

        if self.experiment == "compare-magnus" and len(controls) != 1:
            raise ValueError("compare-magnus requiere exactamente un control")

        if self.experiment == "sweep":
            if self.sweep is None:
                raise ValueError("sweep requiere una sección [sweep]")
            if len(controls) != 1:
                raise ValueError("sweep requiere exactamente un control")
            if self.sweep.parameter in controls:
                raise ValueError("el parámetro barrido no puede ser un control")
        return self

    # ------------------------------------------------------------------
    # Construcción de objetos de dominio
    # ------------------------------------------------------------------

    def build_model(self) -> DriveModel:
        return create_model(self.model.name, self.model.parameters, self.model.controls)

    def build_index_set(self) -> HarmonicIndexSet:
        return build_index_set(self.basis.M, self.basis.K, self.basis.include_k0, self.initial.theta)

    def build_grid(self, index_set: HarmonicIndexSet) -> SamplingGrid:
        if self.basis.reference_grid:
            size = SolverConstants.REFERENCE_GRID_SIZE
            return SamplingGrid(self.basis.m_xi or size, self.basis.m_zeta or size, reference_grid=True)
        return SamplingGrid(
            self.basis.m_xi or 2 * index_set.K + 1,
            self.basis.m_zeta or 2 * index_set.M + 1,
        )

    def build_target(self) -> Optional[TargetPotential]:
        return self.target.to_potential() if self.target is not None else None

    def blocks(self) -> Tuple[float, ...]:
        if self.initial.blocks is not None:
            return tuple(self.initial.blocks)
        needed = len(self.model.controls) + 1
        if needed > len(SolverConstants.DEFAULT_BLOCKS):
            raise ConfigError(f"Sin escalera por defecto para {needed - 1} controles; indique [initial].blocks")
        return tuple(SolverConstants.DEFAULT_BLOCKS[:needed])

    def verify_amplitudes(self) -> Tuple[float, ...]:
        if self.verify.amplitudes is not None:
            return tuple(self.verify.amplitudes)
        return DEFAULT_VERIFY_AMPLITUDES

    def with_reference_grid(self) -> 'RunConfig':
        return self.model_copy(update={"basis": self.basis.model_copy(update={"reference_grid": True})})

    def echo(self) -> Dict[str, object]:
        """Eco serializable de la configuración para el manifiesto."""
        return self.model_dump(mode="json")


def parse_run_config(document: Dict[str, object], experiment: Optional[str] = None) -> RunConfig:
    """
    Valida un documento ya decodificado.

    Args:
        document: Contenido TOML como diccionario
        experiment: Subcomando invocado; completa o valida el campo `experiment`

    Raises:
        ConfigError: esquema inválido o inconsistente con el subcomando
    """
    document = dict(document)
    if experiment is not None:
        declared = document.setdefault("experiment", experiment)
        if declared != experiment:
            raise ConfigError(f"La configuración declara '{declared}' pero se invocó '{experiment}'")

    try:
        config = RunConfig.model_validate(document)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<raíz>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Configuración inválida: {problems}")

    # Instanciar el modelo valida nombres de parámetros antes de cualquier cálculo
    config.build_model()
    config.build_target()
    return config


def load_run_config(path: Path, experiment: Optional[str] = None) -> RunConfig:
    """Lee y valida un archivo TOML de corrida."""
    path = Path(path)
    try:
        with path.open("rb") as handle:
            document = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"Archivo de configuración inexistente: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML inválido en {path}: {e}")

    config = parse_run_config(document, experiment)
    logger.info(f"⚙️ Configuración cargada: {path} ({config.experiment}, modelo {config.model.name})")
    return config
