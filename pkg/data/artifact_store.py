"""
Persistencia de artefactos de corrida.
Escribe CSV y el manifiesto de forma atómica (archivo temporal + rename)
en el directorio de salida y lleva la lista de artefactos producidos.
"""

import os
import tempfile
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from config.solver_config import get_logger, SolverConstants
from utils.error_handler import ArtifactIOError, log_service_error
from utils.result_formatter import CsvTable, render_csv


class ArtifactRecord(BaseModel):
    """Entrada del manifiesto para un archivo producido."""
    model_config = ConfigDict(frozen=True)

    name: str
    path: str
    bytes: int


class RunManifest(BaseModel):
    """Manifiesto estructurado de una corrida."""
    model_config = ConfigDict(extra="forbid")

    version: str = SolverConstants.VERSION
    experiment: str
    status: str = "running"
    exit_code: Optional[int] = None
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    solves: List[Dict[str, Any]] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict)
    artifacts: List[ArtifactRecord] = Field(default_factory=list)
    failures: List[Dict[str, Any]] = Field(default_factory=list)
    notes: Dict[str, Any] = Field(default_factory=dict)

    def finish(self, exit_code: int) -> None:
        self.exit_code = exit_code
        self.status = "ok" if exit_code == SolverConstants.EXIT_OK else "failed"
        self.finished_at = datetime.now(timezone.utc).isoformat()


class ArtifactStore:
    """Escritor de artefactos de un directorio de salida."""

    SERVICE_NAME = "ArtifactStore"

    def __init__(self, output_dir: Path, prefix: str = ""):
        self.output_dir = Path(output_dir)
        self.prefix = prefix
        self.logger = get_logger(__name__)
        self._lock = threading.Lock()
        self._artifacts: List[ArtifactRecord] = []

    def path_for(self, name: str) -> Path:
        return self.output_dir / f"{self.prefix}{name}"

    def _write_atomic(self, target: Path, content: str) -> int:
        data = content.encode("utf-8")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(dir=target.parent, prefix=f".{target.name}.", delete=False) as handle:
                handle.write(data)
                temp_name = handle.name
            os.replace(temp_name, target)
        except OSError as e:
            error = ArtifactIOError(f"No se pudo escribir {target}: {e}", {"path": str(target)})
            log_service_error(self.SERVICE_NAME, error)
            raise error from e
        return len(data)

    def write_csv(self, name: str, table: CsvTable) -> Path:
        """Escribe una tabla CSV y la registra como artefacto."""
        target = self.path_for(name)
        size = self._write_atomic(target, render_csv(table))
        with self._lock:
            self._artifacts = [a for a in self._artifacts if a.name != name]
            self._artifacts.append(ArtifactRecord(name=name, path=str(target), bytes=size))
        self.logger.info(f"📊 Artefacto escrito: {target} ({len(table.rows)} filas)")
        return target

    @property
    def artifacts(self) -> List[ArtifactRecord]:
        with self._lock:
            return list(self._artifacts)

    def write_manifest(self, manifest: RunManifest) -> Path:
        """Escribe manifest.json; un solo escritor al final de la corrida."""
        manifest.artifacts = self.artifacts
        target = self.path_for(SolverConstants.MANIFEST_FILE)
        self._write_atomic(target, manifest.model_dump_json(indent=2) + "\n")
        self.logger.info(f"🧾 Manifiesto escrito: {target}")
        return target
