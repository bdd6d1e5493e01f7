"""
Formateo de resultados para FloquetEngineer.
Dialecto CSV fijo (coma, punto decimal, 17 dígitos significativos,
encabezado, fin de línea LF) y tablas de cada experimento.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

from config.solver_config import get_logger, SolverConstants


@dataclass(frozen=True)
class CsvTable:
    """Tabla con encabezado y filas ya tipadas."""
    header: Tuple[str, ...]
    rows: Tuple[Tuple[Any, ...], ...]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.header):
                raise ValueError(f"Fila de {len(row)} columnas para encabezado de {len(self.header)}")


def format_value(value: Any) -> str:
    """Celda CSV: vacía para fallas (None/NaN), 17 dígitos para flotantes."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return value
    number = float(value)
    if math.isnan(number):
        return ""
    return f"{number:.{SolverConstants.CSV_SIGNIFICANT_DIGITS}g}"


def render_csv(table: CsvTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([format_value(cell) for cell in row])
    return buffer.getvalue()


def relative_gap(reference: Optional[float], other: Optional[float]) -> float:
    """|other - reference| / |reference| (absoluta si la referencia es 0)."""
    if reference is None or other is None:
        return float("nan")
    gap = abs(other - reference)
    return gap / abs(reference) if reference != 0.0 else gap


class ResultFormatter:
    """Construye las tablas CSV de cada experimento."""

    def __init__(self):
        self.logger = get_logger(__name__)

    def solution_table(self, solution) -> CsvTable:
        """Una fila por (m, k) con amplitud, más omega, beta y residuo repetidos."""
        rows = tuple(
            (m, k, amplitude, solution.omega, solution.beta, solution.residual_norm)
            for (m, k), amplitude in solution.coeffs.as_dict().items()
        )
        return CsvTable(("m", "k", "amplitude", "omega", "beta", "residual_norm"), rows)

    def trajectory_table(self, xi: Sequence[float], u_rk: Sequence[float], u_nefs: Sequence[float],
                         u_ofs: Sequence[float], dev_nefs: Sequence[float], dev_ofs: Sequence[float]) -> CsvTable:
        rows = tuple(zip(xi, u_rk, u_nefs, u_ofs, dev_nefs, dev_ofs))
        return CsvTable(("xi", "u_rk", "u_nefs", "u_ofs", "dev_nefs", "dev_ofs"), rows)

    def controls_table(self, solution) -> CsvTable:
        """Controles resueltos, omega0 y beta por bloque."""
        rows: List[Tuple[Any, ...]] = [(name, value) for name, value in solution.alpha.items()]
        rows.append(("omega0", solution.omega0))
        rows.extend((f"beta_block_{j}", beta) for j, beta in enumerate(solution.block_betas))
        return CsvTable(("quantity", "value"), tuple(rows))

    def verification_table(self, rows) -> CsvTable:
        return CsvTable(
            ("A", "target_shift", "achieved_shift", "rel_error", "uncompensated_shift"),
            tuple((r.amplitude, r.target_shift, r.achieved_shift, r.rel_error, r.uncompensated_shift)
                  for r in rows),
        )

    def sweep_table(self, rows: Sequence[Dict[str, Optional[float]]]) -> CsvTable:
        header = ("param", "control_hb", "beta_hb", "control_fm", "beta_fm", "max_dev")
        return CsvTable(header, tuple(tuple(row.get(column) for column in header) for row in rows))

    def compare_table(self, pairs: Sequence[Tuple[str, Optional[float], Optional[float]]],
                      threshold: float = SolverConstants.MAGNUS_GAP_THRESHOLD) -> CsvTable:
        """Filas (magnitud, FM, HB) con brecha relativa respecto a HB y bandera de umbral."""
        rows = []
        for quantity, fm, hb in pairs:
            gap = relative_gap(hb, fm)
            flagged = bool(gap > threshold) if not math.isnan(gap) else None
            rows.append((quantity, fm, hb, gap, flagged))
        return CsvTable(("quantity", "fm", "hb", "rel_gap", "flagged"), tuple(rows))
