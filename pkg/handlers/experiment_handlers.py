"""
Handlers de experimentos de FloquetEngineer.
Cada experimento recibe un contexto de corrida, llama a los servicios y
escribe sus CSV a través del almacén de artefactos.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from config.run_config import RunConfig
from config.solver_config import get_config, get_logger, SolverConstants
from data.artifact_store import ArtifactStore
from data.drive_models import DriveModel, TargetPotential
from data.harmonic_basis import HarmonicIndexSet, SamplingGrid, reduce_for_grid
from services import oracles
from services.hb_solver import ForwardProblem, HarmonicBalanceSolver, HbSolution, get_solver
from services.inverse_engine import (
    REFERENCE_AMPLITUDE,
    InverseEngine,
    InverseSeeds,
    InverseSolution,
    StackedInverseProblem,
    eps_from_anharmonicity,
    get_engine,
)
from services.magnus_comparator import MagnusComparator, effective_force_for, magnus_comparator
from utils.error_handler import ConfigError, FloquetError, NotConverged, ZeroReference, log_service_error
from utils.result_formatter import ResultFormatter


@dataclass
class ExperimentContext:
    """Estado mutable de una corrida: configuración, almacén y registros para el manifiesto."""
    config: RunConfig
    store: ArtifactStore
    solves: List[Dict[str, Any]] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    notes: Dict[str, Any] = field(default_factory=dict)

    def record(self, diagnostics: Dict[str, Any]) -> None:
        self.solves.append(diagnostics)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start


@dataclass(frozen=True)
class ExperimentOutcome:
    """Resultado de un experimento terminado."""
    experiment: str
    status: str
    artifacts: Tuple[Path, ...]
    n_solves: int


def _target_c_values(target: TargetPotential) -> Dict[int, float]:
    """C_k del objetivo; un objetivo en eps_k se invierte con el mapa de primer orden."""
    if target.c_coeffs is not None:
        return dict(target.c_coeffs)
    return {
        k: target.eps_coeffs[k - 2] / factor
        for k, factor in SolverConstants.EPS_FACTORS.items()
        if k - 2 in target.eps_coeffs
    }


def fm_target(target: TargetPotential) -> Tuple[int, float]:
    """Orden y valor de C_k que persigue la predicción FM (C4 si está presente)."""
    c_values = _target_c_values(target)
    if not c_values:
        raise ConfigError("El objetivo no contiene órdenes C_4, C_6 o C_8 utilizables por FM")
    order = 4 if 4 in c_values else min(c_values)
    return order, c_values[order]


class ExperimentHandlers:
    """Ejecuta los experimentos forward, engineer, verify, sweep y compare-magnus."""

    SERVICE_NAME = "ExperimentHandlers"

    def __init__(
            self,
            hb_solver: Optional[HarmonicBalanceSolver] = None,
            engine: Optional[InverseEngine] = None,
            comparator: Optional[MagnusComparator] = None
    ):
        """Inicializa handlers con servicios inyectados."""
        self.hb_solver = hb_solver or get_solver()
        self.engine = engine or get_engine()
        self.comparator = comparator or magnus_comparator
        self.formatter = ResultFormatter()
        self.config = get_config()
        self.logger = get_logger(__name__)

    def handler_for(self, experiment: str) -> Callable[[ExperimentContext], ExperimentOutcome]:
        handlers = {
            "forward": self.run_forward,
            "engineer": self.run_engineer,
            "verify": self.run_verify,
            "sweep": self.run_sweep,
            "compare-magnus": self.run_compare_magnus,
        }
        try:
            return handlers[experiment]
        except KeyError:
            raise ConfigError(f"Experimento desconocido: {experiment}")

    # ------------------------------------------------------------------
    # Preparación común
    # ------------------------------------------------------------------

    def _basis(self, context: ExperimentContext) -> Tuple[HarmonicIndexSet, SamplingGrid]:
        """Conjunto y grilla; con grilla de referencia elimina columnas alias."""
        config = context.config
        index_set = config.build_index_set()
        grid = config.build_grid(index_set)
        if grid.reference_grid:
            index_set, dropped = reduce_for_grid(index_set, grid, config.initial.theta)
            context.notes["dropped_columns"] = [list(entry) for entry in dropped]
        context.notes["basis"] = {"size": len(index_set), "m_xi": grid.m_xi, "m_zeta": grid.m_zeta}
        return index_set, grid

    def _stacked_problem(self, context: ExperimentContext, model: DriveModel,
                         index_set: HarmonicIndexSet, grid: SamplingGrid,
                         seeds: Optional[InverseSeeds] = None) -> StackedInverseProblem:
        config = context.config
        return StackedInverseProblem(
            model=model,
            controls=tuple(config.model.controls),
            blocks=config.blocks(),
            index_set=index_set,
            grid=grid,
            target=eps_from_anharmonicity(config.build_target()),
            theta=config.initial.theta,
            seeds=seeds,
        )

    def _solve_inverse(self, context: ExperimentContext, problem: StackedInverseProblem,
                       label: str) -> InverseSolution:
        try:
            solution = self.engine.solve_inverse(problem, context.record)
        except NotConverged as e:
            best = e.best_iterate
            record = best.diagnostics(label) if best is not None else {"label": label, "converged": False}
            context.record(record)
            raise
        context.record(solution.diagnostics(label))
        for j, block in enumerate(solution.block_solutions):
            context.record(block.diagnostics(f"{label}/block_{j}"))
        return solution

    def _solve_forward(self, context: ExperimentContext, problem: ForwardProblem, label: str,
                       ofs: bool = False) -> HbSolution:
        solve = self.hb_solver.solve_ofs if ofs else self.hb_solver.solve_forward
        try:
            solution = solve(problem)
        except NotConverged as e:
            if e.best_iterate is not None:
                context.record(e.best_iterate.diagnostics(label))
            raise
        context.record(solution.diagnostics(label))
        return solution

    def _deviation(self, model: DriveModel, solution: HbSolution,
                   records: List[Dict[str, Any]], label: str = "rk"
                   ) -> Tuple[oracles.DenseTrajectory, Optional[oracles.DeviationReport]]:
        """Trayectoria RK desde el estado inicial de la solución y desviación HB frente a RK."""
        u0, v0 = oracles.initial_state_from_solution(solution)
        trajectory = oracles.integrate(model, u0, v0, (0.0, self.config.xi_max), Omega=solution.Omega)
        records.append(trajectory.diagnostics(label))
        try:
            report = oracles.deviation(
                trajectory, lambda xi: self.hb_solver.reconstruct_trajectory(solution, xi)
            )
        except ZeroReference as e:
            log_service_error(self.SERVICE_NAME, e)
            report = None
        return trajectory, report

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def run_forward(self, context: ExperimentContext) -> ExperimentOutcome:
        """NEFS y OFS frente al oráculo RK: trajectory.csv y solution.csv."""
        config = context.config
        model = config.build_model()
        index_set, grid = self._basis(context)
        self.logger.info(f"🚀 forward {model!r}: |set|={len(index_set)}, A01={config.initial.a01}")

        problem = ForwardProblem(model, index_set, grid, config.initial.a01, config.initial.theta)
        with context.timed("hb_nefs"):
            nefs = self._solve_forward(context, problem, "nefs")
        with context.timed("hb_ofs"):
            ofs_problem = problem.with_updates(coeff_guess=nefs.coeffs, omega_guess=nefs.omega)
            ofs = self._solve_forward(context, ofs_problem, "ofs", ofs=True)

        with context.timed("rk_oracle"):
            trajectory, nefs_report = self._deviation(model, nefs, context.solves, "rk[nefs]")
            ofs_report = None
            if nefs_report is not None:
                ofs_report = oracles.deviation(
                    trajectory, lambda xi: self.hb_solver.reconstruct_trajectory(ofs, xi)
                )

        n_samples = self.config.deviation_samples
        xi = np.linspace(self.config.xi_max / n_samples, self.config.xi_max, n_samples)
        blank = [None] * n_samples
        table = self.formatter.trajectory_table(
            xi.tolist(),
            trajectory(xi).tolist(),
            self.hb_solver.reconstruct_trajectory(nefs, xi).tolist(),
            self.hb_solver.reconstruct_trajectory(ofs, xi).tolist(),
            nefs_report.values.tolist() if nefs_report is not None else blank,
            ofs_report.values.tolist() if ofs_report is not None else blank,
        )
        artifacts = [
            context.store.write_csv(SolverConstants.TRAJECTORY_FILE, table),
            context.store.write_csv(SolverConstants.SOLUTION_FILE, self.formatter.solution_table(nefs)),
        ]

        if nefs_report is not None:
            context.notes["max_dev_nefs"] = nefs_report.max_dev
            context.notes["max_dev_ofs"] = ofs_report.max_dev
            self.logger.info(
                f"📊 max|du/u0|: NEFS={nefs_report.max_dev:.3e}, OFS={ofs_report.max_dev:.3e}"
            )
        context.notes["rk_steps"] = trajectory.n_steps
        return ExperimentOutcome("forward", "ok", tuple(artifacts), len(context.solves))

    # ------------------------------------------------------------------
    # engineer / verify
    # ------------------------------------------------------------------

    def run_engineer(self, context: ExperimentContext) -> ExperimentOutcome:
        """Problema inverso apilado: controls.csv y verification.csv."""
        config = context.config
        model = config.build_model()
        index_set, grid = self._basis(context)
        problem = self._stacked_problem(context, model, index_set, grid)
        self.logger.info(f"🚀 engineer {model!r}: controles={list(problem.controls)}")

        with context.timed("inverse"):
            solution = self._solve_inverse(context, problem, "inverse")
        with context.timed("verification"):
            rows = self.engine.verify_target(solution, problem, config.verify_amplitudes(), model, context.record)
        with context.timed("block_consistency"):
            context.notes["block_consistency"] = self.engine.check_block_consistency(
                solution, problem, context.record
            )

        artifacts = [
            context.store.write_csv(SolverConstants.CONTROLS_FILE, self.formatter.controls_table(solution)),
            context.store.write_csv(SolverConstants.VERIFICATION_FILE, self.formatter.verification_table(rows)),
        ]
        return ExperimentOutcome("engineer", "ok", tuple(artifacts), len(context.solves))

    def run_verify(self, context: ExperimentContext) -> ExperimentOutcome:
        """
        Verificación directa de los controles configurados, sin resolver el inverso.

        omega0 es la frecuencia a la amplitud de referencia; la columna sin
        compensar usa el mismo modelo con los controles en cero.
        """
        config = context.config
        model = config.build_model()
        index_set, grid = self._basis(context)
        problem = self._stacked_problem(context, model, index_set, grid)
        self.logger.info(f"🚀 verify {model!r}")

        with context.timed("reference"):
            reference = self._solve_forward(
                context,
                ForwardProblem(model, index_set, grid, REFERENCE_AMPLITUDE, config.initial.theta),
                "reference",
            )
        configured = InverseSolution(
            alpha={c: model.param(c) for c in problem.controls},
            omega0=reference.omega,
            block_solutions=(),
            residual_norm=reference.residual_norm,
            converged=True,
            model=model,
        )
        uncompensated = model.with_params({c: 0.0 for c in problem.controls})
        with context.timed("verification"):
            rows = self.engine.verify_target(
                configured, problem, config.verify_amplitudes(), uncompensated, context.record
            )

        artifact = context.store.write_csv(
            SolverConstants.VERIFICATION_FILE, self.formatter.verification_table(rows)
        )
        worst = max((r.rel_error for r in rows if not math.isnan(r.rel_error)), default=float("nan"))
        context.notes["max_rel_error"] = worst
        return ExperimentOutcome("verify", "ok", (artifact,), len(context.solves))

    # ------------------------------------------------------------------
    # sweep
    # ------------------------------------------------------------------

    def _sweep_inverse(self, context: ExperimentContext, model: DriveModel, index_set: HarmonicIndexSet,
                       grid: SamplingGrid, values: List[float]) -> List[Optional[InverseSolution]]:
        """Continuación secuencial del inverso; cada punto convergido siembra el siguiente."""
        parameter = context.config.sweep.parameter
        solutions: List[Optional[InverseSolution]] = []
        seeds: Optional[InverseSeeds] = None

        for value in tqdm(values, desc=f"inverso({parameter})", disable=None):
            point_model = model.with_param(parameter, value)
            problem = self._stacked_problem(context, point_model, index_set, grid, seeds)
            try:
                solution = self._solve_inverse(context, problem, f"inverse[{parameter}={value:.6g}]")
            except FloquetError as e:
                log_service_error(self.SERVICE_NAME, e, {parameter: value})
                self.logger.warning(f"⚠️ Punto {parameter}={value:.6g} sin solución; se deja vacío")
                solutions.append(None)
                continue
            seeds = InverseSeeds(
                block_coeffs=tuple(block.coeffs for block in solution.block_solutions),
                omega0=solution.omega0,
                alpha=dict(solution.alpha),
            )
            solutions.append(solution)
        return solutions

    def _sweep_point(self, model: DriveModel, control: str, order: int, target_ck: float,
                     solution: Optional[InverseSolution], label: str
                     ) -> Tuple[Dict[str, Optional[float]], List[Dict[str, Any]]]:
        """
        Predicción FM y desviación RK de un punto; las fallas quedan como celdas vacías.

        Returns:
            (fila parcial, registros de diagnóstico del punto)
        """
        row: Dict[str, Optional[float]] = {}
        records: List[Dict[str, Any]] = []
        try:
            prediction = self.comparator.predict_control(model, control, target_ck, order)
            row["control_fm"] = prediction.value
            row["beta_fm"] = prediction.beta_fm
            records.append(prediction.diagnostics(f"fm[{label}]"))
        except (FloquetError, ValueError) as e:
            log_service_error(self.SERVICE_NAME, e, {"stage": "fm", "model": repr(model)})
            records.append({"label": f"fm[{label}]", "solver": "floquet_magnus", "converged": False})

        if solution is not None:
            try:
                _, report = self._deviation(solution.model, solution.block_solutions[-1], records, f"rk[{label}]")
                row["max_dev"] = report.max_dev if report is not None else None
            except FloquetError as e:
                log_service_error(self.SERVICE_NAME, e, {"stage": "rk", "model": repr(model)})
                records.append({"label": f"rk[{label}]", "solver": "rk8", "converged": False})
        return row, records

    def run_sweep(self, context: ExperimentContext) -> ExperimentOutcome:
        """Barrido de un parámetro fijo: sweep.csv en orden de parámetro."""
        config = context.config
        model = config.build_model()
        index_set, grid = self._basis(context)
        parameter = config.sweep.parameter
        control = config.model.controls[0]
        order, target_ck = fm_target(config.build_target())
        values = config.sweep.values()
        self.logger.info(f"🚀 sweep {model.name}: {parameter} en {len(values)} puntos, control {control}")

        with context.timed("inverse_continuation"):
            solutions = self._sweep_inverse(context, model, index_set, grid, values)

        with context.timed("fm_and_rk"):
            with ThreadPoolExecutor(max_workers=self.config.max_workers) as pool:
                futures = [
                    pool.submit(self._sweep_point, model.with_param(parameter, value), control,
                                order, target_ck, solution, f"{parameter}={value:.6g}")
                    for value, solution in zip(values, solutions)
                ]
                results = [future.result() for future in tqdm(futures, desc="FM/RK", disable=None)]
        extras = []
        for extra, records in results:
            extras.append(extra)
            for record in records:
                context.record(record)

        rows = []
        for value, solution, extra in zip(values, solutions, extras):
            rows.append({
                "param": value,
                "control_hb": solution.alpha[control] if solution is not None else None,
                "beta_hb": solution.block_betas[0] if solution is not None else None,
                **extra,
            })

        converged = sum(solution is not None for solution in solutions)
        context.notes["converged_points"] = converged
        context.notes["total_points"] = len(values)
        self.logger.info(f"📈 Barrido: {converged}/{len(values)} puntos convergidos")

        artifact = context.store.write_csv(SolverConstants.SWEEP_FILE, self.formatter.sweep_table(rows))
        status = "ok" if converged == len(values) else "partial"
        return ExperimentOutcome("sweep", status, (artifact,), len(context.solves))

    # ------------------------------------------------------------------
    # compare-magnus
    # ------------------------------------------------------------------

    def run_compare_magnus(self, context: ExperimentContext) -> ExperimentOutcome:
        """Floquet-Magnus de segundo orden frente a HB en un punto: compare.csv."""
        config = context.config
        model = config.build_model()
        index_set, grid = self._basis(context)
        control = config.model.controls[0]
        target = config.build_target()
        order, target_ck = fm_target(target)
        problem = self._stacked_problem(context, model, index_set, grid)
        self.logger.info(f"🚀 compare-magnus {model!r}: C_{order} = {target_ck}")

        with context.timed("inverse"):
            solution = self._solve_inverse(context, problem, "inverse")
        with context.timed("magnus"):
            prediction = self.comparator.predict_control(model, control, target_ck, order)
            context.record(prediction.diagnostics("fm"))
            hb_control = solution.alpha[control]
            # C_k que predice FM con el control óptimo de HB
            _, fm_at_hb = effective_force_for(model.with_param(control, hb_control)).numeric()
            context.notes["truncation_stability"] = self.comparator.truncation_stability(
                model.with_param(control, prediction.value)
            )

        targets = _target_c_values(target)
        pairs = [
            ("control", prediction.value, hb_control),
            ("beta", prediction.beta_fm, solution.block_betas[0]),
        ]
        pairs.extend((f"C{k}", fm_at_hb.get(k), targets.get(k)) for k in (4, 6, 8))

        table = self.formatter.compare_table(pairs)
        context.notes["flagged"] = [row[0] for row in table.rows if row[4]]
        artifact = context.store.write_csv(SolverConstants.COMPARE_FILE, table)
        return ExperimentOutcome("compare-magnus", "ok", (artifact,), len(context.solves))
