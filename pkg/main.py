"""
Punto de entrada de FloquetEngineer.
Línea de comandos por experimento, validación de entorno y códigos de salida.
"""

import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click

from config.run_config import load_run_config
from config.solver_config import get_config, get_logger, SolverConstants
from floquet_engineer import FloquetEngineer, create_engineer, run_health_checks
from utils.error_handler import ConfigError, exit_code_for, log_service_error


class ExperimentLauncher:
    """Launcher de una corrida: valida, carga la configuración y ejecuta."""

    def __init__(self):
        """Inicializa el launcher."""
        self.logger = get_logger(__name__)
        self.engineer: Optional[FloquetEngineer] = None

    def validate_environment(self, config_path: Path, output_dir: Optional[Path]) -> Dict[str, Any]:
        """
        Valida versión de Python, archivo de configuración y destino de salida.

        Returns:
            Dict con resultado de validación y detalles
        """
        validation_result = {
            'valid': True,
            'errors': [],
            'warnings': [],
            'details': {}
        }

        try:
            self.logger.info("🔍 Validando entorno de ejecución...")

            python_version = sys.version_info
            validation_result['details']['python_version'] = f"{python_version.major}.{python_version.minor}.{python_version.micro}"
            if python_version < (3, 11):
                validation_result['valid'] = False
                validation_result['errors'].append(
                    f"Python 3.11+ requerido. Actual: {python_version.major}.{python_version.minor}"
                )

            if not config_path.is_file():
                validation_result['valid'] = False
                validation_result['errors'].append(f"Archivo de configuración inexistente: {config_path}")
            validation_result['details']['config_path'] = str(config_path)

            if output_dir is not None and output_dir.exists() and not output_dir.is_dir():
                validation_result['valid'] = False
                validation_result['errors'].append(f"La salida no es un directorio: {output_dir}")

            if get_config().max_workers == 1:
                validation_result['warnings'].append("FLOQUET_MAX_WORKERS=1: los barridos se ejecutan en serie")

            if validation_result['valid']:
                self.logger.info("✅ Validación de entorno completada exitosamente")
            else:
                self.logger.error("❌ Validación de entorno falló")
            return validation_result

        except Exception as e:
            log_service_error("ExperimentLauncher", e, {"component": "environment_validation"})
            return {
                'valid': False,
                'errors': [f"Error en validación: {str(e)}"],
                'warnings': [],
                'details': {}
            }

    def launch(self, experiment: str, config_path: Path, output_dir: Optional[Path] = None,
               paper_parity: bool = False) -> int:
        """
        Ejecuta un experimento con manejo completo de errores.

        Returns:
            Código de salida (0 éxito, 2 configuración, 3 sin convergencia, 4 E/S)
        """
        try:
            # Lee FLOQUET_* aquí para que un valor inválido salga con código 2
            get_config()
            validation = self.validate_environment(config_path, output_dir)
            if not validation['valid']:
                for error in validation['errors']:
                    self.logger.error(f"  • {error}")
                return SolverConstants.EXIT_CONFIG

            for warning in validation.get('warnings', []):
                self.logger.warning(f"⚠️ {warning}")

            run_config = load_run_config(config_path, experiment)
            if paper_parity:
                self.logger.info("📐 Grilla de referencia 15x15 activada")
                run_config = run_config.with_reference_grid()

            self.engineer = create_engineer(run_config, output_dir)
            if self.engineer is None:
                self.logger.error("❌ Inicialización de FloquetEngineer falló")
                return SolverConstants.EXIT_IO

            return self.engineer.run()

        except ConfigError as e:
            log_service_error("ExperimentLauncher", e, {"config": str(config_path)})
            self.logger.error(f"❌ Configuración inválida: {e}")
            return e.exit_code
        except KeyboardInterrupt:
            self.logger.info("👋 Corrida interrumpida por el usuario")
            return SolverConstants.EXIT_NOT_CONVERGED
        except Exception as e:
            log_service_error("ExperimentLauncher", e, {"component": "launch"})
            self.logger.critical(f"💥 Error crítico: {e}")
            return exit_code_for(e)


def health_check() -> int:
    """
    Autochequeos numéricos sin configuración de corrida.

    Returns:
        Código de salida (0 = saludable, 1 = problemas)
    """
    try:
        print("🏥 === HEALTH CHECK DE FLOQUETENGINEER ===\n")

        config = get_config()
        print("⚙️ Configuración:")
        print(f"  • Salida por defecto: {config.output_dir}")
        print(f"  • Tolerancia Newton: {config.newton_tolerance:g}")
        print(f"  • RK rtol/atol: {config.rk_rel_tol:g} / {config.rk_abs_tol:g}")
        print(f"  • Workers de barrido: {config.max_workers}\n")

        checks = run_health_checks()
        healthy = True
        for name, check in checks.items():
            marker = "✅" if check['ok'] else "❌"
            print(f"{marker} {name}: {check['value']:.3e} (cota {check['bound']:g})")
            healthy = healthy and check['ok']

        print("\n🏥 === RESULTADO FINAL ===")
        if healthy:
            print("✅ SISTEMA SALUDABLE - Listo para ejecutar")
            return 0
        print("❌ SISTEMA CON PROBLEMAS - Revisar errores")
        return 1

    except Exception as e:
        print(f"💥 Health check falló: {e}")
        return 1


# Subcomandos de experimento y su ayuda
EXPERIMENTS = {
    "forward": "Solución directa NEFS/OFS frente al oráculo RK",
    "engineer": "Problema inverso apilado y verificación del objetivo",
    "sweep": "Barrido de un parámetro con continuación del inverso",
    "compare-magnus": "Comparación Floquet-Magnus frente a balance armónico",
    "verify": "Verificación directa de controles configurados",
}


@click.group()
@click.version_option(SolverConstants.VERSION, prog_name="floquet-engineer")
def cli() -> None:
    """Balance armónico multidimensional e ingeniería de potenciales efectivos."""


def _experiment_command(experiment: str, help_text: str) -> click.Command:
    """Subcomando de experimento con las opciones comunes."""

    @click.command(name=experiment, help=help_text)
    @click.option("--config", "config_path", required=True,
                  type=click.Path(path_type=Path, dir_okay=False), help="Archivo TOML de la corrida")
    @click.option("--out", "output_dir", type=click.Path(path_type=Path, file_okay=False),
                  help="Directorio de salida (por defecto [output].directory o FLOQUET_OUTPUT_DIR)")
    @click.option("--paper-parity", "--reference-grid", "paper_parity", is_flag=True,
                  help="Grilla 15x15 eliminando columnas alias en lugar de fallar el guardarraíl")
    @click.pass_context
    def command(ctx: click.Context, config_path: Path, output_dir: Optional[Path], paper_parity: bool) -> None:
        launcher = ExperimentLauncher()
        ctx.exit(launcher.launch(experiment, config_path, output_dir, paper_parity))

    return command


for _name, _help in EXPERIMENTS.items():
    cli.add_command(_experiment_command(_name, _help))


@cli.command(name="health")
@click.pass_context
def health(ctx: click.Context) -> None:
    """Autochequeos rápidos de los servicios numéricos."""
    ctx.exit(health_check())


def main() -> int:
    """Función principal del programa."""
    try:
        result = cli.main(standalone_mode=False)
        return result if isinstance(result, int) else 0
    except click.ClickException as e:
        e.show()
        return SolverConstants.EXIT_CONFIG
    except click.Abort:
        return SolverConstants.EXIT_NOT_CONVERGED
    except Exception as e:
        logger = get_logger(__name__)
        log_service_error("main", e)
        logger.critical(f"💥 Error fatal en main: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
