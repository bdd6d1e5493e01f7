"""
Pruebas de extremo a extremo de la línea de comandos: códigos de salida,
artefactos CSV, manifiesto y validación de configuraciones de corrida.
"""

import csv
import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner

import main
from config.run_config import load_run_config, parse_run_config
from config.solver_config import get_config, reset_config
from handlers.experiment_handlers import ExperimentHandlers
from utils.error_handler import ConfigError, NotConverged
from utils.result_formatter import CsvTable, format_value, render_csv

CONFIG_DIR = Path(__file__).resolve().parent.parent / "assets" / "configs"

SHO_FORWARD = """
experiment = "forward"

[model]
name = "duffing"

[model.parameters]
linear = 1.0

[basis]
M = 0
K = 1

[initial]
a01 = 1.0
"""

DUFFING_TARGETED = """
experiment = "{experiment}"

[model]
name = "duffing"
controls = ["cubic"]

[model.parameters]
linear = 1.0
cubic = {cubic}

[basis]
M = 0
K = 5

[initial]
blocks = [0.01, 0.05]

[target]
c_4 = 0.4

[verify]
amplitudes = [0.01, 0.02, 0.05]
"""

DUFFING_SWEEP = DUFFING_TARGETED.replace('{experiment}', 'sweep') + """
[sweep]
parameter = "linear"
start = 1.0
stop = 1.2
steps = 3
"""


@pytest.fixture
def runner():
    return CliRunner()


def _write(tmp_path: Path, text: str, name: str = "run.toml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _invoke(runner, experiment: str, config: Path, out: Path):
    return runner.invoke(main.cli, [experiment, "--config", str(config), "--out", str(out)])


def _read_csv(path: Path):
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


def _manifest(out: Path):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


# ══════════════════════════════════════════════════════════════════════════════
# forward
# ══════════════════════════════════════════════════════════════════════════════

def test_harmonic_oscillator_forward_run(runner, tmp_path):
    """Oscilador armónico: omega = 1, desviación despreciable y manifiesto completo."""
    out = tmp_path / "out"
    result = _invoke(runner, "forward", _write(tmp_path, SHO_FORWARD), out)
    assert result.exit_code == 0, result.output

    solution = _read_csv(out / "solution.csv")
    assert len(solution) == 1
    assert float(solution[0]["omega"]) == pytest.approx(1.0, abs=1e-12)

    trajectory = _read_csv(out / "trajectory.csv")
    assert max(float(row["dev_nefs"]) for row in trajectory) <= 1e-7

    manifest = _manifest(out)
    assert manifest["status"] == "ok" and manifest["exit_code"] == 0
    assert manifest["experiment"] == "forward"
    assert {a["name"] for a in manifest["artifacts"]} == {"trajectory.csv", "solution.csv"}
    assert [s["label"] for s in manifest["solves"]] == ["nefs", "ofs", "rk[nefs]"]
    assert manifest["solves"][2]["solver"] == "rk8"
    assert manifest["notes"]["max_dev_nefs"] <= 1e-7
    assert manifest["failures"] == []


def test_forward_runs_are_deterministic(runner, tmp_path):
    config = _write(tmp_path, SHO_FORWARD)
    first, second = tmp_path / "a", tmp_path / "b"
    assert _invoke(runner, "forward", config, first).exit_code == 0
    assert _invoke(runner, "forward", config, second).exit_code == 0
    for name in ("solution.csv", "trajectory.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_not_converged_exit_code_and_manifest(runner, tmp_path, monkeypatch):
    def failing(self, context):
        raise NotConverged("sin convergencia simulada", residual_norm=1.0, residual_trace=[1.0, 1.0])

    monkeypatch.setattr(ExperimentHandlers, "run_forward", failing)
    out = tmp_path / "out"
    result = _invoke(runner, "forward", _write(tmp_path, SHO_FORWARD), out)

    assert result.exit_code == 3
    manifest = _manifest(out)
    assert manifest["status"] == "failed" and manifest["exit_code"] == 3
    assert manifest["failures"][0]["error_type"] == "NotConverged"


# ══════════════════════════════════════════════════════════════════════════════
# Errores de configuración
# ══════════════════════════════════════════════════════════════════════════════

def test_unknown_key_is_a_config_error(runner, tmp_path):
    text = SHO_FORWARD.replace("[basis]", "[basis]\ncolor = 3")
    out = tmp_path / "out"
    result = _invoke(runner, "forward", _write(tmp_path, text), out)
    assert result.exit_code == 2
    assert not (out / "solution.csv").exists()


def test_experiment_mismatch_is_a_config_error(runner, tmp_path):
    result = _invoke(runner, "engineer", _write(tmp_path, SHO_FORWARD), tmp_path / "out")
    assert result.exit_code == 2


def test_missing_config_file(runner, tmp_path):
    result = _invoke(runner, "forward", tmp_path / "absent.toml", tmp_path / "out")
    assert result.exit_code == 2


def test_invalid_toml(runner, tmp_path):
    result = _invoke(runner, "forward", _write(tmp_path, "experiment = "), tmp_path / "out")
    assert result.exit_code == 2


# ══════════════════════════════════════════════════════════════════════════════
# engineer / verify / sweep / compare-magnus
# ══════════════════════════════════════════════════════════════════════════════

def test_engineer_recovers_duffing_cubic(runner, tmp_path):
    out = tmp_path / "out"
    config = _write(tmp_path, DUFFING_TARGETED.format(experiment="engineer", cubic=0.5))
    result = _invoke(runner, "engineer", config, out)
    assert result.exit_code == 0, result.output

    controls = {row["quantity"]: float(row["value"]) for row in _read_csv(out / "controls.csv")}
    assert controls["cubic"] == pytest.approx(0.8, rel=5e-3)
    assert set(controls) == {"cubic", "omega0", "beta_block_0", "beta_block_1"}

    verification = _read_csv(out / "verification.csv")
    assert [float(row["A"]) for row in verification] == [0.01, 0.02, 0.05]
    assert all(float(row["rel_error"]) < 1e-2 for row in verification)
    assert max(_manifest(out)["notes"]["block_consistency"]) <= 1e-8


def test_verify_configured_controls(runner, tmp_path):
    out = tmp_path / "out"
    config = _write(tmp_path, DUFFING_TARGETED.format(experiment="verify", cubic=0.8))
    result = _invoke(runner, "verify", config, out)
    assert result.exit_code == 0, result.output

    rows = _read_csv(out / "verification.csv")
    assert len(rows) == 3
    for row in rows:
        assert float(row["rel_error"]) < 1e-2
        assert abs(float(row["uncompensated_shift"])) <= 1e-10

    labels = [s["label"] for s in _manifest(out)["solves"]]
    assert [label for label in labels if label.startswith("verify[")] == ["verify[A=0.01]", "verify[A=0.02]", "verify[A=0.05]"]
    assert "verify/uncompensated[A=1e-06]" in labels


def test_sweep_tracks_linear_stiffness(runner, tmp_path):
    """C4 = k3 / (2 k1): el control óptimo escala con la rigidez lineal."""
    out = tmp_path / "out"
    config = _write(tmp_path, DUFFING_SWEEP.replace("{cubic}", "0.5"))
    result = _invoke(runner, "sweep", config, out)
    assert result.exit_code == 0, result.output

    rows = _read_csv(out / "sweep.csv")
    assert [float(row["param"]) for row in rows] == pytest.approx([1.0, 1.1, 1.2])
    for row in rows:
        linear = float(row["param"])
        assert float(row["control_fm"]) == pytest.approx(0.8 * linear, rel=1e-9)
        assert float(row["control_hb"]) == pytest.approx(0.8 * linear, rel=5e-3)
        assert float(row["beta_fm"]) == pytest.approx(math.sqrt(linear), rel=1e-9)
        assert row["max_dev"] != ""

    notes = _manifest(out)["notes"]
    assert notes["converged_points"] == notes["total_points"] == 3
    assert notes["outcome"] == "ok"


def test_compare_magnus_on_duffing(runner, tmp_path):
    out = tmp_path / "out"
    config = _write(tmp_path, DUFFING_TARGETED.format(experiment="compare-magnus", cubic=0.5))
    result = _invoke(runner, "compare-magnus", config, out)
    assert result.exit_code == 0, result.output

    rows = {row["quantity"]: row for row in _read_csv(out / "compare.csv")}
    assert list(rows) == ["control", "beta", "C4", "C6", "C8"]
    assert float(rows["control"]["fm"]) == pytest.approx(0.8, rel=1e-9)
    assert rows["control"]["flagged"] == "false"
    assert rows["C6"]["hb"] == "" and rows["C6"]["flagged"] == ""
    assert _manifest(out)["notes"]["truncation_stability"] <= 1e-12


# ══════════════════════════════════════════════════════════════════════════════
# Configuración de corridas
# ══════════════════════════════════════════════════════════════════════════════

def _document(**overrides):
    document = {
        "experiment": "engineer",
        "model": {"name": "duffing", "parameters": {"linear": 1.0, "cubic": 0.5}, "controls": ["cubic"]},
        "basis": {"M": 0, "K": 3},
        "target": {"c_4": 0.4},
    }
    document.update(overrides)
    return document


def test_parse_valid_document_uses_default_blocks():
    config = parse_run_config(_document())
    assert config.blocks() == (1e-5, 1e-4)
    assert len(config.verify_amplitudes()) == 13


@pytest.mark.parametrize("overrides", [
    {"target": {"c_4": 0.4, "eps_2": 0.3}},
    {"target": {}},
    {"initial": {"blocks": [1e-3, 1e-4]}},
    {"initial": {"blocks": [1e-4, 1e-3, 1e-2]}},
    {"model": {"name": "duffing", "parameters": {"linear": 1.0}, "controls": ["cubic"]}},
    {"model": {"name": "duffing", "parameters": {"linear": float("inf")}, "controls": []}},
    {"model": {"name": "duffing", "parameters": {"stiffness": 1.0}, "controls": []}},
    {"basis": {"M": -1, "K": 3}},
])
def test_invalid_documents_rejected(overrides):
    with pytest.raises(ConfigError):
        parse_run_config(_document(**overrides))


def test_sweep_parameter_cannot_be_control():
    document = _document(experiment="sweep", sweep={"parameter": "cubic", "start": 0.1, "stop": 0.2, "steps": 2})
    with pytest.raises(ConfigError):
        parse_run_config(document)


def test_reference_grid_switch():
    config = parse_run_config(_document(basis={"M": 7, "K": 8})).with_reference_grid()
    grid = config.build_grid(config.build_index_set())
    assert grid.reference_grid and (grid.m_xi, grid.m_zeta) == (15, 15)


@pytest.mark.parametrize("key", ["paper_parity", "reference_grid"])
def test_reference_grid_key_in_document(key):
    config = parse_run_config(_document(basis={"M": 7, "K": 8, key: True}))
    grid = config.build_grid(config.build_index_set())
    assert grid.reference_grid and (grid.m_xi, grid.m_zeta) == (15, 15)


@pytest.mark.parametrize("flag", ["--paper-parity", "--reference-grid"])
def test_reference_grid_flag(runner, tmp_path, flag):
    out = tmp_path / "out"
    config = _write(tmp_path, SHO_FORWARD)
    result = runner.invoke(main.cli, ["forward", "--config", str(config), "--out", str(out), flag])
    assert result.exit_code == 0, result.output
    basis = _manifest(out)["notes"]["basis"]
    assert (basis["m_xi"], basis["m_zeta"]) == (15, 15)


# ── Variables de entorno ─────────────────────────────────────────────────────

@pytest.fixture
def fresh_config():
    """Relee FLOQUET_* en cada prueba y deja la configuración limpia al salir."""
    reset_config()
    yield
    reset_config()


@pytest.mark.parametrize("variable, value", [
    ("FLOQUET_NEWTON_TOL", "abc"),
    ("FLOQUET_NEWTON_TOL", "-1e-10"),
    ("FLOQUET_RK_RTOL", "nan"),
    ("FLOQUET_MAX_WORKERS", "0"),
    ("FLOQUET_POLISH_ITERATIONS", "-1"),
    ("FLOQUET_MAX_ITERATIONS", "diez"),
])
def test_bad_environment_value_exits_with_config_code(runner, tmp_path, monkeypatch, fresh_config, variable, value):
    monkeypatch.setenv(variable, value)
    out = tmp_path / "out"
    result = _invoke(runner, "forward", _write(tmp_path, SHO_FORWARD), out)
    assert result.exit_code == 2
    assert not (out / "solution.csv").exists()


def test_polish_iterations_must_be_non_negative(monkeypatch, fresh_config):
    monkeypatch.setenv("FLOQUET_POLISH_ITERATIONS", "-1")
    with pytest.raises(ConfigError):
        get_config()


def test_zero_polish_iterations_is_allowed(monkeypatch, fresh_config):
    monkeypatch.setenv("FLOQUET_POLISH_ITERATIONS", "0")
    assert get_config().polish_iterations == 0


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configurations_are_valid(path):
    config = load_run_config(path)
    assert config.experiment in main.EXPERIMENTS


# ══════════════════════════════════════════════════════════════════════════════
# Formato CSV
# ══════════════════════════════════════════════════════════════════════════════

def test_format_value_cells():
    assert format_value(None) == ""
    assert format_value(float("nan")) == ""
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(3) == "3"
    assert format_value(True) == "true"
    assert float(format_value(1.0 / 3.0)) == 1.0 / 3.0


def test_render_csv_dialect():
    table = CsvTable(("a", "b"), ((1, 0.5), (None, float("nan"))))
    assert render_csv(table) == "a,b\n1,0.5\n,\n"


def test_csv_table_rejects_ragged_rows():
    with pytest.raises(ValueError):
        CsvTable(("a", "b"), ((1,),))


def test_health_command(runner):
    result = runner.invoke(main.cli, ["health"])
    assert result.exit_code == 0, result.output
    assert "SISTEMA SALUDABLE" in result.output


# ══════════════════════════════════════════════════════════════════════════════
# Configuraciones de reproducción (assets/configs)
# ══════════════════════════════════════════════════════════════════════════════

def _run_shipped(runner, tmp_path, name: str, experiment: str) -> Path:
    out = tmp_path / name
    result = _invoke(runner, experiment, CONFIG_DIR / f"{name}.toml", out)
    assert result.exit_code == 0, result.output
    return out


@pytest.mark.slow
def test_trap_forward_and_lattice_forward_runs(runner, tmp_path):
    trap = _manifest(_run_shipped(runner, tmp_path, "trap_forward", "forward"))
    assert trap["status"] == "ok"

    notes = _manifest(_run_shipped(runner, tmp_path, "lattice_forward", "forward"))["notes"]
    assert notes["max_dev_nefs"] <= notes["max_dev_ofs"] / 10.0


@pytest.mark.slow
def test_trap_compare_matches_harmonic_balance(runner, tmp_path):
    """En q = 0.05 Floquet-Magnus y HB coinciden en control (2 %) y beta (0.5 %)."""
    rows = {row["quantity"]: row for row in _read_csv(_run_shipped(runner, tmp_path, "trap_compare",
                                                                     "compare-magnus") / "compare.csv")}
    assert abs(float(rows["control"]["rel_gap"])) <= 0.02
    assert abs(float(rows["beta"]["rel_gap"])) <= 0.005
    assert rows["control"]["flagged"] == "false"


@pytest.mark.slow
def test_lattice_engineer_run(runner, tmp_path):
    out = _run_shipped(runner, tmp_path, "lattice_engineer", "engineer")
    rows = {float(row["A"]): row for row in _read_csv(out / "verification.csv")}
    assert float(rows[5e-5]["rel_error"]) < 0.05

    manifest = _manifest(out)
    assert max(manifest["notes"]["block_consistency"]) <= 1e-8
    assert any(s["label"].startswith("block_consistency/") for s in manifest["solves"])


@pytest.mark.slow
def test_trap_engineer_run(runner, tmp_path):
    """Tres controles DC para C6 = -0.8; entre bloques el error de interpolación sube a ~5 %."""
    out = _run_shipped(runner, tmp_path, "trap_engineer", "engineer")
    rows = {float(row["A"]): float(row["rel_error"]) for row in _read_csv(out / "verification.csv")}
    assert rows[max(rows)] < 1e-2
    assert all(error < 0.1 for amplitude, error in rows.items() if amplitude >= 3e-3)
    assert max(_manifest(out)["notes"]["block_consistency"]) <= 1e-8


@pytest.mark.slow
def test_lattice_sweep_run(runner, tmp_path):
    out = _run_shipped(runner, tmp_path, "lattice_sweep", "sweep")
    manifest = _manifest(out)
    notes = manifest["notes"]
    assert notes["converged_points"] >= 0.9 * notes["total_points"]

    controls = [float(row["control_hb"]) for row in _read_csv(out / "sweep.csv") if row["control_hb"]]
    assert len(set(controls)) == len(controls)

    labels = [s["label"] for s in manifest["solves"]]
    assert any(label.startswith("fm[v0=") for label in labels)
    assert any(label.startswith("rk[v0=") for label in labels)


@pytest.mark.slow
def test_trap_sweep_run(runner, tmp_path):
    notes = _manifest(_run_shipped(runner, tmp_path, "trap_sweep", "sweep"))["notes"]
    assert notes["converged_points"] >= 0.9 * notes["total_points"]
