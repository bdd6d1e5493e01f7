"""Configuración compartida de la suite de pruebas."""

import os
import sys

import pytest

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if _ROOT not in sys.path:
    sys.path.insert(0, _ROOT)

from utils.error_handler import error_handler  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: corridas a escala de reproducción (minutos)")


@pytest.fixture(autouse=True)
def clean_error_records():
    """Cada prueba parte sin registros de falla acumulados."""
    error_handler.reset()
    yield
    error_handler.reset()
