"""
Modelos físicos de forzamiento para FloquetEngineer.
Define la aceleración F(u, fase) de cada oscilador, sus derivadas analíticas,
los parámetros designados como fijos o de control y el potencial objetivo.
"""

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Type

import numpy as np
import sympy
from scipy import special

from config.solver_config import get_logger, SolverConstants
from data.harmonic_basis import Entry, HarmonicIndexSet
from utils.error_handler import ConfigError

logger = get_logger(__name__)


class ParamRole(Enum):
    """Designación de un parámetro del modelo."""
    FIXED = "fixed"
    CONTROL = "control"


@dataclass(frozen=True)
class Parameter:
    """Parámetro con nombre, valor y rol."""
    name: str
    value: float
    role: ParamRole = ParamRole.FIXED


def _sin_taylor(u: sympy.Symbol, scale: int, degree: int) -> sympy.Expr:
    """Serie de sin(scale*u) truncada en grado `degree` con coeficientes racionales."""
    return sum(
        (sympy.Integer(-1) ** j) * sympy.Integer(scale) ** (2 * j + 1) * u ** (2 * j + 1)
        / sympy.factorial(2 * j + 1)
        for j in range((degree - 1) // 2 + 1)
    )


def _cos_taylor(u: sympy.Symbol, scale: int, degree: int) -> sympy.Expr:
    """Serie de cos(scale*u) truncada en grado `degree`."""
    return sum(
        (sympy.Integer(-1) ** j) * sympy.Integer(scale) ** (2 * j) * u ** (2 * j)
        / sympy.factorial(2 * j)
        for j in range(degree // 2 + 1)
    )


class DriveModel(ABC):
    """
    Aceleración periódica en la fase de forzamiento con parámetros con nombre.

    Las instancias son inmutables: `with_param` devuelve un modelo nuevo.
    """

    name: str = "abstract"

    def __init__(self, parameters: Mapping[str, float], controls: Iterable[str] = ()):
        self._params: Dict[str, float] = {key: float(value) for key, value in parameters.items()}
        self._controls: Tuple[str, ...] = tuple(controls)
        self._validate()

    def _validate(self) -> None:
        for key, value in self._params.items():
            if not self.accepts_parameter(key):
                raise ConfigError(f"Parámetro desconocido para el modelo {self.name}: {key}")
            if not math.isfinite(value):
                raise ConfigError(f"Parámetro {key} no finito: {value}")
        for control in self._controls:
            if control not in self._params:
                raise ConfigError(f"Control {control} no es un parámetro del modelo {self.name}")
        if len(set(self._controls)) != len(self._controls):
            raise ConfigError(f"Controles duplicados: {self._controls}")

    # ------------------------------------------------------------------
    # Parámetros
    # ------------------------------------------------------------------

    @classmethod
    @abstractmethod
    def accepts_parameter(cls, key: str) -> bool:
        """Indica si `key` es un nombre de parámetro válido."""

    @classmethod
    def from_parameters(cls, parameters: Mapping[str, float], controls: Iterable[str] = ()) -> 'DriveModel':
        return cls(parameters, controls)

    @property
    def params(self) -> Dict[str, float]:
        return dict(self._params)

    @property
    def control_names(self) -> Tuple[str, ...]:
        return self._controls

    @property
    def parameters(self) -> List[Parameter]:
        return [
            Parameter(key, value, ParamRole.CONTROL if key in self._controls else ParamRole.FIXED)
            for key, value in self._params.items()
        ]

    def param(self, key: str) -> float:
        try:
            return self._params[key]
        except KeyError:
            raise KeyError(f"Parámetro {key} ausente en el modelo {self.name}")

    def with_params(self, updates: Mapping[str, float]) -> 'DriveModel':
        merged = dict(self._params)
        for key, value in updates.items():
            if not self.accepts_parameter(key):
                raise ConfigError(f"Parámetro desconocido para el modelo {self.name}: {key}")
            merged[key] = float(value)
        return type(self).from_parameters(merged, self._controls)

    def with_param(self, key: str, value: float) -> 'DriveModel':
        return self.with_params({key: value})

    def control_bracket(self, key: str) -> Tuple[float, float]:
        """Intervalo de búsqueda para predicciones de control."""
        return (-5.0, 5.0)

    @property
    def parity_symmetric(self) -> bool:
        """F(-u, fase + pi) = -F(u, fase): la fuerza efectiva solo tiene potencias impares."""
        return True

    @property
    def drive_free(self) -> bool:
        return False

    def potential_energy(self, u):
        """Energía potencial V(u) con F = -dV/du; solo para modelos sin forzamiento."""
        raise NotImplementedError(f"El modelo {self.name} no es conservativo")

    # ------------------------------------------------------------------
    # Dinámica
    # ------------------------------------------------------------------

    @abstractmethod
    def accel(self, u, phase):
        """Aceleración F(u, fase); vectorizada sobre arrays."""

    @abstractmethod
    def accel_du(self, u, phase):
        """Derivada analítica dF/du."""

    @abstractmethod
    def accel_dp(self, u, phase, key: str):
        """Derivada analítica dF/d(parámetro)."""

    @abstractmethod
    def initial_guess(self, index_set: HarmonicIndexSet, a01: float) -> Tuple[float, Dict[Entry, float]]:
        """Semilla (omega, amplitudes) para el Newton."""

    @abstractmethod
    def symbolic_force_modes(
            self,
            u: sympy.Symbol,
            degree: int,
            symbols: Optional[Mapping[str, sympy.Symbol]] = None
    ) -> Dict[int, sympy.Expr]:
        """
        Coeficientes de cos(m*fase) de la fuerza como polinomios en u.

        Args:
            u: Símbolo de posición
            degree: Grado de truncamiento de Taylor
            symbols: Parámetros a reemplazar por símbolos

        Returns:
            Dict m >= 0 -> expresión polinómica en u
        """

    def _value(self, key: str, symbols: Optional[Mapping[str, sympy.Symbol]]):
        if symbols and key in symbols:
            return symbols[key]
        return sympy.Float(self._params[key]) if self._params[key] != 0.0 else sympy.Integer(0)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v:g}" for k, v in self._params.items())
        return f"{type(self).__name__}({args}; controles={list(self._controls)})"


class MathieuModel(DriveModel):
    """
    Ecuación de Mathieu no lineal.

    F(u, phi) = 2q cos(phi)(u + 1/2 sum k alpha_k^ac u^(k-1)) - a u - 1/2 sum k alpha~_k^dc u^(k-1)
    """

    name = "mathieu"
    _ALPHA_PATTERN = re.compile(r"^alpha_(ac|dc)_(\d+)$")

    def __init__(
            self,
            parameters: Optional[Mapping[str, float]] = None,
            controls: Iterable[str] = (),
            *,
            q: Optional[float] = None,
            a: Optional[float] = None,
            alpha_ac: Optional[Mapping[int, float]] = None,
            alpha_dc: Optional[Mapping[int, float]] = None
    ):
        flat: Dict[str, float] = {"q": 0.0, "a": 0.0}
        flat.update(parameters or {})
        if q is not None:
            flat["q"] = q
        if a is not None:
            flat["a"] = a
        for k, value in (alpha_ac or {}).items():
            flat[f"alpha_ac_{k}"] = value
        for k, value in (alpha_dc or {}).items():
            flat[f"alpha_dc_{k}"] = value
        super().__init__(flat, controls)

    @classmethod
    def accepts_parameter(cls, key: str) -> bool:
        if key in ("q", "a"):
            return True
        match = cls._ALPHA_PATTERN.match(key)
        if not match:
            return False
        order = int(match.group(2))
        # Solo órdenes pares >= 4 por simetría de paridad
        return order >= 4 and order % 2 == 0

    def _alphas(self, kind: str) -> List[Tuple[int, float]]:
        result = []
        for key, value in self._params.items():
            match = self._ALPHA_PATTERN.match(key)
            if match and match.group(1) == kind:
                result.append((int(match.group(2)), value))
        return sorted(result)

    @property
    def q(self) -> float:
        return self._params["q"]

    @property
    def a(self) -> float:
        return self._params["a"]

    @property
    def alpha_ac(self) -> Dict[int, float]:
        return dict(self._alphas("ac"))

    @property
    def alpha_dc(self) -> Dict[int, float]:
        return dict(self._alphas("dc"))

    def _series(self, u, kind: str):
        total = np.zeros_like(u, dtype=float)
        for k, alpha in self._alphas(kind):
            total = total + 0.5 * k * alpha * u ** (k - 1)
        return total

    def _series_du(self, u, kind: str):
        total = np.zeros_like(u, dtype=float)
        for k, alpha in self._alphas(kind):
            total = total + 0.5 * k * (k - 1) * alpha * u ** (k - 2)
        return total

    def accel(self, u, phase):
        u = np.asarray(u, dtype=float)
        drive = 2.0 * self.q * np.cos(phase)
        return drive * (u + self._series(u, "ac")) - self.a * u - self._series(u, "dc")

    def accel_du(self, u, phase):
        u = np.asarray(u, dtype=float)
        drive = 2.0 * self.q * np.cos(phase)
        return drive * (1.0 + self._series_du(u, "ac")) - self.a - self._series_du(u, "dc")

    def accel_dp(self, u, phase, key: str):
        u = np.asarray(u, dtype=float)
        if key == "q":
            return 2.0 * np.cos(phase) * (u + self._series(u, "ac"))
        if key == "a":
            return -u
        match = self._ALPHA_PATTERN.match(key)
        if not match:
            raise KeyError(f"Parámetro {key} ausente en el modelo {self.name}")
        order = int(match.group(2))
        term = 0.5 * order * u ** (order - 1)
        if match.group(1) == "ac":
            return 2.0 * self.q * np.cos(phase) * term
        return -term * np.ones_like(np.asarray(phase, dtype=float))

    def control_bracket(self, key: str) -> Tuple[float, float]:
        if key == "q":
            return (1e-3, 0.9)
        if key == "a":
            return (-0.5, 0.5)
        return (-5.0, 5.0)

    def initial_guess(self, index_set: HarmonicIndexSet, a01: float) -> Tuple[float, Dict[Entry, float]]:
        # Solución de menor orden u ~ A cos(beta xi)(1 - (q/2) cos 2xi)
        beta_sq = self.a + 0.5 * self.q ** 2
        omega = math.sqrt(beta_sq) if beta_sq > 0.0 else 1e-3
        seed = {(0, 1): a01, (1, 1): -0.25 * self.q * a01, (-1, 1): -0.25 * self.q * a01}
        return omega, {entry: value for entry, value in seed.items() if entry in index_set}

    def symbolic_force_modes(self, u, degree, symbols=None):
        q = self._value("q", symbols)
        a = self._value("a", symbols)
        ac = sum((sympy.Rational(k, 2) * self._value(f"alpha_ac_{k}", symbols) * u ** (k - 1)
                  for k, _ in self._alphas("ac")), sympy.Integer(0))
        dc = sum((sympy.Rational(k, 2) * self._value(f"alpha_dc_{k}", symbols) * u ** (k - 1)
                  for k, _ in self._alphas("dc")), sympy.Integer(0))
        return {
            0: sympy.expand(-a * u - dc),
            1: sympy.expand(2 * q * (u + ac)),
        }


class OpticalLatticeModel(DriveModel):
    """Red óptica sacudida: F(u, phi) = -V0 sin(2(u - lam cos phi))."""

    name = "lattice"

    def __init__(
            self,
            parameters: Optional[Mapping[str, float]] = None,
            controls: Iterable[str] = (),
            *,
            v0: Optional[float] = None,
            lam: Optional[float] = None
    ):
        flat: Dict[str, float] = {"v0": 0.2, "lam": 0.0}
        flat.update(parameters or {})
        if v0 is not None:
            flat["v0"] = v0
        if lam is not None:
            flat["lam"] = lam
        super().__init__(flat, controls)

    @classmethod
    def accepts_parameter(cls, key: str) -> bool:
        return key in ("v0", "lam")

    @property
    def v0(self) -> float:
        return self._params["v0"]

    @property
    def lam(self) -> float:
        return self._params["lam"]

    def _argument(self, u, phase):
        return 2.0 * (np.asarray(u, dtype=float) - self.lam * np.cos(phase))

    def accel(self, u, phase):
        return -self.v0 * np.sin(self._argument(u, phase))

    def accel_du(self, u, phase):
        return -2.0 * self.v0 * np.cos(self._argument(u, phase))

    def accel_dp(self, u, phase, key: str):
        if key == "v0":
            return -np.sin(self._argument(u, phase))
        if key == "lam":
            return 2.0 * self.v0 * np.cos(phase) * np.cos(self._argument(u, phase))
        raise KeyError(f"Parámetro {key} ausente en el modelo {self.name}")

    def control_bracket(self, key: str) -> Tuple[float, float]:
        if key == "lam":
            return (0.0, 1.2)
        return (1e-3, 1.0)

    def linear_stiffness(self) -> float:
        """Rigidez promediada 2 V0 J0(2 lam)."""
        return 2.0 * self.v0 * float(special.j0(2.0 * self.lam))

    def initial_guess(self, index_set: HarmonicIndexSet, a01: float) -> Tuple[float, Dict[Entry, float]]:
        stiffness = self.linear_stiffness()
        if stiffness <= 0.0:
            stiffness = 2.0 * self.v0
        # Corrección de amplitud tipo sin(x)/x: primer armónico de sin(2A cos)
        amplitude_factor = float(special.j1(2.0 * a01) / a01) if a01 > 1e-12 else 1.0
        omega_sq = stiffness * amplitude_factor
        omega = math.sqrt(omega_sq) if omega_sq > 0.0 else math.sqrt(2.0 * self.v0)

        seed: Dict[Entry, float] = {(0, 1): a01}
        drive_omega = SolverConstants.DRIVE_OMEGA
        for m, k in index_set.entries:
            if k != 0 or m <= 0 or m % 2 == 0:
                continue
            # Respuesta forzada lineal a los armónicos impares de Jacobi-Anger
            forcing = 2.0 * self.v0 * (-1) ** ((m - 1) // 2) * float(special.jv(m, 2.0 * self.lam))
            denominator = stiffness - (m * drive_omega) ** 2
            if abs(denominator) > 1e-12:
                seed[(m, 0)] = forcing / denominator
        return omega, seed

    def symbolic_force_modes(self, u, degree, symbols=None):
        v0 = self._value("v0", symbols)
        z = 2 * self._value("lam", symbols)
        symbolic_lam = bool(symbols and "lam" in symbols)

        def bessel(order: int):
            if symbolic_lam:
                return sympy.besselj(order, z)
            return sympy.Float(float(special.jv(order, 2.0 * self.lam)))

        sin_part = _sin_taylor(u, 2, degree)
        cos_part = _cos_taylor(u, 2, degree)

        modes: Dict[int, sympy.Expr] = {0: sympy.expand(-v0 * bessel(0) * sin_part)}
        for m in range(1, SolverConstants.LATTICE_MAX_MODE + 1):
            if m % 2 == 0:
                coefficient = -2 * v0 * (-1) ** (m // 2) * bessel(m)
                modes[m] = sympy.expand(coefficient * sin_part)
            else:
                coefficient = 2 * v0 * (-1) ** ((m - 1) // 2) * bessel(m)
                modes[m] = sympy.expand(coefficient * cos_part)
        return modes


class DuffingModel(DriveModel):
    """Oscilador autónomo F(u) = -k1 u - k3 u^3 - k5 u^5 (sin forzamiento)."""

    name = "duffing"

    def __init__(
            self,
            parameters: Optional[Mapping[str, float]] = None,
            controls: Iterable[str] = (),
            *,
            linear: Optional[float] = None,
            cubic: Optional[float] = None,
            quintic: Optional[float] = None
    ):
        flat: Dict[str, float] = {"linear": 1.0, "cubic": 0.0, "quintic": 0.0}
        flat.update(parameters or {})
        for key, value in (("linear", linear), ("cubic", cubic), ("quintic", quintic)):
            if value is not None:
                flat[key] = value
        super().__init__(flat, controls)

    @classmethod
    def accepts_parameter(cls, key: str) -> bool:
        return key in ("linear", "cubic", "quintic")

    def accel(self, u, phase):
        u = np.asarray(u, dtype=float)
        p = self._params
        return -p["linear"] * u - p["cubic"] * u ** 3 - p["quintic"] * u ** 5

    def accel_du(self, u, phase):
        u = np.asarray(u, dtype=float)
        p = self._params
        return -p["linear"] - 3.0 * p["cubic"] * u ** 2 - 5.0 * p["quintic"] * u ** 4

    def accel_dp(self, u, phase, key: str):
        u = np.asarray(u, dtype=float)
        powers = {"linear": 1, "cubic": 3, "quintic": 5}
        if key not in powers:
            raise KeyError(f"Parámetro {key} ausente en el modelo {self.name}")
        return -u ** powers[key]

    @property
    def drive_free(self) -> bool:
        return True

    def potential_energy(self, u):
        u = np.asarray(u, dtype=float)
        p = self._params
        return 0.5 * p["linear"] * u ** 2 + 0.25 * p["cubic"] * u ** 4 + p["quintic"] * u ** 6 / 6.0

    def initial_guess(self, index_set: HarmonicIndexSet, a01: float) -> Tuple[float, Dict[Entry, float]]:
        p = self._params
        omega_sq = p["linear"] + 0.75 * p["cubic"] * a01 ** 2 + 0.625 * p["quintic"] * a01 ** 4
        omega = math.sqrt(omega_sq) if omega_sq > 0.0 else math.sqrt(max(p["linear"], 1e-6))
        return omega, {(0, 1): a01}

    def symbolic_force_modes(self, u, degree, symbols=None):
        force = (-self._value("linear", symbols) * u
                 - self._value("cubic", symbols) * u ** 3
                 - self._value("quintic", symbols) * u ** 5)
        return {0: sympy.expand(force)}


class PendulumModel(DriveModel):
    """Péndulo autónomo F(u) = -g sin(u)."""

    name = "pendulum"

    def __init__(
            self,
            parameters: Optional[Mapping[str, float]] = None,
            controls: Iterable[str] = (),
            *,
            gravity: Optional[float] = None
    ):
        flat: Dict[str, float] = {"gravity": 1.0}
        flat.update(parameters or {})
        if gravity is not None:
            flat["gravity"] = gravity
        super().__init__(flat, controls)

    @classmethod
    def accepts_parameter(cls, key: str) -> bool:
        return key == "gravity"

    def accel(self, u, phase):
        return -self._params["gravity"] * np.sin(np.asarray(u, dtype=float))

    def accel_du(self, u, phase):
        return -self._params["gravity"] * np.cos(np.asarray(u, dtype=float))

    def accel_dp(self, u, phase, key: str):
        if key != "gravity":
            raise KeyError(f"Parámetro {key} ausente en el modelo {self.name}")
        return -np.sin(np.asarray(u, dtype=float))

    @property
    def drive_free(self) -> bool:
        return True

    def potential_energy(self, u):
        return self._params["gravity"] * (1.0 - np.cos(np.asarray(u, dtype=float)))

    def initial_guess(self, index_set: HarmonicIndexSet, a01: float) -> Tuple[float, Dict[Entry, float]]:
        factor = 2.0 * float(special.j1(a01)) / a01 if a01 > 1e-12 else 1.0
        return math.sqrt(self._params["gravity"] * factor), {(0, 1): a01}

    def symbolic_force_modes(self, u, degree, symbols=None):
        return {0: sympy.expand(-self._value("gravity", symbols) * _sin_taylor(u, 1, degree))}


@dataclass(frozen=True)
class TargetPotential:
    """
    Potencial efectivo objetivo U = 1/2 omega0^2 (u^2 + sum C_k u^k).

    Exactamente uno de `c_coeffs` / `eps_coeffs` es provisto por el usuario.
    """
    c_coeffs: Optional[Dict[int, float]] = None
    eps_coeffs: Optional[Dict[int, float]] = None

    def __post_init__(self):
        if (self.c_coeffs is None) == (self.eps_coeffs is None):
            raise ConfigError("El objetivo requiere exactamente uno de C_k o eps_k")
        if self.c_coeffs is not None:
            self._check(self.c_coeffs, minimum=4, label="C")
            object.__setattr__(self, "c_coeffs", {int(k): float(v) for k, v in self.c_coeffs.items()})
        else:
            self._check(self.eps_coeffs, minimum=2, label="eps")
            object.__setattr__(self, "eps_coeffs", {int(k): float(v) for k, v in self.eps_coeffs.items()})

    @staticmethod
    def _check(coeffs: Mapping[int, float], minimum: int, label: str) -> None:
        for k, value in coeffs.items():
            k = int(k)
            if k < minimum or k % 2:
                raise ConfigError(f"{label}_{k}: solo órdenes pares >= {minimum}")
            if not math.isfinite(value):
                raise ConfigError(f"{label}_{k} no finito: {value}")

    @property
    def source(self) -> str:
        return "from_C" if self.c_coeffs is not None else "direct"

    def scaled(self, factor: float) -> 'TargetPotential':
        """Objetivo con todos los coeficientes multiplicados por `factor`."""
        if self.c_coeffs is not None:
            return TargetPotential(c_coeffs={k: v * factor for k, v in self.c_coeffs.items()})
        return TargetPotential(eps_coeffs={k: v * factor for k, v in self.eps_coeffs.items()})


MODEL_REGISTRY: Dict[str, Type[DriveModel]] = {
    MathieuModel.name: MathieuModel,
    OpticalLatticeModel.name: OpticalLatticeModel,
    DuffingModel.name: DuffingModel,
    PendulumModel.name: PendulumModel,
}


def create_model(name: str, parameters: Mapping[str, float], controls: Iterable[str] = ()) -> DriveModel:
    """Crea un modelo registrado a partir de parámetros planos."""
    try:
        model_cls = MODEL_REGISTRY[name]
    except KeyError:
        raise ConfigError(f"Modelo desconocido: {name}. Disponibles: {sorted(MODEL_REGISTRY)}")
    model = model_cls.from_parameters(parameters, controls)
    logger.debug(f"Modelo creado: {model!r}")
    return model


def mathieu_accel(model: MathieuModel, u, phase):
    """Aceleración de Mathieu no lineal."""
    return model.accel(u, phase)


def lattice_accel(model: OpticalLatticeModel, u, phase):
    """Aceleración de la red óptica sacudida."""
    return model.accel(u, phase)
