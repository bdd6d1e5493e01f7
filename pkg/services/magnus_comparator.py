"""
Comparador Floquet-Magnus de segundo orden.

Construye la fuerza efectiva independiente del tiempo sobre campos
vectoriales polinómicos en el espacio de fases (u, v) con aritmética exacta
de sympy, extrae las anarmonicidades C_k y predice parámetros de control
para contrastarlos con el motor inverso de balance armónico.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy
from scipy import optimize

from config.solver_config import get_logger, SolverConstants
from data.drive_models import DriveModel
from utils.error_handler import NonCanonical, NoRoot, log_service_error

logger = get_logger(__name__)

SERVICE_NAME = "MagnusComparator"

U, V = sympy.symbols("u v")

# Órdenes de anarmonicidad extraídos de la fuerza efectiva
EXTRACTED_ORDERS = (4, 6, 8)

_SCAN_POINTS = 401


@dataclass(frozen=True)
class PolyVectorField:
    """Campo vectorial polinómico [f_u(u, v), f_v(u, v)]."""
    components: Tuple[sympy.Poly, sympy.Poly]

    @classmethod
    def from_exprs(cls, u_component, v_component) -> 'PolyVectorField':
        return cls((sympy.Poly(u_component, U, V), sympy.Poly(v_component, U, V)))

    @classmethod
    def zero(cls) -> 'PolyVectorField':
        return cls.from_exprs(0, 0)

    def __add__(self, other: 'PolyVectorField') -> 'PolyVectorField':
        return PolyVectorField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: 'PolyVectorField') -> 'PolyVectorField':
        return PolyVectorField(tuple(a - b for a, b in zip(self.components, other.components)))

    def scale(self, factor) -> 'PolyVectorField':
        return PolyVectorField(tuple(c * factor for c in self.components))

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.components)

    @property
    def max_degree(self) -> int:
        return max((c.total_degree() for c in self.components if not c.is_zero), default=0)

    @property
    def is_force_only(self) -> bool:
        """Primera componente nula y segunda independiente de v."""
        return self.components[0].is_zero and self.components[1].degree(V) <= 0

    def coefficient_map(self, index: int) -> Dict[Tuple[int, int], sympy.Expr]:
        """(potencia de u, potencia de v) -> coeficiente."""
        return {powers: coeff for powers, coeff in self.components[index].as_dict().items()}

    def as_exprs(self) -> Tuple[sympy.Expr, sympy.Expr]:
        return tuple(c.as_expr() for c in self.components)


def lie_bracket(f: PolyVectorField, g: PolyVectorField) -> PolyVectorField:
    """[f, g]_i = sum_j (f_j d_j g_i - g_j d_j f_i)."""
    if f.is_force_only and g.is_force_only:
        return PolyVectorField.zero()
    fu, fv = f.components
    gu, gv = g.components
    result = []
    for fi, gi in ((fu, gu), (fv, gv)):
        result.append(fu * gi.diff(U) + fv * gi.diff(V) - gu * fi.diff(U) - gv * fi.diff(V))
    return PolyVectorField(tuple(result))


@dataclass(frozen=True)
class FourierVectorField:
    """Modos F_m de F(phi, t) = sum_m F_m exp(-i m Omega t)."""
    modes: Mapping[int, PolyVectorField]

    def __post_init__(self):
        if 0 not in self.modes:
            raise ValueError("El campo de Fourier requiere el modo m = 0")
        missing = [m for m in self.modes if -m not in self.modes]
        if missing:
            raise ValueError(f"Modos sin pareja conjugada: {missing}")

    def mode(self, m: int) -> Optional[PolyVectorField]:
        return self.modes.get(m)

    @property
    def nonzero_modes(self) -> Tuple[int, ...]:
        return tuple(sorted(m for m in self.modes if m != 0))


@dataclass(frozen=True)
class EffectiveForcePolynomial:
    """
    F_eff(u) = -(c2 u + c4' u^3 + c6' u^5 + c8' u^7).

    `c_coeffs` guarda C_k = c_k' / ((k/2) c2).
    """
    force: Dict[int, sympy.Expr]
    omega0_sq: sympy.Expr
    c_coeffs: Dict[int, sympy.Expr]
    field: PolyVectorField

    def numeric(self) -> Tuple[float, Dict[int, float]]:
        """(c2, {k: C_k}) como flotantes; falla si quedan símbolos."""
        return float(self.omega0_sq), {k: float(value) for k, value in self.c_coeffs.items()}


@dataclass(frozen=True)
class ControlPrediction:
    """Predicción perturbativa de un parámetro de control."""
    control: str
    value: float
    beta_fm: float
    c_coeffs: Dict[int, float]
    c2: float

    def diagnostics(self, label: str) -> Dict[str, Any]:
        return {
            "label": label,
            "solver": "floquet_magnus",
            "converged": True,
            "control": self.control,
            "value": self.value,
            "beta_fm": self.beta_fm,
        }


def fourier_field_for(
        model: DriveModel,
        degree: int = SolverConstants.MAGNUS_DEGREE,
        symbols: Optional[Mapping[str, sympy.Symbol]] = None
) -> FourierVectorField:
    """F_0 = [v, f_0(u)], F_{+-m} = [0, f_m(u)/2] a partir de los modos coseno del modelo."""
    modes: Dict[int, PolyVectorField] = {}
    for m, expr in model.symbolic_force_modes(U, degree, symbols).items():
        if m == 0:
            modes[0] = PolyVectorField.from_exprs(V, expr)
            continue
        half = PolyVectorField.from_exprs(0, sympy.expand(expr / 2))
        if half.is_zero:
            continue
        modes[m] = half
        modes[-m] = half
    return FourierVectorField(modes)


def _effective_field(field: FourierVectorField, Omega) -> PolyVectorField:
    omega = sympy.nsimplify(Omega)
    F0 = field.mode(0)
    nonzero = field.nonzero_modes

    first = PolyVectorField.zero()
    for m in nonzero:
        first = first + lie_bracket(field.mode(-m), field.mode(m)).scale(sympy.Rational(1, 2 * m) / omega)

    second = PolyVectorField.zero()
    for m in nonzero:
        inner = lie_bracket(F0, field.mode(m))
        second = second + lie_bracket(field.mode(-m), inner).scale(1 / (2 * (m * omega) ** 2))
        for n in nonzero:
            if n == m or (n - m) not in field.modes:
                continue
            inner = lie_bracket(field.mode(n - m), field.mode(m))
            if inner.is_zero:
                continue
            second = second + lie_bracket(field.mode(-n), inner).scale(1 / (3 * n * m * omega ** 2))

    # Cada conmutador de generadores de Liouville aporta un factor i
    if not first.is_zero:
        first = PolyVectorField.from_exprs(*(sympy.expand(sympy.I * c) for c in first.as_exprs()))
    return F0 + first - second


def effective_force_2nd_order(
        field: FourierVectorField,
        Omega: float = SolverConstants.DRIVE_OMEGA,
        parity_symmetric: bool = True
) -> EffectiveForcePolynomial:
    """
    Fuerza efectiva hasta orden Omega^-2.

    Raises:
        NonCanonical: la primera componente no se reduce a v, la fuerza
            depende de v, aparece una parte imaginaria o hay potencias pares
            en una entrada con simetría de paridad
    """
    effective = _effective_field(field, Omega)
    u_component, v_component = effective.components

    if not (u_component - sympy.Poly(V, U, V)).is_zero:
        raise NonCanonical(f"Primera componente efectiva distinta de v: {u_component.as_expr()}")
    if v_component.degree(V) > 0:
        raise NonCanonical(f"Fuerza efectiva dependiente de v: {v_component.as_expr()}")

    coefficients: Dict[int, sympy.Expr] = {}
    for (p_u, _), coeff in v_component.as_dict().items():
        value = sympy.expand(coeff)
        if value.has(sympy.I):
            raise NonCanonical(f"Coeficiente complejo en u^{p_u}: {value}")
        coefficients[p_u] = value

    if parity_symmetric:
        even = {p: c for p, c in coefficients.items() if p % 2 == 0 and c != 0}
        if even:
            raise NonCanonical(f"Potencias pares en la fuerza efectiva: {sorted(even)}")

    force = {p: -coefficients.get(p, sympy.Integer(0)) for p in (1, 3, 5, 7)}
    c2 = force[1]
    c_coeffs = {
        k: force[k - 1] / (sympy.Rational(k, 2) * c2) if c2 != 0 else sympy.nan
        for k in EXTRACTED_ORDERS
    }
    if c2.is_number and not c2 > 0:
        logger.warning(f"⚠️ c2 = {c2} no positivo: C_k no definidos")
    return EffectiveForcePolynomial(force, c2, c_coeffs, effective)


def effective_force_for(
        model: DriveModel,
        degree: int = SolverConstants.MAGNUS_DEGREE,
        Omega: float = SolverConstants.DRIVE_OMEGA
) -> EffectiveForcePolynomial:
    """Fuerza efectiva numérica a los parámetros actuales del modelo."""
    return effective_force_2nd_order(fourier_field_for(model, degree), Omega, model.parity_symmetric)


def beta_from_c2(c2: float, Omega: float = SolverConstants.DRIVE_OMEGA) -> float:
    """beta_FM = 2 sqrt(c2) / Omega."""
    return 2.0 * math.sqrt(c2) / Omega if c2 > 0.0 else float("nan")


class MagnusComparator:
    """Predicción de controles por Floquet-Magnus con caché de expresiones simbólicas."""

    def __init__(self, degree: int = SolverConstants.MAGNUS_DEGREE, Omega: float = SolverConstants.DRIVE_OMEGA):
        self.degree = degree
        self.Omega = Omega
        self.logger = get_logger(__name__)

    def symbolic_effective_force(self, model: DriveModel, control: str) -> Tuple[sympy.Symbol, EffectiveForcePolynomial]:
        """Fuerza efectiva con el control como símbolo afín."""
        symbol = sympy.Symbol(control, real=True)
        field = fourier_field_for(model, self.degree, {control: symbol})
        return symbol, effective_force_2nd_order(field, self.Omega, model.parity_symmetric)

    def anharmonicity_curve(self, model: DriveModel, control: str, k: int = 4):
        """Funciones numéricas control -> (C_k, c2)."""
        symbol, effective = self.symbolic_effective_force(model, control)
        modules = ["scipy", "numpy"]
        c_k = sympy.lambdify(symbol, effective.c_coeffs[k], modules=modules)
        c2 = sympy.lambdify(symbol, effective.omega0_sq, modules=modules)
        return c_k, c2, effective

    def predict_control(
            self,
            model: DriveModel,
            control: str,
            target_ck: float,
            k: int = 4,
            bracket: Optional[Tuple[float, float]] = None
    ) -> ControlPrediction:
        """
        Resuelve C_k(control) = objetivo sobre el intervalo de búsqueda.

        Raises:
            NoRoot: sin cambio de signo en el intervalo explorado
        """
        if k not in EXTRACTED_ORDERS:
            raise ValueError(f"Orden C_{k} no extraído; disponibles {EXTRACTED_ORDERS}")

        c_k_fn, c2_fn, effective = self.anharmonicity_curve(model, control, k)
        low, high = bracket or model.control_bracket(control)

        def mismatch(x: float) -> float:
            if not float(c2_fn(x)) > 0.0:
                return float("nan")
            return float(c_k_fn(x)) - target_ck

        grid = np.linspace(low, high, _SCAN_POINTS)
        values = np.array([mismatch(x) for x in grid])

        root: Optional[float] = None
        for i in range(len(grid)):
            if values[i] == 0.0:
                root = float(grid[i])
                break
            if i + 1 < len(grid) and np.isfinite(values[i]) and np.isfinite(values[i + 1]) \
                    and values[i] * values[i + 1] < 0.0:
                root = optimize.brentq(mismatch, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
                break

        if root is None:
            error = NoRoot(
                f"C_{k}({control}) = {target_ck} sin raíz en [{low}, {high}]",
                {"model": repr(model), "control": control}
            )
            log_service_error(SERVICE_NAME, error)
            raise error

        c2 = float(c2_fn(root))
        c_values = {}
        for order in EXTRACTED_ORDERS:
            value = effective.c_coeffs[order]
            c_values[order] = float(value.subs(sympy.Symbol(control, real=True), root)) \
                if value.free_symbols else float(value)

        prediction = ControlPrediction(control, root, beta_from_c2(c2, self.Omega), c_values, c2)
        self.logger.debug(f"🔮 FM {model.name}: {control}={root:.12g}, beta_FM={prediction.beta_fm:.12g}")
        return prediction

    def truncation_stability(
            self,
            model: DriveModel,
            degrees: Sequence[int] = (9, 11),
            k: int = 4
    ) -> float:
        """Cambio relativo de C_k entre truncamientos de Taylor."""
        values = []
        for degree in degrees:
            _, c_coeffs = effective_force_for(model, degree, self.Omega).numeric()
            values.append(c_coeffs[k])
        reference = values[-1]
        return abs(values[0] - reference) / abs(reference) if reference != 0.0 else abs(values[0])


# Instancia global del comparador
magnus_comparator = MagnusComparator()


def predict_control(model: DriveModel, control: str, target_ck: float, k: int = 4) -> ControlPrediction:
    """Función de conveniencia para predicciones FM."""
    return magnus_comparator.predict_control(model, control, target_ck, k)
