"""
Kinetic superoperators in Liouville space (row-stacking convention).

Both generators act as dρ⃗/dt = −L ρ⃗:

- haberkorn:    V = iĤ⁻ + ½k_S Q_S⁺ + ½k_T Q_T⁺
- measurement:  W = iĤ⁻ + (k_S + k_T)E − k_S Q_T⊗Q̃_T − k_T Q_S⊗Q̃_S

and differ by the decoherence gap W − V = ½k_S (Q_S⁻)² + ½k_T (Q_T⁻)².
"""

import enum
from dataclasses import dataclass

import numpy as np

from src.core import linalg
from src.core.spinsys import RateConstants, SpinSystem
from src.utils.errors import PhysicsError


class Kind(str, enum.Enum):
    HABERKORN = "haberkorn"
    MEASUREMENT = "measurement"
    COHERENT = "coherent-only"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise PhysicsError(f"unknown superoperator kind {value!r} (expected one of {choices})")


APPROACHES = (Kind.HABERKORN, Kind.MEASUREMENT)


@dataclass(frozen=True, eq=False)
class Superoperator:
    matrix: np.ndarray
    kind: Kind
    system: SpinSystem
    rates: RateConstants
    convention: str = "row-stacking"

    @property
    def dim(self) -> int:
        return self.system.dim

    def __post_init__(self):
        n2 = self.dim * self.dim
        if self.matrix.shape != (n2, n2):
            raise PhysicsError(f"superoperator shape {self.matrix.shape} does not match dim {self.dim}")

    def apply(self, rho) -> np.ndarray:
        """−L acting on ρ, returned as a matrix (the master-equation right-hand side)."""
        return linalg.unvec(-self.matrix @ linalg.vec(rho), self.dim)

    def propagator(self, t: float) -> np.ndarray:
        return linalg.expm(-self.matrix * t)


def commutator_superop(a) -> np.ndarray:
    """A⁻ = A⊗E − E⊗Aᵀ, so that A⁻ vec(ρ) = vec(Aρ − ρA)."""
    a = linalg.require_square(a)
    e = np.eye(a.shape[0], dtype=complex)
    return linalg.kron(a, e) - linalg.kron(e, a.T)


def anticommutator_superop(a) -> np.ndarray:
    """A⁺ = A⊗E + E⊗Aᵀ, so that A⁺ vec(ρ) = vec(Aρ + ρA)."""
    a = linalg.require_square(a)
    e = np.eye(a.shape[0], dtype=complex)
    return linalg.kron(a, e) + linalg.kron(e, a.T)


def sandwich_superop(a, b=None) -> np.ndarray:
    """A⊗B̃: vec(AρB) for B defaulting to A."""
    a = linalg.require_square(a)
    b = a if b is None else linalg.require_square(b)
    return linalg.kron(a, b.T)


def _check_rates(rates: RateConstants) -> None:
    if rates.k_s < 0 or rates.k_t < 0:
        raise PhysicsError(f"rate constants must be non-negative, got k_s={rates.k_s}, k_t={rates.k_t}")


def coherent_superop(sys: SpinSystem) -> Superoperator:
    return Superoperator(1j * commutator_superop(sys.hamiltonian), Kind.COHERENT, sys, RateConstants())


def haberkorn_superop(sys: SpinSystem, rates: RateConstants) -> Superoperator:
    _check_rates(rates)
    v = (
        1j * commutator_superop(sys.hamiltonian)
        + 0.5 * rates.k_s * anticommutator_superop(sys.q_singlet)
        + 0.5 * rates.k_t * anticommutator_superop(sys.q_triplet)
    )
    return Superoperator(v, Kind.HABERKORN, sys, rates)


def measurement_superop(sys: SpinSystem, rates: RateConstants) -> Superoperator:
    _check_rates(rates)
    n2 = sys.dim * sys.dim
    w = (
        1j * commutator_superop(sys.hamiltonian)
        + rates.total * np.eye(n2, dtype=complex)
        - rates.k_s * sandwich_superop(sys.q_triplet)
        - rates.k_t * sandwich_superop(sys.q_singlet)
    )
    return Superoperator(w, Kind.MEASUREMENT, sys, rates)


def kinetic_superop(sys: SpinSystem, rates: RateConstants, kind) -> Superoperator:
    kind = Kind.parse(kind)
    if kind is Kind.HABERKORN:
        return haberkorn_superop(sys, rates)
    if kind is Kind.MEASUREMENT:
        return measurement_superop(sys, rates)
    return coherent_superop(sys)


def decoherence_gap(sys: SpinSystem, rates: RateConstants) -> tuple[np.ndarray, float]:
    """
    The extra dephasing the measurement scheme adds on top of Haberkorn.

    Returns:
        (gap, residual): gap = ½k_S(Q_S⁻)² + ½k_T(Q_T⁻)² and ‖W − V − gap‖_max.
    """
    qs_minus = commutator_superop(sys.q_singlet)
    qt_minus = commutator_superop(sys.q_triplet)
    gap = 0.5 * rates.k_s * (qs_minus @ qs_minus) + 0.5 * rates.k_t * (qt_minus @ qt_minus)
    w = measurement_superop(sys, rates).matrix
    v = haberkorn_superop(sys, rates).matrix
    return gap, linalg.max_abs(w - v - gap)


def analytic_propagator(kind, rates: RateConstants, t: float, sys: SpinSystem | None = None) -> np.ndarray:
    """
    Closed-form exp(−Lt) for the two-level system with H = 0.

    Diagonal in the {|S⟩⟨S|, |S⟩⟨T|, |T⟩⟨S|, |T⟩⟨T|} basis; coherences decay at
    the mean rate (haberkorn) or at the sum rate (measurement). When sys is
    given it must be that system.
    """
    kind = Kind.parse(kind)
    if sys is not None:
        check_two_level_zero_hamiltonian(sys)
    if t < 0:
        raise PhysicsError(f"time must be non-negative, got {t}")
    _check_rates(rates)
    if kind is Kind.HABERKORN:
        coherence_rate = 0.5 * rates.total
    elif kind is Kind.MEASUREMENT:
        coherence_rate = rates.total
    else:
        raise PhysicsError("analytic propagator is defined for haberkorn and measurement only")
    return np.diag(
        np.exp(-np.array([rates.k_s, coherence_rate, coherence_rate, rates.k_t]) * t)
    ).astype(complex)


def check_two_level_zero_hamiltonian(sys: SpinSystem) -> None:
    """analytic_propagator applies only to the H = 0 {S, T} model."""
    if sys.dim != 2:
        raise PhysicsError(f"analytic propagator needs the two-level system, got dim {sys.dim}")
    if linalg.max_abs(sys.hamiltonian) > 0:
        raise PhysicsError("analytic propagator needs H = 0")


def equal_rate_factorization_residual(sys: SpinSystem, k: float, times, kind=Kind.HABERKORN) -> float:
    """
    max_t ‖exp(−Lt) − e^{−kt} exp(−iĤ⁻t)‖_max for k_S = k_T = k.

    Vanishes for the Haberkorn scheme, whose recombination term is k·E; the
    measurement scheme keeps a non-zero residual whenever k > 0 and both
    projectors are non-trivial.
    """
    v = kinetic_superop(sys, RateConstants(k, k), kind).matrix
    coherent = coherent_superop(sys).matrix
    times = np.asarray(times, dtype=float)
    full = linalg.expm(-v[None] * times[:, None, None])
    factored = np.exp(-k * times)[:, None, None] * linalg.expm(-coherent[None] * times[:, None, None])
    return linalg.max_abs(full - factored)
