"""
Spin system: Hamiltonian plus singlet/triplet projectors.

ħ = 1 throughout, so the Hamiltonian and both rate constants share
reciprocal-time units. The minimal model uses the basis order (|S⟩, |T⟩).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from src.core import linalg
from src.utils.errors import PhysicsError

# tolerance applied to user-supplied matrices
VALIDATION_TOL = 1e-10


@dataclass(frozen=True)
class RateConstants:
    """First-order singlet and triplet reaction rate constants (reciprocal time)."""

    k_s: float = 0.0
    k_t: float = 0.0

    def __post_init__(self):
        for name in ("k_s", "k_t"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise PhysicsError(f"{name} must be finite, got {value}")
            if value < 0:
                raise PhysicsError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, float(value))

    @property
    def total(self) -> float:
        return self.k_s + self.k_t

    @property
    def equal(self) -> bool:
        return self.k_s == self.k_t


@dataclass(frozen=True, eq=False)
class SpinSystem:
    hamiltonian: np.ndarray
    q_singlet: np.ndarray
    q_triplet: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        h = linalg.require_square(self.hamiltonian, "hamiltonian")
        object.__setattr__(self, "dim", h.shape[0])
        for name in ("hamiltonian", "q_singlet", "q_triplet"):
            m = linalg.as_matrix(getattr(self, name)).copy()
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        self.validate()

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    @property
    def is_two_level(self) -> bool:
        return self.dim == 2

    def residuals(self) -> dict:
        """Projector-algebra residuals, all expected to vanish."""
        h, qs, qt = self.hamiltonian, self.q_singlet, self.q_triplet
        return {
            "hamiltonian_hermiticity": linalg.hermiticity_defect(h),
            "q_singlet_idempotency": linalg.max_abs(qs @ qs - qs),
            "q_triplet_idempotency": linalg.max_abs(qt @ qt - qt),
            "q_singlet_hermiticity": linalg.hermiticity_defect(qs),
            "q_triplet_hermiticity": linalg.hermiticity_defect(qt),
            "completeness": linalg.max_abs(qs + qt - self.identity),
            "orthogonality": max(linalg.max_abs(qs @ qt), linalg.max_abs(qt @ qs)),
            "trace_sum": abs(float(np.trace(qs).real + np.trace(qt).real) - self.dim),
        }

    def validate(self, tol: float = VALIDATION_TOL) -> None:
        for name in ("q_singlet", "q_triplet"):
            shape = getattr(self, name).shape
            if shape != (self.dim, self.dim):
                raise PhysicsError(f"{name} has shape {shape}, expected {(self.dim, self.dim)}")
        for name, value in self.residuals().items():
            if value > tol:
                raise PhysicsError(f"spin system invalid: {name} residual {value:.3e} exceeds {tol:g}")


def minimal_two_level(omega: float) -> SpinSystem:
    """
    The {|S⟩, |T⟩} model with singlet–triplet mixing frequency ω = ⟨S|H|T⟩.

    Args:
        omega: mixing frequency (reciprocal time); may be zero or negative.
    """
    if not math.isfinite(omega):
        raise PhysicsError(f"omega must be finite, got {omega}")
    h = np.array([[0.0, omega], [omega, 0.0]], dtype=complex)
    q_s = np.diag([1.0, 0.0]).astype(complex)
    q_t = np.diag([0.0, 1.0]).astype(complex)
    return SpinSystem(h, q_s, q_t)


def from_matrices(h, q_s) -> SpinSystem:
    """
    General entry point: Q_T is taken as E − Q_S.

    Raises:
        PhysicsError: non-Hermitian h, non-projector q_s, or a dimension mismatch.
    """
    h = linalg.require_square(h, "hamiltonian")
    q_s = linalg.require_square(q_s, "q_singlet")
    if h.shape != q_s.shape:
        raise PhysicsError(f"dimension mismatch: hamiltonian {h.shape} vs q_singlet {q_s.shape}")
    defect = linalg.hermiticity_defect(h)
    if defect > VALIDATION_TOL:
        raise PhysicsError(f"hamiltonian is not Hermitian (defect {defect:.3e})")
    if not linalg.is_projector(q_s, VALIDATION_TOL):
        raise PhysicsError("q_singlet is not an orthogonal projector (Q² ≠ Q or Q ≠ Q†)")
    q_t = np.eye(h.shape[0], dtype=complex) - q_s
    return SpinSystem(h, q_s, q_t)
