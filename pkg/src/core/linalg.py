"""
Dense complex linear algebra for Hilbert and Liouville space.

Vectorization is row-stacking (numpy's C order): vec([[a, b], [c, d]]) = (a, b, c, d).
In this convention vec(A ρ B) = (A ⊗ Bᵀ) vec(ρ), so left multiplication is
A ⊗ E and right multiplication is E ⊗ Aᵀ.
"""

import numpy as np
import scipy.linalg

from src.utils.errors import PhysicsError

DEFAULT_TOL = 1e-12


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D complex array."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise PhysicsError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def require_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise PhysicsError(f"{name} must be square, got shape {m.shape}")
    return m


def kron(a, b) -> np.ndarray:
    """(a⊗b)[i·p+k, j·q+l] = a[i,j]·b[k,l] for b of shape p×q."""
    return np.kron(as_matrix(a), as_matrix(b))


def expm(a) -> np.ndarray:
    """
    Matrix exponential.

    scipy's Al-Mohy/Higham scaling-and-squaring Padé core; accepts a stack of
    square matrices (..., n, n) as well.
    """
    m = np.asarray(a, dtype=complex)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise PhysicsError(f"expm needs square input, got shape {m.shape}")
    return scipy.linalg.expm(m)


def vec(rho) -> np.ndarray:
    return as_matrix(rho).reshape(-1).copy()


def unvec(v, n: int | None = None) -> np.ndarray:
    """Inverse of vec. Also accepts a stack (..., n²) of vectors."""
    v = np.asarray(v, dtype=complex)
    size = v.shape[-1]
    root = int(round(np.sqrt(size)))
    if root * root != size:
        raise PhysicsError(f"vector length {size} is not a perfect square")
    if n is not None and n != root:
        raise PhysicsError(f"vector length {size} does not match dimension {n}")
    return v.reshape(*v.shape[:-1], root, root)


def dagger(a) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermiticity_defect(a) -> float:
    m = np.asarray(a, dtype=complex)
    return float(np.max(np.abs(m - dagger(m)))) if m.size else 0.0


def is_hermitian(a, tol: float = DEFAULT_TOL) -> bool:
    return hermiticity_defect(a) <= tol


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of the Hermitian part of a."""
    m = require_square(a)
    return float(scipy.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])


def is_positive_semidefinite(a, tol: float = DEFAULT_TOL) -> bool:
    return is_hermitian(a, tol) and min_eigenvalue(a) >= -tol


def is_projector(a, tol: float = DEFAULT_TOL) -> bool:
    m = require_square(a)
    return is_hermitian(m, tol) and float(np.max(np.abs(m @ m - m), initial=0.0)) <= tol


def max_abs(a) -> float:
    m = np.asarray(a)
    return float(np.max(np.abs(m))) if m.size else 0.0
