import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


def random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def random_density_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def two_spin_singlet_projector() -> np.ndarray:
    """|S⟩⟨S| in the (↑↑, ↑↓, ↓↑, ↓↓) basis."""
    s = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)
    return np.outer(s, s).astype(complex)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def hermitian(rng):
    return lambda n: random_hermitian(rng, n)


@pytest.fixture
def density_matrix(rng):
    return lambda n: random_density_matrix(rng, n)


@pytest.fixture
def singlet_projector_4():
    return two_spin_singlet_projector()


@pytest.fixture
def four_level_system(hermitian, singlet_projector_4):
    from src.core.spinsys import from_matrices

    return from_matrices(hermitian(4), singlet_projector_4)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    monkeypatch.delenv("RADPAIR_THREADS", raising=False)
    monkeypatch.delenv("RADPAIR_OUT", raising=False)
