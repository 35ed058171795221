import numpy as np
import pytest


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Gaussian matrix."""
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(m)
    phases = np.diag(r) / np.abs(np.diag(r))
    return q * phases.conj()


def random_channel(rng: np.random.Generator, dim: int = 2):
    """Random trace-preserving channel from the free-parameter construction."""
    from qproctomo import kraus_from_params

    k = dim * dim
    y = rng.standard_normal(k * dim * dim) + 1j * rng.standard_normal(k * dim * dim)
    return kraus_from_params(y, dim, k)


def random_density_matrix(rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
