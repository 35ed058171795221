"""Complex linear algebra over small dense matrices and channel representations.

Conventions frozen here and relied on elsewhere:

* Kraus parameter vectors are packed row-major: entry ``y[k*D*D + i*D + j]``
  is element ``(i, j)`` of the k-th pre-normalization matrix.
* The Liouville representation uses the orthonormal operator basis
  ``{I, X, Y, Z} / sqrt(2)`` and is only defined for qubits.
* Matrices serialize to JSON as row-major nested lists of ``[re, im]`` pairs.
* All entropies are base 2 (bits / qubits per channel use).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NearSingular, UnsupportedDimension

TRACE_PRESERVING_TOL = 1e-10
HERMITIAN_TOL = 1e-12
EIGENVALUE_TOL = -1e-10

PAULI_I = np.eye(2, dtype=np.complex128)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
PAULIS = (PAULI_I, PAULI_X, PAULI_Y, PAULI_Z)


@dataclass(frozen=True)
class KrausSet:
    """A trace-preserving channel stored as a stack of Kraus operators.

    ``operators`` has shape ``(K, D, D)``; the channel acts as
    ``rho -> sum_k A_k rho A_k^dag``. Construction verifies the
    trace-preserving condition ``sum_k A_k^dag A_k = I`` to Frobenius
    tolerance 1e-10.
    """

    operators: np.ndarray

    def __post_init__(self):
        ops = np.ascontiguousarray(self.operators, dtype=np.complex128)
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
            raise DimensionMismatch(
                f"expected operator stack of shape (K, D, D), got {ops.shape}"
            )
        if ops.shape[0] < 1:
            raise DimensionMismatch("need at least one Kraus operator")
        if not np.all(np.isfinite(ops.view(np.float64))):
            raise ValueError("Kraus operators contain non-finite entries")
        defect = np.linalg.norm(
            np.einsum("kji,kjl->il", ops.conj(), ops) - np.eye(ops.shape[1])
        )
        if defect > TRACE_PRESERVING_TOL:
            raise ValueError(
                f"operator set is not trace-preserving: defect {defect:.3e}"
            )
        object.__setattr__(self, "operators", ops)

    @property
    def dim(self) -> int:
        return self.operators.shape[1]

    @property
    def choi_rank(self) -> int:
        return self.operators.shape[0]


@dataclass(frozen=True)
class LiouvilleMatrix:
    """Channel as a matrix on the normalized Pauli basis.

    ``matrix[mu, nu] = Tr[X_mu E(X_nu)]`` with ``X_mu in {I,X,Y,Z}/sqrt(2)``.
    For a trace-preserving channel the first row is ``(1, 0, 0, 0)`` and the
    matrix splits into the nonunital vector ``x = matrix[1:, 0]`` and the
    unital block ``T = matrix[1:, 1:]``.
    """

    matrix: np.ndarray

    @property
    def unital_block(self) -> np.ndarray:
        return self.matrix[1:, 1:]

    @property
    def nonunital_vector(self) -> np.ndarray:
        return self.matrix[1:, 0]


def validate_pure_state(psi: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.ndim != 1 or psi.size < 1:
        raise DimensionMismatch(f"expected a state vector, got shape {psi.shape}")
    norm = float(np.sum(np.abs(psi) ** 2))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"state vector not normalized: |psi|^2 = {norm!r}")
    return psi

def validate_density_matrix(rho: np.ndarray,
                            herm_tol: float = HERMITIAN_TOL,
                            trace_tol: float = HERMITIAN_TOL,
                            eig_tol: float = EIGENVALUE_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian to tolerance")
    if abs(np.trace(rho).real - 1.0) > trace_tol or abs(np.trace(rho).imag) > trace_tol:
        raise ValueError(f"density matrix trace is {np.trace(rho)!r}, expected 1")
    if np.linalg.eigvalsh(rho).min() < eig_tol:
        raise ValueError("density matrix has a negative eigenvalue beyond tolerance")
    return rho


def validate_choi(choi: np.ndarray,
                  herm_tol: float = HERMITIAN_TOL,
                  eig_tol: float = EIGENVALUE_TOL) -> np.ndarray:
    """Check Hermiticity, positivity and unit trace of a Choi matrix."""
    choi = np.asarray(choi, dtype=np.complex128)
    if choi.ndim != 2 or choi.shape[0] != choi.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {choi.shape}")
    d2 = choi.shape[0]
    d = int(round(np.sqrt(d2)))
    if d * d != d2:
        raise DimensionMismatch(f"Choi matrix side {d2} is not a perfect square")
    if np.max(np.abs(choi - choi.conj().T)) > herm_tol:
        raise ValueError("Choi matrix is not Hermitian to tolerance")
    if abs(np.trace(choi) - 1.0) > herm_tol:
        raise ValueError(f"Choi matrix trace is {np.trace(choi)!r}, expected 1")
    if np.linalg.eigvalsh(choi).min() < eig_tol:
        raise ValueError("Choi matrix has a negative eigenvalue beyond tolerance")
    return choi


def hermitian_inverse_sqrt(h: np.ndarray, rel_tol: float = 1e-14) -> np.ndarray:
    """Inverse square root of a Hermitian positive-definite matrix.

    Computed by eigendecomposition, which is unconditionally stable for the
    small matrices handled here and gives a clean singularity diagnostic.

    Raises
    ------
    NearSingular
        If the smallest eigenvalue does not exceed ``rel_tol`` times the
        largest. Callers sampling random parameters treat this as a rejected
        proposal.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {h.shape}")
    if np.max(np.abs(h - h.conj().T)) > 1e-10:
        raise ValueError("matrix is not Hermitian to tolerance 1e-10")
    w, v = np.linalg.eigh(h)
    if w[-1] <= 0.0 or w[0] <= rel_tol * w[-1]:
        raise NearSingular(
            f"eigenvalue ratio {w[0]:.3e}/{w[-1]:.3e} below threshold {rel_tol:g}"
        )
    return (v * (1.0 / np.sqrt(w))) @ v.conj().T


def kraus_from_params(y: np.ndarray, dim: int, n_operators: int) -> KrausSet:
    """Build a trace-preserving Kraus set from a free complex parameter vector.

    The ``n_operators * dim**2`` entries of ``y`` fill ``n_operators``
    matrices ``G_k`` row-major; with ``H = sum_k G_k^dag G_k`` the Kraus
    operators are ``A_k = G_k H^{-1/2}``, which satisfies
    ``sum_k A_k^dag A_k = I`` for any non-degenerate draw.
    """
    y = np.asarray(y, dtype=np.complex128).ravel()
    if y.size != n_operators * dim * dim:
        raise DimensionMismatch(
            f"expected {n_operators * dim * dim} parameters, got {y.size}"
        )
    if not np.all(np.isfinite(y.view(np.float64))):
        raise ValueError("parameter vector contains non-finite entries")
    g = y.reshape(n_operators, dim, dim)
    h = np.einsum("kji,kjl->il", g.conj(), g)
    m = hermitian_inverse_sqrt(h)
    return KrausSet(g @ m)


def apply_channel(channel: KrausSet, rho: np.ndarray) -> np.ndarray:
    """Apply ``rho -> sum_k A_k rho A_k^dag``."""
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (channel.dim, channel.dim):
        raise DimensionMismatch(
            f"state shape {rho.shape} does not match channel dimension {channel.dim}"
        )
    ops = channel.operators
    return np.einsum("kij,jl,kml->im", ops, rho, ops.conj())


def apply_to_operator(channel: KrausSet, op: np.ndarray) -> np.ndarray:
    """Channel action on an arbitrary (not necessarily unit-trace) operator."""
    ops = channel.operators
    return np.einsum("kij,jl,kml->im", ops, np.asarray(op, dtype=np.complex128),
                     ops.conj())


def to_choi(channel: KrausSet) -> np.ndarray:
    """Trace-normalized Choi matrix.

    Block ``(i, j)`` of the result is ``E(|i><j|)``; the whole matrix is
    scaled to unit trace. Output shape is ``(D*D, D*D)``.
    """
    a = channel.operators
    d = channel.dim
    c = np.einsum("kmi,knj->imjn", a, a.conj()).reshape(d * d, d * d)
    return c / d


def to_liouville(channel: KrausSet) -> LiouvilleMatrix:
    """Channel matrix in the normalized Pauli basis (qubits only)."""
    if channel.dim != 2:
        raise UnsupportedDimension(
            f"Pauli operator basis requires dimension 2, got {channel.dim}"
        )
    basis = [p / np.sqrt(2.0) for p in PAULIS]
    mat = np.empty((4, 4), dtype=np.complex128)
    for nu, x_nu in enumerate(basis):
        image = apply_to_operator(channel, x_nu)
        for mu, x_mu in enumerate(basis):
            mat[mu, nu] = np.trace(x_mu.conj().T @ image)
    return LiouvilleMatrix(mat)


def von_neumann_entropy(rho: np.ndarray) -> float:
    """Entropy ``-sum_i lam_i log2 lam_i`` in bits, with 0 log 0 = 0."""
    w = np.linalg.eigvalsh(np.asarray(rho, dtype=np.complex128))
    w = w[w > 0.0]
    if w.size == 0:
        return 0.0
    return float(max(-np.sum(w * np.log2(w)), 0.0))


def purity(rho: np.ndarray) -> float:
    """State purity ``Tr rho^2``."""
    rho = np.asarray(rho, dtype=np.complex128)
    return float(np.real(np.trace(rho @ rho)))


# -- JSON serialization helpers ------------------------------------------

def complex_matrix_to_pairs(m: np.ndarray) -> list:
    """Row-major nested lists of [re, im] pairs."""
    m = np.asarray(m, dtype=np.complex128)
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def pairs_to_complex_matrix(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"expected nested [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def kraus_to_dict(channel: KrausSet) -> dict:
    return {
        "dim": channel.dim,
        "choi_rank": channel.choi_rank,
        "operators": [complex_matrix_to_pairs(a) for a in channel.operators],
    }


def kraus_from_dict(d: dict) -> KrausSet:
    ops = np.stack([pairs_to_complex_matrix(a) for a in d["operators"]])
    if ops.shape[0] != d["choi_rank"] or ops.shape[1] != d["dim"]:
        raise DimensionMismatch("operator stack inconsistent with declared dim/rank")
    return KrausSet(ops)
