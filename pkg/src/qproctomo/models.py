"""Canonical analytic qubit channels used as ground truth and model references.

Constructors drop operators with zero coefficient, so e.g. ``bit_flip(0.0)``
is the single-operator identity channel. ``compose`` keeps the full product
operator list (the action is exact even when the list exceeds the minimal
Choi rank); composed sets are never fed back through the free-parameter
normalization.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BadSpec, DimensionMismatch, NotUnitary
from .operators import (KrausSet, PAULI_I, PAULI_X, PAULI_Y, PAULI_Z,
                        pairs_to_complex_matrix)


def _check_mixing_probability(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0 or not np.isfinite(p):
        raise ValueError(f"mixing probability must lie in [0, 1], got {p!r}")
    return p


def _weighted_paulis(weights_ops) -> KrausSet:
    ops = [np.sqrt(w) * op for w, op in weights_ops if w > 0.0]
    return KrausSet(np.stack(ops))


def bit_flip(p: float) -> KrausSet:
    """Flip the computational basis states with probability ``p``."""
    p = _check_mixing_probability(p)
    return _weighted_paulis([(1.0 - p, PAULI_I), (p, PAULI_X)])


def dephasing(p: float) -> KrausSet:
    """Apply a phase flip with probability ``p`` (reduced phase coherence)."""
    p = _check_mixing_probability(p)
    return _weighted_paulis([(1.0 - p, PAULI_I), (p, PAULI_Z)])


def depolarizing(p: float) -> KrausSet:
    """With probability ``p`` replace the input by the maximally mixed state."""
    p = _check_mixing_probability(p)
    return _weighted_paulis([
        (1.0 - 0.75 * p, PAULI_I),
        (0.25 * p, PAULI_X),
        (0.25 * p, PAULI_Y),
        (0.25 * p, PAULI_Z),
    ])


MODEL_FAMILIES = {
    "depolarizing": depolarizing,
    "dephasing": dephasing,
    "bitflip": bit_flip,
}


def unitary_channel(u: np.ndarray, tol: float = 1e-10) -> KrausSet:
    """Single-operator channel ``rho -> U rho U^dag``."""
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {u.shape}")
    defect = np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]))
    if defect > tol:
        raise NotUnitary(f"U^dag U deviates from identity by {defect:.3e}")
    return KrausSet(u[np.newaxis])


def compose(first: KrausSet, second: KrausSet) -> KrausSet:
    """Channel applying ``first`` then ``second``; operators ``B_j A_k``."""
    if first.dim != second.dim:
        raise DimensionMismatch(
            f"cannot compose channels of dimension {first.dim} and {second.dim}"
        )
    prod = np.einsum("jab,kbc->jkac", second.operators, first.operators)
    return KrausSet(prod.reshape(-1, first.dim, first.dim))


def pad_operators(channel: KrausSet, n_operators: int) -> KrausSet:
    """Pad with zero operators up to ``n_operators`` (for fixed-K consumers)."""
    k, d = channel.choi_rank, channel.dim
    if n_operators < k:
        raise ValueError(f"cannot pad {k} operators down to {n_operators}")
    if n_operators == k:
        return channel
    padded = np.zeros((n_operators, d, d), dtype=np.complex128)
    padded[:k] = channel.operators
    return KrausSet(padded)


def parse_model_spec(spec: str) -> KrausSet:
    """Build a channel from a CLI spec string.

    Grammar: ``depolarizing:p=0.3``, ``dephasing:p=0.1``, ``bitflip:p=0.05``,
    or ``unitary:file=<path>`` where the file holds a JSON matrix of
    ``[re, im]`` pairs.
    """
    name, _, argpart = spec.partition(":")
    name = name.strip().lower()
    if name in MODEL_FAMILIES:
        key, _, value = argpart.partition("=")
        if key.strip() != "p":
            raise BadSpec(f"model {name!r} takes a single argument p=<value>, "
                          f"got {argpart!r}")
        try:
            p = float(value)
        except ValueError:
            raise BadSpec(f"cannot parse probability {value!r}") from None
        try:
            return MODEL_FAMILIES[name](p)
        except ValueError as exc:
            raise BadSpec(str(exc)) from None
    if name == "unitary":
        key, _, value = argpart.partition("=")
        if key.strip() != "file":
            raise BadSpec(f"unitary model takes file=<path>, got {argpart!r}")
        path = Path(value)
        if not path.exists():
            raise BadSpec(f"unitary matrix file not found: {path}")
        import json

        with open(path) as fh:
            u = pairs_to_complex_matrix(json.load(fh))
        try:
            return unitary_channel(u)
        except (NotUnitary, DimensionMismatch) as exc:
            raise BadSpec(f"bad unitary in {path}: {exc}") from None
    raise BadSpec(f"unknown model family {name!r}")
