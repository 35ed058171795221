"""Channel diagnostics: unitarity, capacity, entropy exchange, process
fidelity, model comparison under local rotations, and mixing-probability
estimation from count totals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, EmptyData, UnsupportedDimension
from .models import compose, unitary_channel
from .operators import (KrausSet, PAULI_X, PAULI_Y, PAULI_Z, apply_channel,
                        to_choi, to_liouville, validate_choi,
                        validate_density_matrix, von_neumann_entropy)


def unitarity(channel: KrausSet) -> float:
    """``Tr[T^dag T] / (D^2 - 1)`` over the unital Liouville block.

    Equals 1 exactly for unitary channels and 0 for the completely
    depolarizing channel.
    """
    if channel.dim != 2:
        raise UnsupportedDimension("unitarity uses the Pauli basis (qubits only)")
    t = to_liouville(channel).unital_block
    return float(np.real(np.sum(np.abs(t) ** 2)) / 3.0)


def entropy_exchange(rho: np.ndarray, channel: KrausSet) -> float:
    """Entropy generated in the environment, ``S(W)`` in bits.

    ``W[mu, nu] = Tr[A_mu rho A_nu^dag]`` is Hermitian, positive
    semidefinite and unit trace by construction.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (channel.dim, channel.dim):
        raise DimensionMismatch(
            f"state shape {rho.shape} does not match channel dimension "
            f"{channel.dim}")
    ops = channel.operators
    w = np.einsum("mij,jk,nik->mn", ops, rho, ops.conj())
    return von_neumann_entropy(w)


def coherent_information(rho: np.ndarray, channel: KrausSet) -> float:
    """``S(E(rho)) - S_e(rho, E)``; may be negative."""
    return (von_neumann_entropy(apply_channel(channel, rho))
            - entropy_exchange(rho, channel))


@dataclass(frozen=True)
class CapacityOptConfig:
    """Multistart settings for the capacity optimizer.

    Standard starts are the maximally mixed state and the six near-pure
    basis-direction states; ``extra_starts`` adds caller-supplied Bloch
    vectors (used to warm-start per-posterior-sample evaluations).
    """

    n_random_starts: int = 1
    include_standard_starts: bool = True
    extra_starts: tuple = ()
    ftol: float = 1e-9
    max_iterations: int = 200
    seed: int = 7


@dataclass
class CapacityResult:
    capacity: float
    argmax_state: np.ndarray
    optimizer_iterations: int
    converged: bool
    clipped: bool
    raw_optimum: float


def _bloch_state(r: np.ndarray) -> np.ndarray:
    return 0.5 * (np.eye(2, dtype=np.complex128)
                  + r[0] * PAULI_X + r[1] * PAULI_Y + r[2] * PAULI_Z)


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """Bloch coordinates ``(Tr[rho X], Tr[rho Y], Tr[rho Z])``."""
    rho = np.asarray(rho, dtype=np.complex128)
    return np.array([np.trace(rho @ p).real
                     for p in (PAULI_X, PAULI_Y, PAULI_Z)])


def channel_capacity(channel: KrausSet,
                     opt_config: Optional[CapacityOptConfig] = None
                     ) -> CapacityResult:
    """Maximize coherent information over input states (qubit channels).

    States are parametrized by Bloch vectors with ``|r| <= 1``; the
    constrained maximization runs sequential quadratic programming from at
    least eight starts (maximally mixed, the six basis-direction states, and
    random interior points). A negative optimum is reported clipped to 0
    with ``clipped=True``.
    """
    if channel.dim != 2:
        raise UnsupportedDimension("capacity optimizer works on the Bloch ball")
    cfg = opt_config if opt_config is not None else CapacityOptConfig()

    def objective(r):
        return -coherent_information(_bloch_state(r), channel)

    starts = [np.asarray(s, dtype=float) for s in cfg.extra_starts]
    if cfg.include_standard_starts:
        starts.append(np.zeros(3))
        for axis in range(3):
            for sign in (1.0, -1.0):
                r = np.zeros(3)
                # keep pole starts slightly inside the ball: entropy slopes
                # diverge at pure states
                r[axis] = sign * 0.999
                starts.append(r)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.n_random_starts):
        v = rng.standard_normal(3)
        starts.append(v / max(np.linalg.norm(v), 1.0) * rng.random() * 0.95)

    constraint = {"type": "ineq",
                  "fun": lambda r: 1.0 - float(r @ r),
                  "jac": lambda r: -2.0 * r}
    best = None
    for start in starts:
        res = minimize(objective, start, method="SLSQP",
                       constraints=[constraint],
                       options={"ftol": cfg.ftol,
                                "maxiter": cfg.max_iterations})
        value = -res.fun
        if best is None or value > best[0]:
            best = (value, res.x, res.nit, bool(res.success))
    raw, r_opt, iterations, converged = best
    clipped = raw < 0.0
    return CapacityResult(
        capacity=max(raw, 0.0), argmax_state=_bloch_state(r_opt),
        optimizer_iterations=iterations, converged=converged,
        clipped=clipped, raw_optimum=raw)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def process_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(a) b sqrt(a)))^2`` of Choi matrices.

    Matrix square roots go through Hermitian eigendecompositions with
    negative eigenvalues clipped to zero (posterior-mean Choi matrices carry
    rounding-level negative eigenvalues).
    """
    a = validate_choi(a)
    b = validate_choi(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"Choi shapes differ: {a.shape} vs {b.shape}")
    return _fidelity_with_sqrt(_psd_sqrt(a), b)


def _fidelity_with_sqrt(sqrt_a: np.ndarray, b: np.ndarray) -> float:
    inner = sqrt_a @ b @ sqrt_a
    inner = 0.5 * (inner + inner.conj().T)
    w = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    f = float(np.sum(np.sqrt(w)) ** 2)
    return min(max(f, 0.0), 1.0)


def relative_process_fidelity(chois: Sequence[np.ndarray]) -> list:
    """Fidelity of each Choi matrix against the first (reference) entry."""
    chois = list(chois)
    if not chois:
        raise EmptyData("empty Choi list")
    reference = chois[0]
    return [process_fidelity(c, reference) for c in chois]


@dataclass
class ModelFitResult:
    model_name: str
    mixing_probability: Optional[float]
    fidelity: float
    pre_rotation: np.ndarray
    post_rotation: np.ndarray


def _euler_zyz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    ca, sa = np.cos(alpha / 2.0), np.sin(alpha / 2.0)
    cb, sb = np.cos(beta / 2.0), np.sin(beta / 2.0)
    cg, sg = np.cos(gamma / 2.0), np.sin(gamma / 2.0)
    rz_a = np.array([[ca - 1j * sa, 0.0], [0.0, ca + 1j * sa]])
    ry_b = np.array([[cb, -sb], [sb, cb]], dtype=np.complex128)
    rz_g = np.array([[cg - 1j * sg, 0.0], [0.0, cg + 1j * sg]])
    return rz_a @ ry_b @ rz_g


def rotated_model(model: KrausSet, pre: np.ndarray,
                  post: np.ndarray) -> KrausSet:
    """``post . model . pre`` as a channel."""
    return compose(compose(unitary_channel(pre), model), unitary_channel(post))


def max_fidelity_over_local_unitaries(measured: np.ndarray, model: KrausSet,
                                      n_starts: int = 16, seed: int = 11,
                                      model_name: str = "",
                                      mixing_probability: Optional[float] = None
                                      ) -> ModelFitResult:
    """Best process fidelity between ``measured`` and a rotated model.

    Maximizes ``F(measured, Choi(V . model . U))`` over pre/post rotations
    ``U, V`` in ZYZ Euler angles; multistart local optimization with the
    identity included among the starts, so the result is never worse than
    the unrotated fidelity.
    """
    measured = validate_choi(measured)
    if model.dim != 2:
        raise UnsupportedDimension("local-unitary fit works on qubit channels")
    sqrt_measured = _psd_sqrt(measured)

    def objective(angles):
        pre = _euler_zyz(*angles[:3])
        post = _euler_zyz(*angles[3:])
        choi = to_choi(rotated_model(model, pre, post))
        return -_fidelity_with_sqrt(sqrt_measured, choi)

    rng = np.random.default_rng(seed)
    starts = [np.zeros(6)]
    for _ in range(max(n_starts - 1, 0)):
        starts.append(rng.uniform(0.0, 2.0 * np.pi, size=6))

    best = None
    for start in starts:
        res = minimize(objective, start, method="L-BFGS-B")
        if best is None or res.fun < best.fun:
            best = res
    angles = best.x
    return ModelFitResult(
        model_name=model_name, mixing_probability=mixing_probability,
        fidelity=min(max(-best.fun, 0.0), 1.0),
        pre_rotation=_euler_zyz(*angles[:3]),
        post_rotation=_euler_zyz(*angles[3:]))


def _hv_rate(data, label: str):
    """Total H/V-basis counts and the per-setting, per-second scale factor."""
    out_idx = np.asarray(data.output_indices)
    hv = np.isin(out_idx, (0, 1))
    if not np.any(hv):
        raise EmptyData(f"{label} dataset has no H/V-basis rows")
    counts = data.counts
    if counts.ndim == 1:
        total = float(counts[hv].sum())
        n_settings = 1
    else:
        total = float(counts[:, hv].sum())
        n_settings = counts.shape[0]
    scale = 1.0 / (n_settings * data.integration_time)
    return total, scale


def mixing_probability_from_counts(signal_only, noise_only):
    """Mixing probability and its Poisson-propagated standard deviation.

    ``p = N_noise / (N_noise + N_signal)`` over H/V-basis totals, with each
    total normalized per prepared setting and unit integration time so that
    signal (multi-input) and noise-only (no input) datasets are comparable.
    """
    n_sig, a_sig = _hv_rate(signal_only, "signal")
    n_noise, a_noise = _hv_rate(noise_only, "noise")
    x = a_sig * n_sig
    y = a_noise * n_noise
    if x + y <= 0.0:
        raise EmptyData("no H/V-basis counts in either dataset")
    p = y / (x + y)
    # var(p) from independent Poisson totals: (dp/dN)^2 N summed over both
    var = (x * y * (a_noise * x + a_sig * y)) / (x + y) ** 4
    return float(p), float(np.sqrt(var))


def inunitarity_curve(model: Callable[[float], KrausSet],
                      p_grid: Sequence[float]) -> np.ndarray:
    """Tabulate ``(p, 1 - unitarity(model(p)))`` over a probability grid."""
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any((p_grid < 0.0) | (p_grid > 1.0)):
        raise ValueError("probability grid must lie in [0, 1]")
    rows = [(float(p), 1.0 - unitarity(model(float(p)))) for p in p_grid]
    return np.asarray(rows)
