"""Experiment data model: state sets, outcome probabilities, Poisson likelihood,
dataset containers, synthetic data generation and CSV persistence.

Index conventions (frozen; they define the on-disk formats):

* Mapping-matrix rows iterate input states ``l`` in the outer loop and output
  states ``j`` in the inner loop: ``row = l * J + j``.
* Mapping-matrix columns iterate the output Hilbert index ``m`` outer and the
  input index ``n`` inner: ``col = m * D + n``, matching row-major Kraus
  operator vectorization.
* Dataset CSV schema: ``wavelength_nm,input_idx,output_idx,counts,integration_s``.
  Indices refer to the state set used for the run (default set below).
* Noise (state tomography) CSV schema: ``wavelength_nm,output_idx,counts,integration_s``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyData, InvalidCounts
from .operators import KrausSet, validate_pure_state

DEFAULT_STATE_LABELS = ("H", "V", "+", "-", "+i", "-i")


@dataclass(frozen=True)
class StateSet:
    """Ordered set of pure states, stored as rows of a complex array."""

    states: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        arr = np.ascontiguousarray(self.states, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DimensionMismatch(
                f"expected a non-empty (n, D) state array, got shape {arr.shape}"
            )
        for row in arr:
            validate_pure_state(row)
        object.__setattr__(self, "states", arr)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def default_state_set() -> StateSet:
    """The six-state preparation/measurement set H, V, +, -, +i, -i.

    ``|+-> = (|0> +- |1|)/sqrt(2)`` and ``|+-i> = (|0> +- i|1>)/sqrt(2)``.
    """
    s = 1.0 / np.sqrt(2.0)
    states = np.array([
        [1.0, 0.0],
        [0.0, 1.0],
        [s, s],
        [s, -s],
        [s, 1j * s],
        [s, -1j * s],
    ], dtype=np.complex128)
    return StateSet(states, labels=DEFAULT_STATE_LABELS)


@dataclass(frozen=True)
class MappingMatrix:
    """Fixed linear map from vectorized Kraus operators to output amplitudes.

    ``matrix`` has shape ``(L*J, D*D)`` with
    ``matrix[l*J + j, m*D + n] = conj(psi_j[m]) * phi_l[n]``, so that for the
    operator stack reshaped into columns ``Acols[m*D + n, k] = A_k[m, n]`` the
    product ``V = matrix @ Acols`` has entries ``<psi_j|A_k|phi_l>``.
    """

    matrix: np.ndarray
    n_inputs: int
    n_outputs: int

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[1])))


def mapping_matrix(inputs: StateSet, outputs: StateSet) -> MappingMatrix:
    if inputs.dim != outputs.dim:
        raise DimensionMismatch(
            f"input dimension {inputs.dim} != output dimension {outputs.dim}"
        )
    d = inputs.dim
    n_in, n_out = len(inputs), len(outputs)
    # rows: (l, j) with j fastest; cols: (m, n) with n fastest
    m = np.einsum("jm,ln->ljmn", outputs.states.conj(), inputs.states)
    return MappingMatrix(np.ascontiguousarray(m.reshape(n_in * n_out, d * d)),
                         n_in, n_out)


def outcome_probabilities(mapping: MappingMatrix, channel: KrausSet) -> np.ndarray:
    """Detection probabilities ``p[l, j] = sum_k |<psi_j|A_k|phi_l>|^2``."""
    d = channel.dim
    if mapping.matrix.shape[1] != d * d:
        raise DimensionMismatch(
            f"mapping matrix is for dimension {mapping.dim}, channel has {d}"
        )
    acols = channel.operators.reshape(channel.choi_rank, d * d).T
    v = mapping.matrix @ acols
    p = np.sum(np.abs(v) ** 2, axis=1)
    return p.reshape(mapping.n_inputs, mapping.n_outputs)


@dataclass(frozen=True)
class FluxParam:
    """Photon flux in a standard-normal coordinate.

    ``flux = reference_flux * exp(log_scale * z)``; with ``z ~ N(0, 1)`` this
    is a weakly informative log-normal prior centered on ``reference_flux``.
    """

    z: float
    reference_flux: float
    log_scale: float = 0.1

    def __post_init__(self):
        if not (self.reference_flux > 0.0):
            raise ValueError(f"reference flux must be positive, got "
                             f"{self.reference_flux!r}")

    def flux(self) -> float:
        return self.reference_flux * float(np.exp(self.log_scale * self.z))


@dataclass
class TomographyDataset:
    """Photon counts for an (input state, measured state) grid.

    ``counts[l, j]`` is the number of detections with input ``input_indices[l]``
    and projector ``output_indices[j]``; indices refer to a :class:`StateSet`
    (the default six-state set unless stated otherwise).
    """

    counts: np.ndarray
    integration_time: float
    input_indices: Optional[np.ndarray] = None
    output_indices: Optional[np.ndarray] = None
    wavelength_nm: Optional[float] = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DimensionMismatch(f"counts must be 2-D, got shape {counts.shape}")
        if counts.size and (not np.all(np.isfinite(counts)) or np.any(counts < 0)):
            raise ValueError("counts must be finite and non-negative")
        self.counts = counts.astype(np.int64)
        if not (self.integration_time > 0.0):
            raise ValueError(f"integration time must be positive, got "
                             f"{self.integration_time!r}")
        if self.input_indices is None:
            self.input_indices = np.arange(counts.shape[0])
        else:
            self.input_indices = np.asarray(self.input_indices, dtype=np.int64)
        if self.output_indices is None:
            self.output_indices = np.arange(counts.shape[1])
        else:
            self.output_indices = np.asarray(self.output_indices, dtype=np.int64)
        if self.input_indices.shape != (counts.shape[0],):
            raise DimensionMismatch("input_indices length does not match counts")
        if self.output_indices.shape != (counts.shape[1],):
            raise DimensionMismatch("output_indices length does not match counts")

    @property
    def n_inputs(self) -> int:
        return self.counts.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.counts.shape[1]

    def total_counts(self) -> int:
        return int(self.counts.sum())


@dataclass
class NoiseDataset:
    """Counts from measuring background noise alone (no prepared input)."""

    counts: np.ndarray
    integration_time: float
    output_indices: Optional[np.ndarray] = None
    wavelength_nm: Optional[float] = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise DimensionMismatch(f"counts must be 1-D, got shape {counts.shape}")
        if counts.size and (not np.all(np.isfinite(counts)) or np.any(counts < 0)):
            raise ValueError("counts must be finite and non-negative")
        self.counts = counts.astype(np.int64)
        if not (self.integration_time > 0.0):
            raise ValueError(f"integration time must be positive, got "
                             f"{self.integration_time!r}")
        if self.output_indices is None:
            self.output_indices = np.arange(counts.shape[0])
        else:
            self.output_indices = np.asarray(self.output_indices, dtype=np.int64)
        if self.output_indices.shape != (counts.shape[0],):
            raise DimensionMismatch("output_indices length does not match counts")


@dataclass
class ScanDataset:
    """Wavelength-ordered collection of tomography datasets."""

    datasets: list

    def __post_init__(self):
        if not self.datasets:
            raise EmptyData("scan contains no datasets")
        wl = [d.wavelength_nm for d in self.datasets]
        if any(w is None for w in wl):
            raise ValueError("every dataset in a scan needs a wavelength")
        order = np.argsort(wl)
        self.datasets = [self.datasets[i] for i in order]
        wl_sorted = [self.datasets[i].wavelength_nm for i in range(len(order))]
        if np.any(np.diff(wl_sorted) <= 0):
            raise ValueError("scan wavelengths must be strictly increasing")

    def __len__(self) -> int:
        return len(self.datasets)

    def __iter__(self):
        return iter(self.datasets)

    @property
    def wavelengths(self) -> np.ndarray:
        return np.array([d.wavelength_nm for d in self.datasets])


def dataset_states(data, states: Optional[StateSet] = None):
    """Resolve the (input StateSet, output StateSet) pair a dataset refers to."""
    base = states if states is not None else default_state_set()
    outputs = StateSet(base.states[data.output_indices])
    if isinstance(data, NoiseDataset):
        return None, outputs
    inputs = StateSet(base.states[data.input_indices])
    return inputs, outputs


def expected_counts(probabilities: np.ndarray, flux: FluxParam,
                    integration_time: float) -> np.ndarray:
    """Mean detector counts ``flux * tau * p`` for each setting."""
    if not (integration_time > 0.0):
        raise ValueError("integration time must be positive")
    return flux.flux() * integration_time * np.asarray(probabilities, dtype=float)


def poisson_log_likelihood(counts: np.ndarray, nbar: np.ndarray) -> float:
    """``sum(-nbar + n * log(nbar))`` with the constant factorial terms dropped."""
    counts = np.asarray(counts, dtype=np.float64).ravel()
    nbar = np.asarray(nbar, dtype=np.float64).ravel()
    if counts.shape != nbar.shape:
        raise DimensionMismatch("counts and expected counts have different shapes")
    observed = counts > 0
    if np.any(nbar[observed] <= 0.0):
        raise InvalidCounts("observed counts where the expected count is zero")
    ll = -float(nbar.sum())
    if np.any(observed):
        ll += float(np.sum(counts[observed] * np.log(nbar[observed])))
    return ll


def log_likelihood(data: TomographyDataset, channel: KrausSet, flux: FluxParam,
                   states: Optional[StateSet] = None) -> float:
    """Poisson log-likelihood of a dataset under a channel and flux."""
    inputs, outputs = dataset_states(data, states)
    p = outcome_probabilities(mapping_matrix(inputs, outputs), channel)
    nbar = expected_counts(p, flux, data.integration_time)
    return poisson_log_likelihood(data.counts, nbar)


def implied_reference_flux(data: TomographyDataset,
                           mean_probability: float = 0.5) -> float:
    """Data-implied flux estimate: total counts over expected exposure.

    Uses ``total / (tau * L * J * mean_probability)``; for the default
    six-state measurement set the per-input probabilities over the three
    complementary projector pairs sum to 3 = J/2, making this estimator exact
    for noiseless data.
    """
    total = data.total_counts()
    denom = data.integration_time * data.n_inputs * data.n_outputs * mean_probability
    if total <= 0:
        raise EmptyData("dataset has no counts; cannot infer a flux scale")
    return total / denom


def simulate_counts(channel: KrausSet, flux_mean: float, integration_time: float,
                    mode: str = "noiseless", seed: int = 0,
                    states: Optional[StateSet] = None,
                    wavelength_nm: Optional[float] = None) -> TomographyDataset:
    """Generate synthetic counts for the full state-set grid.

    ``noiseless`` rounds the mean counts to the nearest integer (rounding is
    unbiased); ``poisson`` draws from Poisson(mean) with the given seed.
    """
    if not (flux_mean > 0.0):
        raise ValueError("flux must be positive")
    base = states if states is not None else default_state_set()
    p = outcome_probabilities(mapping_matrix(base, base), channel)
    nbar = flux_mean * integration_time * p
    if mode == "noiseless":
        counts = np.rint(nbar).astype(np.int64)
    elif mode == "poisson":
        counts = np.random.default_rng(seed).poisson(nbar).astype(np.int64)
    else:
        raise ValueError(f"unknown simulation mode {mode!r}")
    return TomographyDataset(counts=counts, integration_time=integration_time,
                             wavelength_nm=wavelength_nm)


def simulate_noise_counts(rho: np.ndarray, flux_mean: float,
                          integration_time: float, mode: str = "noiseless",
                          seed: int = 0, states: Optional[StateSet] = None,
                          wavelength_nm: Optional[float] = None) -> NoiseDataset:
    """Synthetic noise-only counts ``flux * tau * <psi_j|rho|psi_j>``."""
    if not (flux_mean > 0.0):
        raise ValueError("flux must be positive")
    base = states if states is not None else default_state_set()
    rho = np.asarray(rho, dtype=np.complex128)
    p = np.real(np.einsum("jm,mn,jn->j", base.states.conj(), rho, base.states))
    nbar = flux_mean * integration_time * p
    if mode == "noiseless":
        counts = np.rint(nbar).astype(np.int64)
    elif mode == "poisson":
        counts = np.random.default_rng(seed).poisson(np.clip(nbar, 0.0, None))
        counts = counts.astype(np.int64)
    else:
        raise ValueError(f"unknown simulation mode {mode!r}")
    return NoiseDataset(counts=counts, integration_time=integration_time,
                        wavelength_nm=wavelength_nm)


# -- CSV persistence -------------------------------------------------------

DATASET_HEADER = ["wavelength_nm", "input_idx", "output_idx", "counts",
                  "integration_s"]
NOISE_HEADER = ["wavelength_nm", "output_idx", "counts", "integration_s"]


def _format_wavelength(w) -> str:
    return "" if w is None else repr(float(w))


def write_datasets_csv(path, datasets: Iterable[TomographyDataset]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for data in datasets:
            w = _format_wavelength(data.wavelength_nm)
            for li, l_idx in enumerate(data.input_indices):
                for ji, j_idx in enumerate(data.output_indices):
                    writer.writerow([w, int(l_idx), int(j_idx),
                                     int(data.counts[li, ji]),
                                     repr(float(data.integration_time))])


def read_datasets_csv(path) -> list:
    """Read a scan CSV into datasets, one per wavelength, sorted ascending."""
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != DATASET_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(DATASET_HEADER)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            w = float(row["wavelength_nm"]) if row["wavelength_nm"] else None
            key = w
            groups.setdefault(key, []).append(
                (int(row["input_idx"]), int(row["output_idx"]),
                 int(row["counts"]), float(row["integration_s"]))
            )
    if not groups:
        raise EmptyData(f"{path}: no data rows")
    datasets = []
    for w, rows in groups.items():
        in_idx = sorted({r[0] for r in rows})
        out_idx = sorted({r[1] for r in rows})
        taus = {r[3] for r in rows}
        if len(taus) != 1:
            raise ValueError(f"{path}: mixed integration times within one "
                             f"wavelength group")
        counts = np.zeros((len(in_idx), len(out_idx)), dtype=np.int64)
        lpos = {v: i for i, v in enumerate(in_idx)}
        jpos = {v: i for i, v in enumerate(out_idx)}
        for l, j, n, _ in rows:
            counts[lpos[l], jpos[j]] = n
        datasets.append(TomographyDataset(
            counts=counts, integration_time=taus.pop(),
            input_indices=np.array(in_idx), output_indices=np.array(out_idx),
            wavelength_nm=w))
    datasets.sort(key=lambda d: (d.wavelength_nm is not None, d.wavelength_nm))
    return datasets


def write_noise_csv(path, datasets: Iterable[NoiseDataset]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NOISE_HEADER)
        for data in datasets:
            w = _format_wavelength(data.wavelength_nm)
            for ji, j_idx in enumerate(data.output_indices):
                writer.writerow([w, int(j_idx), int(data.counts[ji]),
                                 repr(float(data.integration_time))])


def read_noise_csv(path) -> list:
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != NOISE_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(NOISE_HEADER)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            w = float(row["wavelength_nm"]) if row["wavelength_nm"] else None
            groups.setdefault(w, []).append(
                (int(row["output_idx"]), int(row["counts"]),
                 float(row["integration_s"]))
            )
    if not groups:
        raise EmptyData(f"{path}: no data rows")
    datasets = []
    for w, rows in groups.items():
        out_idx = sorted({r[0] for r in rows})
        taus = {r[2] for r in rows}
        if len(taus) != 1:
            raise ValueError(f"{path}: mixed integration times within one "
                             f"wavelength group")
        counts = np.zeros(len(out_idx), dtype=np.int64)
        jpos = {v: i for i, v in enumerate(out_idx)}
        for j, n, _ in rows:
            counts[jpos[j]] = n
        datasets.append(NoiseDataset(
            counts=counts, integration_time=taus.pop(),
            output_indices=np.array(out_idx), wavelength_nm=w))
    datasets.sort(key=lambda d: (d.wavelength_nm is not None, d.wavelength_nm))
    return datasets


def state_set_to_dict(states: StateSet) -> dict:
    return {
        "dim": states.dim,
        "states": [[[float(a.real), float(a.imag)] for a in row]
                   for row in states.states],
        "labels": list(states.labels),
    }


def state_set_from_dict(d: dict) -> StateSet:
    arr = np.asarray(d["states"], dtype=np.float64)
    states = arr[..., 0] + 1j * arr[..., 1]
    return StateSet(states, labels=tuple(d.get("labels", ())))


def read_state_set(path) -> StateSet:
    with open(path) as fh:
        return state_set_from_dict(json.load(fh))
