"""Bayesian state tomography for noise-only datasets.

Reuses the pCN machinery over a square complex matrix ``g`` with i.i.d.
complex-normal entries (the state counterpart of the channel prior); the
density matrix is ``rho = g g^dag / Tr(g g^dag)``. The default measured-data
thinning is T = 2^10.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import NearSingular
from .operators import purity
from .sampler import ChainConfig, _run_pcn
from .tomography import (FluxParam, NoiseDataset, StateSet, default_state_set,
                         poisson_log_likelihood)

MEASURED_DATA_THINNING = 2 ** 10


@dataclass(frozen=True)
class StateParams:
    """MCMC state for state tomography: matrix coordinates plus flux."""

    g: np.ndarray
    z: float

    def __post_init__(self):
        g = np.ascontiguousarray(self.g, dtype=np.complex128)
        if g.ndim != 2:
            raise ValueError(f"expected a matrix of coordinates, got shape "
                             f"{g.shape}")
        if not np.all(np.isfinite(g.view(np.float64))) or not np.isfinite(self.z):
            raise ValueError("parameters contain non-finite entries")
        object.__setattr__(self, "g", g)


def state_from_params(g: np.ndarray) -> np.ndarray:
    """``rho = g g^dag / Tr(g g^dag)``; always a valid density matrix."""
    g = np.asarray(g, dtype=np.complex128)
    gram = g @ g.conj().T
    norm = float(np.trace(gram).real)
    if norm < _kernels.STATE_TRACE_TOL:
        raise NearSingular(f"Tr(g g^dag) = {norm:.3e} too small to normalize")
    return gram / norm


def qst_likelihood(data: NoiseDataset, rho: np.ndarray, flux: FluxParam,
                   states: Optional[StateSet] = None) -> float:
    """Poisson log-likelihood of noise counts under a fixed state and flux."""
    base = states if states is not None else default_state_set()
    outs = base.states[data.output_indices]
    p = np.real(np.einsum("jm,mn,jn->j", outs.conj(),
                          np.asarray(rho, dtype=np.complex128), outs))
    nbar = flux.flux() * data.integration_time * p
    return poisson_log_likelihood(data.counts, nbar)


@dataclass
class StatePosterior:
    """Retained state-tomography samples with purity summaries."""

    g: np.ndarray
    z: np.ndarray
    acceptance_rate: float
    config: ChainConfig
    beta_final: float
    flux: FluxParam
    _states_cache: Optional[np.ndarray] = field(default=None, repr=False,
                                                compare=False)

    def __len__(self) -> int:
        return self.g.shape[0]

    def states(self) -> np.ndarray:
        if self._states_cache is None:
            self._states_cache = np.stack(
                [state_from_params(self.g[i]) for i in range(len(self))])
        return self._states_cache

    def mean_state(self) -> np.ndarray:
        return self.states().mean(axis=0)

    def purity_summary(self):
        values = np.array([purity(rho) for rho in self.states()])
        return float(values.mean()), float(values.std(ddof=1))


def run_qst(data: Optional[NoiseDataset], config: ChainConfig,
            states: Optional[StateSet] = None,
            flux: Optional[FluxParam] = None) -> StatePosterior:
    """pCN chain over state parameters; returns the posterior with purity.

    ``data=None`` or an all-zero dataset samples the prior.
    """
    base = states if states is not None else default_state_set()
    dim = base.dim
    n_coords = 2 * dim * dim + 1

    if data is None or data.counts.size == 0 or int(data.counts.sum()) == 0:
        flux_param = flux if flux is not None else FluxParam(
            z=0.0, reference_flux=1.0, log_scale=config.flux_log_scale)
        outputs_conj = np.zeros((0, dim), dtype=np.complex128)
        counts = np.zeros(0)
        flux_scale = 0.0
    else:
        outputs_conj = np.ascontiguousarray(
            base.states[data.output_indices].conj())
        counts = data.counts.astype(np.float64)
        if flux is not None:
            flux_param = flux
        else:
            # J measurements of a trace-1 state cover J/2 units of flux
            total = int(data.counts.sum())
            reference = total / (data.integration_time * counts.size * 0.5)
            flux_param = FluxParam(z=0.0, reference_flux=reference,
                                   log_scale=config.flux_log_scale)
        flux_scale = flux_param.reference_flux * data.integration_time

    log_scale = flux_param.log_scale

    def loglik(x):
        return _kernels.state_loglik_numpy(x, outputs_conj, counts,
                                           flux_scale, log_scale, dim)

    use_compiled = (_kernels.HAVE_NUMBA and dim == 2
                    and config.engine != "numpy")
    if config.engine == "numba" and not use_compiled:
        raise ValueError("compiled engine requires numba and qubit data")

    if use_compiled:
        def chunk_fn(x, ll, beta, xi, us, thin, offset, out):
            return _kernels.state_chain_chunk(
                x, ll, beta, xi, us, outputs_conj, counts, flux_scale,
                log_scale, thin, offset, out)
    else:
        def chunk_fn(x, ll, beta, xi, us, thin, offset, out):
            return _kernels.generic_chain_chunk(x, ll, beta, xi, us, loglik,
                                                thin, offset, out)

    out, acceptance, beta_final = _run_pcn(config, n_coords, loglik, chunk_fn)
    g = out[:, :-1].copy().view(np.complex128).reshape(-1, dim, dim)
    return StatePosterior(
        g=g, z=out[:, -1].copy(), acceptance_rate=acceptance, config=config,
        beta_final=beta_final, flux=flux_param)


def save_state_posterior(path, posterior: StatePosterior,
                         extra: Optional[dict] = None):
    from dataclasses import asdict
    import json

    bundle = {
        "config": asdict(posterior.config),
        "acceptance_rate": posterior.acceptance_rate,
        "beta_final": posterior.beta_final,
        "dim": posterior.g.shape[1],
        "flux": {"z": posterior.flux.z,
                 "reference_flux": posterior.flux.reference_flux,
                 "log_scale": posterior.flux.log_scale},
        "samples": [
            {"g": [[[float(v.real), float(v.imag)] for v in row]
                   for row in posterior.g[i]],
             "z": float(posterior.z[i])}
            for i in range(len(posterior))
        ],
    }
    if extra:
        bundle.update(extra)
    with open(path, "w") as fh:
        json.dump(bundle, fh)


def load_state_posterior(path):
    import json

    with open(path) as fh:
        bundle = json.load(fh)
    raw = np.asarray([s["g"] for s in bundle["samples"]], dtype=np.float64)
    g = raw[..., 0] + 1j * raw[..., 1]
    z = np.asarray([s["z"] for s in bundle["samples"]], dtype=np.float64)
    posterior = StatePosterior(
        g=g, z=z, acceptance_rate=bundle["acceptance_rate"],
        config=ChainConfig(**bundle["config"]),
        beta_final=bundle["beta_final"], flux=FluxParam(**bundle["flux"]))
    return posterior, bundle
