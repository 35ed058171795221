"""Preconditioned Crank-Nicolson MCMC over channel parameters.

The chain state is the real coordinate vector behind
:class:`ChannelParams`: interleaved re/im parts of the complex Kraus
parameters followed by the flux coordinate ``z``, all with independent
standard-normal priors. The proposal ``x' = sqrt(1-beta^2) x + beta xi``
(with ``xi`` a fresh prior draw) leaves the prior invariant, so the
acceptance test uses the likelihood ratio only.

Protocol, following the thinning convention used throughout:

* ``retained_samples`` (R) states are kept from a post-burn-in chain of
  length R * ``thinning`` (T), retaining every T-th state;
* burn-in defaults to 10% of R*T, during which the proposal scale ``beta``
  is adapted toward ``target_acceptance`` (Robbins-Monro multiplicative
  updates per chunk) and then frozen, preserving detailed balance;
* chains are reproducible: randomness is drawn in fixed-size blocks from a
  single seeded generator, so identical (data, config, seed) give
  bit-identical retained samples regardless of execution engine layout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .operators import kraus_from_params, to_choi
from .tomography import (FluxParam, StateSet, TomographyDataset,
                         dataset_states, default_state_set,
                         implied_reference_flux, mapping_matrix)

CHUNK_STEPS = 8192
ADAPT_CHUNK_STEPS = 1024
BETA_FLOOR = 1e-5
ADAPT_RATE = 1.0
ADAPT_DECAY = 0.6


@dataclass(frozen=True)
class ChannelParams:
    """MCMC state: complex Kraus parameters plus the flux coordinate."""

    y: np.ndarray
    z: float

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.complex128).ravel()
        if not np.all(np.isfinite(y.view(np.float64))) or not np.isfinite(self.z):
            raise ValueError("parameters contain non-finite entries")
        object.__setattr__(self, "y", y)

    def to_real_vector(self) -> np.ndarray:
        x = np.empty(2 * self.y.size + 1)
        x[:-1] = self.y.view(np.float64)
        x[-1] = self.z
        return x

    @classmethod
    def from_real_vector(cls, x: np.ndarray) -> "ChannelParams":
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = x[:-1].copy().view(np.complex128)
        return cls(y=y, z=float(x[-1]))


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings.

    ``beta`` is the initial proposal scale (adapted during burn-in when
    ``adapt_beta`` is set, frozen afterwards). ``burn_in=None`` selects the
    default of 10% of ``retained_samples * thinning`` steps. ``engine``
    selects the execution path: ``auto`` uses the compiled qubit kernels
    when applicable, ``numpy`` forces the reference implementation.
    """

    beta: float = 0.3
    retained_samples: int = 1024
    thinning: int = 2048
    burn_in: Optional[int] = None
    seed: int = 0
    target_acceptance: float = 0.234
    adapt_beta: bool = True
    engine: str = "auto"
    flux_log_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta!r}")
        if self.retained_samples < 2:
            raise ValueError("need at least 2 retained samples")
        if self.thinning < 1:
            raise ValueError("thinning factor must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn-in cannot be negative")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target acceptance must lie in (0, 1)")
        if self.engine not in ("auto", "numba", "numpy"):
            raise ValueError(f"unknown engine {self.engine!r}")

    @property
    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return (self.retained_samples * self.thinning) // 10


@dataclass
class PosteriorSamples:
    """Retained chain states with lazily materialized Kraus sets."""

    y: np.ndarray
    z: np.ndarray
    dim: int
    n_operators: int
    acceptance_rate: float
    config: ChainConfig
    beta_final: float
    flux: FluxParam
    _kraus_cache: Optional[list] = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return self.y.shape[0]

    def params(self, i: int) -> ChannelParams:
        return ChannelParams(y=self.y[i], z=float(self.z[i]))

    def kraus_sets(self) -> list:
        if self._kraus_cache is None:
            self._kraus_cache = [
                kraus_from_params(self.y[i], self.dim, self.n_operators)
                for i in range(len(self))
            ]
        return self._kraus_cache

    def mean_choi(self) -> np.ndarray:
        chois = [to_choi(k) for k in self.kraus_sets()]
        return np.mean(chois, axis=0)


def sample_prior(dim: int, n_operators: int,
                 rng: np.random.Generator) -> ChannelParams:
    """Draw channel parameters from the prior (i.i.d. complex normals, plus z)."""
    if n_operators > dim * dim:
        raise ValueError(f"need n_operators <= dim^2, got {n_operators} > "
                         f"{dim * dim}")
    if n_operators < 1:
        raise ValueError("need at least one operator")
    x = rng.standard_normal(2 * n_operators * dim * dim + 1)
    return ChannelParams.from_real_vector(x)


def _dataset_loglik(data: Optional[TomographyDataset],
                    states: Optional[StateSet],
                    flux: Optional[FluxParam],
                    flux_log_scale: float):
    """Prepare (loglik(x), n_complex, dim, K, flux_param) for a dataset.

    ``data=None`` (or a dataset without counts) gives the flat likelihood.
    """
    base = states if states is not None else default_state_set()
    dim = base.dim
    n_ops = dim * dim
    if data is None or data.counts.size == 0 or data.total_counts() == 0:
        flux_param = flux if flux is not None else FluxParam(
            z=0.0, reference_flux=1.0, log_scale=flux_log_scale)
        mapping = np.zeros((0, dim * dim), dtype=np.complex128)
        counts = np.zeros(0)
        flux_scale = 0.0
    else:
        inputs, outputs = dataset_states(data, base)
        mapping = mapping_matrix(inputs, outputs).matrix
        counts = data.counts.astype(np.float64).ravel()
        if flux is not None:
            flux_param = flux
        else:
            flux_param = FluxParam(z=0.0,
                                   reference_flux=implied_reference_flux(data),
                                   log_scale=flux_log_scale)
        flux_scale = flux_param.reference_flux * data.integration_time

    log_scale = flux_param.log_scale

    def loglik(x: np.ndarray) -> float:
        return _kernels.channel_loglik_numpy(x, mapping, counts, flux_scale,
                                             log_scale, dim, n_ops)

    return loglik, mapping, counts, flux_scale, dim, n_ops, flux_param


def pcn_step(current: ChannelParams, config: ChainConfig,
             data: Optional[TomographyDataset], rng: np.random.Generator,
             states: Optional[StateSet] = None,
             flux: Optional[FluxParam] = None):
    """One proposal/accept update; returns ``(params, accepted)``.

    Degenerate proposals (near-singular normalizations) are rejections, not
    errors. The random stream consumes one prior-sized normal block and one
    uniform per call.
    """
    loglik, *_ = _dataset_loglik(data, states, flux, config.flux_log_scale)
    x = current.to_real_vector()
    xi = rng.standard_normal(x.size)
    u = rng.random()
    ll = loglik(x)
    xp = np.sqrt(1.0 - config.beta ** 2) * x + config.beta * xi
    llp = loglik(xp)
    if np.log(u) < llp - ll:
        return ChannelParams.from_real_vector(xp), True
    return current, False


def _select_engine(config: ChainConfig, dim: int, n_ops: int) -> str:
    if config.engine == "numpy":
        return "numpy"
    compiled_ok = _kernels.HAVE_NUMBA and dim == 2 and n_ops == 4
    if config.engine == "numba":
        if not compiled_ok:
            raise ValueError("compiled engine requires numba and a qubit "
                             "channel with 4 operators")
        return "numba"
    return "numba" if compiled_ok else "numpy"


def _run_pcn(config: ChainConfig, n_coords: int, loglik: Callable,
             chunk_fn: Callable):
    """Run burn-in plus R*T sampling steps.

    ``chunk_fn(x, ll, beta, xi, us, thin, offset, out) -> (ll, accepted)``
    advances the chain in place; ``loglik`` scores a single state (used for
    initialization only).
    """
    rng = np.random.default_rng(config.seed)
    r, t = config.retained_samples, config.thinning
    burn = config.effective_burn_in

    x = rng.standard_normal(n_coords)
    ll = loglik(x)
    for _ in range(100):
        if np.isfinite(ll):
            break
        x = rng.standard_normal(n_coords)
        ll = loglik(x)
    else:
        raise RuntimeError("could not find a finite-likelihood initial state")

    beta = config.beta
    out = np.empty((r, n_coords))

    # burn-in: adapt beta chunk-by-chunk, then freeze
    done = 0
    chunk_index = 0
    while done < burn:
        n_steps = min(ADAPT_CHUNK_STEPS, burn - done)
        xi = rng.standard_normal((n_steps, n_coords))
        us = rng.random(n_steps)
        ll, n_acc = chunk_fn(x, ll, beta, xi, us, 0, 0,
                             np.empty((0, n_coords)))
        if config.adapt_beta:
            rate = n_acc / n_steps
            gamma = ADAPT_RATE / (1.0 + chunk_index) ** ADAPT_DECAY
            beta = float(np.clip(
                beta * np.exp(gamma * (rate - config.target_acceptance)),
                BETA_FLOOR, 1.0))
        done += n_steps
        chunk_index += 1

    # sampling phase: beta frozen, retain every t-th state
    total = r * t
    done = 0
    accepted = 0
    while done < total:
        n_steps = min(CHUNK_STEPS, total - done)
        xi = rng.standard_normal((n_steps, n_coords))
        us = rng.random(n_steps)
        ll, n_acc = chunk_fn(x, ll, beta, xi, us, t, done, out)
        accepted += n_acc
        done += n_steps

    return out, accepted / total, beta


def run_chain(data: Optional[TomographyDataset], config: ChainConfig,
              states: Optional[StateSet] = None,
              flux: Optional[FluxParam] = None) -> PosteriorSamples:
    """Run the full chain protocol and return the retained posterior samples.

    ``data=None`` or an all-zero dataset samples the prior (flat likelihood).
    The reference flux defaults to the data-implied estimate; pass ``flux``
    to override.
    """
    (loglik, mapping, counts, flux_scale, dim, n_ops,
     flux_param) = _dataset_loglik(data, states, flux, config.flux_log_scale)
    n_coords = 2 * n_ops * dim * dim + 1
    engine = _select_engine(config, dim, n_ops)

    if engine == "numba":
        mapping_c = np.ascontiguousarray(mapping, dtype=np.complex128)
        counts_c = np.ascontiguousarray(counts, dtype=np.float64)
        log_scale = flux_param.log_scale

        def chunk_fn(x, ll, beta, xi, us, thin, offset, out):
            return _kernels.channel_chain_chunk(
                x, ll, beta, xi, us, mapping_c, counts_c, flux_scale,
                log_scale, thin, offset, out)
    else:
        def chunk_fn(x, ll, beta, xi, us, thin, offset, out):
            return _kernels.generic_chain_chunk(x, ll, beta, xi, us, loglik,
                                                thin, offset, out)

    out, acceptance, beta_final = _run_pcn(config, n_coords, loglik, chunk_fn)
    y = out[:, :-1].copy().view(np.complex128)
    return PosteriorSamples(
        y=y, z=out[:, -1].copy(), dim=dim, n_operators=n_ops,
        acceptance_rate=acceptance, config=config, beta_final=beta_final,
        flux=flux_param)


def posterior_summary(samples: PosteriorSamples, functional: Callable):
    """Mean and sample standard deviation of a per-sample channel functional.

    ``functional`` receives each sample's :class:`KrausSet`; scalar and
    array-valued functionals are both supported.
    """
    values = np.asarray([functional(k) for k in samples.kraus_sets()])
    return values.mean(axis=0), values.std(axis=0, ddof=1)


@dataclass
class ConvergenceResult:
    chosen_thinning: int
    converged: bool
    trace: list  # rows (thinning, mean, std)


def convergence_doubling(data: Optional[TomographyDataset],
                         base_config: ChainConfig,
                         functional: Callable,
                         t_min: int = 4, t_max: int = 2 ** 18,
                         mean_tol: float = 1e-3, std_tol: float = 1e-3,
                         states: Optional[StateSet] = None,
                         flux: Optional[FluxParam] = None) -> ConvergenceResult:
    """Double the thinning factor until posterior summaries stabilize.

    Runs the chain at T = t_min, 2 t_min, ... and tracks the posterior mean
    and standard deviation of ``functional``; stops once both change by less
    than the tolerances for two consecutive doublings, or at the ceiling
    ``t_max`` (reported via ``converged=False``, not an error).
    """
    trace = []
    consecutive = 0
    prev = None
    t = t_min
    while True:
        config = replace(base_config, thinning=t)
        samples = run_chain(data, config, states=states, flux=flux)
        mean, std = posterior_summary(samples, functional)
        trace.append((t, float(mean), float(std)))
        if prev is not None:
            if abs(mean - prev[0]) < mean_tol and abs(std - prev[1]) < std_tol:
                consecutive += 1
            else:
                consecutive = 0
            if consecutive >= 2:
                return ConvergenceResult(t, True, trace)
        prev = (mean, std)
        if t >= t_max:
            return ConvergenceResult(t, False, trace)
        t *= 2


# -- persistence ------------------------------------------------------------

def save_posterior(path, samples: PosteriorSamples, extra: Optional[dict] = None):
    """Write the posterior bundle JSON (config echo, acceptance, samples)."""
    bundle = {
        "config": asdict(samples.config),
        "acceptance_rate": samples.acceptance_rate,
        "beta_final": samples.beta_final,
        "dim": samples.dim,
        "n_operators": samples.n_operators,
        "flux": {"z": samples.flux.z,
                 "reference_flux": samples.flux.reference_flux,
                 "log_scale": samples.flux.log_scale},
        "samples": [
            {"y": [[float(v.real), float(v.imag)] for v in samples.y[i]],
             "z": float(samples.z[i])}
            for i in range(len(samples))
        ],
    }
    if extra:
        bundle.update(extra)
    with open(path, "w") as fh:
        json.dump(bundle, fh)


def load_posterior(path):
    """Read a posterior bundle; returns (samples, full JSON dict)."""
    with open(path) as fh:
        bundle = json.load(fh)
    raw = np.asarray([s["y"] for s in bundle["samples"]], dtype=np.float64)
    y = raw[..., 0] + 1j * raw[..., 1]
    z = np.asarray([s["z"] for s in bundle["samples"]], dtype=np.float64)
    config = ChainConfig(**bundle["config"])
    flux = FluxParam(**bundle["flux"])
    samples = PosteriorSamples(
        y=y, z=z, dim=bundle["dim"], n_operators=bundle["n_operators"],
        acceptance_rate=bundle["acceptance_rate"], config=config,
        beta_final=bundle["beta_final"], flux=flux)
    return samples, bundle
