"""Inner-loop likelihood and chain-step kernels.

The sampler consumes randomness drawn outside the kernels (fixed-size normal
and uniform blocks), so the retained chain depends only on the seed and the
chain bookkeeping, not on which engine executes the steps. The compiled
kernels specialize the qubit case ``D=2, K=4`` using the analytic spectral
form of the 2x2 inverse square root; the plain-Python twins implement the
same update and exist as a fallback and for cross-checking.

All kernels share update semantics:

* proposal ``x' = sqrt(1 - beta^2) x + beta xi`` over every real coordinate,
* log-likelihood ``sum(-nbar + n log nbar)`` with degenerate parameter draws
  scored ``-inf`` (a rejection, not an error),
* acceptance iff ``log u < LL(x') - LL(x)``,
* every ``thin``-th post-offset state is copied into the output block.
"""

from __future__ import annotations

import numpy as np

SINGULAR_REL_TOL = 1e-14
STATE_TRACE_TOL = 1e-28

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def channel_loglik_qubit(x, mapping, counts, flux_scale, flux_log_scale):
    """Log-likelihood at raw parameters ``x`` (32 interleaved re/im + z).

    ``mapping`` is the (rows, 4) mapping matrix, ``counts`` the matching flat
    count vector, ``flux_scale`` the product reference_flux * integration
    time. Returns ``-inf`` for near-singular normalizations.
    """
    g = np.empty((4, 2, 2), dtype=np.complex128)
    idx = 0
    for k in range(4):
        for i in range(2):
            for j in range(2):
                g[k, i, j] = complex(x[2 * idx], x[2 * idx + 1])
                idx += 1
    # H = sum_k G_k^dag G_k, a 2x2 Hermitian matrix (a, b; conj(b), c)
    a = 0.0
    c = 0.0
    b = 0.0 + 0.0j
    for k in range(4):
        g00 = g[k, 0, 0]
        g01 = g[k, 0, 1]
        g10 = g[k, 1, 0]
        g11 = g[k, 1, 1]
        a += (g00.real * g00.real + g00.imag * g00.imag
              + g10.real * g10.real + g10.imag * g10.imag)
        c += (g01.real * g01.real + g01.imag * g01.imag
              + g11.real * g11.real + g11.imag * g11.imag)
        b += np.conj(g00) * g01 + np.conj(g10) * g11
    tr = a + c
    gap = np.sqrt((a - c) * (a - c)
                  + 4.0 * (b.real * b.real + b.imag * b.imag))
    lam_hi = 0.5 * (tr + gap)
    lam_lo = 0.5 * (tr - gap)
    if lam_hi <= 0.0 or lam_lo <= SINGULAR_REL_TOL * lam_hi:
        return -np.inf
    # H^{-1/2} = alpha I + beta H via its two eigenvalues
    f_hi = 1.0 / np.sqrt(lam_hi)
    f_lo = 1.0 / np.sqrt(lam_lo)
    if gap > 1e-15 * lam_hi:
        slope = (f_hi - f_lo) / gap
        off = f_hi - slope * lam_hi
    else:
        slope = 0.0
        off = f_hi
    m00 = off + slope * a
    m11 = off + slope * c
    m01 = slope * b
    m10 = np.conj(m01)
    # columns of acols are the row-major vectorized Kraus operators
    acols = np.empty((4, 4), dtype=np.complex128)
    for k in range(4):
        g00 = g[k, 0, 0]
        g01 = g[k, 0, 1]
        g10 = g[k, 1, 0]
        g11 = g[k, 1, 1]
        acols[0, k] = g00 * m00 + g01 * m10
        acols[1, k] = g00 * m01 + g01 * m11
        acols[2, k] = g10 * m00 + g11 * m10
        acols[3, k] = g10 * m01 + g11 * m11
    flux = flux_scale * np.exp(flux_log_scale * x[32])
    ll = 0.0
    for r in range(mapping.shape[0]):
        p = 0.0
        for k in range(4):
            v = (mapping[r, 0] * acols[0, k] + mapping[r, 1] * acols[1, k]
                 + mapping[r, 2] * acols[2, k] + mapping[r, 3] * acols[3, k])
            p += v.real * v.real + v.imag * v.imag
        nbar = flux * p
        ll -= nbar
        n = counts[r]
        if n > 0.0:
            if nbar <= 0.0:
                return -np.inf
            ll += n * np.log(nbar)
    return ll


@njit(cache=True)
def channel_chain_chunk(x, ll, beta, xi, us, mapping, counts, flux_scale,
                        flux_log_scale, thin, step_offset, out):
    """Advance the chain by ``len(us)`` steps; returns (ll, accept count)."""
    n = x.shape[0]
    damp = np.sqrt(1.0 - beta * beta)
    n_accepted = 0
    xp = np.empty(n, dtype=np.float64)
    for t in range(us.shape[0]):
        for i in range(n):
            xp[i] = damp * x[i] + beta * xi[t, i]
        llp = channel_loglik_qubit(xp, mapping, counts, flux_scale,
                                   flux_log_scale)
        if np.log(us[t]) < llp - ll:
            for i in range(n):
                x[i] = xp[i]
            ll = llp
            n_accepted += 1
        step = step_offset + t + 1
        if thin > 0 and step % thin == 0:
            out[step // thin - 1, :] = x
    return ll, n_accepted


@njit(cache=True)
def state_loglik_qubit(x, outputs_conj, counts, flux_scale, flux_log_scale):
    """Noise-state log-likelihood at raw parameters (8 re/im + z).

    The density matrix is ``rho = g g^dag / Tr(g g^dag)``; probabilities are
    ``p_j = sum_c |sum_m conj(psi_j[m]) g[m, c]|^2 / Tr``.
    ``outputs_conj[j, m] = conj(psi_j[m])``.
    """
    g = np.empty((2, 2), dtype=np.complex128)
    idx = 0
    for i in range(2):
        for j in range(2):
            g[i, j] = complex(x[2 * idx], x[2 * idx + 1])
            idx += 1
    norm = 0.0
    for i in range(2):
        for j in range(2):
            v = g[i, j]
            norm += v.real * v.real + v.imag * v.imag
    if norm < STATE_TRACE_TOL:
        return -np.inf
    flux = flux_scale * np.exp(flux_log_scale * x[8])
    ll = 0.0
    for r in range(outputs_conj.shape[0]):
        p = 0.0
        for col in range(2):
            w = outputs_conj[r, 0] * g[0, col] + outputs_conj[r, 1] * g[1, col]
            p += w.real * w.real + w.imag * w.imag
        nbar = flux * (p / norm)
        ll -= nbar
        n = counts[r]
        if n > 0.0:
            if nbar <= 0.0:
                return -np.inf
            ll += n * np.log(nbar)
    return ll


@njit(cache=True)
def state_chain_chunk(x, ll, beta, xi, us, outputs_conj, counts, flux_scale,
                      flux_log_scale, thin, step_offset, out):
    n = x.shape[0]
    damp = np.sqrt(1.0 - beta * beta)
    n_accepted = 0
    xp = np.empty(n, dtype=np.float64)
    for t in range(us.shape[0]):
        for i in range(n):
            xp[i] = damp * x[i] + beta * xi[t, i]
        llp = state_loglik_qubit(xp, outputs_conj, counts, flux_scale,
                                 flux_log_scale)
        if np.log(us[t]) < llp - ll:
            for i in range(n):
                x[i] = xp[i]
            ll = llp
            n_accepted += 1
        step = step_offset + t + 1
        if thin > 0 and step % thin == 0:
            out[step // thin - 1, :] = x
    return ll, n_accepted


# -- plain-Python twins -----------------------------------------------------

def generic_chain_chunk(x, ll, beta, xi, us, loglik, thin, step_offset, out):
    """Reference chunk loop over an arbitrary log-likelihood callable."""
    damp = np.sqrt(1.0 - beta * beta)
    n_accepted = 0
    for t in range(us.shape[0]):
        xp = damp * x + beta * xi[t]
        llp = loglik(xp)
        if np.log(us[t]) < llp - ll:
            x[:] = xp
            ll = llp
            n_accepted += 1
        step = step_offset + t + 1
        if thin > 0 and step % thin == 0:
            out[step // thin - 1, :] = x
    return ll, n_accepted


def channel_loglik_numpy(x, mapping, counts, flux_scale, flux_log_scale,
                         dim, n_operators):
    """Reference channel log-likelihood for any (dim, n_operators)."""
    n_complex = n_operators * dim * dim
    y = x[:2 * n_complex:2] + 1j * x[1:2 * n_complex:2]
    g = y.reshape(n_operators, dim, dim)
    h = np.einsum("kji,kjl->il", g.conj(), g)
    w, v = np.linalg.eigh(h)
    if w[-1] <= 0.0 or w[0] <= SINGULAR_REL_TOL * w[-1]:
        return -np.inf
    m = (v * (1.0 / np.sqrt(w))) @ v.conj().T
    acols = (g @ m).reshape(n_operators, dim * dim).T
    p = np.sum(np.abs(mapping @ acols) ** 2, axis=1)
    flux = flux_scale * np.exp(flux_log_scale * x[2 * n_complex])
    nbar = flux * p
    observed = counts > 0.0
    if np.any(nbar[observed] <= 0.0):
        return -np.inf
    ll = -float(nbar.sum())
    if np.any(observed):
        ll += float(np.sum(counts[observed] * np.log(nbar[observed])))
    return ll


def state_loglik_numpy(x, outputs_conj, counts, flux_scale, flux_log_scale,
                       dim):
    n_complex = dim * dim
    gvec = x[:2 * n_complex:2] + 1j * x[1:2 * n_complex:2]
    g = gvec.reshape(dim, dim)
    norm = float(np.sum(np.abs(g) ** 2))
    if norm < STATE_TRACE_TOL:
        return -np.inf
    p = np.sum(np.abs(outputs_conj @ g) ** 2, axis=1) / norm
    flux = flux_scale * np.exp(flux_log_scale * x[2 * n_complex])
    nbar = flux * p
    observed = counts > 0.0
    if np.any(nbar[observed] <= 0.0):
        return -np.inf
    ll = -float(nbar.sum())
    if np.any(observed):
        ll += float(np.sum(counts[observed] * np.log(nbar[observed])))
    return ll
