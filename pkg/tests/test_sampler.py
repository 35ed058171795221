import numpy as np
import pytest
from scipy import stats

from qproctomo import (ChainConfig, ChannelParams, FluxParam, depolarizing,
                       kraus_from_params, pcn_step, posterior_summary,
                       run_chain, sample_prior, simulate_counts, unitarity,
                       convergence_doubling)
from qproctomo.sampler import load_posterior, save_posterior
from qproctomo.operators import PAULIS


def prior_unitarity_oracle(n_draws, seed):
    """Independent reimplementation of the prior-induced channel ensemble."""
    rng = np.random.default_rng(seed)
    basis = [p / np.sqrt(2.0) for p in PAULIS]
    values = np.empty(n_draws)
    for t in range(n_draws):
        g = (rng.standard_normal((4, 2, 2))
             + 1j * rng.standard_normal((4, 2, 2)))
        h = sum(m.conj().T @ m for m in g)
        w, v = np.linalg.eigh(h)
        hinv = (v * (1.0 / np.sqrt(w))) @ v.conj().T
        a = g @ hinv
        total = 0.0
        for nu in range(1, 4):
            image = sum(m @ basis[nu] @ m.conj().T for m in a)
            for mu in range(1, 4):
                total += abs(np.trace(basis[mu] @ image)) ** 2
        values[t] = total / 3.0
    return values


class TestSamplePrior:
    def test_moments(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_prior(2, 4, rng).to_real_vector()
                          for _ in range(20_000)])
        re_y = draws[:, 0:32:2].ravel()
        assert abs(re_y.mean()) < 0.02
        assert abs(re_y.var() - 1.0) < 0.02
        assert abs(draws[:, -1].mean()) < 0.03

    def test_rejects_excess_operators(self):
        with pytest.raises(ValueError):
            sample_prior(2, 5, np.random.default_rng(0))

    def test_induced_unitarity_matches_oracle(self):
        rng = np.random.default_rng(2)
        n = 4000
        library = np.array([
            unitarity(kraus_from_params(sample_prior(2, 4, rng).y, 2, 4))
            for _ in range(n)
        ])
        oracle = prior_unitarity_oracle(n, seed=3)
        combined_se = np.sqrt(library.var() / n + oracle.var() / n)
        assert abs(library.mean() - oracle.mean()) < 2.0 * combined_se


class TestPcnStep:
    def test_flat_likelihood_always_accepts(self):
        rng = np.random.default_rng(4)
        config = ChainConfig(beta=0.5, adapt_beta=False)
        params = sample_prior(2, 4, rng)
        for _ in range(100):
            params, accepted = pcn_step(params, config, None, rng)
            assert accepted

    def test_beta_one_forgets_current_state(self):
        seed = 11
        config = ChainConfig(beta=1.0, adapt_beta=False)
        rng = np.random.default_rng(seed)
        start = sample_prior(2, 4, rng)
        after, accepted = pcn_step(start, config, None, rng)
        # replay the stream: the proposal must equal the fresh draw exactly
        rng2 = np.random.default_rng(seed)
        rng2.standard_normal(33)  # the initial draw
        xi = rng2.standard_normal(33)
        assert accepted
        np.testing.assert_array_equal(after.to_real_vector(), xi)

    def test_deterministic(self):
        config = ChainConfig(beta=0.4, adapt_beta=False)
        data = simulate_counts(depolarizing(0.4), 1e3, 1.0, mode="poisson",
                               seed=9)
        out = []
        for _ in range(2):
            rng = np.random.default_rng(21)
            params = sample_prior(2, 4, rng)
            for _ in range(20):
                params, _ = pcn_step(params, config, data, rng)
            out.append(params.to_real_vector())
        np.testing.assert_array_equal(out[0], out[1])


class TestRunChain:
    def test_flat_chain_bookkeeping_reproduces_stream(self):
        # R=4, T=2, burn_in=0, beta=1: retained rows are the proposal draws
        # at steps 2, 4, 6, 8 exactly
        config = ChainConfig(beta=1.0, retained_samples=4, thinning=2,
                             burn_in=0, seed=77, adapt_beta=False)
        samples = run_chain(None, config)
        rng = np.random.default_rng(77)
        rng.standard_normal(33)  # initial state
        xi = rng.standard_normal((8, 33))
        expected = xi[[1, 3, 5, 7]]
        got = np.column_stack([samples.y.view(np.float64), samples.z])
        np.testing.assert_array_equal(got, expected)
        assert samples.acceptance_rate == 1.0

    def test_seed_determinism(self):
        data = simulate_counts(depolarizing(0.3), 1e3, 1.0, mode="poisson",
                               seed=2)
        config = ChainConfig(retained_samples=16, thinning=4, burn_in=64,
                             seed=5)
        a = run_chain(data, config)
        b = run_chain(data, config)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.z, b.z)
        assert a.acceptance_rate == b.acceptance_rate

    def test_engines_agree(self):
        data = simulate_counts(depolarizing(0.3), 1e3, 1.0, mode="poisson",
                               seed=2)
        base = dict(retained_samples=32, thinning=4, burn_in=128, seed=8,
                    beta=0.2, adapt_beta=False)
        fast = run_chain(data, ChainConfig(engine="numba", **base))
        slow = run_chain(data, ChainConfig(engine="numpy", **base))
        # identical draws and (for this seed) identical accept decisions make
        # the retained states bit-identical across engines
        np.testing.assert_array_equal(fast.y, slow.y)
        np.testing.assert_array_equal(fast.z, slow.z)
        assert fast.acceptance_rate == slow.acceptance_rate

    def test_posterior_concentrates_on_truth(self):
        truth = depolarizing(0.4)
        data = simulate_counts(truth, 1e5, 1.0, mode="noiseless")
        config = ChainConfig(retained_samples=256, thinning=256, seed=13)
        samples = run_chain(data, config)
        mean_u, _ = posterior_summary(samples, unitarity)
        assert abs(mean_u - 0.36) < 0.02

    def test_acceptance_rate_flat_is_one(self):
        config = ChainConfig(retained_samples=8, thinning=2, burn_in=0,
                             seed=1, adapt_beta=False)
        samples = run_chain(None, config)
        assert samples.acceptance_rate == 1.0

    def test_flux_override_is_echoed(self):
        data = simulate_counts(depolarizing(0.2), 1e3, 1.0, mode="poisson",
                               seed=0)
        flux = FluxParam(z=0.0, reference_flux=999.0, log_scale=0.2)
        config = ChainConfig(retained_samples=4, thinning=2, burn_in=0, seed=0)
        samples = run_chain(data, config, flux=flux)
        assert samples.flux.reference_flux == 999.0
        assert samples.flux.log_scale == 0.2


class TestPriorRecovery:
    def test_flat_chain_matches_standard_normal(self):
        # beta adapts to the 1.0 cap on a flat likelihood, so retained
        # samples are effectively i.i.d. prior draws
        config = ChainConfig(retained_samples=10_000, thinning=1,
                             burn_in=2000, seed=3)
        samples = run_chain(None, config)
        assert samples.beta_final == 1.0
        coord = samples.y[:, 0].real
        n = coord.size
        assert abs(coord.mean()) < 3.0 / np.sqrt(n)
        assert abs(coord.var(ddof=1) - 1.0) < 3.0 * np.sqrt(2.0 / n)
        _, p_value = stats.kstest(coord, "norm")
        assert p_value > 0.01

    def test_z_coordinate_moments(self):
        config = ChainConfig(retained_samples=4096, thinning=1, burn_in=2048,
                             seed=6)
        samples = run_chain(None, config)
        assert samples.beta_final == 1.0
        assert abs(samples.z.mean()) < 3.0 / np.sqrt(len(samples))


class TestPosteriorSummary:
    def test_constant_functional(self):
        config = ChainConfig(retained_samples=8, thinning=1, burn_in=0, seed=0)
        samples = run_chain(None, config)
        mean, std = posterior_summary(samples, lambda k: 3.25)
        assert mean == 3.25 and std == 0.0

    def test_array_functional(self):
        from qproctomo import to_choi

        config = ChainConfig(retained_samples=8, thinning=1, burn_in=0, seed=0)
        samples = run_chain(None, config)
        mean, std = posterior_summary(samples, to_choi)
        assert mean.shape == (4, 4) and std.shape == (4, 4)
        np.testing.assert_allclose(mean, samples.mean_choi())


class TestConvergenceDoubling:
    def test_flat_likelihood_converges_immediately(self):
        config = ChainConfig(retained_samples=512, thinning=1, burn_in=128,
                             seed=9)
        result = convergence_doubling(None, config, unitarity, t_min=4,
                                      t_max=64, mean_tol=0.05, std_tol=0.05)
        assert result.converged
        assert result.chosen_thinning <= 16
        assert len(result.trace) >= 3

    def test_respects_ceiling(self):
        config = ChainConfig(retained_samples=64, thinning=1, burn_in=16,
                             seed=9)
        result = convergence_doubling(None, config, unitarity, t_min=4,
                                      t_max=8, mean_tol=1e-12, std_tol=1e-12)
        assert not result.converged
        assert result.chosen_thinning == 8


class TestPersistence:
    def test_round_trip(self, tmp_path):
        data = simulate_counts(depolarizing(0.3), 1e3, 1.0, mode="poisson",
                               seed=2)
        config = ChainConfig(retained_samples=16, thinning=4, burn_in=32,
                             seed=5)
        samples = run_chain(data, config)
        path = tmp_path / "posterior.json"
        save_posterior(path, samples, extra={"wavelength_nm": 1550.0})
        back, bundle = load_posterior(path)
        np.testing.assert_array_equal(back.y, samples.y)
        np.testing.assert_array_equal(back.z, samples.z)
        assert back.config == samples.config
        assert back.acceptance_rate == samples.acceptance_rate
        assert bundle["wavelength_nm"] == 1550.0


class TestChannelParams:
    def test_real_vector_round_trip(self):
        rng = np.random.default_rng(0)
        params = sample_prior(2, 4, rng)
        back = ChannelParams.from_real_vector(params.to_real_vector())
        np.testing.assert_array_equal(back.y, params.y)
        assert back.z == params.z

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ChannelParams(y=np.array([np.nan + 0j]), z=0.0)


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            ChainConfig(beta=0.0)
        with pytest.raises(ValueError):
            ChainConfig(retained_samples=1)
        with pytest.raises(ValueError):
            ChainConfig(thinning=0)
        with pytest.raises(ValueError):
            ChainConfig(engine="cuda")

    def test_default_burn_in(self):
        config = ChainConfig(retained_samples=100, thinning=10)
        assert config.effective_burn_in == 100
