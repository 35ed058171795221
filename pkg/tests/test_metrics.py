import numpy as np
import pytest

from qproctomo import (DimensionMismatch, EmptyData, KrausSet,
                       TomographyDataset, UnsupportedDimension, bit_flip,
                       bloch_vector, channel_capacity, coherent_information,
                       compose, dephasing, depolarizing, entropy_exchange,
                       inunitarity_curve, max_fidelity_over_local_unitaries,
                       mixing_probability_from_counts, process_fidelity,
                       relative_process_fidelity, to_choi, unitarity,
                       unitary_channel, von_neumann_entropy)
from qproctomo.metrics import CapacityOptConfig, rotated_model
from qproctomo.tomography import NoiseDataset

from conftest import haar_unitary, random_channel, random_density_matrix


def depolarizing_mixed_input_coherent_info(p):
    """Closed form for the depolarizing channel at the maximally mixed input."""
    if p == 0.0:
        return 1.0
    taus = [1.0 - 0.75 * p, 0.25 * p, 0.25 * p, 0.25 * p]
    return 1.0 + sum(t * np.log2(t) for t in taus if t > 0.0)


def stinespring_entropy_oracle(rho, channel):
    """Entropy of the joint (output, reference) state of a purified input.

    The tripartite output is pure, so this equals the environment entropy
    without ever forming the K x K exchange matrix.
    """
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    d = rho.shape[0]
    psi = np.zeros(d * d, dtype=complex)
    for i in range(d):
        psi += np.sqrt(w[i]) * np.kron(v[:, i], np.eye(d)[i])
    joint = np.zeros((d * d, d * d), dtype=complex)
    for a in channel.operators:
        vec = np.kron(a, np.eye(d)) @ psi
        joint += np.outer(vec, vec.conj())
    return von_neumann_entropy(joint)


class TestUnitarity:
    def test_unitary_channels(self, rng):
        for _ in range(10):
            u = haar_unitary(2, rng)
            assert abs(unitarity(unitary_channel(u)) - 1.0) < 1e-10

    def test_complete_depolarizing_is_zero(self):
        assert abs(unitarity(depolarizing(1.0))) < 1e-10

    def test_model_formulas(self):
        for p in np.linspace(0.0, 1.0, 21):
            assert abs(unitarity(depolarizing(p)) - (1 - p) ** 2) < 1e-10
            expected = (1 + 2 * (1 - 2 * p) ** 2) / 3
            assert abs(unitarity(dephasing(p)) - expected) < 1e-10
            assert abs(unitarity(bit_flip(p)) - expected) < 1e-10

    def test_unitary_invariance(self, rng):
        for _ in range(20):
            ch = random_channel(rng)
            u, v = haar_unitary(2, rng), haar_unitary(2, rng)
            rotated = compose(compose(unitary_channel(u), ch),
                              unitary_channel(v))
            assert abs(unitarity(rotated) - unitarity(ch)) < 1e-9

    def test_requires_qubits(self):
        with pytest.raises(UnsupportedDimension):
            unitarity(unitary_channel(np.eye(3)))


class TestEntropyExchange:
    def test_unitary_channel_is_zero(self, rng):
        u = haar_unitary(2, rng)
        rho = random_density_matrix(rng)
        assert abs(entropy_exchange(rho, unitary_channel(u))) < 1e-12

    def test_complete_depolarizing_on_mixed(self):
        value = entropy_exchange(np.eye(2) / 2, depolarizing(1.0))
        assert abs(value - 2.0) < 1e-12

    def test_matches_stinespring_oracle(self, rng):
        for _ in range(50):
            ch = random_channel(rng)
            rho = random_density_matrix(rng)
            direct = entropy_exchange(rho, ch)
            oracle = stinespring_entropy_oracle(rho, ch)
            assert abs(direct - oracle) < 1e-8

    def test_gauge_invariance(self, rng):
        # recombining the operator list with a unitary on the index leaves
        # the exchange entropy unchanged
        for _ in range(20):
            ch = random_channel(rng)
            rho = random_density_matrix(rng)
            u = haar_unitary(4, rng)
            mixed_ops = np.einsum("mk,kij->mij", u, ch.operators)
            mixed = KrausSet(mixed_ops)
            assert abs(entropy_exchange(rho, mixed)
                       - entropy_exchange(rho, ch)) < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            entropy_exchange(np.eye(3) / 3, depolarizing(0.5))


class TestCoherentInformation:
    def test_identity_on_mixed(self):
        value = coherent_information(np.eye(2) / 2,
                                     unitary_channel(np.eye(2)))
        assert abs(value - 1.0) < 1e-12

    def test_complete_depolarizing_extremes(self):
        # -1 at the maximally mixed input (S_e = 2 there); 0 at pure inputs,
        # where output and environment entropies are both 1
        ch = depolarizing(1.0)
        assert abs(coherent_information(np.eye(2) / 2, ch) + 1.0) < 1e-10
        pure = np.diag([1.0, 0.0]).astype(complex)
        assert abs(coherent_information(pure, ch)) < 1e-10

    def test_depolarizing_closed_form_at_mixed_input(self):
        for p in (0.05, 0.1, 0.2, 0.5):
            value = coherent_information(np.eye(2) / 2, depolarizing(p))
            assert abs(value - depolarizing_mixed_input_coherent_info(p)) < 1e-12


class TestChannelCapacity:
    def test_identity(self):
        result = channel_capacity(unitary_channel(np.eye(2)))
        assert abs(result.capacity - 1.0) < 1e-6
        assert not result.clipped

    def test_complete_depolarizing_reports_zero(self):
        # coherent information peaks at exactly 0 on the Bloch-ball boundary
        result = channel_capacity(depolarizing(1.0))
        assert abs(result.capacity) < 1e-6
        assert result.raw_optimum < 1e-6

    def test_depolarizing_matches_bloch_grid_oracle(self):
        # radial grid at 1e-3 resolution along representative directions;
        # the channel is unitarily covariant so the direction is irrelevant
        directions = [np.array(v, dtype=float) for v in
                      [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1),
                       (1, -1, 0), (0, 1, -1)]]
        directions = [v / np.linalg.norm(v) for v in directions]
        for p in (0.05, 0.1, 0.2):
            ch = depolarizing(p)
            best = -np.inf
            radii = np.arange(0.0, 1.0 + 1e-12, 1e-3)
            for direction in directions:
                for r in radii:
                    rho = 0.5 * (np.eye(2) + r * (
                        direction[0] * np.array([[0, 1], [1, 0]])
                        + direction[1] * np.array([[0, -1j], [1j, 0]])
                        + direction[2] * np.array([[1, 0], [0, -1]])))
                    best = max(best, coherent_information(rho, ch))
            result = channel_capacity(ch)
            analytic = depolarizing_mixed_input_coherent_info(p)
            assert abs(result.capacity - analytic) < 1e-4
            assert abs(result.capacity - best) < 1e-4

    def test_capacity_at_least_mixed_input_value(self, rng):
        for _ in range(5):
            ch = random_channel(rng)
            result = channel_capacity(ch)
            lower = max(coherent_information(np.eye(2) / 2, ch), 0.0)
            assert result.capacity >= lower - 1e-7

    def test_warm_start_config(self):
        ch = depolarizing(0.1)
        full = channel_capacity(ch)
        warm = channel_capacity(ch, CapacityOptConfig(
            include_standard_starts=False, n_random_starts=0,
            extra_starts=(bloch_vector(full.argmax_state), np.zeros(3))))
        assert abs(warm.capacity - full.capacity) < 1e-6

    def test_requires_qubits(self):
        with pytest.raises(UnsupportedDimension):
            channel_capacity(unitary_channel(np.eye(3)))


class TestProcessFidelity:
    def test_self_fidelity(self, rng):
        for _ in range(10):
            choi = to_choi(random_channel(rng))
            assert abs(process_fidelity(choi, choi) - 1.0) < 1e-10

    def test_identity_vs_complete_depolarizing(self):
        f = process_fidelity(to_choi(unitary_channel(np.eye(2))),
                             to_choi(depolarizing(1.0)))
        # Choi of the identity is pure, so F = <Phi|I/4|Phi> = 1/4
        assert abs(f - 0.25) < 1e-12

    def test_symmetry_and_range(self, rng):
        for _ in range(20):
            a = to_choi(random_channel(rng))
            b = to_choi(random_channel(rng))
            fab = process_fidelity(a, b)
            fba = process_fidelity(b, a)
            assert abs(fab - fba) < 1e-10
            assert 0.0 <= fab <= 1.0

    def test_monotone_in_depolarizing_strength(self):
        identity_choi = to_choi(unitary_channel(np.eye(2)))
        values = [process_fidelity(to_choi(depolarizing(p)), identity_choi)
                  for p in np.linspace(0.0, 1.0, 11)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            process_fidelity(np.eye(4) / 4, np.eye(9) / 9)


class TestRelativeProcessFidelity:
    def test_identical_list(self, rng):
        choi = to_choi(random_channel(rng))
        values = relative_process_fidelity([choi] * 4)
        np.testing.assert_allclose(values, 1.0, atol=1e-10)

    def test_against_reference(self):
        chois = [to_choi(unitary_channel(np.eye(2))),
                 to_choi(dephasing(0.5))]
        values = relative_process_fidelity(chois)
        assert abs(values[0] - 1.0) < 1e-12
        assert abs(values[1] - process_fidelity(chois[1], chois[0])) < 1e-14

    def test_singleton(self, rng):
        values = relative_process_fidelity([to_choi(random_channel(rng))])
        assert values == [pytest.approx(1.0, abs=1e-10)]

    def test_empty(self):
        with pytest.raises(EmptyData):
            relative_process_fidelity([])


class TestLocalUnitaryFit:
    def test_exact_model_recovers_unity(self):
        model = depolarizing(0.3)
        fit = max_fidelity_over_local_unitaries(to_choi(model), model,
                                                n_starts=4)
        assert fit.fidelity > 1.0 - 1e-6

    def test_flipped_model_recovers_unity(self):
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        measured = to_choi(compose(depolarizing(0.2), unitary_channel(sx)))
        fit = max_fidelity_over_local_unitaries(measured, depolarizing(0.2))
        assert fit.fidelity > 1.0 - 1e-6

    def test_random_rotations_recovered(self, rng):
        for _ in range(3):
            u, v = haar_unitary(2, rng), haar_unitary(2, rng)
            measured = to_choi(rotated_model(depolarizing(0.25), u, v))
            fit = max_fidelity_over_local_unitaries(measured,
                                                    depolarizing(0.25))
            assert fit.fidelity > 1.0 - 1e-6

    def test_never_below_unrotated(self, rng):
        u, v = haar_unitary(2, rng), haar_unitary(2, rng)
        measured = to_choi(rotated_model(dephasing(0.3), u, v))
        model = dephasing(0.3)
        unrotated = process_fidelity(measured, to_choi(model))
        fit = max_fidelity_over_local_unitaries(measured, model)
        assert fit.fidelity >= unrotated - 1e-12

    def test_result_rotations_reproduce_fidelity(self, rng):
        u, v = haar_unitary(2, rng), haar_unitary(2, rng)
        measured = to_choi(rotated_model(depolarizing(0.4), u, v))
        fit = max_fidelity_over_local_unitaries(measured, depolarizing(0.4))
        reconstructed = to_choi(rotated_model(depolarizing(0.4),
                                              fit.pre_rotation,
                                              fit.post_rotation))
        assert abs(process_fidelity(measured, reconstructed)
                   - fit.fidelity) < 1e-9


class TestMixingProbability:
    @staticmethod
    def _dataset(h, v, n_inputs=1, tau=1.0):
        counts = np.zeros((n_inputs, 6), dtype=np.int64)
        counts[:, 0] = h
        counts[:, 1] = v
        return TomographyDataset(counts=counts, integration_time=tau)

    def test_no_noise(self):
        p, std = mixing_probability_from_counts(self._dataset(500, 500),
                                                self._dataset(0, 0))
        assert p == 0.0 and std == 0.0

    def test_all_noise(self):
        p, _ = mixing_probability_from_counts(self._dataset(0, 0),
                                              self._dataset(250, 250))
        assert p == 1.0

    def test_quarter_split_with_propagated_std(self):
        p, std = mixing_probability_from_counts(self._dataset(1500, 1500),
                                                self._dataset(500, 500))
        assert abs(p - 0.25) < 1e-12
        expected_std = np.sqrt(3000.0 * 1000.0 / 4000.0 ** 3)
        assert abs(std - expected_std) < 1e-12

    def test_rate_normalization_across_shapes(self):
        # six prepared inputs; per-setting signal rate is 1800/s, noise 600/s
        signal = self._dataset(900, 900, n_inputs=6)
        noise = NoiseDataset(counts=np.array([300, 300, 0, 0, 0, 0]),
                             integration_time=1.0)
        p, _ = mixing_probability_from_counts(signal, noise)
        assert abs(p - 600.0 / (600.0 + 1800.0)) < 1e-12

    def test_requires_hv_rows(self):
        data = TomographyDataset(counts=np.ones((1, 2)), integration_time=1.0,
                                 output_indices=[2, 3])
        with pytest.raises(EmptyData):
            mixing_probability_from_counts(data, self._dataset(1, 1))

    def test_zero_everywhere(self):
        with pytest.raises(EmptyData):
            mixing_probability_from_counts(self._dataset(0, 0),
                                           self._dataset(0, 0))


class TestInunitarityCurve:
    def test_depolarizing_endpoints(self):
        table = inunitarity_curve(depolarizing, [0.0, 1.0])
        np.testing.assert_allclose(table[0], [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(table[1], [1.0, 1.0], atol=1e-12)

    def test_small_p_slope(self):
        grid = np.arange(0.0, 0.03 + 1e-12, 0.01)
        table = inunitarity_curve(depolarizing, grid)
        slope = (table[2, 1] - table[0, 1]) / (table[2, 0] - table[0, 0])
        assert abs(slope - 2.0) < 0.05

    def test_dephasing_saturates_at_two_thirds(self):
        table = inunitarity_curve(dephasing, [0.5])
        assert abs(table[0, 1] - 2.0 / 3.0) < 1e-12

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            inunitarity_curve(depolarizing, [-0.1, 0.5])
