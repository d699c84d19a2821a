import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from obser.kernel import (
    DegenerateMeanError,
    KernelConfig,
    ObservationSet,
    as_unit_vectors,
    density_matrix,
    kernel,
    kernel_density,
    log_kernel_density,
    mean_direction,
)

from conftest import random_unit_rows, unit


class TestKernelConfig:
    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            KernelConfig(0.0)
        with pytest.raises(ValueError):
            KernelConfig(-1.0)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            KernelConfig(0.5, family="gaussian")

    def test_floor(self):
        assert_allclose(KernelConfig(0.5).floor, math.exp(-4.0))


class TestKernelValues:
    def test_identity(self):
        x = unit([3.0, 4.0])
        assert_allclose(kernel(x, x, KernelConfig(0.5)), 1.0, atol=1e-12)

    def test_antipodal_attains_floor(self):
        x = unit([1.0, 0.0])
        assert_allclose(kernel(x, -x, KernelConfig(0.5)), math.exp(-4.0), rtol=1e-12)

    def test_orthogonal_low_temperature(self):
        got = kernel([1.0, 0.0], [0.0, 1.0], KernelConfig(0.2))
        assert_allclose(got, math.exp(-5.0), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            kernel([1.0, 0.0], unit([1.0, 1.0, 1.0]), KernelConfig(0.5))

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        cfg = KernelConfig(0.3)
        for _ in range(50):
            a, b = random_unit_rows(rng, 2, 5)
            assert kernel(a, b, cfg) == kernel(b, a, cfg)

    def test_range(self):
        rng = np.random.default_rng(1)
        for tau in (0.1, 0.5, 2.0):
            cfg = KernelConfig(tau)
            for _ in range(100):
                a, b = random_unit_rows(rng, 2, 4)
                v = kernel(a, b, cfg)
                assert cfg.floor <= v <= 1.0

    def test_strictly_increasing_in_temperature(self):
        rng = np.random.default_rng(2)
        a, b = random_unit_rows(rng, 2, 6)
        taus = [0.05, 0.1, 0.2, 0.5, 1.0, 5.0]
        values = [kernel(a, b, KernelConfig(t)) for t in taus]
        assert all(lo < hi for lo, hi in zip(values, values[1:]))


class TestKernelDensity:
    def test_self_density(self):
        x = unit([1.0, 2.0])
        obs = ObservationSet([x])
        assert_allclose(kernel_density(x, obs, KernelConfig(0.3)), 1.0, atol=1e-12)

    def test_two_term_average(self):
        x = unit([1.0, 0.0])
        obs = ObservationSet([x, -x])
        expected = (1.0 + math.exp(-4.0)) / 2.0
        assert_allclose(kernel_density(x, obs, KernelConfig(0.5)), expected, rtol=1e-12)

    def test_all_antipodal_attains_floor(self):
        x = unit([0.0, 1.0])
        obs = ObservationSet([-x, -x, -x])
        assert_allclose(kernel_density(x, obs, KernelConfig(1.0)), math.exp(-2.0), rtol=1e-12)

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            kernel_density([1.0, 0.0], np.empty((0, 2)), KernelConfig(0.5))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        samples = random_unit_rows(rng, 64, 8)
        x = random_unit_rows(rng, 1, 8)[0]
        cfg = KernelConfig(0.4)
        base = kernel_density(x, samples, cfg)
        for _ in range(5):
            perm = rng.permutation(64)
            assert_allclose(kernel_density(x, samples[perm], cfg), base, rtol=1e-12)

    def test_log_stabilized_path_matches_plain(self):
        # just above and below the switch temperature the two paths agree
        rng = np.random.default_rng(4)
        samples = random_unit_rows(rng, 32, 6)
        x = random_unit_rows(rng, 1, 6)[0]
        for tau in (0.049, 0.051):
            cfg = KernelConfig(tau)
            plain = float(np.mean(np.exp((samples @ x - 1.0) / tau)))
            assert_allclose(kernel_density(x, samples, cfg), plain, rtol=1e-10)

    def test_log_density_survives_tiny_temperature(self):
        x = unit([1.0, 0.0])
        obs = ObservationSet([-x, -x])
        got = log_kernel_density(x, obs, KernelConfig(0.002))
        assert_allclose(got, -1000.0, rtol=1e-12)


class TestDensityMatrix:
    def test_singleton(self):
        x = unit([1.0, 1.0])
        m = density_matrix([x], [x], KernelConfig(0.5))
        assert_allclose(m, [[1.0]])

    def test_antipodal_entry(self):
        x = unit([1.0, 0.0])
        m = density_matrix([x], [-x], KernelConfig(0.5))
        assert_allclose(m, [[math.exp(-4.0)]], rtol=1e-12)

    def test_matches_scalar_kernel_elementwise(self):
        rng = np.random.default_rng(5)
        rows = random_unit_rows(rng, 2, 7)
        cols = random_unit_rows(rng, 3, 7)
        cfg = KernelConfig(0.3)
        m = density_matrix(rows, cols, cfg)
        assert m.shape == (2, 3)
        for i in range(2):
            for j in range(3):
                assert_allclose(m[i, j], kernel(rows[i], cols[j], cfg), atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_elementwise_property(self, seed):
        rng = np.random.default_rng(seed)
        rows = random_unit_rows(rng, 5, 4)
        cols = random_unit_rows(rng, 6, 4)
        cfg = KernelConfig(float(rng.uniform(0.05, 2.0)))
        m = density_matrix(rows, cols, cfg)
        i = int(rng.integers(5))
        j = int(rng.integers(6))
        assert_allclose(m[i, j], kernel(rows[i], cols[j], cfg), atol=1e-12)


class TestMeanDirection:
    def test_idempotent_on_duplicates(self):
        x = unit([0.6, 0.8])
        assert_allclose(mean_direction([x, x]), x, atol=1e-12)

    def test_symmetric_pair(self):
        got = mean_direction([[1.0, 0.0], [0.0, 1.0]])
        assert_allclose(got, [1 / math.sqrt(2)] * 2, atol=1e-12)

    def test_antipodal_pair_degenerate(self):
        x = unit([1.0, 0.0])
        with pytest.raises(DegenerateMeanError):
            mean_direction([x, -x])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_direction(np.empty((0, 3)))


class TestIngestion:
    def test_renormalizes_small_deviation(self):
        v = np.array([1.0005, 0.0])
        out = as_unit_vectors(v)
        assert_allclose(np.linalg.norm(out[0]), 1.0, atol=1e-9)

    def test_rejects_large_deviation(self):
        with pytest.raises(ValueError, match="norm"):
            as_unit_vectors(np.array([1.01, 0.0]))

    def test_rejects_dimension_one(self):
        with pytest.raises(ValueError, match="dimension"):
            as_unit_vectors(np.array([[1.0]]))

    def test_observation_set_metadata(self):
        obs = ObservationSet([[1, 0], [0, 1]], ids=["a", "b"], labels=["x", "y"],
                             region="r0", positions=[[0, 0, 0], [1, 1, 1]])
        assert len(obs) == 2 and obs.dim == 2
        assert obs.ids == ("a", "b") and obs.labels == ("x", "y")
        sub = obs.subset([1])
        assert sub.ids == ("b",) and sub.labels == ("y",)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            ObservationSet([[1, 0], [0, 1]], ids=["a", "a"])
