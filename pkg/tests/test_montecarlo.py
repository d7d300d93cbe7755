import math

import numpy as np
import pytest

from conftest import H_12, H_X, random_instance, scalar_gains, scalar_model
from gaussceo.model import CeoModel, ModelError, Mode, TestChannelGains, full_covariance
from gaussceo.montecarlo import (
    McConfig,
    run_all,
    sample_batch,
    sample_moments,
    verify_det_entropy_equality,
    verify_fisher_equality,
    verify_sandwich_tightness,
    verify_logloss_achievability,
    verify_mmse_identity,
    verify_sample_covariance,
)


def vector_instance(seed=0):
    rng = np.random.default_rng(seed)
    return random_instance(rng, K=2, n_x=2, dims=[2, 2], lo=0.2, hi=0.8)


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            McConfig(samples=0)
        with pytest.raises(ValueError):
            McConfig(seed=-1)


class TestSampling:
    def test_batch_shapes_and_layout(self):
        m, g = vector_instance()
        b = sample_batch(m, g, McConfig(samples=1234, chunk=500))
        assert b.n == 1234
        assert b.stacked().shape == (1234, 2 + 4 + 4)

    def test_covariance_within_lln_bound(self):
        m, g = vector_instance()
        cfg = McConfig(samples=100_000, seed=3)
        reps = verify_sample_covariance(m, g, cfg)
        assert [r.name for r in reps] == ["cov_x", "cov_u1", "cov_u2"]
        for r in reps:
            assert r.rel_error < 3 / math.sqrt(1e5), r.name
        C, sl = full_covariance(m, g)
        u = sl["u"][0]
        a = m.agents[0]
        np.testing.assert_allclose(C[u, u], a.H @ m.sigma_x @ a.H.T + np.linalg.inv(g.omegas[0]), atol=1e-12)

    def test_zero_mean(self):
        m, g = vector_instance(1)
        n = 100_000
        mean, cov = sample_moments(m, g, McConfig(samples=n, seed=9))
        assert np.all(np.abs(mean) < 5 * np.sqrt(np.diag(cov)) / math.sqrt(n))

    def test_moments_match_batch(self):
        m, g = vector_instance(2)
        cfg = McConfig(samples=5000, chunk=1500, seed=4)
        data = sample_batch(m, g, cfg).stacked()
        mean, cov = sample_moments(m, g, cfg)
        np.testing.assert_allclose(mean, data.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(cov, np.cov(data.T, bias=False), rtol=1e-9, atol=1e-12)

    def test_reproducible_across_workers(self):
        m, g = vector_instance(5)
        a = sample_moments(m, g, McConfig(samples=40_000, chunk=7000, seed=11, workers=1))
        b = sample_moments(m, g, McConfig(samples=40_000, chunk=7000, seed=11, workers=4))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_seed_changes_draws(self):
        m, g = vector_instance()
        a = sample_batch(m, g, McConfig(samples=100, seed=1))
        b = sample_batch(m, g, McConfig(samples=100, seed=2))
        assert not np.array_equal(a.x, b.x)

    def test_complex_mode_rejected(self):
        m = scalar_model(mode=Mode.COMPLEX)
        with pytest.raises(ModelError, match="real"):
            sample_batch(m, scalar_gains(0.5, 0.5), McConfig(samples=10))

    @pytest.mark.parametrize("w", [0.0, 1.0])
    def test_boundary_gains_rejected(self, w):
        with pytest.raises(ModelError, match="inside the box"):
            sample_batch(scalar_model(), scalar_gains(0.5, w), McConfig(samples=10))


class TestMmse:
    def test_scalar(self, scalar):
        (r1, r2) = verify_mmse_identity(*scalar, McConfig(samples=200_000, seed=1))
        for r in (r1, r2):
            assert float(np.squeeze(r.analytic)) == pytest.approx(0.5)
            assert r.rel_error < 0.02 and r.passed

    def test_near_zero_gain_limit(self):
        m = scalar_model()
        g = scalar_gains(1e-6, 0.5)
        r = verify_mmse_identity(m, g, McConfig(samples=1000))[0]
        assert float(np.squeeze(r.analytic)) == pytest.approx(1.0, abs=1e-5)

    def test_vector(self):
        m, g = vector_instance()
        for r in verify_mmse_identity(m, g, McConfig(samples=200_000, seed=7)):
            assert r.rel_error < 2e-2 and not r.flagged


class TestExactChecks:
    def test_fisher_empty_conditioning(self, scalar):
        r = verify_fisher_equality(*scalar, 0b11)
        np.testing.assert_allclose(r.analytic, [[1.0]])
        assert r.passed

    def test_fisher_scalar_full(self, scalar):
        r = verify_fisher_equality(*scalar, 0)
        assert float(np.squeeze(r.analytic)) == pytest.approx(2.0)
        assert float(np.squeeze(r.empirical)) == pytest.approx(2.0, abs=1e-12)

    def test_sandwich_scalar(self, scalar):
        r = verify_sandwich_tightness(*scalar, 0)
        np.testing.assert_allclose(r.empirical, H_X, atol=1e-12)
        assert H_X == pytest.approx(1.41894, abs=1e-5)
        r = verify_sandwich_tightness(*scalar, 0b11)
        np.testing.assert_allclose(r.empirical, 1.07236, atol=1e-5)

    def test_det_entropy_scalar(self, scalar):
        r = verify_det_entropy_equality(*scalar)
        assert r.empirical == pytest.approx(0.5 * math.log(2 * math.pi * math.e * 0.5), abs=1e-12)
        assert r.passed

    def test_det_entropy_zero_gains(self):
        rng = np.random.default_rng(0)
        m, _ = random_instance(rng, K=2, n_x=3)
        r = verify_det_entropy_equality(m, TestChannelGains.zeros(m))
        assert r.empirical == pytest.approx(m.prior_entropy(), abs=1e-12)

    @pytest.mark.parametrize("seed", range(25))
    def test_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        m, g = random_instance(rng, K=3, n_x=int(rng.integers(1, 4)))
        for s in range(8):
            assert verify_fisher_equality(m, g, s).rel_error < 1e-9
            assert verify_sandwich_tightness(m, g, s).rel_error < 1e-9
        assert verify_det_entropy_equality(m, g).rel_error < 1e-9


class TestLogloss:
    def test_scalar(self, scalar):
        r = verify_logloss_achievability(*scalar, McConfig(samples=200_000, seed=2))
        assert r.analytic == pytest.approx(H_12)
        assert r.rel_error < 0.01
        assert abs(r.empirical - r.analytic) < 5 * r.std_error

    def test_near_zero_gains_give_prior_entropy(self):
        m = scalar_model()
        r = verify_logloss_achievability(m, scalar_gains(1e-6, 1e-6), McConfig(samples=200_000, seed=3))
        assert r.analytic == pytest.approx(H_X, abs=1e-5)
        assert r.empirical == pytest.approx(1.41894, rel=0.01)

    def test_standard_error_scaling(self, scalar):
        se = {n: verify_logloss_achievability(*scalar, McConfig(samples=n, seed=5)).std_error
              for n in (20_000, 40_000, 80_000)}
        assert se[20_000] / se[80_000] == pytest.approx(2.0, rel=0.1)
        assert se[20_000] / se[40_000] == pytest.approx(math.sqrt(2), rel=0.1)


def test_error_shrinks_like_inverse_root_n():
    m, g = vector_instance()
    ns = [10_000, 40_000, 160_000]
    errs = []
    for n in ns:
        runs = [verify_mmse_identity(m, g, McConfig(samples=n, seed=s))[0].rel_error for s in range(16)]
        errs.append(np.mean(runs))
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert -1.0 <= slope <= -0.25


class TestRunAll:
    def test_passes_on_scalar(self, scalar):
        reps = run_all(*scalar, McConfig(samples=200_000, seed=42))
        assert all(r.passed for r in reps)
        assert len(reps) == 3 + 2 + 1 + 4 + 4 + 1

    def test_minimum_samples(self, scalar):
        with pytest.raises(ValueError, match="1000"):
            run_all(*scalar, McConfig(samples=100))

    def test_singular_model_rejected(self):
        m = CeoModel.from_arrays(np.eye(1), [np.eye(1)], [np.zeros((1, 1))])
        with pytest.raises(ModelError):
            run_all(m, scalar_gains(0.5), McConfig(samples=1000))
