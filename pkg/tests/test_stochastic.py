import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbsns.fields import Grid, VectorField, interpolate
from fbsns.presets import random_bandlimited
from fbsns.stochastic import (
    McEstimate,
    RngStream,
    correlate_deposits,
    log_quadrature,
    mc_reduce,
    run_batches,
    sample_gaussian,
    sample_triple,
)


class TestRngStream:
    def test_replayable(self):
        a = RngStream(7, 3).normal(10)
        b = RngStream(7, 3).normal(10)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(RngStream(7, 0).normal(5), RngStream(7, 1).normal(5))
        assert not np.array_equal(RngStream(7).split(0).normal(5), RngStream(7).split(1).normal(5))

    def test_split_is_deterministic_and_independent_of_parent_state(self):
        s = RngStream(1)
        child = s.split(4).normal(3)
        s.normal(100)
        np.testing.assert_array_equal(s.split(4).normal(3), child)

    def test_fresh_rewinds(self):
        s = RngStream(2)
        first = s.normal(4)
        np.testing.assert_array_equal(s.fresh().normal(4), first)

    def test_gaussian_moments(self):
        z = RngStream(0).normal(200_000)
        assert abs(z.mean()) < 5 / np.sqrt(z.size)
        assert abs(z.var() - 1) < 5 * np.sqrt(2 / z.size)

    def test_sample_gaussian_variance_checked(self):
        with pytest.raises(ValueError):
            sample_gaussian(RngStream(0), 2, 0.0)
        assert sample_gaussian(RngStream(0), 3, 2.0).shape == (3,)

    def test_triple_increments_sum_to_brownian_variance(self):
        s = RngStream(5)
        tot = np.array([sample_triple(s, 0.6, 1).total[0] for _ in range(20_000)])
        assert tot.var() == pytest.approx(0.6, rel=0.05)


class TestQuadrature:
    def test_integrates_power_laws(self):
        q = log_quadrature(1e-3, 1e3, K=32)
        assert q.integrate(lambda r: r**-1.5) == pytest.approx(2 * (1e-3**-0.5 - 1e3**-0.5), rel=1e-10)
        assert q.integrate(lambda r: np.exp(-r)) == pytest.approx(np.exp(-1e-3) - np.exp(-1e3), rel=1e-8)

    def test_validation(self):
        with pytest.raises(ValueError):
            log_quadrature(1.0, 0.5)
        with pytest.raises(ValueError):
            log_quadrature(0.1, np.inf)
        assert log_quadrature(0.1, 10, K=4, order=3).matches(0.1, 10)
        assert len(log_quadrature(0.1, 10, K=4, order=3)) == 12


class TestReduction:
    @given(st.integers(2, 40), st.integers(0, 1000))
    def test_tree_reduce_matches_numpy(self, m, seed):
        g = Grid(1, 4)
        x = np.random.default_rng(seed).standard_normal((m, 1, 4))
        est = mc_reduce([VectorField(g, xi) for xi in x])
        np.testing.assert_allclose(est.mean.components, x.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(est.stderr.components, x.std(axis=0, ddof=1) / np.sqrt(m), atol=1e-12)

    def test_combine_equals_pooled(self):
        g = Grid(1, 4)
        x = np.random.default_rng(1).standard_normal((30, 1, 4))
        a = mc_reduce([VectorField(g, xi) for xi in x[:12]])
        b = mc_reduce([VectorField(g, xi) for xi in x[12:]])
        pooled = mc_reduce([VectorField(g, xi) for xi in x])
        c = a.combine(b)
        np.testing.assert_allclose(c.mean.components, pooled.mean.components, atol=1e-12)
        np.testing.assert_allclose(c.stderr.components, pooled.stderr.components, atol=1e-12)
        assert c.samples == 30

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            mc_reduce([VectorField.zeros(Grid(1, 4))])

    def test_z_scores_handle_zero_stderr(self):
        g = Grid(1, 4)
        est = McEstimate(VectorField(g, np.ones((1, 4))), VectorField.zeros(g), 2)
        z = est.z_scores(VectorField(g, np.array([[1.0, 1.0, 0.0, 1.0]])))
        assert z[0, 0] == 0 and np.isinf(z[0, 2])

    def test_run_batches_thread_count_invariant(self):
        g = Grid(1, 8)

        def batch(count, s):
            return s.normal((count, 1, 8))

        a = run_batches(g, 1000, 64, RngStream(3), batch, n_jobs=1)
        b = run_batches(g, 1000, 64, RngStream(3), batch, n_jobs=4)
        np.testing.assert_array_equal(a.mean.components, b.mean.components)
        np.testing.assert_array_equal(a.stderr.components, b.stderr.components)


class TestCorrelateDeposits:
    @given(st.integers(0, 1000))
    def test_matches_direct_interpolation(self, seed):
        g = Grid(2, 8)
        rng = np.random.default_rng(seed)
        u = random_bandlimited(g, seed=seed, kmax=3)
        pos = rng.uniform(-10, 10, (3, 2, 2))
        coefs = rng.standard_normal((3, 2, 1, 2))
        out = correlate_deposits(g, pos, coefs, g.fft(u.components)[None])
        pts = g.points()
        for m in range(3):
            ref = sum(coefs[m, q, 0, :, None] * interpolate(u.components, g, pts + pos[m, q]) for q in range(2))
            np.testing.assert_allclose(out[m].reshape(2, -1), ref, atol=1e-10)
