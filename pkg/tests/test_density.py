import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from sporadic_bps.density import (
    DensityError,
    EmptyActiveSetError,
    ExpertDensity,
    GaussianDensity,
    HistogramDensity,
    gaussian_logpdf,
    mixture_logpdf,
    moment_match_histogram,
    sample_phi_conditional,
    student_t_logpdf,
)


def integrate_histogram(edges, probs):
    """Mean and variance of the piecewise-uniform density by per-bin quadrature."""
    dens = [p / (hi - lo) for lo, hi, p in zip(edges[:-1], edges[1:], probs)]
    m = sum(integrate.quad(lambda x, c=c: x * c, lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
            for lo, hi, c in zip(edges[:-1], edges[1:], dens))
    v = sum(integrate.quad(lambda x, c=c: (x - m) ** 2 * c, lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
            for lo, hi, c in zip(edges[:-1], edges[1:], dens))
    return m, v


class TestHistogram:
    def test_single_bin(self):
        g = moment_match_histogram(HistogramDensity((0.0, 1.0), (1.0,)))
        assert g.mean == pytest.approx(0.5, abs=1e-15)
        assert g.variance == pytest.approx(1 / 12, abs=1e-15)

    def test_two_bins(self):
        g = moment_match_histogram(HistogramDensity((0.0, 1.0, 2.0), (0.5, 0.5)))
        assert g.mean == 1.0
        assert g.variance == pytest.approx(1 / 3, abs=1e-15)
        m, v = integrate_histogram([0.0, 1.0, 2.0], [0.5, 0.5])
        assert abs(v - g.variance) < 1e-12

    def test_zero_mass_bin_inert(self):
        g = moment_match_histogram(HistogramDensity((0.0, 1.0, 2.0), (1.0, 0.0)))
        assert g.mean == pytest.approx(0.5, abs=1e-15)
        assert g.variance == pytest.approx(1 / 12, abs=1e-15)

    @pytest.mark.parametrize(
        "edges, probs",
        [((0.0, 1.0), (0.5,)), ((1.0, 0.0), (1.0,)), ((0.0, np.inf), (1.0,)),
         ((0.0, 1.0, 2.0), (-0.1, 1.1)), ((0.0, 1.0), ())],
    )
    def test_invalid(self, edges, probs):
        with pytest.raises(DensityError):
            HistogramDensity(edges, probs)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_matches_quadrature(self, k, seed):
        rng = np.random.default_rng(seed)
        edges = np.cumsum(np.r_[rng.normal(), rng.uniform(0.1, 2.0, k)])
        probs = rng.dirichlet(np.ones(k))
        g = moment_match_histogram(HistogramDensity(tuple(edges), tuple(probs)))
        m, v = integrate_histogram(edges, probs)
        assert abs(g.mean - m) < 1e-10
        assert abs(g.variance - v) < 1e-10


class TestStudentT:
    def test_cauchy_at_zero(self):
        assert student_t_logpdf(0.0, ExpertDensity(0.0, 1.0, 1.0)) == pytest.approx(-math.log(math.pi), abs=1e-12)

    def test_mode(self):
        d = ExpertDensity(0.3, 2.0, 4.0)
        xs = np.array([-1.0, 0.0, 0.29, 0.31, 5.0])
        assert np.all(student_t_logpdf(xs, d) < student_t_logpdf(0.3, d))

    def test_large_dof_limit(self):
        lt = student_t_logpdf(1.0, ExpertDensity(0.0, 1.0, 1e6))
        assert abs(lt - gaussian_logpdf(1.0, GaussianDensity(0.0, 1.0))) < 1e-4

    @pytest.mark.parametrize("a, A, n", [(0.0, 1.0, 2.0), (1.5, 0.3, 5.0), (-2.0, 4.0, 30.0)])
    def test_integrates_to_one(self, a, A, n):
        d = ExpertDensity(a, A, n)
        half = 50 * math.sqrt(A)
        total, _ = integrate.quad(lambda x: math.exp(student_t_logpdf(x, d)), a - half, a + half,
                                  points=[a], limit=200, epsabs=1e-12)
        # heavy tails beyond +-50 sd are outside the window for n = 2
        tail = 2 * stats.t.sf(50, n)
        assert abs(total + tail - 1.0) < 1e-6

    def test_matches_scipy(self):
        d = ExpertDensity(0.7, 2.5, 6.0)
        x = np.linspace(-5, 5, 11)
        ref = stats.t.logpdf(x, 6.0, loc=0.7, scale=math.sqrt(2.5))
        np.testing.assert_allclose(student_t_logpdf(x, d), ref, rtol=1e-12)

    @pytest.mark.parametrize("A, n", [(0.0, 5.0), (-1.0, 5.0), (1.0, 0.0), (np.nan, 5.0)])
    def test_invalid(self, A, n):
        with pytest.raises(DensityError):
            ExpertDensity(0.0, A, n)

    def test_gaussian_view(self):
        g = ExpertDensity(1.0, 2.0, 30.0).as_gaussian()
        assert (g.mean, g.variance) == (1.0, 2.0)


class TestGaussian:
    def test_values(self):
        assert gaussian_logpdf(0.0, GaussianDensity(0.0, 1.0)) == pytest.approx(-0.918939, abs=1e-6)
        assert gaussian_logpdf(1.2, GaussianDensity(1.2, 3.0)) == pytest.approx(-0.5 * math.log(2 * math.pi * 3.0))
        assert gaussian_logpdf(2.0, GaussianDensity(0.0, 4.0)) == pytest.approx(-0.5 * math.log(8 * math.pi) - 0.5)

    def test_nonpositive_variance(self):
        with pytest.raises(DensityError):
            GaussianDensity(0.0, 0.0)


class TestMixture:
    def test_empty(self):
        with pytest.raises(EmptyActiveSetError):
            mixture_logpdf([], [], 0.0)

    def test_single_and_identical(self):
        c = GaussianDensity(0.5, 2.0)
        assert mixture_logpdf([c], [1.0], 0.1) == pytest.approx(gaussian_logpdf(0.1, c), abs=1e-14)
        assert mixture_logpdf([c, c], [0.3, 0.7], 0.1) == pytest.approx(gaussian_logpdf(0.1, c), abs=1e-14)

    def test_two_components(self):
        comps = [GaussianDensity(0.0, 1.0), GaussianDensity(4.0, 1.0)]
        ref = math.log(0.5 * stats.norm.pdf(2.0, 0, 1) + 0.5 * stats.norm.pdf(2.0, 4, 1))
        assert mixture_logpdf(comps, [0.5, 0.5], 2.0) == pytest.approx(ref, abs=1e-13)

    def test_bad_weights(self):
        with pytest.raises(DensityError):
            mixture_logpdf([GaussianDensity(0.0, 1.0)], [0.5], 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, k, seed):
        rng = np.random.default_rng(seed)
        comps = [GaussianDensity(rng.normal(), rng.uniform(0.1, 3)) for _ in range(k)]
        w = rng.dirichlet(np.ones(k))
        perm = rng.permutation(k)
        x = rng.normal(size=5)
        a = mixture_logpdf(comps, w, x)
        b = mixture_logpdf([comps[i] for i in perm], w[perm], x)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


class TestPhi:
    def test_concentrates_at_large_dof(self):
        rng = np.random.default_rng(0)
        d = ExpertDensity(0.0, 1.0, 1e4)
        phis = np.array([sample_phi_conditional(0.0, d, rng).value for _ in range(100_000)])
        assert abs(phis.mean() - 1.0) < 0.02

    def test_reproducible(self):
        d = ExpertDensity(0.0, 1.0, 5.0)
        a = sample_phi_conditional(0.4, d, np.random.default_rng(9)).value
        b = sample_phi_conditional(0.4, d, np.random.default_rng(9)).value
        assert a == b

    def test_far_from_location(self):
        rng = np.random.default_rng(1)
        d = ExpertDensity(0.0, 1.0, 5.0)
        phis = np.array([sample_phi_conditional(10.0, d, rng).value for _ in range(100_000)])
        # 1/phi ~ Gamma(3, rate 52.5) -> E[phi] = 52.5 / 2
        shape, rate = 3.0, 52.5
        mean = rate / (shape - 1)
        se = phis.std(ddof=1) / math.sqrt(phis.size)
        assert abs(phis.mean() - mean) < 3 * se

    def test_at_location_matches_gamma(self):
        rng = np.random.default_rng(2)
        n = 7.0
        d = ExpertDensity(1.0, 2.0, n)
        prec = 1.0 / np.array([sample_phi_conditional(1.0, d, rng).value for _ in range(100_000)])
        shape, rate = n / 2 + 0.5, n / 2
        se = prec.std(ddof=1) / math.sqrt(prec.size)
        assert abs(prec.mean() - shape / rate) < 3 * se
        assert prec.var() == pytest.approx(shape / rate**2, rel=0.03)
