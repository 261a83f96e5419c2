import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_panel
from sporadic_bps.baselines import (
    WeightVector,
    asmi_impute,
    ew_pool,
    inverse_mse_weights,
    locf_impute,
    point_errors,
    weighted_pool,
)
from sporadic_bps.density import EmptyActiveSetError, ExpertDensity, GaussianDensity, gaussian_logpdf
from sporadic_bps.panel import SyntheticConfig, generate_synthetic_panel

NAN = np.nan


class TestEwPool:
    def test_single(self):
        p = ew_pool([ExpertDensity(1.0, 2.0, 30.0)])
        assert p.mean == 1.0 and p.variance == 2.0
        assert p.logpdf(0.3) == pytest.approx(gaussian_logpdf(0.3, GaussianDensity(1.0, 2.0)), abs=1e-14)

    def test_two(self):
        p = ew_pool([GaussianDensity(0.0, 1.0), GaussianDensity(2.0, 1.0)])
        assert p.mean == 1.0
        assert p.variance == pytest.approx(2.0, abs=1e-14)

    def test_identical(self):
        c = GaussianDensity(0.5, 0.7)
        p = ew_pool([c, c, c])
        for y in (-1.0, 0.5, 2.0):
            assert p.logpdf(y) == pytest.approx(gaussian_logpdf(y, c), abs=1e-13)

    def test_empty(self):
        with pytest.raises(EmptyActiveSetError):
            ew_pool([])

    def test_moment_matched(self):
        p = ew_pool([GaussianDensity(0.0, 1.0), GaussianDensity(2.0, 1.0)], moment_matched=True)
        assert p.logpdf(1.0) == pytest.approx(gaussian_logpdf(1.0, GaussianDensity(1.0, 2.0)), abs=1e-14)

    def test_weighted(self):
        p = weighted_pool([GaussianDensity(0.0, 1.0), GaussianDensity(4.0, 1.0)], [0.25, 0.75])
        assert p.mean == 3.0


class TestLocf:
    def test_carry_forward(self):
        ds = make_panel(np.zeros(4), [[1.5], [NAN], [NAN], [NAN]], scale=0.3, dof=7.0)
        out = locf_impute(ds)
        np.testing.assert_array_equal(out.loc[:, 0], 1.5)
        np.testing.assert_array_equal(out.scale[:, 0], 0.3)
        assert out.idx.all()

    def test_no_gaps(self):
        ds = make_panel(np.zeros(3), [[1.0, 2.0], [1.1, 2.1], [1.2, 2.2]])
        assert locf_impute(ds).equals(ds)

    def test_leading_gap_stays(self):
        ds = make_panel(np.zeros(3), [[NAN], [2.0], [NAN]])
        out = locf_impute(ds)
        assert not out.idx[0, 0] and out.loc[2, 0] == 2.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_idempotent(self, seed):
        ds = generate_synthetic_panel(SyntheticConfig(J=4, T=20, p_stay_on=0.6, p_stay_off=0.6, min_active=0, seed=seed))
        once = locf_impute(ds)
        assert locf_impute(once).equals(once)


class TestAsmi:
    def test_running_mean(self):
        ds = make_panel(np.zeros(4), [[1.0], [3.0], [NAN], [NAN]])
        out = asmi_impute(ds, 2)
        assert out.loc[2, 0] == 2.0
        assert not out.idx[3, 0]

    def test_single_observation(self):
        ds = make_panel(np.zeros(3), [[NAN], [4.0], [NAN]], scale=0.5)
        out = asmi_impute(ds, 2)
        assert out.loc[0, 0] == 4.0 and out.loc[2, 0] == 4.0 and out.scale[2, 0] == 0.5

    def test_later_origin_uses_new_data(self):
        loc = [[1.0], [NAN], [5.0], [NAN]]
        ds = make_panel(np.zeros(4), loc)
        assert asmi_impute(ds, 1).loc[1, 0] == 1.0
        assert asmi_impute(ds, 3).loc[3, 0] == 3.0
        assert asmi_impute(ds, 3).loc[1, 0] == 3.0

    def test_never_observed_stays_missing(self):
        ds = make_panel(np.zeros(3), [[1.0, NAN], [1.0, NAN], [1.0, 2.0]])
        out = asmi_impute(ds, 1)
        assert not out.idx[:2, 1].any()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 19))
    def test_idempotent_and_real_time(self, seed, origin):
        ds = generate_synthetic_panel(SyntheticConfig(J=4, T=20, p_stay_on=0.6, p_stay_off=0.6, min_active=0, seed=seed))
        once = asmi_impute(ds, origin)
        assert asmi_impute(once, origin).equals(once)
        future = ds.with_arrays(loc=np.where(ds.idx & (np.arange(ds.T) > origin)[:, None], 99.0, ds.loc))
        np.testing.assert_array_equal(asmi_impute(future, origin).loc[: origin + 1], once.loc[: origin + 1])


class TestInverseMse:
    def test_equal(self):
        err = np.array([[1.0, -1.0], [-1.0, 1.0]])
        np.testing.assert_allclose(inverse_mse_weights(err, [True, True], 1).weights, [0.5, 0.5])

    def test_ratio(self):
        err = np.array([[1.0, np.sqrt(3.0)]])
        np.testing.assert_allclose(inverse_mse_weights(err, [True, True], 0).weights, [0.75, 0.25], rtol=1e-14)

    def test_floor(self):
        err = np.array([[0.0, 1.0]])
        w = inverse_mse_weights(err, [True, True], 0).weights
        assert w[0] < 1.0 and w[1] > 0.0
        assert w[0] / w[1] == pytest.approx(1e8)

    def test_unscored_gets_zero(self):
        err = np.array([[1.0, NAN, 2.0]])
        w = inverse_mse_weights(err, [True, True, False], 0).weights
        assert w[1] == 0.0 and w[2] == 0.0 and w[0] == 1.0

    def test_window(self):
        err = np.array([[100.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(inverse_mse_weights(err, [True, True], 2, window_len=2).weights, [0.5, 0.5])

    def test_fallback(self, caplog):
        with caplog.at_level(logging.INFO):
            w = inverse_mse_weights(np.full((2, 3), NAN), [True, False, True], 1).weights
        np.testing.assert_allclose(w, [0.5, 0.0, 0.5])
        assert "equal weights" in caplog.text

    def test_nothing_active(self):
        with pytest.raises(EmptyActiveSetError):
            inverse_mse_weights(np.ones((1, 2)), [False, False], 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
    def test_scale_equivariant(self, seed, c):
        rng = np.random.default_rng(seed)
        err = rng.normal(size=(15, 4))
        err[rng.random(err.shape) < 0.3] = NAN
        active = rng.random(4) < 0.7
        active[0] = True
        w1 = inverse_mse_weights(err, active, 14).weights
        w2 = inverse_mse_weights(c * err, active, 14).weights
        np.testing.assert_allclose(w1, w2, rtol=1e-12, atol=1e-15)

    def test_weight_vector_validation(self):
        with pytest.raises(ValueError):
            WeightVector([0.5, 0.6])
        with pytest.raises(ValueError):
            WeightVector([-0.5, 1.5])
        assert list(WeightVector([0.0, 1.0]).support) == [1]


def test_point_errors():
    ds = make_panel([1.0, NAN], [[2.0, NAN], [3.0, 1.0]])
    e = point_errors(ds)
    assert e[0, 0] == 1.0
    assert np.isnan(e[0, 1]) and np.isnan(e[1]).all()
