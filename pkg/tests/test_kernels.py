import numpy as np
import pytest

from sporadic_bps import _kernels as K
from sporadic_bps.coherence import CoherenceConfig, apply_turnover, build_latent_covariance
from sporadic_bps.dlm import DiscountConfig, PriorMoments, filter_update, regressor_vector
from sporadic_bps.panel import turnover_from_masks


def reference_pass(y, loc, var, act, x, phi, m0, C0, n0, s0, d, beta, cc):
    """Forward filter with turnover built from the pure-numpy operators."""
    T, J = loc.shape
    dc = DiscountConfig(d, beta)
    keep0 = np.r_[True, act[0]]
    m, C, n, s = np.where(keep0, m0, 0.0), C0 * np.outer(keep0, keep0), n0, s0
    hist = np.full(J, np.nan)
    out = []
    for t in range(T):
        prior = PriorMoments(m.copy(), C / d)
        if t > 0 and np.any(act[t] != act[t - 1]):
            if act[t].any():
                lc = build_latent_covariance(np.where(act[t], loc[t], np.nan), np.where(act[t], var[t], np.nan),
                                             cc.m_corr, np.where(act[t], phi[t], 1.0))
            else:
                lc = build_latent_covariance(np.where(act[t - 1], loc[t - 1], np.nan),
                                             np.where(act[t - 1], var[t - 1], np.nan), cc.m_corr)
            prior = apply_turnover(prior, lc, turnover_from_masks(act[t - 1], act[t]), act[t], cc, hist)
        post = filter_update(prior, regressor_vector(x[t], act[t]), y[t], n, s, dc, act[t])
        m, C, n, s = post.m, post.C, post.n, post.s
        hist[act[t]] = m[1:][act[t]]
        out.append((prior.a, prior.R, m, C, n, s))
    return out


def random_case(rng, trial):
    T, J = int(rng.integers(3, 12)), int(rng.integers(1, 6))
    act = rng.random((T, J)) < 0.6
    act[:, 0] |= rng.random(T) < 0.5
    act[~act.any(axis=1), 0] = True
    loc = rng.normal(size=(T, J))
    var = rng.uniform(0.2, 2, (T, J))
    phi = rng.uniform(0.5, 2, (T, J))
    x = rng.normal(size=(T, J))
    y = rng.normal(size=T)
    p = J + 1
    A = rng.normal(size=(p, p))
    cc = CoherenceConfig(
        m_corr=float(rng.uniform(-0.2, 0.95)), transport_draws=0,
        entry_prior_mean_rule=("zero", "equal", "previous")[trial % 3],
        transport=("coherent", "renormalize", "drop")[(trial // 3) % 3],
        continuing=("active", "complement")[(trial // 9) % 2],
        entry_prior_variance=0.7,
    )
    return dict(y=y, loc=loc, var=var, act=act, x=x, phi=phi, m0=rng.normal(size=p) * 0.3,
                C0=A @ A.T * 0.05, d=float(rng.uniform(0.8, 1)), beta=float(rng.uniform(0.8, 1)), cc=cc)


def kernel_pass(c):
    T, J = c["loc"].shape
    p = J + 1
    cc = c["cc"]
    bufs = dict(pa=np.zeros((T, p)), pR=np.zeros((T, p, p)), fm=np.zeros((T, p)), fC=np.zeros((T, p, p)),
                fn=np.zeros(T), fs=np.zeros(T))
    status = K.forward_pass(
        c["y"], c["loc"], c["var"], c["act"], c["x"], c["phi"], c["m0"], c["C0"], 5.0, 0.01, c["d"], c["beta"],
        cc.m_corr, 0, K.RULE_CODES[cc.entry_prior_mean_rule], cc.entry_prior_variance,
        K.TRANSPORT_CODES[cc.transport], K.CONTINUING_CODES[cc.continuing], np.random.default_rng(0),
        bufs["pa"], bufs["pR"], bufs["fm"], bufs["fC"], bufs["fn"], bufs["fs"],
        np.zeros(T, bool), np.zeros((T, p, p)), np.zeros((T, p)), np.zeros((T, p, p)), np.zeros(J),
        np.zeros(1, np.int64), K.make_workspace(J),
    )
    return status, bufs


class TestForwardPass:
    @pytest.mark.parametrize("trial", range(36))
    def test_matches_numpy_reference(self, trial):
        rng = np.random.default_rng(1000 + trial)
        c = random_case(rng, trial)
        status, b = kernel_pass(c)
        assert status == K.OK
        ref = reference_pass(c["y"], c["loc"], c["var"], c["act"], c["x"], c["phi"], c["m0"], c["C0"],
                             5.0, 0.01, c["d"], c["beta"], c["cc"])
        for t, (a, R, m, C, n, s) in enumerate(ref):
            np.testing.assert_allclose(b["pa"][t], a, atol=1e-9)
            np.testing.assert_allclose(b["pR"][t], R, atol=1e-9)
            np.testing.assert_allclose(b["fm"][t], m, atol=1e-9)
            np.testing.assert_allclose(b["fC"][t], C, atol=1e-9)
            assert b["fn"][t] == pytest.approx(n, abs=1e-9)
            assert b["fs"][t] == pytest.approx(s, abs=1e-9)

