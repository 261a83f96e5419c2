"""Discount dynamic linear model: filtering, forecasting and FFBS.

State vector layout is ``(intercept, expert_1, ..., expert_J)``. Covariances
are kept in the scale of the running volatility estimate ``s`` (the usual
unknown-variance DLM convention), so draws conditional on a volatility ``v``
use ``C * v / s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .linalg import NumericalFailure, clip_psd, jitter_cholesky, symmetrize


@dataclass(frozen=True)
class DiscountConfig:
    d: float = 0.99
    beta: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.d <= 1.0 and 0.0 < self.beta <= 1.0):
            raise ValueError(f"discount factors must lie in (0, 1], got d={self.d}, beta={self.beta}")


@dataclass(frozen=True, eq=False)
class PriorMoments:
    a: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if R.shape != (a.size, a.size):
            raise ValueError("prior covariance must be square and match the mean")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", R)

    def masked(self, active: np.ndarray) -> "PriorMoments":
        """Zero the mean and covariance rows of inactive experts."""
        keep = coefficient_mask(active)
        return PriorMoments(np.where(keep, self.a, 0.0), self.R * np.outer(keep, keep))


@dataclass(frozen=True, eq=False)
class FilterState:
    m: np.ndarray
    C: np.ndarray
    n: float
    s: float

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        C = np.asarray(self.C, dtype=float)
        if C.shape != (m.size, m.size):
            raise ValueError("filter covariance must be square and match the mean")
        if not (self.n > 0 and self.s > 0):
            raise ValueError("volatility dof and scale must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "C", C)


@dataclass(frozen=True, eq=False)
class CoefficientDraw:
    theta: np.ndarray
    v: float


@dataclass(frozen=True, eq=False)
class ForwardStep:
    """Everything the backward sampler needs from one forward-filter period.

    ``cross`` is Cov(theta_{t-1}, prior theta_t) in filter units. It equals
    the previous ``C`` for a plain discount step and ``C L'`` after a linear
    turnover transport ``L``; ``None`` means the plain discount case.
    """

    prior: PriorMoments
    post: FilterState
    F: np.ndarray
    q: float
    e: float
    active: np.ndarray
    cross: Optional[np.ndarray] = None


def coefficient_mask(active: np.ndarray) -> np.ndarray:
    """Boolean mask over ``(intercept, experts...)`` from an expert activity vector."""
    return np.concatenate(([True], np.asarray(active, dtype=bool)))


def regressor_vector(x: np.ndarray, active: np.ndarray) -> np.ndarray:
    """``F = (1, x_1, ..., x_J)`` with inactive experts set to zero."""
    x = np.asarray(x, dtype=float)
    return np.concatenate(([1.0], np.where(np.asarray(active, dtype=bool), x, 0.0)))


def discount_prior(st: FilterState, cfg: DiscountConfig) -> PriorMoments:
    return PriorMoments(st.m.copy(), symmetrize(st.C / cfg.d))


def forecast_moments(p: PriorMoments, F: np.ndarray, s: float) -> tuple[float, float]:
    F = np.asarray(F, dtype=float)
    f = float(F @ p.a)
    q = float(F @ p.R @ F + s)
    return f, q


def filter_update(
    p: PriorMoments,
    F: np.ndarray,
    y: float,
    n: float,
    s: float,
    cfg: DiscountConfig,
    active: Optional[np.ndarray] = None,
) -> FilterState:
    """One conjugate update with discounted volatility.

    Inactive experts (per ``active``) keep their prior mean and get zero
    posterior covariance rows.
    """
    F = np.asarray(F, dtype=float)
    f, q = forecast_moments(p, F, s)
    if not q > 0:
        raise NumericalFailure(f"one-step forecast variance q={q} is not positive")
    e = y - f
    A = p.R @ F / q
    n_new = cfg.beta * n + 1.0
    r = (cfg.beta * n + e * e / q) / n_new
    m = p.a + A * e
    C = symmetrize(r * (p.R - q * np.outer(A, A)))
    if active is not None:
        keep = coefficient_mask(active)
        m = np.where(keep, m, p.a)
        C = C * np.outer(keep, keep)
    return FilterState(m, C, n_new, s * r)


def forward_filter(
    y: Sequence[float],
    Fs: np.ndarray,
    init: FilterState,
    cfg: DiscountConfig,
    actives: Optional[np.ndarray] = None,
) -> list[ForwardStep]:
    """Plain discount filter over a stream with no turnover adjustment.

    ``actives`` (T x J) masks coefficients per period but no transport is
    applied when the active set changes.
    """
    steps = []
    st = init
    for t in range(len(y)):
        act = None if actives is None else actives[t]
        prior = discount_prior(st, cfg)
        if act is not None:
            prior = prior.masked(act)
        f, q = forecast_moments(prior, Fs[t], st.s)
        post = filter_update(prior, Fs[t], y[t], st.n, st.s, cfg, act)
        steps.append(ForwardStep(
            prior=prior, post=post, F=np.asarray(Fs[t], float), q=q, e=float(y[t] - f),
            active=np.ones(len(Fs[t]) - 1, bool) if act is None else np.asarray(act, bool),
        ))
        st = post
    return steps


def _draw_restricted(mean, cov, live, rng):
    out = np.zeros_like(mean)
    if live.size == 0:
        return out
    w, V = np.linalg.eigh(clip_psd(cov[np.ix_(live, live)]))
    out[live] = mean[live] + V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(live.size))
    return out


def ffbs_sample(steps: Sequence[ForwardStep], cfg: DiscountConfig, rng: np.random.Generator) -> list[CoefficientDraw]:
    """Backward-sample ``(theta_t, v_t)`` paths from a completed forward pass.

    Volatility: ``1/v_T ~ Ga(n_T/2, n_T s_T/2)`` and
    ``1/v_t = beta/v_{t+1} + Ga((1-beta) n_t/2, n_t s_t/2)``. Coefficients use
    the Gaussian backward conditional with gain ``cross' R~^{-1}`` restricted
    to the coefficients active at each period.
    """
    T = len(steps)
    if T == 0:
        return []
    out: list[Optional[CoefficientDraw]] = [None] * T
    last = steps[-1].post
    prec = rng.gamma(last.n / 2.0, 2.0 / (last.n * last.s))
    v = 1.0 / prec
    live = np.flatnonzero(coefficient_mask(steps[-1].active))
    theta = _draw_restricted(last.m, last.C * (v / last.s), live, rng)
    out[-1] = CoefficientDraw(theta, v)
    for t in range(T - 2, -1, -1):
        post, nxt = steps[t].post, steps[t + 1]
        if cfg.beta < 1.0:
            prec = cfg.beta * prec + rng.gamma((1.0 - cfg.beta) * post.n / 2.0, 2.0 / (post.n * post.s))
        v = 1.0 / prec
        G = post.C if nxt.cross is None else nxt.cross
        nlive = np.flatnonzero(coefficient_mask(nxt.active))
        Rn = symmetrize(nxt.prior.R[np.ix_(nlive, nlive)])
        Gn = G[:, nlive]
        Lr = jitter_cholesky(Rn)
        gain = np.linalg.solve(Lr.T, np.linalg.solve(Lr, Gn.T)).T
        mean = post.m + gain @ (theta[nlive] - nxt.prior.a[nlive])
        cov = symmetrize(post.C - gain @ Gn.T) * (v / post.s)
        live = np.flatnonzero(coefficient_mask(steps[t].active))
        theta = _draw_restricted(mean, cov, live, rng)
        out[t] = CoefficientDraw(theta, v)
    return out  # type: ignore[return-value]
