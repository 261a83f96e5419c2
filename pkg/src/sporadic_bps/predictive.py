"""Predictive distributions represented as finite mixtures of Student-t components."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .density import LOG_2PI, t_logpdf


def _component_logpdf(y, loc, scale2, dof):
    y = np.asarray(y, dtype=float)[..., None]
    gauss = ~np.isfinite(dof)
    out = np.empty(np.broadcast_shapes(y.shape, loc.shape))
    safe_dof = np.where(gauss, 1.0, dof)
    tl = t_logpdf(y, loc, scale2, safe_dof)
    gl = -0.5 * (LOG_2PI + np.log(scale2)) - 0.5 * (y - loc) ** 2 / scale2
    out[...] = np.where(gauss, gl, tl)
    return out


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    """Mixture ``sum_k w_k t_{dof_k}(loc_k, scale2_k)``; ``dof = inf`` means Gaussian.

    ``samples`` optionally holds draws from the mixture (one per component for
    the BPS predictive). ``mean`` and ``variance`` are the exact mixture
    moments; ``point`` is the mean.
    """

    loc: np.ndarray
    scale2: np.ndarray
    dof: np.ndarray
    weights: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.loc, dtype=float))
        scale2 = np.broadcast_to(np.asarray(self.scale2, dtype=float), loc.shape).copy()
        dof = np.broadcast_to(np.asarray(self.dof, dtype=float), loc.shape).copy()
        if loc.size == 0:
            raise ValueError("predictive needs at least one component")
        if np.any(~(scale2 > 0)) or np.any(~(dof > 0)) or not np.all(np.isfinite(loc)):
            raise ValueError("components need finite locations and positive scales and dofs")
        w = np.full(loc.size, 1.0 / loc.size) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != loc.shape or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative, sum to one and match the components")
        for name, arr in (("loc", loc), ("scale2", scale2), ("dof", dof), ("weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=float).copy()
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.loc)

    @property
    def variance(self) -> float:
        dof = self.dof
        if np.any(dof <= 2):
            if self.samples is not None and self.samples.size > 1:
                return float(np.var(self.samples, ddof=1))
            return float("inf")
        within = np.where(np.isfinite(dof), self.scale2 * dof / np.where(np.isfinite(dof), dof - 2.0, 1.0), self.scale2)
        return float(self.weights @ within + self.weights @ (self.loc - self.mean) ** 2)

    @property
    def point(self) -> float:
        return self.mean

    def logpdf(self, y):
        comp = _component_logpdf(y, self.loc, self.scale2, self.dof)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        out = logsumexp(comp + logw, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def cdf(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        sd = np.sqrt(self.scale2)
        z = (y - self.loc) / sd
        gauss = ~np.isfinite(self.dof)
        c = np.where(gauss, stats.norm.cdf(z), stats.t.cdf(z, np.where(gauss, 1.0, self.dof)))
        out = c @ self.weights
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, p: float) -> float:
        sd = float(np.sqrt(self.variance)) if np.isfinite(self.variance) else float(np.sqrt(self.scale2.max()))
        lo, hi = self.mean - 10 * sd, self.mean + 10 * sd
        while self.cdf(lo) > p:
            lo -= 10 * sd
        while self.cdf(hi) < p:
            hi += 10 * sd
        return float(optimize.brentq(lambda y: self.cdf(y) - p, lo, hi, xtol=1e-12))

    def interval(self, level: float) -> tuple[float, float]:
        a = (1.0 - level) / 2.0
        return self.quantile(a), self.quantile(1.0 - a)
