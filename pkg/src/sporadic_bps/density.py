"""Parametric density types and the normal-gamma machinery for expert forecasts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

LOG_2PI = math.log(2.0 * math.pi)


class DensityError(ValueError):
    """Raised for invalid or degenerate density inputs."""


class EmptyActiveSetError(DensityError):
    """Raised when a pooling operation receives no components."""


@dataclass(frozen=True)
class HistogramDensity:
    """Probabilities over contiguous closed-open bins ``[e_k, e_{k+1})``."""

    bin_edges: tuple[float, ...]
    bin_probs: tuple[float, ...]

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        probs = np.asarray(self.bin_probs, dtype=float)
        if edges.ndim != 1 or probs.ndim != 1 or len(probs) != len(edges) - 1:
            raise DensityError("histogram needs len(probs) == len(edges) - 1")
        if len(probs) == 0:
            raise DensityError("histogram needs at least one bin")
        if not np.all(np.isfinite(edges)):
            raise DensityError("histogram edges must be finite")
        if np.any(np.diff(edges) <= 0):
            raise DensityError("histogram edges must be strictly increasing")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DensityError("histogram probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DensityError(f"histogram probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "bin_edges", tuple(float(e) for e in edges))
        object.__setattr__(self, "bin_probs", tuple(float(p) for p in probs))


@dataclass(frozen=True)
class GaussianDensity:
    mean: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0) or not math.isfinite(self.variance):
            raise DensityError(f"variance must be positive, got {self.variance!r}")


@dataclass(frozen=True)
class ExpertDensity:
    """Location-scale Student-t: ``x = a + sqrt(A) * t_n``.

    ``A`` is the squared scale. For an ingested Normal it carries the
    moment-matched variance, so the Gaussian view is ``N(a, A)``.
    """

    a: float
    A: float
    n: float

    def __post_init__(self):
        if not (self.A > 0) or not math.isfinite(self.A):
            raise DensityError(f"scale A must be positive, got {self.A!r}")
        if not (self.n > 0):
            raise DensityError(f"dof n must be positive, got {self.n!r}")
        if not math.isfinite(self.a):
            raise DensityError("location must be finite")

    def as_gaussian(self) -> GaussianDensity:
        return GaussianDensity(self.a, self.A)


@dataclass(frozen=True)
class PhiDraw:
    value: float

    def __post_init__(self):
        if not (self.value > 0):
            raise DensityError("phi must be positive")


def moment_match_histogram(h: HistogramDensity) -> GaussianDensity:
    """Normal with the mean and variance of the piecewise-uniform histogram density.

    The variance is the between-midpoint spread plus the uniform within-bin
    term ``width**2 / 12``.
    """
    edges = np.asarray(h.bin_edges)
    probs = np.asarray(h.bin_probs)
    if probs.sum() <= 0:
        raise DensityError("histogram has no probability mass")
    widths = np.diff(edges)
    mids = edges[:-1] + widths / 2.0
    mean = float(np.dot(probs, mids))
    var = float(np.dot(probs, (mids - mean) ** 2) + np.dot(probs, widths**2 / 12.0))
    if not var > 0:
        raise DensityError("moment-matched variance is not positive")
    return GaussianDensity(mean, var)


def gaussian_logpdf(x, d: GaussianDensity):
    x = np.asarray(x, dtype=float)
    out = -0.5 * (LOG_2PI + math.log(d.variance)) - 0.5 * (x - d.mean) ** 2 / d.variance
    return float(out) if out.ndim == 0 else out


def t_logpdf(x, loc, scale2, dof):
    """Vectorised location-scale Student-t log density with squared scale ``scale2``."""
    x = np.asarray(x, dtype=float)
    z2 = (x - loc) ** 2 / scale2
    return (
        gammaln((dof + 1.0) / 2.0)
        - gammaln(dof / 2.0)
        - 0.5 * np.log(dof * math.pi * scale2)
        - (dof + 1.0) / 2.0 * np.log1p(z2 / dof)
    )


def student_t_logpdf(x, d: ExpertDensity):
    out = t_logpdf(x, d.a, d.A, d.n)
    return float(out) if np.ndim(out) == 0 else out


def mixture_logpdf(
    components: Sequence[GaussianDensity], weights: Sequence[float], x
):
    """Log density of a Gaussian mixture, evaluated with log-sum-exp."""
    if len(components) == 0:
        raise EmptyActiveSetError("mixture has no components (empty active set)")
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(components),):
        raise DensityError("one weight per component required")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise DensityError("mixture weights must be nonnegative and sum to 1")
    x = np.asarray(x, dtype=float)
    means = np.array([c.mean for c in components])
    variances = np.array([c.variance for c in components])
    comp = (
        -0.5 * (LOG_2PI + np.log(variances))
        - 0.5 * (x[..., None] - means) ** 2 / variances
    )
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    out = logsumexp(comp + logw, axis=-1)
    return float(out) if out.ndim == 0 else out


def mixture_moments(components: Sequence[GaussianDensity], weights) -> tuple[float, float]:
    """Mean and variance (within plus between) of a Gaussian mixture."""
    w = np.asarray(weights, dtype=float)
    means = np.array([c.mean for c in components])
    variances = np.array([c.variance for c in components])
    mean = float(w @ means)
    var = float(w @ variances + w @ (means - mean) ** 2)
    return mean, var


def sample_phi_conditional(x: float, d: ExpertDensity, rng: np.random.Generator) -> PhiDraw:
    """Draw the scale-mixture variable given a latent state ``x``.

    With ``1/phi ~ Gamma(n/2, rate=n/2)`` a priori and ``x | phi ~ N(a, phi*A)``,
    the conditional is ``1/phi ~ Gamma((n+1)/2, rate=(n + (x-a)^2/A)/2)``.
    """
    shape = (d.n + 1.0) / 2.0
    rate = (d.n + (x - d.a) ** 2 / d.A) / 2.0
    precision = rng.gamma(shape, 1.0 / rate)
    return PhiDraw(1.0 / precision)


def sample_phi_prior(d: ExpertDensity, rng: np.random.Generator) -> PhiDraw:
    return PhiDraw(1.0 / rng.gamma(d.n / 2.0, 2.0 / d.n))
