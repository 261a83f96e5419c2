"""Small covariance utilities: symmetrisation, jittered Cholesky, PSD checks."""

from __future__ import annotations

import numpy as np


class NumericalFailure(ArithmeticError):
    """A covariance or variance left the admissible region."""


JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
PSD_TOL = 1e-8


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def jitter_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter from 1e-12 to 1e-6 (relative)."""
    M = symmetrize(np.asarray(M, dtype=float))
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    scale = max(float(np.mean(np.abs(np.diag(M)))), 1e-300)
    for jit in JITTERS:
        try:
            return np.linalg.cholesky(M + jit * scale * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise NumericalFailure("matrix is not positive definite even with 1e-6 jitter")


def clip_psd(M: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrise and zero out small negative eigenvalues; fail below ``-tol``."""
    M = symmetrize(M)
    if M.size == 0:
        return M
    w, V = np.linalg.eigh(M)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -tol * scale:
        raise NumericalFailure(f"covariance has eigenvalue {w.min():.3e} below tolerance")
    if w.min() >= 0:
        return M
    w = np.clip(w, 0.0, None)
    return symmetrize((V * w) @ V.T)


def sample_gaussian(mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from N(mean, cov) where cov may be singular through all-zero rows.

    Coordinates with zero variance are returned at their mean.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    live = np.flatnonzero(np.diag(cov) > 0)
    shape = (mean.shape[0],) if size is None else (size, mean.shape[0])
    out = np.broadcast_to(mean, shape).copy()
    if live.size:
        L = jitter_cholesky(cov[np.ix_(live, live)])
        z = rng.standard_normal(shape[:-1] + (live.size,))
        out[..., live] += z @ L.T
    return out
