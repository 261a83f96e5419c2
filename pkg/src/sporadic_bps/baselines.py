"""Operational comparison rules: equal-weight pooling, imputation variants, inverse-MSE weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .density import EmptyActiveSetError, ExpertDensity, GaussianDensity, mixture_moments
from .panel import PanelDataset
from .predictive import PredictiveDistribution

log = logging.getLogger(__name__)

MSE_FLOOR = 1e-8
DEFAULT_WINDOW = 12

Component = Union[ExpertDensity, GaussianDensity]


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Nonnegative pooling weights over all ``J`` experts (zero for unused ones)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


def _as_gaussian(c: Component) -> GaussianDensity:
    return c.as_gaussian() if isinstance(c, ExpertDensity) else c


def weighted_pool(
    components: Sequence[Component], weights, moment_matched: bool = False
) -> PredictiveDistribution:
    """Linear opinion pool of Gaussian views of ``components``.

    With ``moment_matched`` the mixture is collapsed to the single Normal
    with the same mean and variance.
    """
    if len(components) == 0:
        raise EmptyActiveSetError("cannot pool an empty active set")
    g = [_as_gaussian(c) for c in components]
    w = np.asarray(weights, dtype=float)
    if moment_matched:
        mean, var = mixture_moments(g, w)
        return PredictiveDistribution([mean], [var], [np.inf])
    loc = np.array([c.mean for c in g])
    var = np.array([c.variance for c in g])
    return PredictiveDistribution(loc, var, np.full(len(g), np.inf), weights=w)


def ew_pool(components: Sequence[Component], moment_matched: bool = False) -> PredictiveDistribution:
    """Equal-weight mixture of the active experts' Normal views ``N(a, A)``."""
    n = len(components)
    if n == 0:
        raise EmptyActiveSetError("equal-weight pool needs at least one active expert")
    return weighted_pool(components, np.full(n, 1.0 / n), moment_matched)


def active_components(ds: PanelDataset, t: int) -> list[ExpertDensity]:
    return [ds.expert(t, int(j)) for j in ds.active(t)]


# --------------------------------------------------------------------------
# imputation

def locf_impute(ds: PanelDataset) -> PanelDataset:
    """Carry each expert's most recent submitted density forward into its gaps.

    Cells before an expert's first submission stay missing.
    """
    loc, scale, dof, idx = (np.array(a) for a in (ds.loc, ds.scale, ds.dof, ds.idx))
    for j in range(ds.J):
        seen = np.flatnonzero(ds.idx[:, j])
        if seen.size == 0:
            continue
        # index of the latest observation at or before each row
        last = np.maximum.accumulate(np.where(ds.idx[:, j], np.arange(ds.T), -1))
        fill = (~ds.idx[:, j]) & (last >= 0)
        src = last[fill]
        loc[fill, j] = ds.loc[src, j]
        scale[fill, j] = ds.scale[src, j]
        dof[fill, j] = ds.dof[src, j]
        idx[fill, j] = True
    return ds.with_arrays(loc=loc, scale=scale, dof=dof, idx=idx)


def asmi_impute(ds: PanelDataset, origin: int) -> PanelDataset:
    """Agent-specific mean imputation as of ``origin``.

    Every missing cell at or before ``origin`` is filled with the average of
    the expert's submitted locations, variances and dofs over periods
    ``<= origin``. Later periods are left untouched; an expert with no
    submission up to ``origin`` stays missing.
    """
    if not 0 <= origin < ds.T:
        raise IndexError(f"origin {origin} outside the panel (T={ds.T})")
    loc, scale, dof, idx = (np.array(a) for a in (ds.loc, ds.scale, ds.dof, ds.idx))
    past = ds.idx[: origin + 1]
    for j in range(ds.J):
        obs = past[:, j]
        if not obs.any() or obs.all():
            continue
        gap = np.flatnonzero(~obs)
        loc[gap, j] = ds.loc[: origin + 1, j][obs].mean()
        scale[gap, j] = ds.scale[: origin + 1, j][obs].mean()
        dof[gap, j] = ds.dof[: origin + 1, j][obs].mean()
        idx[gap, j] = True
    return ds.with_arrays(loc=loc, scale=scale, dof=dof, idx=idx)


# --------------------------------------------------------------------------
# inverse-MSE weighting

def point_errors(ds: PanelDataset) -> np.ndarray:
    """``a_{t,j} - y_t`` where both exist, NaN elsewhere."""
    with np.errstate(invalid="ignore"):
        return np.where(ds.idx & np.isfinite(ds.y)[:, None], ds.loc - ds.y[:, None], np.nan)


def inverse_mse_weights(
    errors,
    active,
    t: int,
    window_len: int = DEFAULT_WINDOW,
    floor: float = MSE_FLOOR,
) -> WeightVector:
    """Weights ``w_j ∝ 1 / max(MSE_j, floor)`` from the trailing window ending at row ``t``.

    Parameters
    ----------
    errors : (T, J) array
        Scored point errors, NaN where an expert was not scored.
    active : (J,) bool array
        Experts available to be pooled.
    t : int
        Last row whose errors are known (inclusive); the window is
        ``(t - window_len, t]``.

    Experts active but never scored inside the window get zero weight. If
    no active expert has a score, the result is equal weights over the
    active set.
    """
    errors = np.asarray(errors, dtype=float)
    active = np.asarray(active, dtype=bool)
    if window_len < 1:
        raise ValueError("window_len must be positive")
    if not active.any():
        raise EmptyActiveSetError("no active expert to weight")
    J = active.size
    lo = max(0, t - window_len + 1)
    win = errors[lo: t + 1] if t >= 0 else errors[:0]
    scored = np.isfinite(win)
    count = scored.sum(axis=0)
    use = active & (count > 0)
    if not use.any():
        log.info("inverse-MSE: no scored active expert in window ending at row %d; using equal weights", t)
        return WeightVector(active / active.sum())
    sq = np.where(scored, win, 0.0) ** 2
    mse = np.maximum(sq.sum(axis=0)[use] / count[use], floor)
    w = np.zeros(J)
    w[use] = (1.0 / mse) / np.sum(1.0 / mse)
    w /= w.sum()
    return WeightVector(w)
