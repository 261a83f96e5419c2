"""Exit and entry operators on the synthesis-coefficient prior.

Both operators are linear maps ``theta -> L theta`` followed by the activity
mask. Exit folds each departing coefficient into the intercept and the
continuing coefficients through the latent-state regression
``B = Sigma[X, C] Sigma[C, C]^{-1}``; entry resets the entering block and
applies the opposite shift so that integrating the entrants' states back out
returns the pre-entry synthesis. Moments of the transported prior are
estimated from ``S`` Gaussian draws, or computed exactly when ``S == 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .dlm import PriorMoments, coefficient_mask
from .linalg import NumericalFailure, sample_gaussian, symmetrize
from .panel import TurnoverSets

log = logging.getLogger(__name__)

TRANSPORTS = ("coherent", "renormalize", "drop")
ENTRY_RULES = ("zero", "equal", "previous")
CONTINUING_RULES = ("active", "complement")


@dataclass(frozen=True)
class CoherenceConfig:
    """Settings for the turnover operators.

    ``transport_draws=0`` switches to the exact affine pushforward.
    ``transport`` selects the coherent operators or one of the naive
    comparators (``renormalize``: exiting weight shared in proportion to the
    continuing prior means, entry reset only; ``drop``: no reallocation).
    ``continuing`` chooses whether the latent regression conditions on the
    experts active on both sides of the event or on every non-moving index.
    """

    m_corr: float = 0.99
    transport_draws: int = 1000
    entry_prior_mean_rule: str = "zero"
    entry_prior_variance: float = 1.0
    transport: str = "coherent"
    continuing: str = "active"

    def __post_init__(self):
        if not abs(self.m_corr) < 1.0:
            raise ValueError(f"m_corr must satisfy |m_corr| < 1, got {self.m_corr}")
        if self.transport_draws != 0 and self.transport_draws < 2:
            raise ValueError("transport_draws must be 0 (exact) or at least 2")
        if self.entry_prior_mean_rule not in ENTRY_RULES:
            raise ValueError(f"entry_prior_mean_rule must be one of {ENTRY_RULES}")
        if not self.entry_prior_variance > 0:
            raise ValueError("entry_prior_variance must be positive")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"transport must be one of {TRANSPORTS}")
        if self.continuing not in CONTINUING_RULES:
            raise ValueError(f"continuing must be one of {CONTINUING_RULES}")


@dataclass(frozen=True, eq=False)
class LatentCovariance:
    Sigma: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.Sigma, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if S.shape != (mu.size, mu.size):
            raise ValueError("Sigma must be J x J with J = len(mu)")
        if np.any(np.diag(S) <= 0):
            raise ValueError("latent variances must be positive")
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True, eq=False)
class TransportReport:
    adjusted: PriorMoments
    B: np.ndarray
    mc_stderr: np.ndarray
    mc_stderr_cov: np.ndarray
    L: np.ndarray


ExitReport = EntryReport = TransportReport


def correlation_matrix(J: int, m_corr: float) -> np.ndarray:
    return (1.0 - m_corr) * np.eye(J) + m_corr * np.ones((J, J))


def fill_variances(variances) -> np.ndarray:
    """Replace missing or zero variances by the mean of the positive ones."""
    v = np.asarray(variances, dtype=float).copy()
    ok = np.isfinite(v) & (v > 0)
    if not ok.any():
        raise NumericalFailure("no expert has a defined variance; cannot form Sigma")
    v[~ok] = v[ok].mean()
    return v


def build_latent_covariance(
    locations,
    variances,
    m_corr: float,
    phi=None,
) -> LatentCovariance:
    """``Sigma = D M_c D`` with ``D = diag(sqrt(phi_j A_j))``.

    Missing variances are filled before scaling by ``phi`` (which defaults to
    one). Missing locations take the cross-sectional mean of the reported ones.
    """
    A = fill_variances(variances)
    J = A.size
    phi = np.ones(J) if phi is None else np.where(np.isfinite(phi), np.asarray(phi, float), 1.0)
    sd = np.sqrt(phi * A)
    Sigma = sd[:, None] * correlation_matrix(J, m_corr) * sd[None, :]
    loc = np.asarray(locations, dtype=float)
    seen = np.isfinite(loc)
    mu = np.where(seen, loc, loc[seen].mean() if seen.any() else 0.0)
    return LatentCovariance(Sigma, mu)


def latent_regression(Sigma: np.ndarray, moving: Sequence[int], continuing: Sequence[int]) -> np.ndarray:
    """``Sigma[moving, C] Sigma[C, C]^{-1}``, shape ``(|moving|, |C|)``."""
    moving, continuing = list(moving), list(continuing)
    if not continuing:
        return np.zeros((len(moving), 0))
    Scc = Sigma[np.ix_(continuing, continuing)]
    Smc = Sigma[np.ix_(moving, continuing)]
    try:
        L = np.linalg.cholesky(symmetrize(Scc))
    except np.linalg.LinAlgError:
        raise NumericalFailure("latent covariance of the continuing experts is singular") from None
    return np.linalg.solve(L.T, np.linalg.solve(L, Smc.T)).T


def exit_map(
    lc: LatentCovariance,
    exits: Sequence[int],
    continuing: Sequence[int],
    transport: str = "coherent",
    prior_mean: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Linear map and regression matrix for an exit event.

    Coherent: ``theta_0 += theta_X'(mu_X - B mu_C)`` and
    ``theta_C += B' theta_X``.
    """
    exits, continuing = sorted(exits), sorted(continuing)
    J = lc.mu.size
    L = np.eye(J + 1)
    B = latent_regression(lc.Sigma, exits, continuing)
    if transport == "coherent":
        shift = lc.mu[exits] - B @ lc.mu[continuing]
        for k, x in enumerate(exits):
            L[0, x + 1] += shift[k]
            for c_pos, c in enumerate(continuing):
                L[c + 1, x + 1] += B[k, c_pos]
    elif transport == "renormalize" and continuing:
        base = np.asarray(prior_mean, float)[[c + 1 for c in continuing]]
        w = base / base.sum() if abs(base.sum()) > 1e-12 else np.full(len(continuing), 1.0 / len(continuing))
        for x in exits:
            for c_pos, c in enumerate(continuing):
                L[c + 1, x + 1] += w[c_pos]
    return L, B


def entry_map(
    lc: LatentCovariance,
    entries: Sequence[int],
    continuing: Sequence[int],
    transport: str = "coherent",
) -> tuple[np.ndarray, np.ndarray]:
    """Linear map and regression matrix for an entry event.

    Coherent: ``theta_0 -= theta_E'(mu_E - B mu_C)``, ``theta_C -= B' theta_E``,
    entering block unchanged.
    """
    entries, continuing = sorted(entries), sorted(continuing)
    J = lc.mu.size
    L = np.eye(J + 1)
    B = latent_regression(lc.Sigma, entries, continuing)
    if transport == "coherent":
        shift = lc.mu[entries] - B @ lc.mu[continuing]
        for k, e in enumerate(entries):
            L[0, e + 1] -= shift[k]
            for c_pos, c in enumerate(continuing):
                L[c + 1, e + 1] -= B[k, c_pos]
    return L, B


def entry_prior_mean(rule: str, j: int, J: int, prior_history=None) -> float:
    if rule == "equal":
        return 1.0 / J
    if rule == "previous" and prior_history is not None:
        h = float(np.asarray(prior_history, dtype=float)[j])
        if np.isfinite(h):
            return h
    return 0.0


def reset_entering(
    prior: PriorMoments, entries: Iterable[int], cfg: CoherenceConfig, prior_history=None
) -> PriorMoments:
    a = prior.a.copy()
    R = prior.R.copy()
    J = a.size - 1
    for e in entries:
        R[e + 1, :] = 0.0
        R[:, e + 1] = 0.0
        R[e + 1, e + 1] = cfg.entry_prior_variance
        a[e + 1] = entry_prior_mean(cfg.entry_prior_mean_rule, e, J, prior_history)
    return PriorMoments(a, R)


def _moment_stderr(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = draws.shape[0]
    centered = draws - draws.mean(axis=0)
    se_mean = centered.std(axis=0, ddof=1) / np.sqrt(S)
    prods = centered[:, :, None] * centered[:, None, :]
    se_cov = prods.std(axis=0, ddof=1) / np.sqrt(S)
    return se_mean, se_cov


def pushforward(
    prior: PriorMoments,
    L: np.ndarray,
    keep: np.ndarray,
    draws: int,
    rng: Optional[np.random.Generator],
) -> tuple[PriorMoments, np.ndarray, np.ndarray]:
    """Moments of ``mask(L theta)`` for ``theta ~ N(a, R)``.

    Returns the moments with per-entry Monte Carlo standard errors (zero in
    the exact case and when the map is the identity on the prior's support).
    """
    p = prior.a.size
    Mk = np.where(keep, 1.0, 0.0)
    moved = np.flatnonzero(np.any(L != np.eye(p), axis=0))
    degenerate = np.all(prior.a[moved] == 0.0) and np.all(prior.R[:, moved] == 0.0)
    if draws == 0 or degenerate:
        a = Mk * (L @ prior.a)
        R = symmetrize((Mk[:, None] * (L @ prior.R @ L.T)) * Mk[None, :])
        return PriorMoments(a, R), np.zeros(p), np.zeros((p, p))
    if rng is None:
        raise ValueError("Monte Carlo transport needs an rng")
    theta = sample_gaussian(prior.a, prior.R, rng, size=draws)
    star = (theta @ L.T) * Mk
    a = star.mean(axis=0)
    R = symmetrize(np.cov(star, rowvar=False, ddof=1))
    se_mean, se_cov = _moment_stderr(star)
    return PriorMoments(a, R), se_mean, se_cov


def _continuing_set(cfg: CoherenceConfig, J: int, moving: set, active_after: np.ndarray) -> list[int]:
    if cfg.continuing == "complement":
        return [j for j in range(J) if j not in moving]
    return [j for j in np.flatnonzero(active_after) if j not in moving]


def exit_operator(
    prior: PriorMoments,
    lc: LatentCovariance,
    exit_set: Iterable[int],
    active_after,
    cfg: CoherenceConfig,
    rng: Optional[np.random.Generator] = None,
) -> TransportReport:
    exits = sorted(set(exit_set))
    active_after = np.asarray(active_after, dtype=bool)
    if not exits:
        raise ValueError("exit_operator needs a nonempty exit set")
    if active_after[exits].any():
        raise ValueError("exiting experts cannot be active after the event")
    J = lc.mu.size
    continuing = _continuing_set(cfg, J, set(exits), active_after)
    if not continuing:
        log.warning("total exit: collapsing the synthesis to intercept only")
    L, B = exit_map(lc, exits, continuing, cfg.transport, prior.a)
    adjusted, se, se_cov = pushforward(prior, L, coefficient_mask(active_after), cfg.transport_draws, rng)
    return TransportReport(adjusted, B, se, se_cov, L)


def entry_operator(
    prior: PriorMoments,
    lc: LatentCovariance,
    entry_set: Iterable[int],
    continuing_set: Iterable[int],
    prior_history=None,
    cfg: CoherenceConfig = CoherenceConfig(),
    rng: Optional[np.random.Generator] = None,
    active_after=None,
) -> TransportReport:
    entries = sorted(set(entry_set))
    continuing = sorted(set(continuing_set))
    if not entries:
        raise ValueError("entry_operator needs a nonempty entry set")
    if set(entries) & set(continuing):
        raise ValueError("entering and continuing sets must be disjoint")
    J = lc.mu.size
    if active_after is None:
        active_after = np.zeros(J, dtype=bool)
        active_after[entries + continuing] = True
    active_after = np.asarray(active_after, dtype=bool)
    if cfg.continuing == "complement":
        continuing = [j for j in range(J) if j not in set(entries)]
    reset = reset_entering(prior, entries, cfg, prior_history)
    L, B = entry_map(lc, entries, continuing, cfg.transport)
    adjusted, se, se_cov = pushforward(reset, L, coefficient_mask(active_after), cfg.transport_draws, rng)
    return TransportReport(adjusted, B, se, se_cov, L)


def apply_turnover(
    prior: PriorMoments,
    lc: LatentCovariance,
    turnover: TurnoverSets,
    active_after,
    cfg: CoherenceConfig,
    prior_history=None,
    rng: Optional[np.random.Generator] = None,
) -> PriorMoments:
    """Exit first, then entry; the identity when nothing changes."""
    if turnover.empty:
        return prior
    active_after = np.asarray(active_after, dtype=bool)
    stayers = active_after.copy()
    stayers[list(turnover.entries)] = False
    out = prior
    if turnover.exits:
        out = exit_operator(out, lc, turnover.exits, stayers, cfg, rng).adjusted
    if turnover.entries:
        out = entry_operator(
            out, lc, turnover.entries, np.flatnonzero(stayers), prior_history, cfg, rng, active_after
        ).adjusted
    return out


def closed_form_exit_predictive(
    theta: np.ndarray,
    v: float,
    active,
    h_A: np.ndarray,
    H_A: np.ndarray,
    m: np.ndarray,
    M: np.ndarray,
    B: Optional[np.ndarray] = None,
) -> tuple[float, float]:
    """Predictive mean and variance for a fixed coefficient draw after an exit.

    Evaluates the closed-form expressions term by term:
    ``mean = theta0~ + theta_A~' h_A`` with
    ``theta0~ = theta0 + theta_I'(m_I - B h_A)`` and
    ``theta_A~ = theta_A + B' theta_I``, and
    ``var = v + theta_A' H theta_A + theta_I' M_I theta_I
    + theta_I' B (H - M_A) B' theta_I``, where ``I`` is the inactive set and
    ``B = M[I, A] M[A, A]^{-1}``. Kept as a cross-check only.
    """
    theta = np.asarray(theta, float)
    act = np.flatnonzero(np.asarray(active, bool))
    ina = np.flatnonzero(~np.asarray(active, bool))
    H = np.atleast_2d(np.asarray(H_A, float))
    if H.shape[0] == 1 and act.size > 1:
        H = np.diag(np.ravel(H_A))
    h_A = np.asarray(h_A, float)
    th_A, th_I = theta[act + 1], theta[ina + 1]
    if B is None:
        B = latent_regression(np.asarray(M, float), ina, act)
    M_A = M[np.ix_(act, act)]
    M_I = M[np.ix_(ina, ina)]
    theta0 = theta[0] + th_I @ (m[ina] - B @ h_A)
    theta_A = th_A + B.T @ th_I
    mean = float(theta0 + theta_A @ h_A)
    var = float(v + th_A @ H @ th_A + th_I @ M_I @ th_I + th_I @ (B @ (H - M_A) @ B.T) @ th_I)
    return mean, var
