"""Gibbs/FFBS sampler for sporadic-panel predictive synthesis and its predictive.

One iteration: forward-filter the coefficients with the discount prior,
applying the turnover transport whenever the active set changes; draw
``(theta, v)`` paths by backward sampling; then draw every active latent
expert state ``x`` and its scale-mixture variable ``phi``. The inner loops
are compiled (``_kernels``); this module handles configuration, validation
and packaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .coherence import CoherenceConfig
from .dlm import CoefficientDraw, DiscountConfig
from .linalg import NumericalFailure, jitter_cholesky
from .panel import PanelDataset
from .predictive import PredictiveDistribution

log = logging.getLogger(__name__)


class SamplerFailure(NumericalFailure):
    """A numerical failure inside the sampler, with its (iteration, period) coordinates."""

    def __init__(self, message: str, iteration: Optional[int] = None, period: Optional[int] = None):
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if period is not None:
            where.append(f"period {period}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.iteration = iteration
        self.period = period


@dataclass(frozen=True, eq=False)
class McmcConfig:
    """Sampler settings.

    ``m0`` defaults to ``1/J`` in every coordinate (intercept included) and
    ``C0`` to ``c0_scale * I``. ``discount_grid`` is the hook for choosing
    ``(d, beta)`` by one-step predictive likelihood; only a singleton grid
    (or none) is supported, so selection is a passthrough.
    """

    burn_in: int = 3000
    keep: int = 5000
    thin: int = 1
    discounts: DiscountConfig = DiscountConfig()
    coherence: CoherenceConfig = CoherenceConfig()
    m0: Optional[np.ndarray] = None
    C0: Optional[np.ndarray] = None
    c0_scale: float = 1e-4
    n0: float = 5.0
    s0: float = 0.01
    horizon: int = 1
    seed: int = 0
    discount_grid: Optional[tuple] = None

    def __post_init__(self):
        if self.burn_in < 0 or self.keep < 1 or self.thin < 1:
            raise ValueError("need burn_in >= 0, keep >= 1 and thin >= 1")
        if not (self.n0 > 0 and self.s0 > 0 and self.c0_scale > 0):
            raise ValueError("n0, s0 and c0_scale must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be a positive number of periods")
        if self.discount_grid is not None and len(self.discount_grid) > 1:
            raise ValueError("only a singleton discount grid is supported")

    def prior(self, J: int) -> tuple[np.ndarray, np.ndarray]:
        p = J + 1
        m0 = np.full(p, 1.0 / J) if self.m0 is None else np.asarray(self.m0, dtype=float)
        C0 = self.c0_scale * np.eye(p) if self.C0 is None else np.asarray(self.C0, dtype=float)
        if m0.shape != (p,) or C0.shape != (p, p):
            raise ValueError(f"prior dimensions must be J+1 = {p}")
        return m0, C0


def select_discounts(ds: PanelDataset, cfg: McmcConfig) -> DiscountConfig:
    """Discount selection hook: returns the single configured candidate."""
    if cfg.discount_grid:
        d, beta = cfg.discount_grid[0]
        return DiscountConfig(float(d), float(beta))
    return cfg.discounts


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained draws plus, per draw, the terminal filter state used for forecasting."""

    theta_paths: np.ndarray
    v_paths: np.ndarray
    x_paths: np.ndarray
    phi_paths: np.ndarray
    terminal_m: np.ndarray
    terminal_C: np.ndarray
    terminal_n: np.ndarray
    terminal_s: np.ndarray
    prior_history: np.ndarray
    activity: np.ndarray
    discounts: DiscountConfig

    def __post_init__(self):
        for f in ("theta_paths", "v_paths", "x_paths", "phi_paths", "terminal_m", "terminal_C",
                  "terminal_n", "terminal_s", "prior_history", "activity"):
            getattr(self, f).setflags(write=False)

    @property
    def keep(self) -> int:
        return self.theta_paths.shape[0]

    @property
    def T(self) -> int:
        return self.theta_paths.shape[1]

    def coefficient_means(self) -> np.ndarray:
        """Posterior mean path ``E[theta_{j,t}]`` (T x (J+1), intercept first)."""
        return self.theta_paths.mean(axis=0)


def _kernel_arrays(ds: PanelDataset):
    act = np.ascontiguousarray(ds.idx)
    loc = np.ascontiguousarray(np.where(act, ds.loc, 0.0))
    var = np.ascontiguousarray(np.where(act, ds.scale, 0.0))
    dof = np.ascontiguousarray(np.where(act, ds.dof, 1.0))
    return np.ascontiguousarray(ds.y, dtype=float), loc, var, dof, act


def _codes(cc: CoherenceConfig):
    return (
        K.RULE_CODES[cc.entry_prior_mean_rule],
        K.TRANSPORT_CODES[cc.transport],
        K.CONTINUING_CODES[cc.continuing],
    )


def run_mcmc(
    ds: PanelDataset,
    cfg: McmcConfig,
    rng: Optional[np.random.Generator] = None,
    init: Optional[PosteriorDraws] = None,
) -> PosteriorDraws:
    """Run the sampler on every period of ``ds`` and return the retained draws.

    Periods with a missing target contribute no likelihood term. Training
    interpolation, if wanted, must already have been applied. ``init``
    (typically the fit at the previous origin) seeds the latent states of the
    rows it covers with its last retained draw.
    """
    y, loc, var, dof, act = _kernel_arrays(ds)
    if not np.isfinite(y).any():
        raise ValueError("no realized targets to fit")
    T, J = loc.shape
    p = J + 1
    m0, C0 = cfg.prior(J)
    disc = select_discounts(ds, cfg)
    cc = cfg.coherence
    rule, transport, cont = _codes(cc)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    keep = cfg.keep
    out = dict(
        theta=np.zeros((keep, T, p)),
        v=np.zeros((keep, T)),
        x=np.zeros((keep, T, J)),
        phi=np.zeros((keep, T, J)),
        tm=np.zeros((keep, p)),
        tC=np.zeros((keep, p, p)),
        tn=np.zeros(keep),
        ts=np.zeros(keep),
        hist=np.zeros((keep, J)),
    )
    where = np.zeros(2, dtype=np.int64)
    x0, phi0, n_init = np.zeros((1, J)), np.ones((1, J)), 0
    if init is not None:
        if init.x_paths.shape[2] != J:
            raise ValueError("warm-start draws have a different expert count")
        x0, phi0 = init.x_paths[-1], init.phi_paths[-1]
        n_init = min(init.T, T)
    status = K.run_chain(
        y, loc, var, dof, act, m0, C0, float(cfg.n0), float(cfg.s0), float(disc.d), float(disc.beta),
        float(cc.m_corr), int(cc.transport_draws), rule, float(cc.entry_prior_variance), transport, cont,
        int(cfg.burn_in), keep, int(cfg.thin), rng,
        np.ascontiguousarray(x0), np.ascontiguousarray(phi0), n_init,
        out["theta"], out["v"], out["x"], out["phi"], out["tm"], out["tC"], out["tn"], out["ts"],
        out["hist"], where,
    )
    if status != K.OK:
        raise SamplerFailure(K.STATUS_MESSAGES[status], int(where[0]), int(where[1]))
    return PosteriorDraws(
        out["theta"], out["v"], out["x"], out["phi"], out["tm"], out["tC"], out["tn"], out["ts"],
        out["hist"], act.copy(), disc,
    )


def _latent_scales(loc_row, var_row, act_row, fallback=None):
    """Transport locations/scales for a forecast row (phi = 1), as in the sampler."""
    act_row = np.asarray(act_row, dtype=bool)
    if not act_row.any():
        if fallback is None:
            J = len(act_row)
            return np.zeros(J), np.ones(J)
        return _latent_scales(*fallback)
    A = np.asarray(var_row, dtype=float)
    mu = np.asarray(loc_row, dtype=float)
    ok = act_row & np.isfinite(A) & (A > 0)
    A = np.where(ok, A, A[ok].mean())
    mu = np.where(ok, mu, mu[ok].mean())
    return np.ascontiguousarray(mu), np.ascontiguousarray(np.sqrt(A))


def predictive_distribution(
    ds: PanelDataset,
    cfg: McmcConfig,
    draws: PosteriorDraws,
    future_activity=None,
    target_row: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> PredictiveDistribution:
    """``h``-step predictive for the target at ``target_row`` of ``ds``.

    ``draws`` must come from a fit on the first ``target_row - h + 1`` rows
    (by default ``target_row = draws.T - 1 + h``). Each retained draw's
    terminal filter state is evolved ``h`` steps without data (``R = C /
    d^h``, dof ``beta^h n``), transported from the last fitted active set to
    ``future_activity`` (default: the activity at ``target_row``), and
    combined with the active experts' submitted densities at ``target_row``.
    """
    h = cfg.horizon
    if target_row is None:
        target_row = draws.T - 1 + h
    if target_row - h + 1 != draws.T:
        raise ValueError(f"draws cover {draws.T} rows but target_row={target_row} with horizon {h}")
    if not 0 <= target_row < ds.T:
        raise ValueError(f"target_row {target_row} outside the dataset")
    J = ds.J
    fut = ds.idx[target_row] if future_activity is None else np.asarray(future_activity, dtype=bool)
    if fut.shape != (J,):
        raise ValueError("future_activity must have one flag per expert")
    if np.any(fut & ~ds.idx[target_row]):
        raise ValueError("future_activity marks experts without a submitted density at the target row")
    last = draws.activity[-1]
    fut_loc = np.where(fut, ds.loc[target_row], 0.0)
    fut_var = np.where(fut, ds.scale[target_row], 0.0)
    fut_dof = np.where(fut, ds.dof[target_row], 1.0)
    last_row = draws.T - 1
    mu, sd = _latent_scales(
        ds.loc[target_row], ds.scale[target_row], fut,
        fallback=(ds.loc[last_row], ds.scale[last_row], ds.idx[last_row]),
    )
    cc = cfg.coherence
    rule, transport, cont = _codes(cc)
    disc = draws.discounts
    rng = np.random.default_rng([cfg.seed, 1]) if rng is None else rng
    n = draws.keep
    f, q, nd, ys = np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n)
    where = np.zeros(1, dtype=np.int64)
    status = K.predictive_draws(
        draws.terminal_m, draws.terminal_C, draws.terminal_n, draws.terminal_s, draws.prior_history,
        np.ascontiguousarray(last), np.ascontiguousarray(fut),
        np.ascontiguousarray(fut_loc), np.ascontiguousarray(fut_var), np.ascontiguousarray(fut_dof), mu, sd,
        float(disc.d ** h), float(disc.beta ** h), float(cc.m_corr), int(cc.transport_draws), rule,
        float(cc.entry_prior_variance), transport, cont, rng, f, q, nd, ys, where,
    )
    if status != K.OK:
        raise SamplerFailure(K.STATUS_MESSAGES[status] + f" in predictive draw {int(where[0])}")
    return PredictiveDistribution(f, q, nd, samples=ys)


def sample_latent_states(
    theta: CoefficientDraw,
    y: float,
    loc,
    var,
    phi,
    active,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the latent expert states at one period given ``(theta, v, y)``.

    Active states have prior ``N(a_j, phi_j A_j)`` and enter the likelihood
    ``y ~ N(theta_0 + theta_A' x_A, v)``; the conditional is Gaussian with
    precision ``diag(1/(phi A)) + theta theta' / v``. Inactive states are
    returned at their prior means (NaN locations become the mean of the
    active locations).
    """
    active = np.asarray(active, dtype=bool)
    loc = np.asarray(loc, dtype=float)
    var = np.asarray(var, dtype=float)
    phi = np.asarray(phi, dtype=float)
    th = np.asarray(theta.theta, dtype=float)
    out = np.where(active, loc, np.nan)
    fill = float(np.mean(loc[active])) if active.any() else 0.0
    out = np.where(np.isfinite(out), out, fill)
    A = np.flatnonzero(active)
    if A.size == 0:
        return out
    dvar = phi[A] * var[A]
    if np.any(~(dvar > 0)) or not theta.v > 0:
        raise NumericalFailure("latent-state conditional needs phi*A > 0 and v > 0")
    b = th[1:][A]
    prec = np.diag(1.0 / dvar)
    rhs = loc[A] / dvar
    if np.isfinite(y):
        prec = prec + np.outer(b, b) / theta.v
        rhs = rhs + b * (y - th[0]) / theta.v
    L = jitter_cholesky(prec)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    z = rng.standard_normal(A.size)
    out[A] = mean + np.linalg.solve(L.T, z)
    return out
