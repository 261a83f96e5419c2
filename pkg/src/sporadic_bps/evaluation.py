"""Real-time recursive backtests and the relative-RMSE / cumulative-LPDR metrics.

Timing: row ``t`` of a panel is the forecast round whose expert densities
target ``y_t``; that target is realized ``h`` rows later. A forecast issued
at origin ``t`` may therefore use expert densities of rows ``<= t`` but
realized targets of rows ``<= t - h`` only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .baselines import (
    DEFAULT_WINDOW, MSE_FLOOR, active_components, asmi_impute, ew_pool, inverse_mse_weights,
    locf_impute, point_errors, weighted_pool,
)
from .density import DensityError
from .linalg import NumericalFailure
from .mcmc import McmcConfig, PosteriorDraws, predictive_distribution, run_mcmc
from .panel import PanelDataset, interpolate_training_window
from .predictive import PredictiveDistribution

log = logging.getLogger(__name__)

METHOD_KINDS = ("ew", "ew_locf", "ew_asmi", "inv_mse", "bps")
REFERENCE = "ew"


@dataclass(frozen=True)
class Record:
    """One scored (or failed) forecast. ``origin`` is a 0-based row index."""

    method: str
    origin: int
    origin_label: str
    target_label: str
    point: float
    logpdf: float
    realized: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class MethodSpec:
    """A named forecasting rule. ``mcmc`` is only used by ``kind == "bps"``."""

    name: str
    kind: str
    mcmc: Optional[McmcConfig] = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}; expected one of {METHOD_KINDS}")
        if self.kind == "bps" and self.mcmc is None:
            object.__setattr__(self, "mcmc", McmcConfig())


@dataclass(frozen=True)
class EvalConfig:
    window_len: int = 42
    horizon: int = 1
    mse_window: int = DEFAULT_WINDOW
    mse_floor: float = MSE_FLOOR
    interpolate: bool = True
    moment_matched: bool = False
    warm_start: bool = False
    warm_burn_in: int = 100
    jobs: int = 1

    def __post_init__(self):
        if self.window_len < 1 or self.horizon < 1 or self.mse_window < 1:
            raise ValueError("window_len, horizon and mse_window must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.warm_burn_in < 0:
            raise ValueError("warm_burn_in must be nonnegative")


# --------------------------------------------------------------------------
# metrics

def _check_aligned(records: Sequence[Record], ref: Sequence[Record]) -> None:
    a = [r.origin for r in records]
    b = [r.origin for r in ref]
    if a != b:
        raise ValueError("records are not aligned on the same origins")


def rmse(records: Sequence[Record]) -> float:
    if len(records) == 0:
        raise ValueError("rmse needs at least one record")
    e = np.array([r.point - r.realized for r in records])
    return float(np.sqrt(np.mean(e * e)))


def running_rmse(records: Sequence[Record]) -> np.ndarray:
    e = np.array([r.point - r.realized for r in records])
    return np.sqrt(np.cumsum(e * e) / np.arange(1, e.size + 1))


def relative_rmse(records: Sequence[Record], ref_records: Sequence[Record]) -> float:
    _check_aligned(records, ref_records)
    return rmse(records) / rmse(ref_records)


def lpdr(records: Sequence[Record], ref_records: Sequence[Record]) -> np.ndarray:
    """Cumulative log predictive density ratio of ``records`` against ``ref_records``."""
    _check_aligned(records, ref_records)
    for r in list(records) + list(ref_records):
        if not math.isfinite(r.logpdf):
            raise ValueError(f"non-finite log density for {r.method} at origin {r.origin_label}")
    diff = np.array([a.logpdf - b.logpdf for a, b in zip(records, ref_records)])
    return np.cumsum(diff)


# --------------------------------------------------------------------------
# results

@dataclass(frozen=True, eq=False)
class BacktestResult:
    """Per-method, per-origin records plus the series derived from them."""

    methods: tuple[str, ...]
    origins: tuple[int, ...]
    records: tuple[Record, ...]
    coefficient_paths: Mapping[str, np.ndarray] = field(default_factory=dict)
    period_labels: tuple[str, ...] = ()

    def records_for(self, method: str) -> list[Record]:
        if method not in self.methods:
            raise KeyError(f"no method {method!r} in this backtest")
        return [r for r in self.records if r.method == method]

    @property
    def failures(self) -> list[Record]:
        return [r for r in self.records if not r.ok]

    @property
    def complete(self) -> bool:
        return not self.failures

    def aligned(self, method: str, ref: str = REFERENCE) -> tuple[list[Record], list[Record]]:
        """Records of ``method`` and ``ref`` at the origins where both succeeded."""
        a = {r.origin: r for r in self.records_for(method) if r.ok}
        b = {r.origin: r for r in self.records_for(ref) if r.ok}
        common = sorted(set(a) & set(b))
        return [a[o] for o in common], [b[o] for o in common]

    def method_summary(self, method: str, ref: str = REFERENCE) -> dict:
        recs = self.records_for(method)
        ok = [r for r in recs if r.ok]
        out = {
            "n_origins": len(recs),
            "n_failed": len(recs) - len(ok),
            "rmse": rmse(ok) if ok else None,
        }
        if ref in self.methods:
            a, b = self.aligned(method, ref)
            if a:
                path = lpdr(a, b)
                out.update(
                    n_scored=len(a),
                    relative_rmse=relative_rmse(a, b),
                    lpdr=float(path[-1]),
                    lpdr_path=[float(v) for v in path],
                    rmse_path=[float(v) for v in running_rmse(a)],
                    path_origins=[r.origin_label for r in a],
                )
        return out

    def summary(self, ref: str = REFERENCE) -> dict:
        return {
            "complete": self.complete,
            "reference": ref if ref in self.methods else None,
            "methods": {m: self.method_summary(m, ref) for m in self.methods},
            "failures": [
                {"method": r.method, "origin": r.origin_label, "error": r.error} for r in self.failures
            ],
        }

    def write_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "origin", "target_period", "point", "logpdf", "realized"])
            for r in self.records:
                w.writerow([
                    r.method, r.origin_label, r.target_label,
                    repr(r.point) if r.ok else "", repr(r.logpdf) if r.ok else "", repr(r.realized),
                ])

    def write_summary_json(self, path, extra: Optional[dict] = None) -> None:
        body = self.summary()
        if extra:
            body.update(extra)
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def read_records_csv(path) -> list[dict]:
    """Parse a records CSV back into dicts of floats (``None`` for failed cells)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in ("point", "logpdf", "realized"):
                row[k] = float(row[k]) if row[k] != "" else None
            out.append(row)
    return out


# --------------------------------------------------------------------------
# harness

_RECOVERABLE = (NumericalFailure, DensityError)


def _score(method: str, ds: PanelDataset, t: int, pred: PredictiveDistribution) -> Record:
    y = float(ds.y[t])
    return Record(method, t, ds.period_labels[t], ds.target_labels[t], pred.point, float(pred.logpdf(y)), y)


def _failed(method: str, ds: PanelDataset, t: int, exc: Exception) -> Record:
    log.warning("%s failed at origin %s: %s", method, ds.period_labels[t], exc)
    return Record(
        method, t, ds.period_labels[t], ds.target_labels[t], math.nan, math.nan, float(ds.y[t]),
        error=f"{type(exc).__name__}: {exc}",
    )


def _origin_seed(cfg: McmcConfig, t: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, t])


def _bps_forecast(
    ds: PanelDataset, t: int, cfg: McmcConfig, ev: EvalConfig, init: Optional[PosteriorDraws] = None
) -> tuple[PredictiveDistribution, PosteriorDraws]:
    h = ev.horizon
    mc = replace(cfg, horizon=h)
    if init is not None:
        mc = replace(mc, burn_in=ev.warm_burn_in)
    rng = _origin_seed(mc, t)
    draws = run_mcmc(ds.head(t - h + 1), mc, rng=rng, init=init)
    pred = predictive_distribution(ds.head(t + 1), mc, draws, target_row=t, rng=rng)
    return pred, draws


def _bps_origin(args):
    spec, ds, t, ev = args
    try:
        pred, draws = _bps_forecast(ds, t, spec.mcmc, ev)
    except _RECOVERABLE as exc:
        return _failed(spec.name, ds, t, exc), None
    return _score(spec.name, ds, t, pred), draws.coefficient_means()


def evaluation_origins(ds: PanelDataset, ev: EvalConfig) -> list[int]:
    """Rows ``t >= window_len`` with a realized target and at least two fitted rows."""
    start = max(ev.window_len, ev.horizon + 1)
    return [t for t in range(start, ds.T) if math.isfinite(ds.y[t])]


def _baseline_records(spec: MethodSpec, ds: PanelDataset, origins: Sequence[int], ev: EvalConfig) -> list[Record]:
    out = []
    locf = locf_impute(ds) if spec.kind == "ew_locf" else None
    errors = point_errors(ds) if spec.kind == "inv_mse" else None
    for t in origins:
        try:
            if spec.kind == "ew":
                pred = ew_pool(active_components(ds, t), ev.moment_matched)
            elif spec.kind == "ew_locf":
                pred = ew_pool(active_components(locf, t), ev.moment_matched)
            elif spec.kind == "ew_asmi":
                filled = asmi_impute(ds.head(t + 1), t)
                pred = ew_pool(active_components(filled, t), ev.moment_matched)
            else:
                act = ds.idx[t]
                w = inverse_mse_weights(errors, act, t - ev.horizon, ev.mse_window, ev.mse_floor)
                pred = weighted_pool(active_components(ds, t), w.weights[act], ev.moment_matched)
        except _RECOVERABLE as exc:
            out.append(_failed(spec.name, ds, t, exc))
            continue
        out.append(_score(spec.name, ds, t, pred))
    return out


def _bps_records(spec: MethodSpec, ds: PanelDataset, origins: Sequence[int], ev: EvalConfig):
    if not origins:
        return [], None
    if ev.warm_start:
        out, init, means = [], None, None
        for t in origins:
            try:
                pred, draws = _bps_forecast(ds, t, spec.mcmc, ev, init)
            except _RECOVERABLE as exc:
                out.append(_failed(spec.name, ds, t, exc))
                init = None
                continue
            out.append(_score(spec.name, ds, t, pred))
            init, means = draws, draws.coefficient_means()
        return out, means
    tasks = [(spec, ds, t, ev) for t in origins]
    if ev.jobs > 1:
        with ProcessPoolExecutor(max_workers=ev.jobs) as pool:
            results = list(pool.map(_bps_origin, tasks))
    else:
        results = [_bps_origin(task) for task in tasks]
    means = next((m for _, m in reversed(results) if m is not None), None)
    return [r for r, _ in results], means


def run_backtest(ds: PanelDataset, methods: Sequence[MethodSpec], ev: EvalConfig = EvalConfig()) -> BacktestResult:
    """Recursive real-time evaluation of every method over the same origins.

    The training window ``[0, window_len)`` is interpolated once (if
    enabled). Each origin ``t`` is scored against ``y_t``; BPS is refitted
    on rows ``<= t - h``. Failures at an origin are recorded and the run
    continues. ``coefficient_paths`` holds, per BPS method, the posterior
    mean coefficient path of the fit at the last successful origin.
    """
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique")
    if not methods:
        raise ValueError("no methods to evaluate")
    if not 0 < ev.window_len < ds.T:
        raise ValueError(f"training window {ev.window_len} must be shorter than the panel (T={ds.T})")
    if ev.warm_start and ev.jobs > 1:
        raise ValueError("warm start runs origins sequentially; use jobs=1")
    data = interpolate_training_window(ds, ev.window_len, strict=False) if ev.interpolate else ds
    origins = evaluation_origins(data, ev)
    records: list[Record] = []
    paths = {}
    for spec in methods:
        if spec.kind == "bps":
            recs, means = _bps_records(spec, data, origins, ev)
            if means is not None:
                paths[spec.name] = means
        else:
            recs = _baseline_records(spec, data, origins, ev)
        records.extend(recs)
    return BacktestResult(tuple(names), tuple(origins), tuple(records), paths, data.period_labels)


def default_methods(mcmc: Optional[McmcConfig] = None) -> list[MethodSpec]:
    return [
        MethodSpec("ew", "ew"),
        MethodSpec("ew_locf", "ew_locf"),
        MethodSpec("ew_asmi", "ew_asmi"),
        MethodSpec("inv_mse", "inv_mse"),
        MethodSpec("bps", "bps", mcmc or McmcConfig()),
    ]


def grid_methods(base: McmcConfig, rhos=(0.0, 0.5, 0.9, 0.99), rules=("zero", "equal", "previous")) -> list[MethodSpec]:
    """One BPS method per ``(rho, entry prior mean rule)`` cell, named ``bps_rho<r>_<rule>``."""
    out = []
    for rho in rhos:
        for rule in rules:
            cc = replace(base.coherence, m_corr=float(rho), entry_prior_mean_rule=rule)
            out.append(MethodSpec(f"bps_rho{rho:g}_{rule}", "bps", replace(base, coherence=cc)))
    return out


def grid_table(result: BacktestResult, rhos, rules, metric: str = "relative_rmse") -> list[list]:
    """Rows ``[rho, value(rule_1), value(rule_2), ...]`` of a summary metric."""
    rows = []
    for rho in rhos:
        row = [float(rho)]
        for rule in rules:
            s = result.method_summary(f"bps_rho{rho:g}_{rule}")
            row.append(s.get(metric))
        rows.append(row)
    return rows
