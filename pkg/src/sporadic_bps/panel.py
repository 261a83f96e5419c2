"""Sporadic forecaster panels: ingestion, activity bookkeeping, interpolation, simulation."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

from .density import DensityError, ExpertDensity, HistogramDensity, moment_match_histogram


class PanelError(ValueError):
    """Malformed panel input. ``line`` is the 1-based CSV line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ExcludedExpertError(PanelError):
    def __init__(self, experts: Sequence[str]):
        self.experts = list(experts)
        super().__init__(
            "experts with no observation inside the training window: " + ", ".join(self.experts)
        )


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """T periods by J experts of Student-t forecast densities plus realized targets.

    Arrays are read-only. ``loc``, ``scale`` and ``dof`` hold NaN where the
    expert did not submit; ``y`` may hold NaN where the target is not yet
    realized.
    """

    y: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    dof: np.ndarray
    idx: np.ndarray
    period_labels: tuple[str, ...]
    target_labels: tuple[str, ...]
    expert_ids: tuple[str, ...]

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        loc = np.array(self.loc, dtype=float)
        scale = np.array(self.scale, dtype=float)
        dof = np.array(self.dof, dtype=float)
        idx = np.array(self.idx, dtype=bool)
        if loc.ndim != 2:
            raise PanelError("expert arrays must be T x J")
        T, J = loc.shape
        if T < 2 or J < 1:
            raise PanelError(f"panel needs T >= 2 and J >= 1, got T={T}, J={J}")
        for name, arr in (("scale", scale), ("dof", dof), ("idx", idx)):
            if arr.shape != (T, J):
                raise PanelError(f"{name} has shape {arr.shape}, expected {(T, J)}")
        if y.shape != (T,):
            raise PanelError("y must have one entry per period")
        present = np.isfinite(loc) & np.isfinite(scale) & np.isfinite(dof)
        if np.any(present != idx):
            raise PanelError("expert density present iff activity indicator is set")
        if np.any(scale[idx] <= 0) or np.any(dof[idx] <= 0):
            raise PanelError("expert scales and dofs must be positive")
        if len(self.period_labels) != T or len(self.target_labels) != T:
            raise PanelError("one period label and one target label per period")
        if len(self.expert_ids) != J:
            raise PanelError("one expert id per column")
        for arr in (y, loc, scale, dof, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "dof", dof)
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "period_labels", tuple(str(p) for p in self.period_labels))
        object.__setattr__(self, "target_labels", tuple(str(p) for p in self.target_labels))
        object.__setattr__(self, "expert_ids", tuple(str(e) for e in self.expert_ids))

    @property
    def T(self) -> int:
        return self.loc.shape[0]

    @property
    def J(self) -> int:
        return self.loc.shape[1]

    def expert(self, t: int, j: int) -> Optional[ExpertDensity]:
        if not self.idx[t, j]:
            return None
        return ExpertDensity(float(self.loc[t, j]), float(self.scale[t, j]), float(self.dof[t, j]))

    def active(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.idx[t])

    def with_arrays(self, **kwargs) -> "PanelDataset":
        return replace(self, **kwargs)

    def head(self, n: int) -> "PanelDataset":
        """The first ``n`` periods (``n >= 2``)."""
        return PanelDataset(
            self.y[:n], self.loc[:n], self.scale[:n], self.dof[:n], self.idx[:n],
            self.period_labels[:n], self.target_labels[:n], self.expert_ids,
        )

    def equals(self, other: "PanelDataset") -> bool:
        """Exact equality, treating NaN cells as equal."""
        if not isinstance(other, PanelDataset):
            return False
        same = (
            self.period_labels == other.period_labels
            and self.target_labels == other.target_labels
            and self.expert_ids == other.expert_ids
            and self.loc.shape == other.loc.shape
        )
        if not same:
            return False
        return all(
            np.array_equal(a, b, equal_nan=True)
            for a, b in (
                (self.y, other.y),
                (self.loc, other.loc),
                (self.scale, other.scale),
                (self.dof, other.dof),
            )
        ) and np.array_equal(self.idx, other.idx)


@dataclass(frozen=True)
class TurnoverSets:
    """0-based expert indices leaving (``exits``) and joining (``entries``) at a period."""

    exits: frozenset[int]
    entries: frozenset[int]

    @property
    def empty(self) -> bool:
        return not self.exits and not self.entries


def turnover_from_masks(prev: np.ndarray, cur: np.ndarray) -> TurnoverSets:
    prev = np.asarray(prev, dtype=bool)
    cur = np.asarray(cur, dtype=bool)
    return TurnoverSets(
        exits=frozenset(int(j) for j in np.flatnonzero(prev & ~cur)),
        entries=frozenset(int(j) for j in np.flatnonzero(~prev & cur)),
    )


def turnover_sets(ds: PanelDataset, t: int) -> TurnoverSets:
    if t < 1 or t >= ds.T:
        raise IndexError(f"turnover needs a predecessor period; got t={t} for T={ds.T}")
    return turnover_from_masks(ds.idx[t - 1], ds.idx[t])


# --------------------------------------------------------------------------
# CSV ingestion

@dataclass(frozen=True)
class SchemaConfig:
    default_dof: float = 30.0
    open_bin_width: Optional[float] = None
    max_experts: Optional[int] = None
    selection_window: Optional[int] = None
    min_training_obs: int = 0


_QUARTER = re.compile(r"^(\d{4})\s*[Qq]([1-4])$")
_MONTH = re.compile(r"^(\d{4})-?(\d{2})$")
_MONTH_NAME = re.compile(r"^(\d{4})([A-Za-z]{3})$")
_MONTHS = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"]


def period_ordinal(label: str) -> tuple[str, int]:
    """(frequency, ordinal) for quarter, month or integer labels."""
    s = label.strip()
    if m := _QUARTER.match(s):
        return "Q", int(m.group(1)) * 4 + int(m.group(2)) - 1
    if m := _MONTH.match(s):
        month = int(m.group(2))
        if 1 <= month <= 12:
            return "M", int(m.group(1)) * 12 + month - 1
    if m := _MONTH_NAME.match(s):
        name = m.group(2).lower()
        if name in _MONTHS:
            return "M", int(m.group(1)) * 12 + _MONTHS.index(name)
    try:
        return "I", int(s)
    except ValueError:
        raise PanelError(f"unrecognised period label {label!r}") from None


def _parse_float(text: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise PanelError(f"not a number: {text!r}", line) from None


def _close_open_edges(edges: list[float], cfg: SchemaConfig, line: int) -> list[float]:
    if len(edges) < 2:
        raise PanelError("histogram needs at least two edges", line)
    if math.isinf(edges[0]) and edges[0] < 0:
        if len(edges) < 3 or not math.isfinite(edges[1]):
            raise PanelError("cannot close open lower bin", line)
        width = cfg.open_bin_width or (edges[2] - edges[1])
        edges[0] = edges[1] - width
    if math.isinf(edges[-1]) and edges[-1] > 0:
        if len(edges) < 3 or not math.isfinite(edges[-2]):
            raise PanelError("cannot close open upper bin", line)
        width = cfg.open_bin_width or (edges[-2] - edges[-3])
        edges[-1] = edges[-2] + width
    return edges


def _parse_density(kind: str, payload: list[str], cfg: SchemaConfig, line: int) -> ExpertDensity:
    try:
        if kind == "gauss":
            if len(payload) != 3:
                raise PanelError("gauss payload is mean,variance,dof", line)
            mean, var, dof = (_parse_float(p, line) for p in payload)
            return ExpertDensity(mean, var, dof)
        if kind == "hist":
            if len(payload) != 1 or payload[0].count(";") != 1:
                raise PanelError("hist payload is edges|...;probs|...", line)
            edge_txt, prob_txt = payload[0].split(";")
            edges = [_parse_float(e, line) for e in edge_txt.split("|")]
            probs = [_parse_float(p, line) for p in prob_txt.split("|")]
            edges = _close_open_edges(edges, cfg, line)
            g = moment_match_histogram(HistogramDensity(tuple(edges), tuple(probs)))
            return ExpertDensity(g.mean, g.variance, cfg.default_dof)
    except DensityError as exc:
        raise PanelError(str(exc), line) from None
    raise PanelError(f"unknown kind {kind!r} (expected gauss or hist)", line)


def _expert_sort_key(eid: str):
    return (0, int(eid), "") if eid.lstrip("-").isdigit() else (1, 0, eid)


def read_targets_csv(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["target_period", "value"]:
            raise PanelError("targets file header must be target_period,value", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise PanelError("targets row needs 2 fields", line)
            label = row[0].strip()
            if label in out:
                raise PanelError(f"duplicate target period {label!r}", line)
            out[label] = _parse_float(row[1], line)
    return out


def parse_panel_csv(path, targets_path=None, schema: SchemaConfig = SchemaConfig()) -> PanelDataset:
    """Read a panel CSV (and optional realized-target CSV) into a :class:`PanelDataset`.

    Rows are ``period,target_period,expert_id,kind,payload...``. A row of
    kind ``none`` registers a period in which nobody submitted. Periods must
    form a contiguous run once sorted; targets are matched by label, and
    unmatched targets are stored as NaN.
    """
    cells: dict[tuple[str, str], ExpertDensity] = {}
    first_line: dict[tuple[str, str], int] = {}
    period_target: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["period", "target_period", "expert_id", "kind"]
        if header is None or [h.strip() for h in header[:4]] != expected:
            raise PanelError("header must start with period,target_period,expert_id,kind", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 4 or (len(row) < 5 and row[3].strip() != "none"):
                raise PanelError("row has too few fields", line)
            period, target, eid, kind = (c.strip() for c in row[:4])
            payload = [c.strip() for c in row[4:]]
            while payload and payload[-1] == "" and kind == "hist":
                payload.pop()
            period_ordinal(period)
            if period_target.setdefault(period, target) != target:
                raise PanelError(f"period {period} has conflicting target periods", line)
            if kind == "none":
                continue
            if not eid:
                raise PanelError("missing expert_id", line)
            key = (period, eid)
            if key in cells:
                raise PanelError(
                    f"duplicate (period, expert) ({period}, {eid}); first seen on line {first_line[key]}",
                    line,
                )
            cells[key] = _parse_density(kind, payload, schema, line)
            first_line[key] = line
    if not cells:
        raise PanelError("panel file has no expert submissions")

    periods = sorted(period_target, key=period_ordinal)
    ords = [period_ordinal(p) for p in periods]
    if len({f for f, _ in ords}) != 1:
        raise PanelError("mixed period label formats")
    gaps = [periods[k] for k in range(1, len(ords)) if ords[k][1] - ords[k - 1][1] != 1]
    if gaps:
        raise PanelError(f"periods are not contiguous (gap before {gaps[0]})")

    expert_ids = sorted({e for _, e in cells}, key=_expert_sort_key)
    targets = read_targets_csv(targets_path) if targets_path is not None else {}
    T, J = len(periods), len(expert_ids)
    loc = np.full((T, J), np.nan)
    scale = np.full((T, J), np.nan)
    dof = np.full((T, J), np.nan)
    col = {e: j for j, e in enumerate(expert_ids)}
    row_of = {p: t for t, p in enumerate(periods)}
    for (p, e), d in cells.items():
        t, j = row_of[p], col[e]
        loc[t, j], scale[t, j], dof[t, j] = d.a, d.A, d.n
    ds = PanelDataset(
        y=np.array([targets.get(period_target[p], np.nan) for p in periods]),
        loc=loc,
        scale=scale,
        dof=dof,
        idx=np.isfinite(loc),
        period_labels=tuple(periods),
        target_labels=tuple(period_target[p] for p in periods),
        expert_ids=tuple(expert_ids),
    )
    if schema.max_experts is not None:
        ds = select_experts(ds, schema.max_experts, schema.selection_window, schema.min_training_obs)
    return ds


def select_experts(
    ds: PanelDataset,
    max_experts: int,
    window_len: Optional[int] = None,
    min_training_obs: int = 0,
) -> PanelDataset:
    """Keep the ``max_experts`` experts with the most submissions.

    Experts with fewer than ``min_training_obs`` submissions in the first
    ``window_len`` periods are dropped first. Ties go to the earlier column.
    """
    counts = ds.idx.sum(axis=0)
    eligible = np.ones(ds.J, dtype=bool)
    if window_len is not None:
        eligible &= ds.idx[:window_len].sum(axis=0) >= min_training_obs
    order = sorted(np.flatnonzero(eligible), key=lambda j: (-counts[j], j))
    keep = np.sort(np.array(order[:max_experts], dtype=int))
    return subset_experts(ds, keep)


def subset_experts(ds: PanelDataset, columns) -> PanelDataset:
    cols = np.asarray(columns, dtype=int)
    return ds.with_arrays(
        loc=ds.loc[:, cols],
        scale=ds.scale[:, cols],
        dof=ds.dof[:, cols],
        idx=ds.idx[:, cols],
        expert_ids=tuple(ds.expert_ids[j] for j in cols),
    )


def write_panel_csv(ds: PanelDataset, path, targets_path=None) -> None:
    """Canonical serialization: gauss rows with round-trip float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "target_period", "expert_id", "kind", "payload"])
        for t in range(ds.T):
            if not ds.idx[t].any():
                w.writerow([ds.period_labels[t], ds.target_labels[t], "", "none", ""])
            for j in range(ds.J):
                if ds.idx[t, j]:
                    w.writerow([
                        ds.period_labels[t], ds.target_labels[t], ds.expert_ids[j], "gauss",
                        repr(float(ds.loc[t, j])), repr(float(ds.scale[t, j])), repr(float(ds.dof[t, j])),
                    ])
    if targets_path is not None:
        with open(targets_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_period", "value"])
            seen = set()
            for t in range(ds.T):
                label = ds.target_labels[t]
                if label in seen or not np.isfinite(ds.y[t]):
                    continue
                seen.add(label)
                w.writerow([label, repr(float(ds.y[t]))])


# --------------------------------------------------------------------------
# training-window interpolation

def _fill_column(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Piecewise-linear fill over observed points with flat extension at the ends."""
    pos = np.flatnonzero(observed)
    return np.interp(np.arange(len(values)), pos, values[pos])


def interpolate_training_window(ds: PanelDataset, window_len: int = 42, strict: bool = True) -> PanelDataset:
    """Linearly interpolate missing (a, A) inside periods ``[0, window_len)``.

    Leading and trailing gaps take the nearest observed value; filled dofs
    average the two neighbouring observations. Periods at or after
    ``window_len`` are never touched. With ``strict`` an expert that never
    reports inside the window is an error; otherwise it is left missing.
    """
    if not 0 < window_len < ds.T:
        raise PanelError(f"window_len must be in (0, T); got {window_len} for T={ds.T}")
    w = window_len
    idx_win = ds.idx[:w]
    empty = [ds.expert_ids[j] for j in range(ds.J) if not idx_win[:, j].any()]
    if empty and strict:
        raise ExcludedExpertError(empty)
    loc, scale, dof, idx = (np.array(a) for a in (ds.loc, ds.scale, ds.dof, ds.idx))
    steps = np.arange(w)
    for j in range(ds.J):
        obs = idx_win[:, j]
        if obs.all() or not obs.any():
            continue
        loc[:w, j] = _fill_column(ds.loc[:w, j], obs)
        scale[:w, j] = _fill_column(ds.scale[:w, j], obs)
        pos = np.flatnonzero(obs)
        for t in np.flatnonzero(~obs):
            k = np.searchsorted(pos, t)
            lo, hi = pos[max(k - 1, 0)], pos[min(k, len(pos) - 1)]
            dof[t, j] = 0.5 * (ds.dof[lo, j] + ds.dof[hi, j])
        idx[steps[~obs], j] = True
    return ds.with_arrays(loc=loc, scale=scale, dof=dof, idx=idx)


# --------------------------------------------------------------------------
# synthetic panels

@dataclass(frozen=True)
class SyntheticConfig:
    """Simulation settings for a sporadic panel around an AR(1) target.

    Expert ``j`` reports ``y_t + bias_j + e_{j,t}`` with ``e_t`` Gaussian,
    cross-correlated at ``noise_corr`` and expert-specific scale drawn
    uniformly in ``[noise_scale_min, noise_scale_max]``. Participation
    follows a two-state Markov chain with ``p_stay_on = P(on|on)`` and
    ``p_stay_off = P(off|off)``. ``shift_size`` is added to the target mean
    from ``shift_time`` onwards; experts absorb it gradually, closing a
    fraction ``shift_learning`` of the remaining gap each period (1 means
    they see it at once). Periods with fewer than ``min_active``
    reporters get randomly chosen experts switched on (a core-panel floor).
    """

    J: int = 8
    T: int = 160
    ar_coef: float = 0.8
    innov_var: float = 0.25
    mean_level: float = 2.0
    bias_scale: float = 0.3
    noise_scale_min: float = 0.2
    noise_scale_max: float = 1.0
    noise_corr: float = 0.5
    report_var: float = 0.5
    dof: float = 30.0
    p_stay_on: float = 0.85
    p_stay_off: float = 0.7
    shift_time: Optional[int] = None
    shift_size: float = 0.0
    shift_learning: float = 1.0
    min_active: int = 1
    first_period: str = "2000Q1"
    seed: int = 0

    def __post_init__(self):
        for name in ("p_stay_on", "p_stay_off"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PanelError(f"{name} must be a probability, got {v}")
        if self.innov_var <= 0 or self.report_var <= 0:
            raise PanelError("variances must be positive")
        if self.J < 1 or self.T < 2:
            raise PanelError("need J >= 1 and T >= 2")
        if not -1.0 < self.noise_corr < 1.0:
            raise PanelError("noise_corr must lie in (-1, 1)")
        if self.noise_scale_min < 0 or self.noise_scale_max < self.noise_scale_min:
            raise PanelError("need 0 <= noise_scale_min <= noise_scale_max")
        if self.bias_scale < 0 or self.dof <= 0:
            raise PanelError("bias_scale must be >= 0 and dof > 0")
        if not 0.0 < self.shift_learning <= 1.0:
            raise PanelError("shift_learning must lie in (0, 1]")
        if not 0 <= self.min_active <= self.J:
            raise PanelError("min_active must lie in [0, J]")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _quarter_labels(first: str, count: int) -> list[str]:
    freq, start = period_ordinal(first)
    out = []
    for k in range(count):
        o = start + k
        if freq == "Q":
            out.append(f"{o // 4}Q{o % 4 + 1}")
        elif freq == "M":
            out.append(f"{o // 12}-{o % 12 + 1:02d}")
        else:
            out.append(str(o))
    return out


def generate_synthetic_panel(cfg: SyntheticConfig) -> PanelDataset:
    rng = np.random.default_rng(cfg.seed)
    T, J = cfg.T, cfg.J
    level = np.full(T, cfg.mean_level)
    if cfg.shift_time is not None:
        level[cfg.shift_time:] += cfg.shift_size
    y = np.empty(T)
    dev = rng.normal(0.0, math.sqrt(cfg.innov_var / max(1e-12, 1.0 - cfg.ar_coef**2))) if abs(cfg.ar_coef) < 1 else 0.0
    for t in range(T):
        dev = cfg.ar_coef * dev + rng.normal(0.0, math.sqrt(cfg.innov_var))
        y[t] = level[t] + dev

    bias = rng.normal(0.0, 1.0, J) * cfg.bias_scale
    sigma = rng.uniform(cfg.noise_scale_min, cfg.noise_scale_max, J)
    corr = np.full((J, J), cfg.noise_corr)
    np.fill_diagonal(corr, 1.0)
    chol = np.linalg.cholesky(corr)
    noise = (rng.standard_normal((T, J)) @ chol.T) * sigma

    denom = 2.0 - cfg.p_stay_on - cfg.p_stay_off
    p_init = 1.0 if denom <= 0 else (1.0 - cfg.p_stay_off) / denom
    u = rng.random((T, J))
    idx = np.empty((T, J), dtype=bool)
    for t in range(T):
        if t == 0:
            idx[0] = u[0] < p_init
        else:
            p_on = np.where(idx[t - 1], cfg.p_stay_on, 1.0 - cfg.p_stay_off)
            idx[t] = u[t] < p_on
        short = cfg.min_active - int(idx[t].sum())
        if short > 0:
            idx[t, rng.choice(np.flatnonzero(~idx[t]), size=short, replace=False)] = True

    lag = np.zeros(T)
    if cfg.shift_time is not None and cfg.shift_time < T:
        k = np.arange(T - cfg.shift_time)
        lag[cfg.shift_time:] = cfg.shift_size * (1.0 - cfg.shift_learning) ** (k + 1)
    loc = np.where(idx, (y - lag)[:, None] + bias[None, :] + noise, np.nan)
    scale = np.where(idx, cfg.report_var, np.nan)
    dof = np.where(idx, cfg.dof, np.nan)
    labels = _quarter_labels(cfg.first_period, T)
    return PanelDataset(
        y=y,
        loc=loc,
        scale=scale,
        dof=dof,
        idx=idx,
        period_labels=tuple(labels),
        target_labels=tuple(labels),
        expert_ids=tuple(str(j + 1) for j in range(J)),
    )
