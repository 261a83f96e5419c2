"""Command-line entry point: ``ingest``, ``simulate``, ``run`` and ``report``.

Every configuration key can come from a JSON file (``--config``) or from the
matching ``--flag``; flags win. Unknown keys are rejected. Exit statuses:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .coherence import CoherenceConfig
from .density import DensityError
from .dlm import DiscountConfig
from .evaluation import EvalConfig, MethodSpec, METHOD_KINDS, grid_methods, run_backtest
from .linalg import NumericalFailure
from .mcmc import McmcConfig
from .panel import (
    PanelDataset, PanelError, SchemaConfig, SyntheticConfig, generate_synthetic_panel, parse_panel_csv,
    write_panel_csv,
)

log = logging.getLogger("sporadic_bps")

OUTPUT_ENV = "SPORADIC_BPS_OUTPUT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GRID_RULE_LABELS = {"zero": "0", "equal": "1/J", "previous": "prev"}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# typed keys

def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes", "false", "0", "no"):
        return v.lower() in ("true", "1", "yes")
    raise ValueError(f"not a boolean: {v!r}")


def _int(v) -> int:
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ValueError(f"not an integer: {v!r}")
    return int(v)


def _float(v) -> float:
    if isinstance(v, bool):
        raise ValueError(f"not a number: {v!r}")
    return float(v)


def _str(v) -> str:
    if not isinstance(v, str):
        raise ValueError(f"not a string: {v!r}")
    return v


def _optional(parse: Callable) -> Callable:
    def inner(v):
        if v is None or (isinstance(v, str) and v.lower() in ("", "none", "null")):
            return None
        return parse(v)
    return inner


def _list(parse: Callable) -> Callable:
    def inner(v):
        items = v.split(",") if isinstance(v, str) else v
        if not isinstance(items, (list, tuple)):
            raise ValueError(f"not a list: {v!r}")
        return [parse(x.strip() if isinstance(x, str) else x) for x in items if x != ""]
    return inner


_PARSERS = {bool: _bool, int: _int, float: _float, str: _str}


def _dataclass_keys(cls, skip=()) -> dict[str, tuple[Callable, Any]]:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        text = f.type if isinstance(f.type, str) else f.type.__name__
        base = next((p for name, p in (("bool", _bool), ("int", _int), ("float", _float), ("str", _str))
                     if text.startswith(name) or text == name), None)
        if text.startswith("Optional["):
            inner = text[len("Optional["):-1]
            base = _optional(_PARSERS[{"int": int, "float": float, "str": str}[inner]])
        if base is None:
            raise TypeError(f"unsupported config field type {text} for {f.name}")
        out[f.name] = (base, f.default)
    return out


SCHEMA_KEYS = _dataclass_keys(SchemaConfig)
SIM_KEYS = _dataclass_keys(SyntheticConfig)
EVAL_KEYS = _dataclass_keys(EvalConfig)
MCMC_KEYS = {
    "burn_in": (_int, 3000), "keep": (_int, 5000), "thin": (_int, 1), "seed": (_int, 0),
    "d": (_float, 0.99), "beta": (_float, 0.9), "n0": (_float, 5.0), "s0": (_float, 0.01),
    "c0_scale": (_float, 1e-4),
}
COHERENCE_KEYS = _dataclass_keys(CoherenceConfig)

COMMAND_KEYS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "ingest": {"input": (_str, None), "targets": (_optional(_str), None), "out": (_optional(_str), None),
               **SCHEMA_KEYS},
    "simulate": {"out": (_optional(_str), None), **SIM_KEYS},
    "run": {
        "panel": (_str, None), "targets": (_optional(_str), None), "out": (_optional(_str), None),
        "methods": (_list(_str), ["ew", "ew_locf", "ew_asmi", "inv_mse", "bps"]),
        "grid": (_bool, False),
        "grid_rhos": (_list(_float), [0.0, 0.5, 0.9, 0.99]),
        "grid_rules": (_list(_str), ["zero", "equal", "previous"]),
        **SCHEMA_KEYS, **EVAL_KEYS, **MCMC_KEYS, **COHERENCE_KEYS,
    },
}
REQUIRED = {"ingest": ("input",), "run": ("panel",), "simulate": ()}


def resolve_config(command: str, file_cfg: dict, flag_cfg: dict) -> dict:
    """Defaults, overridden by the config file, overridden by flags; values type-checked."""
    keys = COMMAND_KEYS[command]
    unknown = sorted(set(file_cfg) - set(keys))
    if unknown:
        raise ConfigError(f"unknown configuration keys for {command}: {', '.join(unknown)}")
    cfg = {k: default for k, (_, default) in keys.items()}
    for source in (file_cfg, flag_cfg):
        for k, v in source.items():
            try:
                cfg[k] = keys[k][0](v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    return cfg


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        body = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(body, dict):
        raise ConfigError("config file must hold a JSON object")
    return body


def _subset(cfg: dict, keys) -> dict:
    return {k: cfg[k] for k in keys}


def _build(cls, kwargs):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from None


def _output_dir(cfg: dict, command: str) -> Path:
    out = cfg.get("out")
    if out is None:
        out = str(Path(os.environ.get(OUTPUT_ENV, "results")) / command)
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _echo(out: Path, command: str, cfg: dict) -> None:
    body = {"command": command, **cfg}
    (out / "config.echo").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _json_dump(path: Path, body) -> None:
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# panel outputs

def participation_matrix(ds: PanelDataset, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", *ds.expert_ids])
        for t in range(ds.T):
            w.writerow([ds.period_labels[t], *(int(b) for b in ds.idx[t])])


def panel_report(ds: PanelDataset) -> dict:
    counts = ds.idx.sum(axis=0)
    y = ds.y[np.isfinite(ds.y)]
    return {
        "T": ds.T,
        "J": ds.J,
        "first_period": ds.period_labels[0],
        "last_period": ds.period_labels[-1],
        "submissions": int(ds.idx.sum()),
        "expert_counts": {e: int(c) for e, c in zip(ds.expert_ids, counts)},
        "active_per_period_mean": float(ds.idx.sum(axis=1).mean()),
        "empty_periods": int((~ds.idx.any(axis=1)).sum()),
        "realized_targets": int(y.size),
        "target_mean": float(y.mean()) if y.size else None,
        "target_variance": float(y.var(ddof=1)) if y.size > 1 else None,
    }


def _write_panel_outputs(ds: PanelDataset, out: Path) -> dict:
    targets = out / "targets.csv" if np.isfinite(ds.y).any() else None
    write_panel_csv(ds, out / "panel.csv", targets)
    participation_matrix(ds, out / "participation.csv")
    report = panel_report(ds)
    _json_dump(out / "report.json", report)
    return report


def cmd_ingest(cfg: dict) -> int:
    schema = _build(SchemaConfig, _subset(cfg, SCHEMA_KEYS))
    ds = parse_panel_csv(cfg["input"], cfg["targets"], schema)
    out = _output_dir(cfg, "ingest")
    _echo(out, "ingest", cfg)
    _write_panel_outputs(ds, out)
    print(f"ingested T={ds.T} J={ds.J} -> {out}")
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    sim = _build(SyntheticConfig, _subset(cfg, SIM_KEYS))
    ds = generate_synthetic_panel(sim)
    out = _output_dir(cfg, "simulate")
    _echo(out, "simulate", cfg)
    report = _write_panel_outputs(ds, out)
    denom = 2.0 - sim.p_stay_on - sim.p_stay_off
    report["expected_participation"] = 1.0 if denom <= 0 else (1.0 - sim.p_stay_off) / denom
    report["observed_participation"] = float(ds.idx.mean())
    _json_dump(out / "report.json", report)
    print(f"simulated T={ds.T} J={ds.J} -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# run

def _mcmc_config(cfg: dict) -> McmcConfig:
    cc = _build(CoherenceConfig, _subset(cfg, COHERENCE_KEYS))
    disc = _build(DiscountConfig, {"d": cfg["d"], "beta": cfg["beta"]})
    return _build(McmcConfig, dict(
        burn_in=cfg["burn_in"], keep=cfg["keep"], thin=cfg["thin"], seed=cfg["seed"],
        n0=cfg["n0"], s0=cfg["s0"], c0_scale=cfg["c0_scale"], horizon=cfg["horizon"],
        discounts=disc, coherence=cc,
    ))


def _methods(cfg: dict, mcmc: McmcConfig) -> list[MethodSpec]:
    specs = []
    for kind in cfg["methods"]:
        if kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method {kind!r}; expected one of {METHOD_KINDS}")
        if kind == "bps" and cfg["grid"]:
            continue
        specs.append(MethodSpec(kind, kind, mcmc if kind == "bps" else None))
    if cfg["grid"]:
        bad = [r for r in cfg["grid_rules"] if r not in GRID_RULE_LABELS]
        if bad:
            raise ConfigError(f"unknown entry prior rules in grid: {bad}")
        specs.extend(grid_methods(mcmc, cfg["grid_rhos"], cfg["grid_rules"]))
    if "ew" not in [s.name for s in specs]:
        specs.insert(0, MethodSpec("ew", "ew"))
    return specs


def turnover_events(ds: PanelDataset) -> list[dict]:
    rows = []
    for t in range(1, ds.T):
        prev, cur = ds.idx[t - 1], ds.idx[t]
        ent = [ds.expert_ids[j] for j in np.flatnonzero(cur & ~prev)]
        ex = [ds.expert_ids[j] for j in np.flatnonzero(prev & ~cur)]
        if ent or ex:
            rows.append({
                "period": ds.period_labels[t], "entries": ";".join(ent), "exits": ";".join(ex),
                "n_active": int(cur.sum()),
            })
    return rows


def _write_events(ds: PanelDataset, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["period", "entries", "exits", "n_active"], lineterminator="\n")
        w.writeheader()
        w.writerows(turnover_events(ds))


def _write_paths(result, ds: PanelDataset, out: Path) -> None:
    pdir = out / "paths"
    pdir.mkdir(exist_ok=True)
    for name, path in sorted(result.coefficient_paths.items()):
        with open(pdir / f"coeff_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["period", "intercept", *ds.expert_ids])
            for t, row in enumerate(path):
                w.writerow([ds.period_labels[t], *(repr(float(v)) for v in row)])


def grid_rows(summary: dict, rhos, rules) -> list[dict]:
    rows = []
    for rule in rules:
        for rho in rhos:
            name = f"bps_rho{rho:g}_{rule}"
            s = summary["methods"].get(name, {})
            rows.append({
                "theta_star": GRID_RULE_LABELS[rule], "rho": float(rho), "method": name,
                "rmse": s.get("rmse"), "relative_rmse": s.get("relative_rmse"), "lpdr": s.get("lpdr"),
            })
    return rows


def _fmt(v) -> str:
    return "" if v is None else (repr(v) if isinstance(v, float) else str(v))


def cmd_run(cfg: dict) -> int:
    schema = _build(SchemaConfig, _subset(cfg, SCHEMA_KEYS))
    ds = parse_panel_csv(cfg["panel"], cfg["targets"], schema)
    mcmc = _mcmc_config(cfg)
    ev = _build(EvalConfig, _subset(cfg, EVAL_KEYS))
    specs = _methods(cfg, mcmc)
    out = _output_dir(cfg, "run")
    _echo(out, "run", cfg)
    result = run_backtest(ds, specs, ev)
    summary = result.summary()
    extra = {}
    if cfg["grid"]:
        extra["grid"] = grid_rows(summary, cfg["grid_rhos"], cfg["grid_rules"])
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta_star", "rho", "method", "rmse", "relative_rmse", "lpdr"])
            for r in extra["grid"]:
                w.writerow([_fmt(r[k]) for k in ("theta_star", "rho", "method", "rmse", "relative_rmse", "lpdr")])
    result.write_records_csv(out / "records.csv")
    result.write_summary_json(out / "summary.json", extra)
    _write_paths(result, ds, out)
    _write_events(ds, out / "events.csv")
    status = "complete" if result.complete else f"incomplete ({len(result.failures)} failed forecasts)"
    print(f"backtest {status}: {len(result.origins)} origins, {len(specs)} methods -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# report

REPORT_COLUMNS = ("method", "n_origins", "n_failed", "rmse", "relative_rmse", "lpdr")


def format_report(summary: dict) -> str:
    lines = ["\t".join(REPORT_COLUMNS)]
    for name in summary["methods"]:
        s = {"method": name, **summary["methods"][name]}
        lines.append("\t".join(_fmt(s.get(c)) for c in REPORT_COLUMNS))
    if summary.get("grid"):
        rules = list(dict.fromkeys(r["theta_star"] for r in summary["grid"]))
        for rule in rules:
            cells = [r for r in summary["grid"] if r["theta_star"] == rule]
            lines.append("")
            lines.append(f"theta*={rule}\t" + "\t".join(f"rho={_fmt(c['rho'])}" for c in cells))
            lines.append("RMSE\t" + "\t".join(_fmt(c["rmse"]) for c in cells))
            lines.append("LPDR\t" + "\t".join(_fmt(c["lpdr"]) for c in cells))
    if not summary.get("complete", True):
        lines.append("")
        lines.append(f"INCOMPLETE: {len(summary.get('failures', []))} failed forecasts")
    return "\n".join(lines)


def cmd_report(results_dir: str) -> int:
    path = Path(results_dir) / "summary.json"
    if not path.is_file():
        raise ConfigError(f"no summary.json in {results_dir}")
    summary = json.loads(path.read_text())
    print(format_report(summary))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def _add_key_flags(p: argparse.ArgumentParser, keys: dict) -> None:
    for k, (parse, _default) in keys.items():
        flag = "--" + k.replace("_", "-")
        if parse is _bool:
            p.add_argument(flag, dest=k, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=k, default=None, metavar=k.upper())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sporadic-bps", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("ingest", "validate a panel CSV and write the canonical archive"),
        ("simulate", "generate a synthetic sporadic panel"),
        ("run", "run the recursive backtest"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON file of configuration keys")
        _add_key_flags(p, COMMAND_KEYS[name])
    p = sub.add_parser("report", help="print the summary table of a results directory")
    p.add_argument("results_dir")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.results_dir)
        flags = {k: getattr(args, k) for k in COMMAND_KEYS[args.command] if getattr(args, k) is not None}
        cfg = resolve_config(args.command, _load_config_file(args.config), flags)
        return {"ingest": cmd_ingest, "simulate": cmd_simulate, "run": cmd_run}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PanelError, DensityError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
