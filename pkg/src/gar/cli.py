"""Command-line front end: ``gar <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__
from .backtest import BacktestResult, ForecastRecord, dm_matrix, report, run_backtest
from .dataset import (
    PanelData,
    RollingWindowPlan,
    apply_transforms,
    build_panel,
    load_fredmd_csv,
    write_fredmd_csv,
    write_groups,
)
from .decomp import (
    GroupPartition,
    additivity_error,
    build_index,
    correlation_matrix,
    decompose_series,
    persistent_selection,
)
from .errors import DataError, GarError, NumericalError
from .estimators import Estimator, make
from .garch import fit_garch, forecast_quantile
from .model import QuantileModel
from .penalized import PenaltySpec, cross_validate, fit_penalized
from .qpcr import QpcrConfig, fit_qpcr
from .qrf import ForestConfig, fit_forest, predict_quantile
from .simlab import DgpSpec, Setup, run_study, selector, synthetic_raw_panel

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("gar")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    pass


# --- run configuration -----------------------------------------------------

@dataclass
class RunConfig:
    data: str
    target: str = "INDPRO"
    groups: Optional[str] = None
    tau: float = 0.05
    window_length: int = 420
    n_forecasts: int = 225
    first_forecast: Optional[int] = None
    methods: list = field(default_factory=lambda: ["qpcr"])
    reference: Optional[str] = None
    seed: int = 0
    output_dir: str = "."
    transform: bool = True
    standardize: bool = True
    dm_lag: Optional[int] = None

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        path = Path(path)
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
        win = raw.pop("window", {})
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "data" not in raw:
            raise UsageError("config needs a 'data' path")
        cfg = cls(**raw)
        cfg.window_length = int(win.get("length", cfg.window_length))
        cfg.n_forecasts = int(win.get("n_forecasts", cfg.n_forecasts))
        cfg.first_forecast = win.get("first", cfg.first_forecast)
        # relative paths resolve against the config file
        for attr in ("data", "groups"):
            v = getattr(cfg, attr)
            if v and not Path(v).is_absolute():
                setattr(cfg, attr, str(path.parent / v))
        if not Path(cfg.output_dir).is_absolute():
            cfg.output_dir = str(path.parent / cfg.output_dir)
        return cfg

    def plan(self) -> RollingWindowPlan:
        return RollingWindowPlan(self.window_length, self.n_forecasts, self.first_forecast)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# --- helpers ---------------------------------------------------------------

def _versions() -> dict:
    import joblib
    import scipy

    return {"gar": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "joblib": joblib.__version__}


def write_manifest(out_dir: Path, argv, config: dict, seed) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    with path.open("w") as fh:
        json.dump({"argv": list(argv), "config": config, "seed": seed, "versions": _versions()},
                  fh, indent=2, default=str)
    return path


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, pd.Timestamp):
        return o.strftime("%Y-%m-%d")
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(v):
    """JSON-safe float: infinities become strings, nan becomes null."""
    if v is None:
        return None
    v = float(v)
    if np.isnan(v):
        return None
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _load_panel(data, target, groups=None, transform=True, standardize=True) -> PanelData:
    raw = load_fredmd_csv(data, groups)
    if transform:
        raw = apply_transforms(raw)
    return build_panel(raw, target, standardize=standardize)


# --- data ------------------------------------------------------------------

def cmd_data_inspect(args) -> int:
    raw = load_fredmd_csv(args.data, args.groups)
    missing = np.isnan(raw.values).sum(axis=0)
    summary = {
        "rows": int(raw.values.shape[0]),
        "columns": raw.p,
        "first_date": raw.dates[0].strftime("%Y-%m-%d"),
        "last_date": raw.dates[-1].strftime("%Y-%m-%d"),
        "transform_codes": {str(c): int(n) for c, n in
                            zip(*np.unique(raw.transform_codes, return_counts=True))},
        "missing_cells": int(missing.sum()),
        "columns_with_missing": [n for n, m in zip(raw.column_names, missing) if m],
        "groups": sorted(set(raw.group_labels)) if raw.group_labels else [],
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_data_transform(args) -> int:
    raw = apply_transforms(load_fredmd_csv(args.data))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    raw.to_frame().to_csv(out, index_label="date")
    write_manifest(out.parent, sys.argv, vars(args), None)
    return 0


def cmd_data_synth(args) -> int:
    raw = synthetic_raw_panel(args.T, args.p, args.s, args.seed, args.groups_count)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fredmd_csv(raw, out)
    if args.groups_out:
        write_groups(raw, args.groups_out)
    write_manifest(out.parent, sys.argv, vars(args), args.seed)
    return 0


# --- fit -------------------------------------------------------------------

def cmd_fit(args) -> int:
    panel = _load_panel(args.data, args.target, args.groups, not args.no_transform,
                        not args.no_standardize)
    x_next = panel.x_future
    result: dict = {"method": args.model, "tau": args.tau, "T": panel.T, "p": panel.p}
    if args.model == "qpcr":
        model, path = fit_qpcr(panel, QpcrConfig.default(
            panel.T, args.tau, args.ebic_c, confounding=args.confounding,
            ebic_form=args.ebic_form))
        result["model"] = model.to_dict()
        result["path"] = path.to_dict()
        pred = None if x_next is None else float(model.predict(x_next))
    elif args.model == "pqr":
        if args.lam is None:
            spec = cross_validate(panel, args.tau, args.penalty, scheme=args.folds,
                                  seed=args.seed)
        else:
            spec = PenaltySpec(args.penalty, args.lam)
        model = fit_penalized(panel, args.tau, spec)
        result["model"] = model.to_dict()
        pred = None if x_next is None else float(model.predict(x_next))
    elif args.model == "qrf":
        cfg = ForestConfig(args.trees, args.min_leaf, args.mtry_extra, args.tau, args.seed)
        forest = fit_forest(panel, cfg, args.variant, n_jobs=args.jobs)
        result["forest"] = {"n_trees": cfg.n_trees, "min_leaf": cfg.min_leaf,
                            "mtry_extra": cfg.mtry_extra, "variant": forest.variant.value,
                            "seed": cfg.seed,
                            "mean_leaves": float(np.mean([t.n_leaves for t in forest.trees]))}
        pred = None if x_next is None else predict_quantile(forest, x_next, args.tau)
    else:
        fit = fit_garch(panel.Y)
        result["params"] = vars(fit.params)
        result["at_boundary"] = fit.at_boundary
        result["loglik"] = fit.loglik
        pred = forecast_quantile(fit, args.tau, args.n_boot, np.random.default_rng(args.seed))
    result["forecast"] = pred
    if panel.future_date is not None:
        result["forecast_for_period_after"] = panel.future_date.strftime("%Y-%m-%d")
    text = json.dumps(result, indent=2, default=_json_default)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        write_manifest(out.parent, sys.argv, vars(args), args.seed)
    else:
        print(text)
    return 0


# --- sim -------------------------------------------------------------------

def cmd_sim(args) -> int:
    spec = DgpSpec(Setup(args.setup), args.T, args.p, args.s, args.seed)
    params = {"n_lambda": args.n_lambda} if args.method != "qpcr" else {}
    rep = run_study(spec, selector(args.method, **params), args.tau, args.reps,
                    n_jobs=args.jobs)
    row = rep.row()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(row))
            w.writeheader()
            w.writerow(row)
        write_manifest(out.parent, sys.argv, vars(args), args.seed)
    else:
        print(json.dumps(row))
    return 0


# --- backtest --------------------------------------------------------------

def _model_run(cfg: RunConfig, panel: PanelData, res: BacktestResult) -> dict:
    recs = []
    for r in res.records:
        recs.append({**r.row(), "predicted": _clean(r.predicted), "realized": _clean(r.realized),
                     "model": None if r.model is None else r.model.to_dict(),
                     "x_next": None if r.x_next is None else r.x_next.tolist()})
    return {"tau": cfg.tau, "column_names": list(panel.column_names),
            "group_labels": list(panel.group_labels), "methods": res.methods,
            "records": recs}


def cmd_backtest(args) -> int:
    cfg = RunConfig.from_toml(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_csv = Path(args.out) if args.out else Path(cfg.output_dir) / "forecasts.csv"
    out_dir = out_csv.parent
    panel = _load_panel(cfg.data, cfg.target, cfg.groups, cfg.transform, cfg.standardize)
    methods = [make(m) for m in cfg.methods]
    res = run_backtest(panel, cfg.plan(), methods, cfg.tau, cfg.seed, n_jobs=args.jobs)
    out_dir.mkdir(parents=True, exist_ok=True)
    res.frame().to_csv(out_csv, index=False)
    table = report(res, cfg.reference, lag=cfg.dm_lag)
    _dump({"tau": cfg.tau, "reference": cfg.reference or res.methods[0],
           "rows": [{k: _clean(v) if k in ("mpe_x1e3", "dm") else v for k, v in row.items()}
                    for row in table.to_dict("records")]},
          out_dir / "mpe.json")
    mat = dm_matrix(res, cfg.dm_lag)
    _dump({"methods": list(mat.index),
           "statistic": [[_clean(v) for v in row] for row in mat.to_numpy()],
           "convention": "negative values favour the row method"},
          out_dir / "dm.json")
    _dump(_model_run(cfg, panel, res), out_dir / "forecasts.json")
    write_manifest(out_dir, sys.argv, cfg.to_dict(), cfg.seed)
    print(table.to_string(index=False))
    return 0


# --- decompose / index -----------------------------------------------------

def _read_model_run(path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


def cmd_decompose(args) -> int:
    run = _read_model_run(args.model_run)
    names = run["column_names"]
    labels = list(run["group_labels"])
    if args.groups:
        mapping = {}
        with Path(args.groups).open(newline="") as fh:
            for row in csv.reader(fh):
                if len(row) >= 2 and row[0] != "name":
                    mapping[row[0]] = row[1]
        labels = [lab if lab == "lag" else mapping.get(n, lab) for n, lab in zip(names, labels)]
    partition = GroupPartition.from_labels(labels)
    method = args.method or run["methods"][0]
    recs = [r for r in run["records"] if r["method"] == method and r["model"] is not None]
    if not recs:
        raise DataError(f"no linear models for method {method!r} in the run")
    models = [QuantileModel.from_dict(r["model"]) for r in recs]
    X = np.array([r["x_next"] for r in recs])
    dates = [r["date"] or r["window"] for r in recs]
    frame = decompose_series(models, X, dates, partition)
    err = additivity_error(frame)
    if err > 1e-10:
        raise NumericalError(f"contributions do not add up (relative error {err:.2e})")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out)
    if args.min_consecutive:
        keep = persistent_selection([m.active_set for m in models], len(names),
                                    args.min_consecutive)
        sel = pd.DataFrame([[int(j in m.active_set) for j in np.flatnonzero(keep)]
                            for m in models], index=pd.Index(dates, name="date"),
                           columns=[names[j] for j in np.flatnonzero(keep)])
        sel.to_csv(out.with_name(out.stem + "_selection.csv"))
    write_manifest(out.parent, sys.argv, vars(args), None)
    return 0


def cmd_index(args) -> int:
    frame = pd.read_csv(args.contributions, index_col=0)
    groups = args.group or [c for c in frame.columns if c not in ("predicted",)]
    missing = [g for g in groups if g not in frame.columns]
    if missing:
        raise DataError(f"unknown group(s): {', '.join(missing)}")
    indices = {}
    for g in groups:
        idx = build_index(frame[g], args.smooth, args.standardize)
        indices[g] = idx.values
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(indices).to_csv(out)
    if args.correlations:
        if len(indices) < 2:
            raise UsageError("correlations need at least two groups")
        table = correlation_matrix(indices, args.reference)
        table.stars().to_csv(args.correlations)
    write_manifest(out.parent, sys.argv, vars(args), None)
    return 0


# --- parser ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gar", description="Quantile forecasting and growth-at-risk tools.")
    p.add_argument("--version", action="version", version=f"gar {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("data", help="inspect, transform or synthesize panels")
    dsub = d.add_subparsers(dest="action", required=True, parser_class=_Parser)
    di = dsub.add_parser("inspect")
    di.add_argument("--data", required=True)
    di.add_argument("--groups")
    di.set_defaults(func=cmd_data_inspect)
    dt = dsub.add_parser("transform")
    dt.add_argument("--data", required=True)
    dt.add_argument("--out", required=True)
    dt.set_defaults(func=cmd_data_transform)
    ds = dsub.add_parser("synth", help="write a synthetic monthly panel")
    ds.add_argument("--out", required=True)
    ds.add_argument("--groups-out")
    ds.add_argument("--T", type=int, default=645)
    ds.add_argument("--p", type=int, default=110)
    ds.add_argument("--s", type=int, default=5)
    ds.add_argument("--groups-count", type=int, default=4)
    ds.add_argument("--seed", type=int, default=0)
    ds.set_defaults(func=cmd_data_synth)

    f = sub.add_parser("fit", help="fit one model on a full panel")
    fsub = f.add_subparsers(dest="model", required=True, parser_class=_Parser)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", required=True)
    common.add_argument("--target", required=True)
    common.add_argument("--groups")
    common.add_argument("--tau", type=float, default=0.05)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out")
    common.add_argument("--no-transform", action="store_true")
    common.add_argument("--no-standardize", action="store_true")
    fq = fsub.add_parser("qpcr", parents=[common])
    fq.add_argument("--ebic-c", type=float, default=1.0)
    fq.add_argument("--confounding", choices=["previous", "accumulate"], default="previous")
    fq.add_argument("--ebic-form", choices=["size", "log_size"], default="size")
    fp = fsub.add_parser("pqr", parents=[common])
    fp.add_argument("--penalty", choices=["l1", "scad", "mcp"], default="l1")
    fp.add_argument("--lambda", dest="lam", type=float)
    fp.add_argument("--folds", choices=["blocked", "shuffled"], default="blocked")
    fr = fsub.add_parser("qrf", parents=[common])
    fr.add_argument("--variant", choices=["m", "atw"], default="m")
    fr.add_argument("--trees", type=int, default=2000)
    fr.add_argument("--min-leaf", type=int, default=5)
    fr.add_argument("--mtry-extra", type=int, default=20)
    fg = fsub.add_parser("garch", parents=[common])
    fg.add_argument("--n-boot", type=int, default=100_000)
    for sp in (fq, fp, fr, fg):
        sp.set_defaults(func=cmd_fit)

    s = sub.add_parser("sim", help="Monte Carlo selection study")
    s.add_argument("--setup", choices=[x.value for x in Setup], default="fixed-sparse")
    s.add_argument("--T", type=int, default=500)
    s.add_argument("--p", type=int, default=110)
    s.add_argument("--s", type=int, default=5)
    s.add_argument("--tau", type=float, default=0.05)
    s.add_argument("--method", choices=["qpcr", "l1", "scad", "mcp"], default="qpcr")
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-lambda", type=int, default=50)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sim)

    b = sub.add_parser("backtest", help="rolling-window forecast evaluation")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.add_argument("--seed", type=int)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_backtest)

    dc = sub.add_parser("decompose", help="group contributions of a backtest run")
    dc.add_argument("--model-run", required=True)
    dc.add_argument("--groups")
    dc.add_argument("--method")
    dc.add_argument("--min-consecutive", type=int, default=0)
    dc.add_argument("--out", required=True)
    dc.set_defaults(func=cmd_decompose)

    ix = sub.add_parser("index", help="smoothed sector indices and correlations")
    ix.add_argument("--contributions", required=True)
    ix.add_argument("--group", action="append")
    ix.add_argument("--smooth", type=int, default=3)
    ix.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)
    ix.add_argument("--correlations")
    ix.add_argument("--reference", choices=["normal", "t"], default="normal")
    ix.add_argument("--out", required=True)
    ix.set_defaults(func=cmd_index)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"gar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"gar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, tomllib.TOMLDecodeError) as exc:
        print(f"gar: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, GarError) as exc:
        print(f"gar: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
