"""Command line front end.

Subcommands
-----------
``fit``           penalized fit only; one row per covariate.
``infer``         full pipeline; one row per estimator and coefficient.
``simulate``      Monte Carlo coverage study.
``calibrate-r2``  solve for ``(c_x, c_y)`` at given R^2 targets.

Every report embeds the resolved configuration. ``--config REPORT`` reads
it back, so a report can be regenerated from itself; flags given on the
command line override the embedded values.

Exit codes: 0 success, 1 usage, 2 data or window errors, 3 numerical
failures, 4 partial success.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .core import Dataset, default_bandwidth
from .exceptions import (
    DataError,
    MissingColumn,
    NonFinite,
    ParseError,
    UsageError,
    VCQRError,
)
from .pipeline import PipelineConfig, run_pipeline
from .simulation import METHODS, SimConfig, SimParams, calibrate_r2, run_study

__all__ = ["main", "load_csv", "write_report", "load_report", "build_parser"]

EXIT_OK, EXIT_PARTIAL = 0, 4

COMMON_DEFAULTS = {
    "tau": 0.5, "u0": 1.0, "h": "auto", "kernel": "box", "c_b": 0.4, "c_v": 0.02,
    "level": 0.95, "cov_form": "empirical", "seed": 20240611, "format": "csv",
}
DATA_DEFAULTS = {"data": None, "a_cols": None, "estimators": ["OS", "DS", "RP"], "refit": False}
SIM_DEFAULTS = {
    "n": 300, "p": 100, "gamma": 0, "error_dist": "normal", "r2x": 0.7, "r2y": 0.3,
    "r2x_grid": None, "c_x": None, "c_y": None, "m_reps": 100, "estimators": list(METHODS),
    "oracle_threshold": 0.05, "pilot_n": 100_000, "params": None,
}


# --- serialization ---------------------------------------------------------

def fmt_number(v):
    """Shortest round-trip text for a number; ``nan``/``inf`` spelled out."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else fmt_number(v)
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return fmt_number(v)


def _parse_cell(s):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_report(path, fmt, header, columns, rows):
    """Write ``rows`` (list of dicts) with a metadata ``header``.

    The CSV form stores the header as JSON on a leading ``#`` line.
    Returns the text written.
    """
    header = plain(header)
    if fmt == "json":
        body = {**header, "columns": list(columns), "rows": [plain({c: r.get(c) for c in columns}) for r in rows]}
        text = json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        buf.write("# " + json.dumps(header, sort_keys=True, allow_nan=False) + "\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_cell(r.get(c)) for c in columns])
        text = buf.getvalue()
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
    return text


def load_report(path):
    """Read a report written by :func:`write_report` (either format)."""
    text = Path(path).read_text()
    if text.startswith("# "):
        first, _, rest = text.partition("\n")
        header = json.loads(first[2:])
        rd = csv.reader(io.StringIO(rest))
        columns = next(rd)
        rows = [{c: _parse_cell(v) for c, v in zip(columns, line)} for line in rd]
        return {**header, "columns": columns, "rows": rows}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not a report: {exc}") from None


def _number_from_json(v):
    if isinstance(v, str) and v in ("nan", "inf", "-inf"):
        return float(v)
    return v


# --- data input ------------------------------------------------------------

def load_csv(path, a_cols):
    """Read ``y,u,x1,...,xp`` data.

    ``a_cols`` lists covariate names or 0-based covariate indices. All
    columns other than ``y`` and ``u`` are covariates, in file order.
    """
    try:
        with open(path, newline="") as fh:
            lines = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not lines:
        raise ParseError(f"{path} is empty", row=0)
    header = [h.strip() for h in lines[0]]
    for need in ("y", "u"):
        if need not in header:
            raise MissingColumn(f"column {need!r} is missing", column=need)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", row=0)
    xnames = [h for h in header if h not in ("y", "u")]
    if not xnames:
        raise MissingColumn("no covariate columns", column="x")
    body = [ln for ln in lines[1:] if ln and any(c.strip() for c in ln)]
    vals = np.empty((len(body), len(header)))
    for i, ln in enumerate(body, start=1):
        if len(ln) != len(header):
            raise ParseError(f"row {i} has {len(ln)} fields, expected {len(header)}", row=i)
        for j, cell in enumerate(ln):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"row {i}, column {header[j]!r}: cannot parse {cell!r}", row=i, column=header[j]
                ) from None
            if not math.isfinite(v):
                raise NonFinite(f"row {i}, column {header[j]!r}: non-finite value {cell!r}", row=i, column=header[j])
            vals[i - 1, j] = v
    if vals.shape[0] == 0:
        raise ParseError(f"{path} has no data rows", row=1)
    a_set = resolve_a_cols(a_cols, xnames)
    xi = [header.index(nm) for nm in xnames]
    return Dataset(vals[:, header.index("y")], vals[:, header.index("u")], vals[:, xi], a_set, tuple(xnames))


def resolve_a_cols(a_cols, xnames):
    if a_cols is None or len(a_cols) == 0:
        raise UsageError("--a-cols is required")
    out = []
    for tok in a_cols:
        tok = str(tok).strip()
        if tok in xnames:
            out.append(xnames.index(tok))
        elif tok.lstrip("-").isdigit() and 0 <= int(tok) < len(xnames):
            out.append(int(tok))
        else:
            raise MissingColumn(f"covariate {tok!r} not found", column=tok)
    return tuple(out)


# --- configuration ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(s):
    return [t.strip() for t in s.split(",") if t.strip()]


def _float_list(s):
    try:
        return [float(t) for t in _csv_list(s)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _bandwidth(s):
    if s == "auto":
        return s
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError("--h takes a number or 'auto'") from None


def build_parser():
    S = argparse.SUPPRESS
    top = _Parser(prog="vcqr", allow_abbrev=False, description="Varying-coefficient quantile regression with post-selection inference.")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub_kw = {"allow_abbrev": False}

    def common(p):
        p.add_argument("--config", default=None, help="report or JSON config to start from")
        p.add_argument("--tau", type=float, default=S)
        p.add_argument("--u0", type=float, default=S)
        p.add_argument("--h", type=_bandwidth, default=S, help="bandwidth or 'auto' (4 n^-1/3)")
        p.add_argument("--kernel", choices=["box", "gaussian", "epanechnikov"], default=S)
        p.add_argument("--cb", dest="c_b", type=float, default=S)
        p.add_argument("--cv", dest="c_v", type=float, default=S)
        p.add_argument("--level", type=float, default=S)
        p.add_argument("--cov-form", dest="cov_form", choices=["empirical", "expected"], default=S)
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--out", default=None, help="output path (stdout if omitted)")
        p.add_argument("--format", choices=["csv", "json"], default=S)

    for name in ("fit", "infer"):
        p = sub.add_parser(name, **sub_kw)
        common(p)
        p.add_argument("--data", default=S, help="CSV file with header y,u,x1,...,xp")
        p.add_argument("--a-cols", dest="a_cols", type=_csv_list, default=S, help="covariates of interest")
        if name == "infer":
            p.add_argument("--estimators", type=_csv_list, default=S)
            p.add_argument("--refit", action="store_true", default=S)

    for name in ("simulate", "calibrate-r2"):
        p = sub.add_parser(name, **sub_kw)
        common(p)
        p.add_argument("--n", type=int, default=S)
        p.add_argument("--p", type=int, default=S)
        p.add_argument("--gamma", type=int, choices=[0, 1], default=S)
        p.add_argument("--error-dist", dest="error_dist", choices=["normal", "t3"], default=S)
        p.add_argument("--r2x", type=float, default=S)
        p.add_argument("--r2y", type=float, default=S)
        p.add_argument("--pilot-n", dest="pilot_n", type=int, default=S)
        if name == "simulate":
            p.add_argument("--r2x-grid", dest="r2x_grid", type=_float_list, default=S,
                           help="R^2_x values for the coverage curve")
            p.add_argument("--c-x", dest="c_x", type=float, default=S)
            p.add_argument("--c-y", dest="c_y", type=float, default=S)
            p.add_argument("--reps", dest="m_reps", type=int, default=S)
            p.add_argument("--estimators", type=_csv_list, default=S, help=f"subset of {','.join(METHODS)}")
            p.add_argument("--oracle-threshold", dest="oracle_threshold", type=float, default=S)
            p.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")
            p.add_argument("--plot-out", dest="plot_out", default=None)
    return top


def _defaults(command):
    d = dict(COMMON_DEFAULTS)
    if command in ("fit", "infer"):
        d.update(DATA_DEFAULTS)
    else:
        d.update(SIM_DEFAULTS)
    if command == "fit":
        d.pop("estimators")
        d.pop("refit")
    if command == "calibrate-r2":
        for k in ("r2x_grid", "c_x", "c_y", "m_reps", "estimators", "oracle_threshold"):
            d.pop(k)
    return d


def _embedded_config(path, command):
    """Config block stored in a report (or a bare JSON config file)."""
    if path.endswith(".json") or not Path(path).read_text().startswith("# "):
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
    else:
        obj = load_report(path)
    cfg = obj.get("config", obj)
    if obj.get("command", command) != command:
        raise UsageError(f"config was written by {obj['command']!r}, not {command!r}")
    validate_config(cfg)
    return {k: _number_from_json(v) for k, v in cfg.items()}


def validate_config(cfg):
    import jsonschema

    schema = json.loads(resources.files("vcqr").joinpath("config_schema.json").read_text())
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid config: {exc.message}") from None


def resolve_config(args):
    """Merge defaults, an embedded config and explicit flags (in that order)."""
    cmd = args.command
    cfg = _defaults(cmd)
    if args.config:
        emb = _embedded_config(args.config, cmd)
        unknown = set(emb) - set(cfg)
        if unknown:
            raise UsageError(f"config has unknown keys {sorted(unknown)}")
        cfg.update(emb)
    for k, v in vars(args).items():
        if k in cfg:
            cfg[k] = v
    fmt = cfg.pop("format")
    return cfg, fmt


# --- commands --------------------------------------------------------------

def _pipeline_config(cfg, n, estimators=("OS",)):
    h = default_bandwidth(n) if cfg["h"] == "auto" else float(cfg["h"])
    return PipelineConfig(
        tau=cfg["tau"], u0=cfg["u0"], h=h, kernel=cfg["kernel"], c_b=cfg["c_b"], c_v=cfg["c_v"],
        estimators=tuple(estimators), level=cfg["level"], cov_form=cfg["cov_form"],
        refit=bool(cfg.get("refit", False)),
    )


def _solver_block(pc):
    return {"solver": asdict(pc.solver), "step2": asdict(pc.step2), "ds": asdict(pc.ds)}


def _error_block(exc):
    return {"category": exc.category, "message": str(exc), "details": plain(
        {k: v for k, v in exc.details.items() if np.ndim(v) == 0 and not hasattr(v, "__dict__")}
    )}


def cmd_fit(cfg, fmt, out):
    from .core import QuerySpec, build_design
    from .lasso import fit_step1, lambda_b

    data = load_csv(cfg["data"], cfg["a_cols"])
    pc = _pipeline_config(cfg, data.n)
    design = build_design(data, QuerySpec(pc.tau, pc.u0, pc.h, pc.kernel))
    lam = lambda_b(design, data, pc.c_b)
    fit = fit_step1(design, data, lam, pc.solver)
    level, slope = design.to_original(fit.b_hat)
    lev0, slo0 = design.to_original(fit.b_ini)
    chosen = {int(design.order[g]) for g in fit.active_groups}
    rows = [
        {"variable": nm, "level": level[j], "slope": slope[j], "level_ini": lev0[j], "slope_ini": slo0[j],
         "selected": j in chosen}
        for j, nm in enumerate(data.names)
    ]
    header = {
        "command": "fit", "config": cfg,
        "provenance": {
            "n": data.n, "p": data.p, "h": pc.h, "nh": design.nh,
            "local_n": int(np.count_nonzero(design.weights > 0)), "lambda_b": lam,
            "objective": fit.objective, "iters": fit.iters, "kkt_gap": fit.kkt_gap,
            "certified": fit.certified, "unique": fit.unique, "method": fit.method,
            **_solver_block(pc),
        },
    }
    write_report(out, fmt, header, ["variable", "level", "slope", "level_ini", "slope_ini", "selected"], rows)
    return EXIT_OK


INFER_COLUMNS = ["variable", "part", "estimator", "estimate", "std_error", "ci_lo", "ci_hi", "error"]


def cmd_infer(cfg, fmt, out):
    data = load_csv(cfg["data"], cfg["a_cols"])
    pc = _pipeline_config(cfg, data.n, [e.upper() for e in cfg["estimators"]])
    header = {"command": "infer", "config": cfg,
              "provenance": {"n": data.n, "p": data.p, "h": pc.h, **_solver_block(pc)}}
    try:
        res = run_pipeline(data, pc)
    except VCQRError as exc:
        header["error"] = _error_block(exc)
        write_report(out, fmt, header, INFER_COLUMNS, [])
        return exc.exit_code
    header["provenance"].update(res.diagnostics)
    rows = []
    for name in pc.estimators:
        if name in res.errors:
            rows.append({"estimator": name, "error": res.errors[name].category})
            continue
        r = res.results[name]
        se = r.std_error
        for j in range(r.a_check.shape[0]):
            rows.append({
                "variable": data.names[data.a_set[j // 2]], "part": "level" if j % 2 == 0 else "slope",
                "estimator": name, "estimate": r.a_check[j], "std_error": se[j],
                "ci_lo": r.ci[j, 0], "ci_hi": r.ci[j, 1],
            })
    if res.errors:
        header["errors"] = {k: _error_block(e) for k, e in res.errors.items()}
    write_report(out, fmt, header, INFER_COLUMNS, rows)
    if not res.errors:
        return EXIT_OK
    if res.results:
        return EXIT_PARTIAL
    return next(iter(res.errors.values())).exit_code


def _sim_config(cfg, r2x, c_x=None, c_y=None):
    canon = {m.upper(): m for m in METHODS}
    methods = [canon.get(str(m).upper(), m) for m in cfg.get("estimators", METHODS)]
    return SimConfig(
        n=cfg["n"], p=cfg["p"], gamma=cfg["gamma"], error_dist=cfg["error_dist"],
        params=SimParams(**cfg["params"]) if cfg.get("params") else SimParams(),
        r2_targets=(r2x, cfg["r2y"]), c_x=c_x, c_y=c_y, tau=cfg["tau"], u0=cfg["u0"],
        m_reps=cfg.get("m_reps", 1), seed=cfg["seed"], methods=tuple(methods), c_b=cfg["c_b"],
        c_v=cfg["c_v"], kernel=cfg["kernel"], h=None if cfg["h"] == "auto" else float(cfg["h"]),
        level=cfg["level"], cov_form=cfg["cov_form"],
        oracle_threshold=cfg.get("oracle_threshold", 0.05), pilot_n=cfg["pilot_n"],
    )


SIM_COLUMNS = ["error_dist", "gamma", "r2_x", "r2_y", "method", "bias", "sd", "ese", "cr", "m_effective"]
PLOT_COLUMNS = ["r2_x", "r2_y", "method", "cr"]


def _plot_path(out, fmt):
    if out is None or out == "-":
        return None
    p = Path(out)
    return str(p.with_name(p.stem + ".plot" + (".json" if fmt == "json" else ".csv")))


def cmd_simulate(cfg, fmt, out, jobs=1, plot_out=None):
    grid = cfg["r2x_grid"] or [cfg["r2x"]]
    if (cfg["c_x"] is None) != (cfg["c_y"] is None):
        raise UsageError("give both --c-x and --c-y or neither")
    if cfg["c_x"] is not None and len(grid) > 1:
        raise UsageError("fixed --c-x/--c-y cannot be combined with an R^2 grid")
    rows, points = [], []
    for r2x in grid:
        sc = _sim_config(cfg, float(r2x), cfg["c_x"], cfg["c_y"])
        if not sc.calibrated:
            sc = replace(sc, c_x=None, c_y=None)
            c_x, c_y = calibrate_r2(sc)
            sc = replace(sc, c_x=c_x, c_y=c_y)
        rep = run_study(sc, n_jobs=jobs)
        for r in rep.rows:
            rows.append({"error_dist": sc.error_dist, "gamma": sc.gamma, "r2_x": sc.r2_targets[0],
                         "r2_y": sc.r2_targets[1], **asdict(r)})
        diag = [d["_diag"] for d in rep.replications if "_diag" in d]
        points.append({
            "r2_x": sc.r2_targets[0], "r2_y": sc.r2_targets[1], "c_x": sc.c_x, "c_y": sc.c_y,
            "beta_true": rep.beta_true, "failures": rep.failures,
            "lambda_v_escalated": int(sum(d["lambda_v_escalated"] for d in diag)),
            "mean_local_n": float(np.mean([d["local_n"] for d in diag])) if diag else None,
            "mean_hessian_rank": float(np.mean([d["hessian_rank"] for d in diag])) if diag else None,
            "mean_active": float(np.mean([d["n_active"] for d in diag])) if diag else None,
        })
    header = {"command": "simulate", "config": cfg, "provenance": {"points": points}}
    write_report(out, fmt, header, SIM_COLUMNS, rows)
    plot_out = plot_out or _plot_path(out, fmt)
    if plot_out is not None:
        write_report(plot_out, fmt, {"command": "simulate-plot", "config": cfg}, PLOT_COLUMNS, rows)
    failed = any(p["failures"] for p in points)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_calibrate(cfg, fmt, out):
    sc = _sim_config({**cfg, "estimators": ["Oracle"]}, cfg["r2x"])
    c_x, c_y = calibrate_r2(sc)
    row = {"error_dist": sc.error_dist, "gamma": sc.gamma, "r2_x": sc.r2_targets[0],
           "r2_y": sc.r2_targets[1], "c_x": c_x, "c_y": c_y, "pilot_n": sc.pilot_n}
    write_report(out, fmt, {"command": "calibrate-r2", "config": cfg}, list(row), [row])
    return EXIT_OK


def run(argv=None):
    """Parse and dispatch; returns the exit code. Errors propagate."""
    args = build_parser().parse_args(argv)
    cfg, fmt = resolve_config(args)
    if args.command in ("fit", "infer") and not cfg.get("data"):
        raise UsageError("--data is required")
    if args.command == "fit":
        return cmd_fit(cfg, fmt, args.out)
    if args.command == "infer":
        return cmd_infer(cfg, fmt, args.out)
    if args.command == "simulate":
        return cmd_simulate(cfg, fmt, args.out, args.jobs, args.plot_out)
    return cmd_calibrate(cfg, fmt, args.out)


def main(argv=None):
    import warnings

    from .exceptions import VCQRWarning

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", VCQRWarning)
            return run(argv)
    except VCQRError as exc:
        err = {"error": exc.category, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
