"""Command-line front end: ``srdetect <subcommand> --config run.yaml``.

Subcommands are ``simulate``, ``evaluate``, ``compare``, ``calibrate``,
``constants`` and ``qsd``. Every output file starts with a header block
(config hash, seed, version) and rerunning with the same config and seed
rewrites it byte for byte.

Exit codes: 0 success, 1 estimation failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .asymptotics import (ArithmeticModelError, AsymptoticConstants, CConstants, CalibrationError,
                          calibrate, estimate_constants)
from .detectors import (KINDS, Procedure, UnknownProcedureError, default_state, trajectory,
                        write_trajectory_csv)
from .metrics import (EstimationError, OperatingCharacteristics, estimate_arl, estimate_bayes,
                      estimate_delay_curve, estimate_post_change_delay, estimate_riadd,
                      estimate_sadd, estimate_stadd, estimate_window_fa, lower_bound_jb,
                      spliced_runs, write_characteristics_csv)
from .model import GeometricPrior, ModelConfigError, StreamSpec, iter_stream, model_from_config
from .quasistationary import NonConvergenceError, solve_quasi_stationary, solve_stationary
from .rng import INIT, PATH, Stream, stream_key

CRITERIA = ("arl", "add0", "sadd", "riadd", "stadd", "pfa", "add", "window_fa", "jb")
DEFAULTS = {
    "model": {"name": "gaussian", "mu0": 0.0, "mu1": 1.0, "sigma": 1.0},
    "procedures": [{"kind": "sr"}],
    "criteria": ["arl"],
    "replications": 10_000,
    "out": "results",
    "workers": 1,
}


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------- config

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def _parse_procedure(item) -> dict:
    """``"sr_r:4.1"``, ``"sr_r:star"``, ``"shiryaev:0.01"`` or a mapping."""
    if isinstance(item, dict):
        d = dict(item)
    else:
        kind, _, arg = str(item).partition(":")
        d = {"kind": kind}
        if arg:
            d["p" if kind == "shiryaev" else "r"] = arg if arg == "star" else float(arg)
    if "kind" not in d:
        raise ConfigError(f"procedure entry {item!r} has no kind")
    return d


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.reps is not None:
        cfg["replications"] = args.reps
    if args.gamma is not None:
        cfg["gamma"] = args.gamma
        cfg.pop("threshold", None)
    if args.threshold is not None:
        cfg["threshold"] = args.threshold
        cfg.pop("gamma", None)
    if args.out is not None:
        cfg["out"] = args.out
    if args.procedures:
        cfg["procedures"] = [s for s in args.procedures.split(",") if s]
    if args.criteria:
        cfg["criteria"] = [s for s in args.criteria.split(",") if s]
    if "seed" not in cfg or cfg["seed"] is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if int(cfg["replications"]) < 2:
        raise ConfigError("replications must be >= 2")
    cfg["replications"] = int(cfg["replications"])
    cfg["procedures"] = [_parse_procedure(p) for p in cfg["procedures"]]
    for p in cfg["procedures"]:
        if p["kind"] not in KINDS:
            raise ConfigError(f"unknown procedure {p['kind']!r}")
    bad = [c for c in cfg["criteria"] if c not in CRITERIA]
    if bad:
        raise ConfigError(f"unknown criterion {bad[0]!r}; expected one of {CRITERIA}")
    for key in ("gamma", "threshold"):
        if key in cfg and not float(cfg[key]) > 0:
            raise ConfigError(f"{key} must be positive")
    return cfg


LOCATION_KEYS = ("out", "cache", "workers")


def config_hash(cfg: dict) -> str:
    """Hash of the experiment settings; where results go and thread count do not count."""
    blob = json.dumps({k: v for k, v in cfg.items() if k not in LOCATION_KEYS},
                      sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header(cfg: dict, command: str) -> list:
    return [f"srdetect {__version__}", f"command={command}",
            f"config_hash={config_hash(cfg)}", f"seed={cfg['seed']}"]


# ----------------------------------------------------------------------------- helpers

class Context:
    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        try:
            self.model = model_from_config(cfg["model"])
        except ModelConfigError as exc:
            raise ConfigError(str(exc)) from None
        self.seed = cfg["seed"]
        self.reps = cfg["replications"]
        self.workers = int(cfg.get("workers", 1))
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.header = header(cfg, command)
        self._constants = None

    def constants(self) -> AsymptoticConstants:
        if self._constants is None:
            reps = int(self.cfg.get("constants_replications", 100_000))
            self._constants = cached_constants(self.model, reps, self.seed, self.cache_dir())
        return self._constants

    def cache_dir(self) -> Path:
        d = Path(self.cfg.get("cache", self.out / "cache"))
        d.mkdir(parents=True, exist_ok=True)
        return d

    def procedures(self) -> list:
        procs = []
        for d in self.cfg["procedures"]:
            d = dict(d)
            if d.get("r") == "star":
                d["r"] = self.constants().r_star
                d.setdefault("label", "sr_r(star)")
            try:
                procs.append(Procedure(**d))
            except UnknownProcedureError as exc:
                raise ConfigError(str(exc)) from None
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad procedure {d!r}: {exc}") from None
        return procs

    def threshold_for(self, proc: Procedure):
        """``(A, calibration or None)``; matched ARL unless a threshold is fixed."""
        if "threshold" in self.cfg:
            return float(self.cfg["threshold"]), None
        if "gamma" not in self.cfg:
            raise ConfigError("give either gamma or threshold")
        cal_cfg = self.cfg.get("calibration", {})
        zeta = None if self.model.arithmetic else self.constants().zeta
        cal = calibrate(proc, self.model, float(self.cfg["gamma"]),
                        tol=float(cal_cfg.get("tol", 0.02)),
                        replications=int(cal_cfg.get("replications", self.reps)),
                        seed=self.seed, zeta=zeta, workers=self.workers)
        return cal.threshold, cal


def cached_constants(model, replications, seed, cache_dir) -> AsymptoticConstants:
    """Constants for ``model``; the JSON document is cached under ``cache_dir``."""
    key = hashlib.sha256(f"{model.key}|{replications}|{seed}".encode()).hexdigest()[:16]
    path = Path(cache_dir) / f"constants_{key}.json"
    if path.exists():
        with open(path) as fh:
            doc = json.load(fh)
        return _constants_from_json(doc)
    c = estimate_constants(model, replications, seed)
    with open(path, "w") as fh:
        json.dump(_full_json(c), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return c


def _full_json(c: AsymptoticConstants) -> dict:
    doc = c.to_json()
    doc["C_r_full"] = {"r": c.c_table.r_grid.tolist(), "C": c.c_table.c_r.tolist(),
                       "se": c.c_table.c_r_se.tolist(), "C_inf": c.c_table.c_inf,
                       "C_inf_se": c.c_table.c_inf_se}
    return doc


def _constants_from_json(doc) -> AsymptoticConstants:
    full = doc["C_r_full"]
    table = CConstants(full["C_inf"], full["C_inf_se"], np.array(full["r"]), np.array(full["C"]),
                       np.array(full["se"]), doc["series_cap"], 0)
    return AsymptoticConstants(doc["model"], doc["kappa"], doc["kappa_se"], doc["zeta"], doc["zeta_se"],
                               doc["I"], doc["I_se"], doc["C_inf"], doc["C_inf_se"], doc["r_star"], table)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name).strip("_")


def _write_json(path, doc, hdr):
    doc = {"header": hdr, **doc}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return str(v)


def _row(oc: OperatingCharacteristics, status="ok") -> dict:
    d = oc.row()
    d["status"] = status
    d["flags"] = ";".join(oc.flags)
    return d


def _error_row(criterion, proc, model, A, exc) -> dict:
    return {"criterion": criterion, "procedure": proc, "model": model, "threshold": A,
            "estimate": "", "std_error": "", "replications": "", "censored_fraction": "",
            "status": f"error: {exc}", "flags": ""}


# ----------------------------------------------------------------------------- commands

def cmd_simulate(ctx: Context) -> int:
    sim = ctx.cfg.get("simulate", {})
    nu = sim.get("nu", math.inf)
    nu = math.inf if nu in (None, "inf", math.inf) else int(nu)
    runs = int(sim.get("runs", 1))
    cap = int(sim.get("cap", 100_000))
    A = ctx.cfg.get("threshold")
    if A is None:
        raise ConfigError("simulate needs a fixed threshold")
    A = float(A)
    summary = []
    for proc in ctx.procedures():
        for i in range(runs):
            r0 = None
            if proc.kind == "srp":
                r0 = solve_quasi_stationary(ctx.model, A).sample(Stream(ctx.seed, INIT, i))
            init = default_state(proc.kind, proc.r, proc.p, proc.pi, r0)
            stream = iter_stream(ctx.model, StreamSpec(nu, cap, stream_key(ctx.seed, PATH, i)))
            rows = trajectory(proc.kind, init, A, stream, cap)
            stopped = bool(rows and rows[-1][2])
            censored = int(not stopped)
            hdr = ctx.header + [f"procedure={proc.name}", f"threshold={A!r}", f"nu={nu}",
                                f"run={i}", f"censored={censored}"]
            write_trajectory_csv(ctx.out / f"trajectory_{_slug(proc.name)}_{i}.csv", rows, hdr)
            summary.append({"procedure": proc.name, "run": i, "nu": nu,
                            "stopping_time": rows[-1][0] if stopped else "",
                            "observed": len(rows), "censored": censored})
    with open(ctx.out / "simulate_summary.csv", "w", newline="") as fh:
        for line in ctx.header:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, ["procedure", "run", "nu", "stopping_time", "observed", "censored"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    return 0


def _evaluate_one(ctx, proc, A, criteria, rows, curves):
    m, seed, reps, w = ctx.model, ctx.seed, ctx.reps, ctx.workers
    runs = None
    arl = None

    def need_runs():
        nonlocal runs
        if runs is None:
            runs = spliced_runs(proc, A, m, reps, seed, workers=w)
        return runs

    for crit in criteria:
        try:
            if crit == "arl":
                oc = estimate_arl(proc, A, m, reps, seed, workers=w)
                arl = oc.estimate
            elif crit == "add0":
                oc = estimate_post_change_delay(proc, A, m, reps, seed, workers=w)
            elif crit == "sadd":
                grid = ctx.cfg.get("nu_grid")
                curve = estimate_delay_curve(proc, A, m, grid, reps, seed, workers=w)
                curves[proc.name] = curve
                oc = estimate_sadd(curve)
                oc.model = m.name
            elif crit == "riadd":
                oc = estimate_riadd(proc, A, m, runs=need_runs())
                arl = arl or oc.details["arl"][0]
            elif crit == "stadd":
                oc = estimate_stadd(proc, A, m, None, reps, seed, arl=arl, workers=w)
            elif crit in ("pfa", "add"):
                prior = ctx.cfg.get("prior", {})
                bc = estimate_bayes(proc, A, m, GeometricPrior(float(prior.get("pi", 0.0)),
                                                               float(prior.get("p", 0.01))),
                                    reps, seed, workers=w)
                oc = bc.pfa if crit == "pfa" else bc.add
            elif crit == "window_fa":
                win = ctx.cfg.get("window", {})
                k_grid = win.get("k_grid", [0, 10, 50, 100])
                oc = estimate_window_fa(proc, A, m, int(win.get("m", 10)), k_grid, reps, seed, workers=w)
            elif crit == "jb":
                if proc.kind not in ("sr", "sr_r"):
                    raise EstimationError("the lower bound is built from SR or SR-r runs")
                oc = lower_bound_jb(need_runs(), proc.r if proc.kind == "sr_r" else 0.0, A)
                oc.model = m.name
            rows.append(_row(oc))
        except (EstimationError, NonConvergenceError, ValueError, ArithmeticError) as exc:
            rows.append(_error_row(crit, proc.name, m.name, A, exc))
    return runs


def _write_rows(path, rows, hdr):
    write_characteristics_csv(path, rows, hdr, extra_fields=("status", "flags"))


def cmd_evaluate(ctx: Context) -> int:
    rows, curves, failed = [], {}, False
    for proc in ctx.procedures():
        try:
            A, _ = ctx.threshold_for(proc)
        except CalibrationError as exc:
            for crit in ctx.cfg["criteria"]:
                rows.append(_error_row(crit, proc.name, ctx.model.name, "", exc))
            continue
        _evaluate_one(ctx, proc, A, ctx.cfg["criteria"], rows, curves)
    _write_rows(ctx.out / "evaluate.csv", rows, ctx.header)
    for name, curve in curves.items():
        curve.to_csv(ctx.out / f"delay_curve_{_slug(name)}.csv", ctx.header + [f"procedure={name}"])
    failed = any(str(r["status"]) != "ok" for r in rows)
    return 1 if failed else 0


def cmd_compare(ctx: Context) -> int:
    procs = ctx.procedures()
    if len(procs) < 2:
        raise ConfigError("compare needs at least two procedures")
    criteria = ["arl", "sadd", "riadd", "stadd"]
    table, rows, curves = [], [], {}
    for proc in procs:
        try:
            A, _ = ctx.threshold_for(proc)
        except CalibrationError as exc:
            rows.append(_error_row("calibration", proc.name, ctx.model.name, "", exc))
            table.append({"procedure": proc.name, "threshold": "", "status": f"error: {exc}"})
            continue
        before = len(rows)
        runs = _evaluate_one(ctx, proc, A, criteria, rows, curves)
        entry = {"procedure": proc.name, "threshold": A, "status": "ok"}
        for r in rows[before:]:
            if r["status"] != "ok":
                entry["status"] = r["status"]
                continue
            entry[r["criterion"]] = r["estimate"]
            entry[r["criterion"] + "_se"] = r["std_error"]
        if proc.kind in ("sr", "sr_r"):
            r = proc.r if proc.kind == "sr_r" else 0.0
            runs = runs or spliced_runs(proc, A, ctx.model, ctx.reps, ctx.seed, workers=ctx.workers)
            jb = lower_bound_jb(runs, r, A)
            entry["jb"], entry["jb_se"] = jb.estimate, jb.std_error
        table.append(entry)
    table.sort(key=lambda e: (e.get("sadd", math.inf), e["procedure"]))
    for rank, e in enumerate(table, start=1):
        e["rank"] = rank
    fields = ["rank", "procedure", "threshold", "arl", "arl_se", "sadd", "sadd_se", "riadd", "riadd_se",
              "stadd", "stadd_se", "jb", "jb_se", "status"]
    with open(ctx.out / "compare.csv", "w", newline="") as fh:
        for line in ctx.header:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for e in table:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in e.items() if k in fields})
    _write_rows(ctx.out / "compare_rows.csv", rows, ctx.header)
    for name, curve in curves.items():
        curve.to_csv(ctx.out / f"delay_curve_{_slug(name)}.csv", ctx.header + [f"procedure={name}"])
    return 1 if any(e["status"] != "ok" for e in table) else 0


def cmd_calibrate(ctx: Context) -> int:
    if "gamma" not in ctx.cfg:
        raise ConfigError("calibrate needs gamma")
    status = 0
    with open(ctx.out / "calibration.csv", "w", newline="") as fh:
        for line in ctx.header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["procedure", "gamma", "threshold", "arl", "arl_se", "probes", "status"])
        for proc in ctx.procedures():
            try:
                A, cal = ctx.threshold_for(proc)
            except CalibrationError as exc:
                w.writerow([proc.name, repr(float(ctx.cfg["gamma"])), "", "", "", "", f"error: {exc}"])
                status = 1
                continue
            w.writerow([proc.name, repr(float(ctx.cfg["gamma"])), repr(float(A)), repr(float(cal.arl.estimate)),
                        repr(float(cal.arl.std_error)), len(cal.history), "ok"])
    return status


def cmd_constants(ctx: Context) -> int:
    c = ctx.constants()
    _write_json(ctx.out / "constants.json", c.to_json(), ctx.header)
    return 0


def cmd_qsd(ctx: Context) -> int:
    q = ctx.cfg.get("qsd", {})
    kind = q.get("kind", "quasi-stationary")
    grid = int(q.get("grid_size", 2048))
    if kind == "stationary":
        dist = solve_stationary(ctx.model, grid)
    elif kind == "quasi-stationary":
        A = ctx.cfg.get("threshold")
        if A is None:
            raise ConfigError("the quasi-stationary law needs a threshold")
        dist = solve_quasi_stationary(ctx.model, float(A), grid)
    else:
        raise ConfigError(f"unknown qsd kind {kind!r}")
    path = ctx.out / f"{kind}.csv"
    dist.to_csv(path)
    with open(path) as fh:
        body = fh.read()
    with open(path, "w") as fh:
        for line in ctx.header:
            fh.write(f"# {line}\n")
        fh.write(body)
    return 0


COMMANDS = {"simulate": cmd_simulate, "evaluate": cmd_evaluate, "compare": cmd_compare,
            "calibrate": cmd_calibrate, "constants": cmd_constants, "qsd": cmd_qsd}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srdetect", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"srdetect {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int, help="Monte Carlo replications")
        sp.add_argument("--gamma", type=float, help="target ARL (matched-ARL mode)")
        sp.add_argument("--threshold", type=float, help="fixed threshold A")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--procedures", help="comma list, e.g. sr,srp,sr_r:star,cusum")
        sp.add_argument("--criteria", help=f"comma list from {','.join(CRITERIA)}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        ctx = Context(cfg, args.command)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        print(f"srdetect: config error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, NonConvergenceError, CalibrationError, ArithmeticModelError,
            ArithmeticError) as exc:
        print(f"srdetect: estimation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
