"""
Command-line driver: ``qedsim {simulate,verify,limit,sweep}``.

Model and experiment parameters come from a single JSON config; flags set
only the seed, worker count, output root and experiment selection.  Every
run writes into a fresh directory named by the config hash and seed.

Exit codes: 0 pass, 1 some experiment failed, 2 inconclusive verdicts
present (none failed), 64 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import DiffusionSpec, erlang_a_limit, fourth_rep_limit, ou_exact, reflected_limit
from .errors import ConfigError, DomainError
from .experiments import EXPERIMENTS, resolve_params, run_experiment
from .harness import PathAt, run_ensemble
from .maps import DriftFn, solve_integral_rep, solve_reflected_rep
from .models import ModelSpec, audit, simulate, write_event_log
from .paths import PiecewiseLinearPath
from .stats import EnsembleStats

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 64
SEED_LIMIT = 2**64


class UsageError(Exception):
    """Invalid command-line usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="qedsim", description="Many-server queue simulation and limit-theorem verification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("simulate", "simulate queue paths and write event logs"),
        ("verify", "run named verification experiments"),
        ("limit", "simulate a limit diffusion or solve a path map"),
        ("sweep", "scaled-state statistics over a parameter sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--out", type=Path, default=Path("runs"), help="output root directory")
        if name == "verify":
            p.add_argument("--experiments", help="comma-separated experiment ids")
            p.add_argument("--all", action="store_true", help="run every experiment")
    return parser


# ---------------------------------------------------------------------------
# config and run directory


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError("--config", str(e)) from None
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"invalid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("--config", "top level must be an object")
    return cfg


def _seed(args, cfg, required):
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        if required:
            raise UsageError("a seed is required (--seed or \"seed\" in the config)")
        seed = 0
    if not isinstance(seed, int) or not 0 <= seed < SEED_LIMIT:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    return seed


def config_hash(resolved):
    text = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:10]


def make_run_dir(root, command, resolved):
    """Fresh directory ``<command>-<hash>-s<seed>``; a numeric suffix avoids overwriting."""
    base = f"{command}-{config_hash(resolved)}-s{resolved['seed']}"
    root.mkdir(parents=True, exist_ok=True)
    path = root / base
    k = 1
    while path.exists():
        path = root / f"{base}-{k}"
        k += 1
    (path / "paths").mkdir(parents=True)
    with open(path / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _t_grid(cfg, T):
    grid = cfg.get("t_grid")
    if grid is None:
        return list(np.linspace(0.0, T, 11))
    grid = [float(t) for t in grid]
    if any(t < 0 or t > T for t in grid):
        raise ConfigError("t_grid", "times must lie in [0, T]")
    return grid


def _positive(cfg, key, default, kind=float):
    value = cfg.get(key, default)
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(key, "must be a number") from None
    if not value > 0:
        raise ConfigError(key, "must be positive")
    return value


def _model(cfg):
    if "model" not in cfg:
        raise ConfigError("model", "missing")
    try:
        return ModelSpec.from_config(cfg["model"])
    except ConfigError as e:
        raise ConfigError(f"model.{e.field}", e.message) from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg):
    seed = _seed(args, cfg, required=False)
    spec = _model(cfg)
    T = _positive(cfg, "T", 1.0)
    R = _positive(cfg, "R", 1, int)
    construction = cfg.get("construction", "time_change")
    grid = _t_grid(cfg, T)
    resolved = {"command": "simulate", "seed": seed, "model": spec.to_config(), "T": T, "R": R,
                "construction": construction, "t_grid": grid}
    run = make_run_dir(args.out, "simulate", resolved)
    stats = EnsembleStats(grid)
    audits = []
    for rep in range(R):
        r = simulate(spec, T, seed, rep, construction)
        with open(run / "paths" / f"events_rep{rep:04d}.csv", "w", newline="") as fh:
            write_event_log(r, fh)
        a = audit(r)
        audits.append({"replication": rep, "flow_residual": a["flow_residual"],
                       "violations": ";".join(a["violations"])})
        stats.add(np.asarray(r.Q.eval(np.asarray(grid)), dtype=float)[None, :])
    _write_rows(run / "summary.csv", stats.summary_rows())
    _write_rows(run / "audit.csv", audits)
    print(run)
    return EXIT_FAIL if any(a["violations"] for a in audits) else EXIT_PASS


def _selected(args, cfg):
    if args.all:
        return list(EXPERIMENTS)
    if args.experiments is not None:
        names = [s.strip() for s in args.experiments.split(",") if s.strip()]
    else:
        names = list(cfg.get("experiments", {}))
    if not names:
        raise UsageError("no experiments selected (use --experiments LIST or --all)")
    for name in names:
        if name not in EXPERIMENTS:
            raise ConfigError(f"experiments.{name}", "unknown experiment")
    # registry order, so a reloaded resolved config reruns identically
    return [name for name in EXPERIMENTS if name in names]


def cmd_verify(args, cfg):
    seed = _seed(args, cfg, required=True)
    names = _selected(args, cfg)
    overrides = cfg.get("experiments", {})
    if not isinstance(overrides, dict):
        raise ConfigError("experiments", "must map experiment ids to parameter overrides")
    params = {name: resolve_params(name, overrides.get(name)) for name in names}
    resolved = {"command": "verify", "seed": seed, "experiments": params}
    run = make_run_dir(args.out, "verify", resolved)
    verdicts = []
    with open(run / "verdicts.jsonl", "w") as fh:
        for name in names:
            v = run_experiment(name, params[name], seed, args.workers)
            verdicts.append(v)
            fh.write(v.to_json() + "\n")
            fh.flush()
            print(f"{v.status.upper():12s} {name:20s} statistic={v.statistic:.6g} "
                  f"threshold={v.threshold:.6g} runtime={v.runtime_s:.1f}s")
    rows = []
    for v in verdicts:
        rows.append({"kind": "experiment", "experiment": v.experiment, "name": v.experiment,
                     "statistic": float(v.statistic), "threshold": float(v.threshold),
                     "status": v.status, "runtime_s": round(v.runtime_s, 3)})
        for c in v.checks:
            rows.append({"kind": "check", "experiment": v.experiment, "name": c.name,
                         "statistic": float(c.statistic), "threshold": float(c.threshold),
                         "status": "pass" if c.passed else "fail", "runtime_s": ""})
        for stage, secs in v.check_runtimes.items():
            rows.append({"kind": "stage", "experiment": v.experiment, "name": stage, "statistic": "",
                         "threshold": "", "status": "", "runtime_s": round(secs, 3)})
    _write_rows(run / "summary.csv", rows)
    print(run)
    if any(v.status == "fail" for v in verdicts):
        return EXIT_FAIL
    if any(v.status == "inconclusive" for v in verdicts):
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def _write_ensemble(path, ens):
    """Long-format ``replication,t,X`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "t", "X"])
        for rep, row in enumerate(ens.X):
            for t, x in zip(ens.t, row):
                w.writerow([rep, repr(float(t)), repr(float(x))])


_DIFFUSION_KEYS = ("mu", "theta", "beta", "kappa", "sigma2", "x0", "x0_var", "dt", "T")


def _diffusion_spec(block):
    kw = {k: block[k] for k in _DIFFUSION_KEYS if k in block}
    if "kappa" in kw and kw["kappa"] in ("inf", None):
        kw["kappa"] = math.inf
    if "mu" not in kw:
        raise ConfigError("limit.mu", "missing")
    try:
        return DiffusionSpec(**kw)
    except DomainError as e:
        raise ConfigError("limit", str(e)) from None


def cmd_limit(args, cfg):
    seed = _seed(args, cfg, required=False)
    block = dict(cfg.get("limit", {}))
    kind = block.get("kind")
    if kind is None:
        raise ConfigError("limit.kind", "missing")
    resolved = {"command": "limit", "seed": seed, "limit": block}
    if kind in ("ou", "erlang_a", "reflected"):
        spec = _diffusion_spec(block)
        R = _positive(block, "R", 1000, int)
        grid = _t_grid(block, spec.T)
        run = make_run_dir(args.out, "limit", resolved)
        fn = {"ou": ou_exact, "erlang_a": erlang_a_limit, "reflected": reflected_limit}[kind]
        try:
            ens = fn(spec, seed, R, np.asarray(grid))
        except DomainError as e:
            raise ConfigError("limit", str(e)) from None
        _write_rows(run / "summary.csv", EnsembleStats(ens.t, ens.X).summary_rows())
        _write_ensemble(run / "paths" / "ensemble.csv", ens)
    elif kind == "fourth_rep":
        R = _positive(block, "R", 1000, int)
        T = _positive(block, "T", 1.0)
        dt = _positive(block, "dt", 0.01)
        run = make_run_dir(args.out, "limit", resolved)
        ens = fourth_rep_limit(float(block.get("q0", 1.0)), float(block.get("mu", 1.0)),
                               int(block.get("n_emp", 10_000)), seed, R, dt, T)
        _write_rows(run / "summary.csv", EnsembleStats(ens.t, ens.X).summary_rows())
        _write_ensemble(run / "paths" / "ensemble.csv", ens)
    elif kind in ("integral_map", "reflected_map"):
        T = _positive(block, "T", 1.0)
        dt = _positive(block, "dt", 0.001)
        mu = _positive(block, "mu", 1.0)
        theta = float(block.get("theta", mu))
        b = float(block.get("b", 1.0))
        y = PiecewiseLinearPath.linear(float(block.get("y_slope", 0.0)), T)
        h = DriftFn.piecewise(mu, theta)
        run = make_run_dir(args.out, "limit", resolved)
        if kind == "integral_map":
            x = solve_integral_rep(b, y, h, dt, T)
            rows = [{"t": float(t), "x": float(v)} for t, v in zip(x.t, x.x)]
            if block.get("y_slope", 0.0) == 0.0 and theta == mu:
                exact = b * np.exp(-mu * x.t)
                for row, e in zip(rows, exact):
                    row["exact"] = float(e)
                summary = [{"max_abs_error": float(np.max(np.abs(x.x - exact))), "dt": dt}]
            else:
                summary = [{"final": float(x.x[-1]), "dt": dt}]
        else:
            kappa = float(block.get("kappa", 1.0))
            try:
                reg = solve_reflected_rep(b, y, h, kappa, dt, T)
            except DomainError as e:
                raise ConfigError("limit.b", str(e)) from None
            x, u = reg.content, reg.regulator
            rows = [{"t": float(t), "x": float(v), "u": float(w)} for t, v, w in zip(x.t, x.x, u.x)]
            resid = float(np.sum(np.where(x.x[1:] < kappa - 1e-12, np.diff(u.x), 0.0)))
            summary = [{"max_x": float(np.max(x.x)), "final_regulator": float(u.x[-1]),
                        "complementarity_residual": resid, "dt": dt}]
        _write_rows(run / "paths" / "solution.csv", rows)
        _write_rows(run / "summary.csv", summary)
    else:
        raise ConfigError("limit.kind", f"unknown kind {kind!r}")
    print(run)
    return EXIT_PASS


_SWEEPABLE = ("n", "beta", "theta", "kappa", "mu")


def cmd_sweep(args, cfg):
    seed = _seed(args, cfg, required=False)
    if "model" not in cfg:
        raise ConfigError("model", "missing")
    sweep = cfg.get("sweep")
    if not isinstance(sweep, dict) or "param" not in sweep or "values" not in sweep:
        raise ConfigError("sweep", "needs \"param\" and \"values\"")
    param = sweep["param"]
    if param not in _SWEEPABLE:
        raise ConfigError("sweep.param", f"must be one of {', '.join(_SWEEPABLE)}")
    T = _positive(cfg, "T", 1.0)
    R = _positive(cfg, "R", 100, int)
    grid = _t_grid(cfg, T)
    construction = cfg.get("construction", "time_change")
    specs = []
    for value in sweep["values"]:
        model = dict(cfg["model"], **{param: value})
        if param in ("beta", "n", "mu"):
            model.pop("lambda_n", None)
        if param == "kappa":
            model.pop("m_n", None)
        specs.append((value, _model({"model": model})))
    resolved = {"command": "sweep", "seed": seed, "model": cfg["model"], "sweep": sweep, "T": T, "R": R,
                "t_grid": grid, "construction": construction}
    run = make_run_dir(args.out, "sweep", resolved)
    rows = []
    for value, spec in specs:
        ext = {"X": (_Scaled(tuple(grid), spec.n), grid)}
        st = run_ensemble(spec, R, T, ext, seed, args.workers, construction)["X"]
        for row in st.summary_rows():
            rows.append({param: value, **row})
    _write_rows(run / "summary.csv", rows)
    print(run)
    return EXIT_PASS


@dataclass(frozen=True)
class _Scaled:
    """``(Q - n)/sqrt(n)`` at fixed times."""

    t_grid: tuple
    n: int

    def __call__(self, r):
        return (PathAt(self.t_grid)(r) - self.n) / math.sqrt(self.n)


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "limit": cmd_limit, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg = _load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"qedsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"qedsim: config error at {e.field}: {e.message}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
