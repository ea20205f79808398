"""Command-line front end.

Usage::

    ttsem <command> [options]

Commands: ``rank-table``, ``poisson``, ``cdr``, ``semilinear``,
``convergence``, ``custom``.  Options may also come from an INI file
(``--config``) with a ``[run]`` section; command-line flags win.  The
``custom`` command reads its problem from a ``[problem]`` section.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .driver import CSV_FIELDS, FORMATS, RunOptions, convergence_study, rank_study, run_experiment, write_csv
from .exceptions import InputError
from .plot import write_loglog
from .problems import CATALOG, KINDS, RANK_STUDY, custom_problem, get_problem

COMMANDS = ("rank-table", "poisson", "cdr", "semilinear", "convergence", "custom")
OUTDIR_ENV = "TTSEM_OUTDIR"
DEFAULT_GRIDS = {
    "rank-table": [17, 33],
    "poisson": [8, 16, 32],
    "cdr": [8, 16, 32],
    "semilinear": [8, 16],
    "convergence": [8, 16, 32],
    "custom": [8, 16],
}

RUN_KEYS = {
    "grids", "format", "tt_tol", "solver_tol", "rmax", "seed", "outdir", "plot",
    "problem", "enrichment_rank", "max_sweeps", "backtracking", "round_terms",
}
PROBLEM_KEYS = {"kappa", "bx", "by", "bz", "c", "f", "g", "u0", "exact", "kind", "final_time"}

log = logging.getLogger("ttsem")


class UsageError(Exception):
    """Bad command line or configuration (exit status 2)."""


@dataclass
class RunConfig:
    command: str
    grids: list = field(default_factory=list)
    format: str = "tt"
    tt_tol: float | None = None
    solver_tol: float = 1e-8
    rmax: int | None = None
    seed: int = 0
    outdir: Path = Path("results")
    plot: bool = True
    problem: str = "poisson"
    enrichment_rank: int = 3
    max_sweeps: int = 40
    backtracking: bool = False
    round_terms: bool = False
    problem_fields: dict = field(default_factory=dict)
    verbose: bool = False

    def run_options(self, progress=None) -> RunOptions:
        return RunOptions(
            tt_tol=self.tt_tol if self.tt_tol is not None else 1e-10,
            solver_tol=self.solver_tol,
            rmax=self.rmax,
            seed=self.seed,
            enrichment_rank=self.enrichment_rank,
            max_sweeps=self.max_sweeps,
            backtracking=self.backtracking,
            round_terms=self.round_terms,
            progress=progress,
        )


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ttsem",
        description="Tensor-train space-time spectral-element experiments.",
        epilog=f"The default output directory is ${OUTDIR_ENV} or ./results.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS, help="experiment to run")
    p.add_argument("--config", help="INI file with a [run] section (and [problem] for custom)")
    p.add_argument("--grids", help="comma-separated element counts per axis, e.g. 8,16,32")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--tt-tol", type=float, dest="tt_tol")
    p.add_argument("--solver-tol", type=float, dest="solver_tol")
    p.add_argument("--rmax", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", "-o")
    p.add_argument("--problem", help="catalog problem for the convergence command")
    p.add_argument("--plot", dest="plot", action="store_const", const=True, help="write an SVG plot (default)")
    p.add_argument("--no-plot", dest="plot", action="store_const", const=False)
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def _parse_grids(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        vals = list(text)
    else:
        try:
            vals = [int(v) for v in str(text).replace(" ", "").split(",") if v]
        except ValueError:
            raise UsageError(f"grids must be comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError("at least one grid size is required")
    if any(v < 2 for v in vals):
        raise UsageError("grid sizes must be >= 2")
    return vals


def _parse_bool(key, text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{key} must be a boolean, got {text!r}")


def _read_config(path) -> tuple[dict, dict]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from None
    for section in cp.sections():
        if section not in ("run", "problem"):
            raise UsageError(f"unknown config section [{section}]")
    run, prob = {}, {}
    if cp.has_section("run"):
        for key, val in cp.items("run"):
            k = key.replace("-", "_")
            if k not in RUN_KEYS:
                raise UsageError(f"unknown config key '{key}' in [run]")
            run[k] = val
    if cp.has_section("problem"):
        for key, val in cp.items("problem"):
            k = key.replace("-", "_")
            if k not in PROBLEM_KEYS:
                raise UsageError(f"unknown config key '{key}' in [problem]")
            prob[k] = val
    return run, prob


def _coerce(key: str, val):
    try:
        if key == "grids":
            return _parse_grids(val)
        if key in ("tt_tol", "solver_tol"):
            v = float(val)
            if not 0 < v < 1:
                raise UsageError(f"{key} must lie in (0, 1), got {val}")
            return v
        if key in ("rmax", "seed", "enrichment_rank", "max_sweeps"):
            v = int(val)
            if key == "rmax" and v < 1:
                raise UsageError("rmax must be >= 1")
            if key == "max_sweeps" and v < 1:
                raise UsageError("max_sweeps must be >= 1")
            if key in ("seed", "enrichment_rank") and v < 0:
                raise UsageError(f"{key} must be >= 0")
            return v
        if key in ("plot", "backtracking", "round_terms"):
            return val if isinstance(val, bool) else _parse_bool(key, val)
        if key == "format":
            if val not in FORMATS:
                raise UsageError(f"format must be one of {', '.join(FORMATS)}")
            return val
        if key == "problem":
            if val not in CATALOG:
                raise UsageError(f"unknown problem {val!r}; choose from {', '.join(sorted(CATALOG))}")
            return val
        if key == "outdir":
            return Path(val)
    except ValueError:
        raise UsageError(f"invalid value for {key}: {val!r}") from None
    return val


def parse_config(argv=None, environ=None) -> RunConfig:
    """Merge defaults, the optional config file and command-line flags."""
    environ = os.environ if environ is None else environ
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        raise UsageError(_parser().format_usage().strip())
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise UsageError("invalid command line") from None
    values: dict = {}
    prob_fields: dict = {}
    if ns.config:
        values, prob_fields = _read_config(ns.config)
    for key in ("grids", "format", "tt_tol", "solver_tol", "rmax", "seed", "outdir", "problem", "plot"):
        v = getattr(ns, key)
        if v is not None:
            values[key] = v
    cfg = RunConfig(command=ns.command, outdir=Path(environ.get(OUTDIR_ENV) or "results"))
    for key, val in values.items():
        setattr(cfg, key, _coerce(key, val))
    if not cfg.grids:
        cfg.grids = list(DEFAULT_GRIDS[cfg.command])
    if cfg.command == "convergence" and len(cfg.grids) < 2:
        raise UsageError("convergence needs at least two grids")
    if cfg.command == "custom":
        if not prob_fields:
            raise UsageError("custom needs a [problem] section in the config file")
        kind = prob_fields.get("kind", "linear-cdr")
        if kind not in KINDS:
            raise UsageError(f"unknown problem kind {kind!r}")
    cfg.problem_fields = prob_fields
    cfg.verbose = bool(ns.verbose)
    return cfg


class ProgressLog:
    """JSON-lines sink for progress records."""

    def __init__(self, path: Path):
        self.fh = path.open("w")
        self.t0 = time.perf_counter()

    def __call__(self, record: dict) -> None:
        rec = {"elapsed": round(time.perf_counter() - self.t0, 3)}
        rec.update(record)
        self.fh.write(json.dumps(rec, default=_json_default, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _json_default(obj):
    try:
        return float(obj)
    except (TypeError, ValueError):
        return str(obj)


def _custom(cfg: RunConfig):
    fields = dict(cfg.problem_fields)
    kind = fields.pop("kind", "linear-cdr")
    try:
        final_time = float(fields.pop("final_time", 1.0))
    except ValueError:
        raise UsageError("final_time must be a number") from None
    try:
        return custom_problem(fields, kind=kind, final_time=final_time)
    except InputError as exc:
        raise UsageError(str(exc)) from None


def dispatch(cfg: RunConfig) -> int:
    """Run the configured command; returns the process exit status."""
    try:
        cfg.outdir.mkdir(parents=True, exist_ok=True)
        progress = ProgressLog(cfg.outdir / f"{cfg.command}.jsonl")
    except OSError as exc:
        print(f"ttsem: cannot write to {cfg.outdir}: {exc}", file=sys.stderr)
        return 1
    status = 0
    try:
        progress({"stage": "start", "command": cfg.command, "grids": cfg.grids, "format": cfg.format,
                  "tt_tol": cfg.tt_tol, "solver_tol": cfg.solver_tol, "seed": cfg.seed})
        csv_path = cfg.outdir / f"{cfg.command}.csv"
        if cfg.command == "rank-table":
            # the reference rows always come first; an explicit tolerance adds
            # one row per coefficient unless that (coefficient, tol) pair is present
            coefs = list(RANK_STUDY)
            if cfg.tt_tol is not None:
                seen = {(label, tol) for label, _, tol in coefs}
                for label, func, _ in RANK_STUDY:
                    if (label, cfg.tt_tol) not in seen:
                        seen.add((label, cfg.tt_tol))
                        coefs.append((label, func, cfg.tt_tol))
            rows = rank_study(coefs, cfg.grids, seed=cfg.seed, progress=progress)
            fields = ["kappa", "tt_tol", "kappa_ranks"] + [f"op_ranks_N{n}" for n in cfg.grids]
            write_csv(csv_path, rows, fields)
            if not all(r[f"converged_N{n}"] for r in rows for n in cfg.grids):
                status = 1
        else:
            if cfg.command == "custom":
                problem = _custom(cfg)
            elif cfg.command == "convergence":
                problem = get_problem(cfg.problem)
            else:
                problem = get_problem(cfg.command)
            opts = cfg.run_options(progress)
            if len(cfg.grids) >= 2 and problem.exact is not None:
                table = convergence_study(problem, cfg.grids, cfg.format, opts)
                reports, rows = table.reports, table.rows()
            else:
                reports = [run_experiment(problem, n, cfg.format, opts) for n in cfg.grids]
                rows = [r.row() for r in reports]
            for r in rows:
                r["experiment"] = cfg.command if cfg.command != "convergence" else f"convergence:{cfg.problem}"
            write_csv(csv_path, rows, CSV_FIELDS)
            if not all(r.ok for r in reports):
                status = 1
                for r in reports:
                    for w in r.warnings:
                        print(f"ttsem: warning (N={r.N}): {w}", file=sys.stderr)
                    if not r.converged and not r.warnings:
                        print(f"ttsem: warning (N={r.N}): solver stopped at residual {r.residual:.3e}", file=sys.stderr)
            if cfg.plot:
                try:
                    write_loglog(cfg.outdir / f"{cfg.command}.svg",
                                 {cfg.format: ([r.N for r in reports], [r.error for r in reports])},
                                 title=f"{rows[0]['experiment']} ({cfg.format})")
                except OSError as exc:
                    print(f"ttsem: could not write plot: {exc}", file=sys.stderr)
        progress({"stage": "done", "status": status})
    except OSError as exc:
        print(f"ttsem: I/O failure: {exc}", file=sys.stderr)
        status = 1
    except InputError as exc:
        print(f"ttsem: {exc}", file=sys.stderr)
        status = 2
    finally:
        progress.close()
    return status


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"ttsem: {exc}" if not str(exc).startswith("usage:") else str(exc), file=sys.stderr)
        if str(exc).startswith("usage:"):
            print("commands: " + ", ".join(COMMANDS), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if cfg.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
