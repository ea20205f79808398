"""Experiment orchestration: solve a catalog problem on a grid in one format,
measure the discrete L2 error, and run convergence and rank studies."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cross import cross_on_grid
from .exceptions import CapacityError, InputError, SolverError
from .problems import RANK_STUDY, ProblemSpec
from .quantize import compression_ratio, dequantize, quantization_plan, quantize
from .reference import DEFAULT_CAP, assemble_full_system, solve_full, solve_full_semilinear
from .sem import (
    AssemblyOptions,
    Grid,
    assemble_operator,
    build_boundary_lift,
    assemble_boundary_term,
    build_load_tt,
    build_operator_tt,
    coefficient_trains,
    interior_mass_operator,
    local_matrices,
    assemble_global_1d,
)
from .solve import SemilinearSystem, SolverOptions, als_solve, newton_solve
from .tt import TTVector, tt_axpy, tt_round, ttmat_apply

log = logging.getLogger(__name__)

FORMATS = ("full", "tt", "qtt")
CSV_FIELDS = ["experiment", "N", "format", "tt_tol", "solver_tol", "error", "order", "max_rank", "compression", "seconds"]
CSV_VERSION = 1


@dataclass
class RunOptions:
    tt_tol: float = 1e-10
    solver_tol: float = 1e-8
    rmax: int | None = None
    seed: int = 0
    cross_tol: float | None = None
    round_terms: bool = False
    enrichment_rank: int = 3
    max_sweeps: int = 40
    max_newton: int = 20
    backtracking: bool = False
    cap: int = DEFAULT_CAP
    progress: Callable[[dict], None] | None = None

    def assembly(self) -> AssemblyOptions:
        return AssemblyOptions(
            tt_tol=self.tt_tol, rmax=None, cross_tol=self.cross_tol, seed=self.seed, round_terms=self.round_terms
        )

    def solver(self) -> SolverOptions:
        return SolverOptions(
            solver_tol=self.solver_tol,
            tt_tol=self.tt_tol,
            rmax=self.rmax,
            max_sweeps=self.max_sweeps,
            enrichment_rank=self.enrichment_rank,
            seed=self.seed,
            max_newton=self.max_newton,
            backtracking=self.backtracking,
            progress=self.progress,
        )


@dataclass
class SolveReport:
    experiment: str
    N: int
    format: str
    tt_tol: float
    solver_tol: float
    error: float = float("nan")
    operator_ranks: list = field(default_factory=list)
    solution_ranks: list = field(default_factory=list)
    compression: float = float("nan")
    seconds: float = 0.0
    sweeps: int = 0
    newton_iterations: int = 0
    residual: float = float("nan")
    converged: bool = True
    warnings: list = field(default_factory=list)
    failed_stage: str | None = None
    solution: object = None

    @property
    def max_rank(self) -> int | None:
        ranks = list(self.solution_ranks) + list(self.operator_ranks)
        return max(ranks) if ranks else None

    @property
    def ok(self) -> bool:
        return self.failed_stage is None and self.converged and not self.warnings

    def row(self, order: float | None = None) -> dict:
        return {
            "experiment": self.experiment,
            "N": self.N,
            "format": self.format,
            "tt_tol": f"{self.tt_tol:.3g}",
            "solver_tol": f"{self.solver_tol:.3g}",
            "error": f"{self.error:.10e}" if np.isfinite(self.error) else "",
            "order": "" if order is None or not np.isfinite(order) else f"{order:.4f}",
            "max_rank": "" if self.max_rank is None else self.max_rank,
            "compression": "" if not np.isfinite(self.compression) else f"{self.compression:.6g}",
            "seconds": f"{self.seconds:.3f}",
        }


def make_grid(problem: ProblemSpec, n_elements: int) -> Grid:
    if n_elements < 2:
        raise InputError("grids need at least 2 elements per axis")
    return Grid(int(n_elements), problem.grid_bounds(), problem.time_dependent)


# --- error measurement --------------------------------------------------------

def compute_l2_error(u_h: TTVector, u_exact, grid: Grid, mass=None, tol: float = 1e-12, seed: int = 0) -> float:
    """Discrete ``L2`` norm ``sqrt(e^T M e)`` of ``e = u_h - I_h u_exact`` on interior nodes."""
    if u_h.mode_sizes != list(grid.interior_shape):
        raise InputError("solution train does not live on the interior grid")
    mass = mass if mass is not None else interior_mass_operator(grid)
    ex = cross_on_grid(u_exact, grid, tol=tol, seed=seed, interior=True).train
    e = tt_axpy(-1.0, ex, u_h)
    val = ttmat_apply(mass, e).dot(e)
    return float(np.sqrt(max(val, 0.0)))


def _interior_mass_factors(grid: Grid) -> list[np.ndarray]:
    out = []
    for k in range(grid.d):
        m = assemble_global_1d(local_matrices(grid.spacing(k)).mass, grid.n_elements)
        ii = grid.interior(k)
        out.append(m[np.ix_(ii, ii)])
    return out


def dense_l2_error(u_h: np.ndarray, u_exact, grid: Grid) -> float:
    """Full-grid counterpart of :func:`compute_l2_error` with exact nodal interpolation."""
    shape = grid.interior_shape
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, grid.d)
    c = grid.coordinates(idx, interior=True)
    ex = np.asarray(u_exact(c.get("t", np.zeros(idx.shape[0])), c["x"], c["y"], c["z"]), dtype=float)
    e = (np.asarray(u_h, dtype=float).ravel() - np.broadcast_to(ex, (idx.shape[0],))).reshape(shape)
    me = e
    for k, m in enumerate(_interior_mass_factors(grid)):
        me = np.moveaxis(np.tensordot(m, me, axes=(1, k)), 0, k)
    return float(np.sqrt(max(np.sum(e * me), 0.0)))


# --- assembly in train format -----------------------------------------------------

@dataclass
class TTSystem:
    grid: Grid
    operator: object
    boundary_map: object
    mass: object
    load: TTVector
    boundary_term: TTVector
    rhs: TTVector
    warnings: list = field(default_factory=list)


def build_tt_system(problem: ProblemSpec, grid: Grid, opts: RunOptions) -> TTSystem:
    ao = opts.assembly()
    coef = coefficient_trains(problem, grid, ao)
    ops = build_operator_tt(problem, grid, ao, coef)
    load = build_load_tt(problem, grid, ao)
    has_bd = problem.boundary is not None or (grid.time_dependent and problem.initial is not None)
    if has_bd:
        bterm = assemble_boundary_term(ops, build_boundary_lift(problem, grid, ao), grid, ao)
    else:
        bterm = TTVector.zeros(grid.interior_shape)
    rhs = tt_round(tt_axpy(-1.0, bterm, load), ao.tt_tol)
    return TTSystem(grid, ops.interior, ops.boundary_map, interior_mass_operator(grid), load, bterm, rhs, coef["warnings"])


# --- experiments --------------------------------------------------------------------

def run_experiment(problem: ProblemSpec, n_elements: int, fmt: str = "tt", opts: RunOptions | None = None) -> SolveReport:
    """Assemble, solve and measure ``problem`` on an ``n_elements`` grid."""
    opts = opts or RunOptions()
    if fmt not in FORMATS:
        raise InputError(f"format must be one of {FORMATS}, got {fmt!r}")
    grid = make_grid(problem, n_elements)
    rep = SolveReport(problem.name, grid.n_elements, fmt, opts.tt_tol, opts.solver_tol)
    t0 = time.perf_counter()
    stage = "assembly"
    try:
        if fmt == "full":
            stage = "assembly"
            system = assemble_full_system(problem, grid, cap=opts.cap, with_mass=problem.kind == "semilinear")
            stage = "solve"
            if problem.kind == "semilinear":
                u, hist = solve_full_semilinear(system, tol=min(opts.solver_tol, 1e-10))
                rep.newton_iterations = len(hist) - 1
                rep.residual = hist[-1]
            else:
                u = solve_full(system)
                rep.residual = float(np.linalg.norm(system.matrix @ u - system.rhs) / max(np.linalg.norm(system.rhs), 1e-300))
            rep.compression = 1.0
            rep.solution = u
            stage = "error"
            if problem.exact is not None:
                rep.error = dense_l2_error(u, problem.exact, grid)
        else:
            system = build_tt_system(problem, grid, opts)
            rep.warnings.extend(f"cross:{w}" for w in system.warnings)
            op, rhs, mass = system.operator, system.rhs, system.mass
            load = system.load
            plan = None
            if fmt == "qtt":
                plan = quantization_plan(rhs)
                op = quantize(op, opts.tt_tol)
                rhs = quantize(rhs, opts.tt_tol)
                if problem.kind == "semilinear":
                    mass = quantize(mass, opts.tt_tol)
                    load = quantize(load, opts.tt_tol)
            rep.operator_ranks = op.ranks
            rep.compression = compression_ratio(op)
            stage = "solve"
            so = opts.solver()
            if problem.kind == "semilinear":
                # boundary data of the catalog problem vanish, so the load is the whole right-hand side
                u, st = newton_solve(SemilinearSystem(op, mass, rhs), None, so)
                rep.newton_iterations = st.newton_iterations
            else:
                u, st = als_solve(op, rhs, so)
            rep.sweeps = st.sweeps_used
            rep.residual = st.final_residual
            rep.converged = st.converged
            if plan is not None:
                u = dequantize(u, plan)
            rep.solution_ranks = u.ranks
            rep.solution = u
            stage = "error"
            if problem.exact is not None:
                rep.error = compute_l2_error(u, problem.exact, grid, system.mass, tol=min(opts.tt_tol, 1e-10) / 10, seed=opts.seed)
    except (SolverError, CapacityError, MemoryError) as exc:
        rep.failed_stage = stage
        rep.converged = False
        rep.warnings.append(f"{stage}: {exc}")
        log.warning("%s N=%d %s failed in %s: %s", problem.name, grid.n_elements, fmt, stage, exc)
    rep.seconds = time.perf_counter() - t0
    if opts.progress is not None:
        opts.progress({"stage": "report", "experiment": rep.experiment, "N": rep.N, "format": fmt,
                       "error": rep.error, "seconds": rep.seconds, "converged": rep.converged})
    return rep


def fit_order(ns: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(1/N)``."""
    ns = np.asarray(ns, dtype=float)
    err = np.asarray(errors, dtype=float)
    if ns.size < 2:
        raise InputError("need at least two grids to fit an order")
    if np.any(~np.isfinite(err)) or np.any(err <= 0):
        return float("nan")
    slope = np.polyfit(np.log(1.0 / ns), np.log(err), 1)[0]
    return float(slope)


@dataclass
class ConvergenceTable:
    reports: list
    order: float

    def rows(self) -> list[dict]:
        return [r.row(self.order) for r in self.reports]


def convergence_study(problem: ProblemSpec, grids: Sequence[int], fmt: str = "tt", opts: RunOptions | None = None) -> ConvergenceTable:
    if len(grids) < 2:
        raise InputError("a convergence study needs at least two grids")
    if problem.exact is None:
        raise InputError("a convergence study needs an exact solution")
    reports = [run_experiment(problem, n, fmt, opts) for n in sorted(grids)]
    order = fit_order([r.N for r in reports], [r.error for r in reports])
    return ConvergenceTable(reports, order)


# --- rank study -------------------------------------------------------------------

RANK_FIELDS_BASE = ["kappa", "tt_tol", "kappa_ranks"]


def axis_order_ranks(ranks: Sequence[int]) -> list[int]:
    """Train ranks listed from the x side (``x|yz`` first), the order used in the rank table."""
    return list(reversed(list(ranks)))


def rank_study(coefficients=None, grids: Sequence[int] = (17, 33), seed: int = 0, progress=None) -> list[dict]:
    """Ranks of cross-interpolated diffusion coefficients and of the rounded
    stationary diffusion operator, one row per (coefficient, tolerance)."""
    coefficients = RANK_STUDY if coefficients is None else coefficients
    rows = []
    for label, func, tol in coefficients:
        row = {"kappa": label, "tt_tol": f"{tol:.0e}"}
        kranks = []
        for n in grids:
            grid = Grid.unit(int(n), time_dependent=False)
            res = cross_on_grid(func, grid, tol=tol, seed=seed)
            ops = assemble_operator(grid, kappa=res.train, opts=AssemblyOptions(tt_tol=tol))
            kranks.append(axis_order_ranks(res.ranks))
            row[f"op_ranks_N{n}"] = _fmt_ranks(axis_order_ranks(ops.interior.ranks))
            row[f"converged_N{n}"] = res.converged
            if progress is not None:
                progress({"stage": "rank-study", "kappa": label, "tt_tol": tol, "N": int(n),
                          "kappa_ranks": res.ranks, "operator_ranks": ops.interior.ranks})
        uniq = {tuple(k) for k in kranks}
        row["kappa_ranks"] = ";".join(_fmt_ranks(list(k)) for k in sorted(uniq)) if len(uniq) > 1 else _fmt_ranks(kranks[0])
        rows.append(row)
    return rows


def _fmt_ranks(r: Sequence[int]) -> str:
    return "[" + ",".join(str(int(v)) for v in r) + "]"


def write_csv(path, rows: list[dict], fields: Sequence[str] | None = None) -> Path:
    path = Path(path)
    fields = list(fields) if fields is not None else list(rows[0].keys()) if rows else CSV_FIELDS
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path
