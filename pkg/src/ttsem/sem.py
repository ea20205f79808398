"""Q1 space-time spectral-element matrices and their tensor-train assembly.

Every global operator here is a sum of Kronecker products of 1-D matrices
(one per axis, train order ``t, z, y, x``).  Variable coefficients enter
through *weighted* 1-D matrices: on element ``e`` the interpolated
coefficient is ``v_e * phi_0 + v_{e+1} * phi_1``, so a coefficient train
with cores ``K(a, i, b)`` turns into an operator train whose mode-``k`` core
is ``sum_i K(a, i, b) * W(e_i)`` with ``W`` the weighted global matrix for
the nodal unit vector ``e_i``.

Local basis convention: index 0 is the hat function equal to 1 at the left
node of the element, index 1 the one equal to 1 at the right node.  Local
matrices are laid out ``[test, trial]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import InputError, ShapeMismatchError
from .tt import TTMatrix, TTVector, restrict_modes, tt_axpy, tt_hadamard, tt_round, ttmat_apply, ttmat_from_factors

SPACE_AXES = ("z", "y", "x")


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product mesh with ``n_elements`` intervals per axis.

    Axes follow train order: ``("t", "z", "y", "x")`` for space-time grids and
    ``("z", "y", "x")`` for stationary ones.  ``bounds`` holds one
    ``(lower, upper)`` pair per axis in the same order.
    """

    n_elements: int
    bounds: tuple[tuple[float, float], ...]
    time_dependent: bool = True

    def __post_init__(self):
        if self.n_elements < 1:
            raise InputError("n_elements must be >= 1")
        if len(self.bounds) != len(self.axes):
            raise InputError(f"need {len(self.axes)} bounds, got {len(self.bounds)}")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise InputError(f"degenerate interval ({lo}, {hi})")
        object.__setattr__(self, "bounds", tuple((float(a), float(b)) for a, b in self.bounds))

    @classmethod
    def unit(cls, n_elements: int, time_dependent: bool = True, final_time: float = 1.0) -> "Grid":
        bounds = ((0.0, 1.0),) * 3
        if time_dependent:
            bounds = ((0.0, float(final_time)),) + bounds
        return cls(n_elements, bounds, time_dependent)

    @property
    def axes(self) -> tuple[str, ...]:
        return (("t",) if self.time_dependent else ()) + SPACE_AXES

    @property
    def d(self) -> int:
        return len(self.axes)

    @property
    def n_nodes(self) -> int:
        return self.n_elements + 1

    def spacing(self, k: int) -> float:
        lo, hi = self.bounds[k]
        return (hi - lo) / self.n_elements

    def nodes(self, k: int) -> np.ndarray:
        lo, hi = self.bounds[k]
        return np.linspace(lo, hi, self.n_nodes)

    def is_time(self, k: int) -> bool:
        return self.axes[k] == "t"

    def interior(self, k: int) -> np.ndarray:
        """Unknown node indices of axis ``k``.

        Time drops only the initial node; space drops both ends.
        """
        if self.is_time(k):
            return np.arange(1, self.n_nodes)
        return np.arange(1, self.n_elements)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.n_nodes,) * self.d

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(len(self.interior(k)) for k in range(self.d))

    @property
    def n_unknowns(self) -> int:
        return int(np.prod(self.interior_shape))

    def coordinates(self, idx: np.ndarray, interior: bool = False) -> dict[str, np.ndarray]:
        """Map an ``(M, d)`` array of node indices to physical coordinates by axis name."""
        idx = np.atleast_2d(np.asarray(idx, dtype=int))
        out = {}
        for k, ax in enumerate(self.axes):
            nodes = self.nodes(k)
            if interior:
                nodes = nodes[self.interior(k)]
            out[ax] = nodes[idx[:, k]]
        return out


@dataclass(frozen=True)
class Local1D:
    """Element matrices on one interval of length ``h``."""

    h: float
    mass: np.ndarray
    stiffness: np.ndarray
    time_derivative: np.ndarray
    weighted_mass: tuple[np.ndarray, np.ndarray]
    weighted_stiffness: tuple[np.ndarray, np.ndarray]
    weighted_derivative: tuple[np.ndarray, np.ndarray]

    def pair(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """Weighted pair by kind: ``"mass"``, ``"stiffness"`` or ``"derivative"``."""
        return {
            "mass": self.weighted_mass,
            "stiffness": self.weighted_stiffness,
            "derivative": self.weighted_derivative,
        }[kind]

    def unweighted(self, kind: str) -> np.ndarray:
        return {
            "mass": self.mass,
            "stiffness": self.stiffness,
            "derivative": self.time_derivative,
        }[kind]


def local_matrices(h: float) -> Local1D:
    """Exact integrals of products of linear hat functions on ``[0, h]``."""
    if not h > 0:
        raise InputError("element size must be positive")
    mass = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    stiffness = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    # int phi_j' phi_i: independent of h
    derivative = np.array([[-0.5, 0.5], [-0.5, 0.5]])
    wmass = (
        h * np.array([[1 / 4, 1 / 12], [1 / 12, 1 / 12]]),
        h * np.array([[1 / 12, 1 / 12], [1 / 12, 1 / 4]]),
    )
    # phi_p integrates to h/2 against the constant product of derivatives
    wstiff = (stiffness / 2.0, stiffness / 2.0)
    wderiv = (
        np.array([[-1 / 3, 1 / 3], [-1 / 6, 1 / 6]]),
        np.array([[-1 / 6, 1 / 6], [-1 / 3, 1 / 3]]),
    )
    return Local1D(h, mass, stiffness, derivative, wmass, wstiff, wderiv)


def assembly_binary(n_elements: int) -> np.ndarray:
    """0/1 matrix of shape ``(N+1, 2N)`` gluing element-local dofs into nodes."""
    if n_elements < 1:
        raise InputError("n_elements must be >= 1")
    b = np.zeros((n_elements + 1, 2 * n_elements))
    e = np.arange(n_elements)
    b[e, 2 * e] = 1.0
    b[e + 1, 2 * e + 1] = 1.0
    return b


def _block_diagonal(local: np.ndarray, n_elements: int) -> sp.csr_matrix:
    return sp.block_diag([local] * n_elements, format="csr")


def assemble_global_1d(local, n_elements: int) -> np.ndarray:
    """``B @ blockdiag(local, ..., local) @ B.T`` as a dense tridiagonal matrix."""
    local = np.asarray(local, dtype=float)
    if local.shape != (2, 2):
        raise InputError("local matrix must be 2x2")
    b = sp.csr_matrix(assembly_binary(n_elements))
    return (b @ _block_diagonal(local, n_elements) @ b.T).toarray()


def coefficient_staggered_diagonals(values, p: int) -> np.ndarray:
    """Diagonal ``2N x 2N`` matrix carrying nodal coefficient values per element.

    Element ``e`` gets the scalar block ``values[e + p] * I_2``: the value at
    its left node for ``p = 0`` and at its right node for ``p = 1``.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise InputError("need at least two nodal values")
    if not np.all(np.isfinite(values)):
        raise InputError("coefficient values must be finite")
    if p not in (0, 1):
        raise InputError("p must be 0 or 1")
    n = values.size - 1
    return np.diag(np.repeat(values[p: p + n], 2))


def assemble_weighted_global_1d(local_p, c_p, b=None) -> np.ndarray:
    """``B @ blockdiag(local_p) @ C_p @ B.T``."""
    local_p = np.asarray(local_p, dtype=float)
    c_p = np.asarray(c_p, dtype=float)
    if c_p.ndim != 2 or c_p.shape[0] != c_p.shape[1] or c_p.shape[0] % 2:
        raise InputError("coefficient matrix must be square of even size 2N")
    n = c_p.shape[0] // 2
    if b is None:
        b = assembly_binary(n)
    b = np.asarray(b, dtype=float)
    if b.shape != (n + 1, 2 * n):
        raise ShapeMismatchError(f"binary matrix shape {b.shape} does not match 2N = {2 * n}")
    return b @ (_block_diagonal(local_p, n) @ c_p) @ b.T


def weighted_global_1d(values, pair: Sequence[np.ndarray]) -> np.ndarray:
    """Global matrix of ``int L_h(v) * (...)`` for nodal values ``v`` and a weighted pair."""
    values = np.asarray(values, dtype=float).ravel()
    b = assembly_binary(values.size - 1)
    return sum(
        assemble_weighted_global_1d(pair[p], coefficient_staggered_diagonals(values, p), b)
        for p in (0, 1)
    )


def weighted_operator_core(coef_core: np.ndarray, pair: Sequence[np.ndarray]) -> np.ndarray:
    """Contract a coefficient core ``(ra, N+1, rb)`` with a weighted pair.

    Returns the operator core ``(ra, N+1, N+1, rb)`` whose slice ``[a, :, :, b]``
    is ``weighted_global_1d(coef_core[a, :, b], pair)``.
    """
    ra, n_nodes, rb = coef_core.shape
    n = n_nodes - 1
    out = np.zeros((ra, n_nodes, n_nodes, rb))
    e = np.arange(n)
    for p in (0, 1):
        vals = coef_core[:, e + p, :]  # (ra, N, rb)
        for i in (0, 1):
            for j in (0, 1):
                out[:, e + i, e + j, :] += vals * pair[p][i, j]
    return out


def coefficient_operator(coef: TTVector, pairs: Sequence[Sequence[np.ndarray]]) -> TTMatrix:
    """All-node operator ``int L_h(c) * prod_k (1-D form_k)`` as a train."""
    if len(pairs) != coef.d:
        raise ShapeMismatchError("need one weighted pair per mode")
    return TTMatrix([weighted_operator_core(c, pr) for c, pr in zip(coef.cores, pairs)], copy=False)


# --- problem-level assembly ---------------------------------------------------

@dataclass
class AssemblyOptions:
    """Tolerances for building the discrete system in train format.

    ``round_terms`` rounds every operator term before summation in addition
    to the final rounding of the sum.
    """

    tt_tol: float = 1e-10
    rmax: int | None = None
    cross_tol: float | None = None
    seed: int = 0
    round_terms: bool = False
    max_sweeps: int = 12

    @property
    def coefficient_tol(self) -> float:
        return self.cross_tol if self.cross_tol is not None else self.tt_tol


@dataclass
class OperatorSet:
    """Discrete operator in three restrictions.

    ``interior`` is the square system operator, ``boundary_map`` keeps all
    node columns (interior rows) and ``terms`` holds the unrestricted
    per-term trains keyed by ``T1`` .. ``T4``.
    """

    interior: TTMatrix
    boundary_map: TTMatrix
    terms: dict[str, TTMatrix] = field(default_factory=dict)
    coefficient_ranks: dict[str, list[int]] = field(default_factory=dict)


def interior_ranges(grid: Grid) -> list[np.ndarray]:
    return [grid.interior(k) for k in range(grid.d)]


def mass_operator(grid: Grid) -> TTMatrix:
    """Unweighted all-node mass operator (rank 1)."""
    return ttmat_from_factors(
        [assemble_global_1d(local_matrices(grid.spacing(k)).mass, grid.n_elements) for k in range(grid.d)]
    )


def interior_mass_operator(grid: Grid) -> TTMatrix:
    rng = interior_ranges(grid)
    return restrict_modes(mass_operator(grid), rng, rng)


def time_derivative_operator(grid: Grid) -> TTMatrix:
    """All-node ``D_t o M_z o M_y o M_x``."""
    if not grid.time_dependent:
        raise InputError("stationary grid has no time axis")
    factors = []
    for k in range(grid.d):
        loc = local_matrices(grid.spacing(k))
        factors.append(assemble_global_1d(loc.time_derivative if grid.is_time(k) else loc.mass, grid.n_elements))
    return ttmat_from_factors(factors)


def diffusion_operator(kappa: TTVector, grid: Grid) -> TTMatrix:
    """All-node ``int L_h(kappa) grad u . grad v`` (sum of one term per space axis)."""
    locals_ = [local_matrices(grid.spacing(k)) for k in range(grid.d)]
    terms = []
    for k_diff in range(grid.d):
        if grid.is_time(k_diff):
            continue
        pairs = [locals_[k].pair("stiffness" if k == k_diff else "mass") for k in range(grid.d)]
        terms.append(coefficient_operator(kappa, pairs))
    return _plain_sum(terms)


def convection_operator(velocity: Sequence[TTVector | None], grid: Grid) -> TTMatrix | None:
    """All-node ``int (L_h(b) . grad u) v``; ``velocity`` is ordered ``(b_x, b_y, b_z)``."""
    locals_ = [local_matrices(grid.spacing(k)) for k in range(grid.d)]
    axis_of = {"x": 0, "y": 1, "z": 2}
    terms = []
    for k_der in range(grid.d):
        if grid.is_time(k_der):
            continue
        comp = velocity[axis_of[grid.axes[k_der]]]
        if comp is None:
            continue
        pairs = [locals_[k].pair("derivative" if k == k_der else "mass") for k in range(grid.d)]
        terms.append(coefficient_operator(comp, pairs))
    return _plain_sum(terms) if terms else None


def reaction_operator(c: TTVector, grid: Grid) -> TTMatrix:
    pairs = [local_matrices(grid.spacing(k)).pair("mass") for k in range(grid.d)]
    return coefficient_operator(c, pairs)


def _plain_sum(terms: Sequence[TTMatrix]) -> TTMatrix:
    acc = terms[0]
    for t in terms[1:]:
        acc = tt_axpy(1.0, t, acc)
    return acc


def assemble_operator(
    grid: Grid,
    kappa: TTVector | None = None,
    velocity: Sequence[TTVector | None] | None = None,
    reaction: TTVector | None = None,
    opts: AssemblyOptions | None = None,
    time_term: bool | None = None,
) -> OperatorSet:
    """Assemble ``T1 + T2 + T3 + T4`` from coefficient trains on all nodes."""
    opts = opts or AssemblyOptions()
    if time_term is None:
        time_term = grid.time_dependent
    terms: dict[str, TTMatrix] = {}
    if time_term:
        terms["T1"] = time_derivative_operator(grid)
    if kappa is not None:
        terms["T2"] = diffusion_operator(kappa, grid)
    if velocity is not None:
        conv = convection_operator(velocity, grid)
        if conv is not None:
            terms["T3"] = conv
    if reaction is not None:
        terms["T4"] = reaction_operator(reaction, grid)
    if not terms:
        raise InputError("operator has no terms")
    for name, term in terms.items():
        _check_modes(term, grid, name)

    rows = interior_ranges(grid)
    parts = [restrict_modes(t, rows) for t in terms.values()]
    if opts.round_terms:
        parts = [tt_round(p, opts.tt_tol, opts.rmax) for p in parts]
    bmap = tt_round(_plain_sum(parts), opts.tt_tol, opts.rmax)
    interior = tt_round(restrict_modes(bmap, [None] * grid.d, rows), opts.tt_tol, opts.rmax)
    return OperatorSet(interior=interior, boundary_map=bmap, terms=terms)


def _check_modes(term: TTMatrix, grid: Grid, name: str) -> None:
    expected = list(grid.node_shape)
    if term.row_sizes != expected or term.col_sizes != expected:
        raise ShapeMismatchError(f"{name} has modes {term.row_sizes} but the grid needs {expected}")


def assemble_load(forcing: TTVector | None, grid: Grid, opts: AssemblyOptions | None = None) -> TTVector:
    """``M(interior, :) F`` with ``F`` the nodal forcing on all nodes."""
    opts = opts or AssemblyOptions()
    if forcing is None:
        return TTVector.zeros(grid.interior_shape)
    if forcing.mode_sizes != list(grid.node_shape):
        raise ShapeMismatchError(f"forcing train has modes {forcing.mode_sizes}, grid needs {list(grid.node_shape)}")
    m = restrict_modes(mass_operator(grid), interior_ranges(grid))
    return tt_round(ttmat_apply(m, forcing), opts.tt_tol, opts.rmax)


def boundary_masks(grid: Grid) -> tuple[TTVector, TTVector | None]:
    """Indicator trains of (spatial boundary for t > 0, initial slab t = 0).

    For stationary grids the second entry is ``None`` and the first marks the
    whole boundary.
    """
    shape = grid.node_shape
    inner = []
    for k in range(grid.d):
        v = np.zeros(grid.n_nodes)
        if grid.is_time(k):
            v[1:] = 1.0
        else:
            v[grid.interior(k)] = 1.0
        inner.append(v)
    interior_ind = TTVector.rank1(inner)
    if not grid.time_dependent:
        return tt_axpy(-1.0, interior_ind, TTVector.ones(shape)), None
    later = [np.ones(grid.n_nodes) for _ in range(grid.d)]
    later[0] = inner[0]
    spatial = tt_axpy(-1.0, interior_ind, TTVector.rank1(later))
    first = [np.ones(grid.n_nodes) for _ in range(grid.d)]
    first[0] = 1.0 - inner[0]
    return spatial, TTVector.rank1(first)


def boundary_lift(boundary: TTVector | None, initial: TTVector | None, grid: Grid) -> TTVector:
    """All-node train equal to the boundary data on the boundary and 0 inside.

    ``boundary`` and ``initial`` are all-node trains of the Dirichlet and
    initial data (their interior values are ignored).
    """
    spatial_mask, initial_mask = boundary_masks(grid)
    parts = []
    if boundary is not None:
        parts.append(tt_hadamard(boundary, spatial_mask))
    if initial is not None and initial_mask is not None:
        parts.append(tt_hadamard(initial, initial_mask))
    if not parts:
        return TTVector.zeros(grid.node_shape)
    return _plain_vector_sum(parts)


def _plain_vector_sum(parts):
    acc = parts[0]
    for p in parts[1:]:
        acc = tt_axpy(1.0, p, acc)
    return acc


def assemble_boundary_term(
    operator: OperatorSet, lift: TTVector, grid: Grid, opts: AssemblyOptions | None = None
) -> TTVector:
    """``A_map @ G_bd``: the right-hand-side transfer of known boundary values."""
    opts = opts or AssemblyOptions()
    if lift.norm() == 0.0:
        return TTVector.zeros(grid.interior_shape)
    lift = tt_round(lift, opts.tt_tol * 1e-2, opts.rmax)
    return tt_round(ttmat_apply(operator.boundary_map, lift), opts.tt_tol, opts.rmax)


NodalFunction = Callable[..., np.ndarray]


# --- builders from a problem description --------------------------------------

def coefficient_trains(problem, grid: Grid, opts: AssemblyOptions | None = None) -> dict:
    """Cross-interpolate every coefficient closure of ``problem`` on all nodes.

    Returns a dict with keys ``kappa``, ``velocity`` (tuple or None),
    ``reaction`` and ``warnings`` (names of closures whose cross run did not
    converge).
    """
    from .cross import cross_on_grid

    opts = opts or AssemblyOptions()
    warnings = []

    def run(name, func):
        if func is None:
            return None
        res = cross_on_grid(func, grid, tol=opts.coefficient_tol, seed=opts.seed, max_sweeps=opts.max_sweeps)
        if not res.converged:
            warnings.append(name)
        return res.train

    vel = None
    if problem.velocity is not None:
        vel = tuple(run(f"b_{ax}", f) for ax, f in zip("xyz", problem.velocity))
    return {
        "kappa": run("kappa", problem.kappa),
        "velocity": vel,
        "reaction": run("c", problem.reaction),
        "warnings": warnings,
    }


def build_operator_tt(problem, grid: Grid, opts: AssemblyOptions | None = None, coefficients: dict | None = None) -> OperatorSet:
    """Operator trains of ``problem`` (system operator and boundary map)."""
    opts = opts or AssemblyOptions()
    if grid.time_dependent != problem.time_dependent:
        raise InputError("grid and problem disagree on the time axis")
    coef = coefficients or coefficient_trains(problem, grid, opts)
    ops = assemble_operator(grid, coef["kappa"], coef["velocity"], coef["reaction"], opts)
    for name in ("kappa", "reaction"):
        if coef.get(name) is not None:
            ops.coefficient_ranks[name] = coef[name].ranks
    return ops


def build_load_tt(problem, grid: Grid, opts: AssemblyOptions | None = None) -> TTVector:
    """Mass operator (interior rows, all columns) applied to the cross-interpolated forcing."""
    from .cross import cross_on_grid

    opts = opts or AssemblyOptions()
    if problem.forcing is None:
        return TTVector.zeros(grid.interior_shape)
    res = cross_on_grid(problem.forcing, grid, tol=opts.coefficient_tol, seed=opts.seed, max_sweeps=opts.max_sweeps)
    return assemble_load(res.train, grid, opts)


def build_boundary_lift(problem, grid: Grid, opts: AssemblyOptions | None = None) -> TTVector:
    from .cross import cross_on_grid

    opts = opts or AssemblyOptions()

    def run(func):
        if func is None:
            return None
        return cross_on_grid(func, grid, tol=opts.coefficient_tol, seed=opts.seed, max_sweeps=opts.max_sweeps).train

    return boundary_lift(run(problem.boundary), run(problem.initial) if grid.time_dependent else None, grid)


def build_boundary_term_tt(problem, grid: Grid, opts: AssemblyOptions | None = None, operators: OperatorSet | None = None) -> TTVector:
    """``A_map @ G_bd`` for the problem's boundary and initial data."""
    opts = opts or AssemblyOptions()
    if problem.boundary is None and (problem.initial is None or not grid.time_dependent):
        return TTVector.zeros(grid.interior_shape)
    operators = operators or build_operator_tt(problem, grid, opts)
    return assemble_boundary_term(operators, build_boundary_lift(problem, grid, opts), grid, opts)
