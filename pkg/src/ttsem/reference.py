"""Full-grid reference discretization by a classical element loop.

Deliberately independent of the Kronecker/train machinery: local matrices
come from Gauss-Legendre quadrature of tensor-product hat functions on each
element, and are scattered into a sparse global matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import CapacityError, InputError, SolverError
from .problems import ProblemSpec
from .sem import Grid

DEFAULT_CAP = 200_000
_CHUNK = 4096


@dataclass
class SparseSystem:
    """Reduced system on interior unknowns.

    ``rows/cols/vals`` are the raw all-node triplets (duplicates summed on
    :meth:`finalize`); ``matrix`` and ``rhs`` are the interior system after
    the known boundary values moved to the right-hand side.
    """

    grid: Grid
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    load: np.ndarray
    lift: np.ndarray
    interior: np.ndarray
    matrix: sp.csr_matrix = None
    full_matrix: sp.csr_matrix = None
    rhs: np.ndarray = None
    mass: sp.csr_matrix = None
    extras: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return int(self.interior.size)

    def finalize(self) -> "SparseSystem":
        n = int(np.prod(self.grid.node_shape))
        self.full_matrix = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(n, n)).tocsr()
        self.full_matrix.sum_duplicates()
        a_i = self.full_matrix[self.interior]
        self.matrix = a_i[:, self.interior].tocsr()
        self.rhs = self.load[self.interior] - a_i @ self.lift
        return self


def _gauss(npts: int = 3):
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def _reference_tensors(grid: Grid, npts: int = 3):
    """Quadrature tensors on one element (all elements share them on a uniform mesh)."""
    d = grid.d
    xi, wi = _gauss(npts)
    h = np.array([grid.spacing(k) for k in range(d)])
    nb = 2**d
    q = np.stack(np.meshgrid(*([np.arange(npts)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    w = np.prod(wi[q], axis=1) * np.prod(h)
    # local index i = sum_k bit_k * 2**(d-1-k): the last axis (x) is the lowest bit
    bits = np.array([[(i >> (d - 1 - k)) & 1 for k in range(d)] for i in range(nb)])
    pts = xi[q]  # (nq, d)
    val1 = np.stack([1.0 - pts, pts], axis=0)  # (2, nq, d)
    der1 = np.stack([-np.ones_like(pts), np.ones_like(pts)], axis=0) / h
    phi = np.ones((nb, len(w)))
    dphi = np.ones((d, nb, len(w)))
    for i in range(nb):
        for k in range(d):
            v = val1[bits[i, k], :, k]
            phi[i] *= v
            for a in range(d):
                dphi[a, i] *= der1[bits[i, k], :, k] if a == k else v
    return phi, dphi, w, bits


def _element_corners(grid: Grid, bits: np.ndarray):
    """Global node numbers ``(n_elements**d, 2**d)`` of every element's local nodes."""
    d = grid.d
    n = grid.n_elements
    strides = np.array([grid.n_nodes ** (d - 1 - k) for k in range(d)])
    origin = np.stack(np.meshgrid(*([np.arange(n)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return (origin @ strides)[:, None] + (bits @ strides)[None, :]


def _nodal(func, coords, shape):
    if func is None:
        return None
    return np.broadcast_to(np.asarray(func(coords["t"], coords["x"], coords["y"], coords["z"]), dtype=float), shape).copy()


def _all_coordinates(grid: Grid):
    idx = np.stack(np.meshgrid(*[np.arange(grid.n_nodes)] * grid.d, indexing="ij"), axis=-1).reshape(-1, grid.d)
    c = grid.coordinates(idx)
    c.setdefault("t", np.zeros(idx.shape[0]))
    return c, idx


def interior_mask(grid: Grid, idx: np.ndarray) -> np.ndarray:
    mask = np.ones(idx.shape[0], dtype=bool)
    for k in range(grid.d):
        keep = np.zeros(grid.n_nodes, dtype=bool)
        keep[grid.interior(k)] = True
        mask &= keep[idx[:, k]]
    return mask


def assemble_full_system(problem: ProblemSpec, grid: Grid, cap: int = DEFAULT_CAP, with_mass: bool = False) -> SparseSystem:
    """Element-loop assembly of the reduced system for ``problem`` on ``grid``."""
    if grid.time_dependent != problem.time_dependent:
        raise InputError("grid and problem disagree on the time axis")
    if grid.n_unknowns > cap:
        raise CapacityError(
            f"{grid.n_unknowns} unknowns exceed the full-grid cap of {cap}; use the tt format instead"
        )
    d = grid.d
    phi, dphi, w, bits = _reference_tensors(grid)
    nb = 2**d
    axes = grid.axes
    space = [k for k in range(d) if not grid.is_time(k)]

    # local tensors [coef node m, test j, trial i]
    mass3 = np.einsum("q,mq,jq,iq->mji", w, phi, phi, phi)
    stiff3 = sum(np.einsum("q,mq,jq,iq->mji", w, phi, dphi[a], dphi[a]) for a in space)
    conv3 = {axes[a]: np.einsum("q,mq,jq,iq->mji", w, phi, phi, dphi[a]) for a in space}
    mass2 = np.einsum("q,jq,mq->jm", w, phi, phi)
    dt2 = np.einsum("q,jq,iq->ji", w, phi, dphi[0]) if grid.time_dependent else None

    coords, idx = _all_coordinates(grid)
    n_all = idx.shape[0]
    kappa = _nodal(problem.kappa, coords, n_all)
    vel = problem.velocity or (None, None, None)
    bvals = {ax: _nodal(f, coords, n_all) for ax, f in zip(("x", "y", "z"), vel)}
    react = _nodal(problem.reaction, coords, n_all)
    forcing = _nodal(problem.forcing, coords, n_all)

    corners = _element_corners(grid, bits)
    rows, cols, vals = [], [], []
    mvals = []
    load = np.zeros(n_all)
    for start in range(0, corners.shape[0], _CHUNK):
        cn = corners[start: start + _CHUNK]
        loc = np.zeros((cn.shape[0], nb, nb))
        if dt2 is not None:
            loc += dt2
        if kappa is not None:
            loc += np.einsum("em,mji->eji", kappa[cn], stiff3)
        for ax, bv in bvals.items():
            if bv is not None:
                loc += np.einsum("em,mji->eji", bv[cn], conv3[ax])
        if react is not None:
            loc += np.einsum("em,mji->eji", react[cn], mass3)
        rows.append(np.repeat(cn, nb, axis=1).ravel())
        cols.append(np.tile(cn, (1, nb)).ravel())
        vals.append(loc.ravel())
        if forcing is not None:
            np.add.at(load, cn.ravel(), (forcing[cn] @ mass2.T).ravel())
        if with_mass:
            mvals.append(np.broadcast_to(mass2, (cn.shape[0], nb, nb)).ravel())

    mask = interior_mask(grid, idx)
    lift = np.zeros(n_all)
    bd = ~mask
    if grid.time_dependent:
        t0 = idx[:, 0] == 0
        if problem.boundary is not None:
            lift[bd & ~t0] = _nodal(problem.boundary, coords, n_all)[bd & ~t0]
        if problem.initial is not None:
            lift[t0] = _nodal(problem.initial, coords, n_all)[t0]
    elif problem.boundary is not None:
        lift[bd] = _nodal(problem.boundary, coords, n_all)[bd]

    system = SparseSystem(
        grid=grid,
        rows=np.concatenate(rows),
        cols=np.concatenate(cols),
        vals=np.concatenate(vals),
        load=load,
        lift=lift,
        interior=np.flatnonzero(mask),
    ).finalize()
    if with_mass:
        r = np.concatenate([np.repeat(corners[s: s + _CHUNK], nb, axis=1).ravel() for s in range(0, corners.shape[0], _CHUNK)])
        c = np.concatenate([np.tile(corners[s: s + _CHUNK], (1, nb)).ravel() for s in range(0, corners.shape[0], _CHUNK)])
        m = sp.coo_matrix((np.concatenate(mvals), (r, c)), shape=(n_all, n_all)).tocsr()
        system.mass = m
    system.extras["nodal_forcing"] = forcing
    return system


#: Sparse LU is used up to this many unknowns on space-time grids; fill-in
#: makes it slow beyond that, so a Jacobi-preconditioned Krylov method takes over.
DIRECT_MAX_4D = 20_000


def _krylov(a, b, rtol):
    a = a.tocsr()
    diag = a.diagonal()
    prec = sp.diags(1.0 / np.where(diag == 0.0, 1.0, diag)) if np.all(diag != 0) else None
    x, info = spla.bicgstab(a, b, M=prec, rtol=rtol * 1e-2, atol=0.0, maxiter=5000)
    if info != 0:
        x, info = spla.gmres(a, b, x0=x, M=prec, rtol=rtol * 1e-2, atol=0.0, restart=100, maxiter=100)
    return x


def _sparse_solve(a, b, d: int, rtol: float):
    x = None
    if d >= 4 and a.shape[0] > DIRECT_MAX_4D:
        x = _krylov(a, b, rtol)
        if not np.linalg.norm(a @ x - b) <= rtol * np.linalg.norm(b):
            x = None
    if x is None:
        try:
            x = spla.splu(a.tocsc()).solve(b)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    return x


def solve_full(system: SparseSystem, rtol: float = 1e-10) -> np.ndarray:
    """Sparse solve of the reduced system; direct for small or 3-D systems."""
    if system.matrix is None:
        system.finalize()
    a, b = system.matrix.tocsc(), system.rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = _sparse_solve(a, b, system.grid.d, rtol)
    res = np.linalg.norm(a @ x - b) / bnorm
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"full-grid solve failed (relative residual {res:.3e})", [res])
    return x


def solve_full_semilinear(
    system: SparseSystem, tol: float = 1e-10, max_iter: int = 20
) -> tuple[np.ndarray, list[float]]:
    """Newton on ``A u - M (u - u^3) - M F = 0`` with the same nodal nonlinearity as the train path.

    Needs a system assembled with ``with_mass=True`` and zero boundary data.
    """
    if system.mass is None:
        raise InputError("semilinear solve needs the mass matrix (assemble with with_mass=True)")
    if np.any(system.lift != 0):
        raise InputError("semilinear reference solve supports homogeneous data only")
    ii = system.interior
    m_ii = system.mass[ii][:, ii].tocsr()
    load = system.rhs
    a = system.matrix
    scale = np.linalg.norm(load) or 1.0
    u = np.zeros(ii.size)
    history = []
    for _ in range(max_iter):
        loss = a @ u - m_ii @ (u - u**3) - load
        rel = np.linalg.norm(loss) / scale
        history.append(rel)
        if rel <= tol:
            return u, history
        jac = (a - m_ii + 3.0 * m_ii @ sp.diags(u * u)).tocsc()
        u = u - _sparse_solve(jac, loss, system.grid.d, 1e-12)
    loss = a @ u - m_ii @ (u - u**3) - load
    history.append(np.linalg.norm(loss) / scale)
    if history[-1] > tol:
        raise SolverError("full-grid Newton did not converge", history)
    return u, history
