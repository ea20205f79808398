"""Linear and Newton solvers for systems in tensor-train format.

``als_solve`` is a one-site alternating solver with residual enrichment in
the spirit of AMEn: each core is solved by a Galerkin projection onto the
orthonormal frames of the other cores, truncated, and then widened with a
low-rank approximation ``z`` of the current residual so ranks can grow.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .exceptions import InputError, ShapeMismatchError, SingularMatrixError, SolverError
from .linalg import qr_decompose, solve_dense, truncation_rank, _svd
from .tt import TTMatrix, TTVector, tt_axpy, tt_diag, tt_hadamard, tt_norm, tt_round, ttmat_apply, ttmat_matmul

log = logging.getLogger(__name__)

Progress = Callable[[dict], None]


@dataclass
class SolverOptions:
    solver_tol: float = 1e-8
    tt_tol: float = 1e-10
    rmax: int | None = None
    max_sweeps: int = 40
    enrichment_rank: int = 3
    local_dense_max: int = 3000
    seed: int = 0
    max_newton: int = 20
    backtracking: bool = False
    progress: Progress | None = None

    def __post_init__(self):
        if not (0 < self.solver_tol < 1) or not (0 < self.tt_tol < 1):
            raise InputError("tolerances must lie in (0, 1)")
        if self.rmax is not None and self.rmax < 1:
            raise InputError("rmax must be >= 1")
        if self.max_sweeps < 1 or self.enrichment_rank < 0:
            raise InputError("max_sweeps must be >= 1 and enrichment_rank >= 0")

    def replace(self, **kw) -> "SolverOptions":
        d = dict(self.__dict__)
        d.update(kw)
        return SolverOptions(**d)


@dataclass
class SolveStats:
    sweeps_used: int = 0
    newton_iterations: int = 0
    final_residual: float = 0.0
    converged: bool = True
    rank_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    linear_sweeps: list = field(default_factory=list)

    @property
    def warning(self) -> bool:
        return not self.converged


def _emit(opts: SolverOptions, record: dict) -> None:
    if opts.progress is not None:
        opts.progress(record)


# --- interface contractions ---------------------------------------------------

def _left_op(phi, a, x, y):
    """Next left interface: ``phi (a,A,b)``, test core ``y``, operator core ``a``, trial core ``x``."""
    t = np.einsum("aAb,bjd->aAjd", phi, x, optimize=True)
    t = np.einsum("aAjd,AijB->aidB", t, a, optimize=True)
    return np.einsum("aidB,aic->cBd", t, y, optimize=True)


def _right_op(phi, a, x, y):
    t = np.einsum("bjd,cBd->bjcB", x, phi, optimize=True)
    t = np.einsum("AijB,bjcB->Aibc", a, t, optimize=True)
    return np.einsum("Aibc,aic->aAb", t, y, optimize=True)


def _left_vec(phi, b, y):
    return np.einsum("ap,piq,aic->cq", phi, b, y, optimize=True)


def _right_vec(phi, b, y):
    return np.einsum("cq,piq,aic->ap", phi, b, y, optimize=True)


def _local_apply(pl, a, pr, x):
    t = np.einsum("aAb,bjd->aAjd", pl, x, optimize=True)
    t = np.einsum("aAjd,AijB->aidB", t, a, optimize=True)
    return np.einsum("aidB,cBd->aic", t, pr, optimize=True)


def _local_rhs(pl, b, pr):
    return np.einsum("ap,piq,cq->aic", pl, b, pr, optimize=True)


def _local_matrix(pl, a, pr):
    t = np.einsum("aAb,AijB->aibjB", pl, a, optimize=True)
    m = np.einsum("aibjB,cBd->aicbjd", t, pr, optimize=True)
    n = pl.shape[0] * a.shape[1] * pr.shape[0]
    return m.reshape(n, n)


def _local_solve(pl, a, pr, rhs, x0, opts: SolverOptions, tol: float):
    shape = rhs.shape
    n = rhs.size
    if n <= opts.local_dense_max:
        mat = _local_matrix(pl, a, pr)
        try:
            return solve_dense(mat, rhs.ravel()).reshape(shape)
        except SingularMatrixError:
            shift = 1e-12 * np.linalg.norm(mat, ord=np.inf)
            try:
                return solve_dense(mat + shift * np.eye(n), rhs.ravel()).reshape(shape)
            except SingularMatrixError as exc:
                raise SolverError(f"singular local system (rcond={exc.rcond})") from exc
    op = spla.LinearOperator(
        (n, n), matvec=lambda v: _local_apply(pl, a, pr, v.reshape(shape)).ravel(), dtype=float
    )
    # block-Jacobi style preconditioner: exact inverse of the mode block averaged over frames
    prec = _mode_preconditioner(pl, a, pr, shape)
    sol, info = spla.gmres(op, rhs.ravel(), x0=x0.ravel(), rtol=tol, atol=0.0, restart=60, maxiter=50, M=prec)
    if info < 0:
        raise SolverError("local GMRES breakdown")
    return sol.reshape(shape)


def _mode_preconditioner(pl, a, pr, shape):
    """Approximate local inverse: keep only the interface diagonals.

    For each pair of frame indices ``(a, c)`` the local matrix restricted to
    the mode index is ``sum_AB pl[a,A,a] a[A,:,:,B] pr[c,B,c]``; inverting
    these small blocks gives a cheap block-diagonal preconditioner.
    """
    ra, n, rc = shape
    dl = np.einsum("aAa->aA", pl)
    dr = np.einsum("cBc->cB", pr)
    blocks = np.einsum("aA,AijB,cB->acij", dl, a, dr, optimize=True)
    try:
        inv = np.linalg.inv(blocks)
    except np.linalg.LinAlgError:
        return None

    def apply(v):
        v = v.reshape(ra, n, rc)
        return np.einsum("acij,ajc->aic", inv, v, optimize=True).ravel()

    return spla.LinearOperator((ra * n * rc, ra * n * rc), matvec=apply, dtype=float)


# --- residuals ----------------------------------------------------------------

def tt_residual_norm(a: TTMatrix, x: TTVector, b: TTVector, tt_tol: float | None = None) -> float:
    """``||a x - b||`` evaluated in train arithmetic.

    With ``tt_tol`` the residual train is first rounded at ``tt_tol / 10``.
    """
    _check_system(a, b)
    if x.mode_sizes != a.col_sizes:
        raise ShapeMismatchError("x does not match the operator columns")
    r = tt_axpy(-1.0, b, ttmat_apply(a, x))
    if tt_tol is not None:
        r = tt_round(r, tt_tol / 10)
    return tt_norm(r)


def _check_system(a: TTMatrix, b: TTVector) -> None:
    if not isinstance(a, TTMatrix) or not isinstance(b, TTVector):
        raise InputError("expected a TTMatrix and a TTVector")
    if a.row_sizes != a.col_sizes:
        raise ShapeMismatchError("operator must be square per mode")
    if b.mode_sizes != a.row_sizes:
        raise ShapeMismatchError(f"rhs modes {b.mode_sizes} do not match operator {a.row_sizes}")


def _random_train(shape, rank, rng) -> list[np.ndarray]:
    d = len(shape)
    ranks = [1] + [rank] * (d - 1) + [1]
    return [rng.standard_normal((ranks[k], shape[k], ranks[k + 1])) for k in range(d)]


def _orth_right(cores: list[np.ndarray], k: int) -> None:
    """Make core ``k`` right-orthonormal in place, pushing the factor into core ``k-1``."""
    c = cores[k]
    r0, n, r1 = c.shape
    q, r = qr_decompose(c.reshape(r0, n * r1).T)
    cores[k] = q.T.reshape(-1, n, r1)
    cores[k - 1] = np.einsum("anb,cb->anc", cores[k - 1], r)


def als_solve(
    a: TTMatrix, b: TTVector, opts: SolverOptions | None = None, x0: TTVector | None = None
) -> tuple[TTVector, SolveStats]:
    """Solve ``a x = b`` to relative residual ``opts.solver_tol``.

    Returns the last iterate with ``stats.converged = False`` when the sweep
    budget runs out.
    """
    opts = opts or SolverOptions()
    _check_system(a, b)
    shape = a.col_sizes
    d = len(shape)
    stats = SolveStats()
    bnorm = b.norm()
    if bnorm == 0.0:
        return TTVector.zeros(shape), stats
    rng = np.random.default_rng(opts.seed)
    if x0 is None:
        xc = _random_train(shape, 2, rng)
    else:
        if x0.mode_sizes != shape:
            raise ShapeMismatchError("initial guess does not match the operator")
        xc = [np.array(c) for c in x0.cores]
    rho = opts.enrichment_rank
    zc = _random_train(shape, max(rho, 1), rng)
    A = [np.asarray(c) for c in a.cores]
    B = [np.asarray(c) for c in b.cores]
    loc_tol = opts.tt_tol / np.sqrt(d)

    one3 = np.ones((1, 1, 1))
    one2 = np.ones((1, 1))
    phi_l = [one3] + [None] * d
    phi_r = [None] * d + [one3]
    phib_l = [one2] + [None] * d
    phib_r = [None] * d + [one2]
    pz_l = [one3] + [None] * d
    pz_r = [None] * d + [one3]
    pzb_l = [one2] + [None] * d
    pzb_r = [None] * d + [one2]

    def refresh_right():
        for k in range(d - 1, 0, -1):
            _orth_right(xc, k)
            _orth_right(zc, k)
        for k in range(d - 1, 0, -1):
            phi_r[k] = _right_op(phi_r[k + 1], A[k], xc[k], xc[k])
            phib_r[k] = _right_vec(phib_r[k + 1], B[k], xc[k])
            pz_r[k] = _right_op(pz_r[k + 1], A[k], xc[k], zc[k])
            pzb_r[k] = _right_vec(pzb_r[k + 1], B[k], zc[k])

    refresh_right()
    res = np.inf
    for sweep in range(1, opts.max_sweeps + 1):
        for k in range(d):
            rhs = _local_rhs(phib_l[k], B[k], phib_r[k + 1])
            sol = _local_solve(phi_l[k], A[k], phi_r[k + 1], rhs, xc[k], opts, max(opts.solver_tol * 0.1, 1e-14))
            if k == d - 1:
                xc[k] = sol
                break
            rl, n, rr = sol.shape
            u, s, vt = _svd(sol.reshape(rl * n, rr))
            r = max(1, truncation_rank(s, loc_tol, opts.rmax))
            u, s, vt = u[:, :r], s[:r], vt[:r]
            coef = s[:, None] * vt  # (r, rr)
            if rho > 0:
                approx = (u @ coef).reshape(rl, n, rr)
                # residual in the x-left / z-right frames widens the basis
                enr = _local_rhs(phib_l[k], B[k], pzb_r[k + 1]) - _local_apply(phi_l[k], A[k], pz_r[k + 1], approx)
                enr = enr.reshape(rl * n, -1)
                if opts.rmax is not None:
                    enr = enr[:, : max(0, opts.rmax - r)]
                q, _ = qr_decompose(np.concatenate([u, enr], axis=1))
                # residual in the z frames on both sides updates z itself
                zloc = _local_rhs(pzb_l[k], B[k], pzb_r[k + 1]) - _local_apply(pz_l[k], A[k], pz_r[k + 1], approx)
                zu, _, _ = _svd(zloc.reshape(-1, zloc.shape[2]))
                zr = min(rho, zu.shape[1])
                zc[k] = zu[:, :zr].reshape(zloc.shape[0], n, zr)
                nxt = zc[k + 1]
                zc[k + 1] = nxt[:zr] if nxt.shape[0] >= zr else np.pad(nxt, ((0, zr - nxt.shape[0]), (0, 0), (0, 0)))
            else:
                q = u
            coef = (q.T @ u) @ coef
            xc[k] = q.reshape(rl, n, q.shape[1])
            xc[k + 1] = np.einsum("ab,bjc->ajc", coef, xc[k + 1])
            phi_l[k + 1] = _left_op(phi_l[k], A[k], xc[k], xc[k])
            phib_l[k + 1] = _left_vec(phib_l[k], B[k], xc[k])
            pz_l[k + 1] = _left_op(pz_l[k], A[k], xc[k], zc[k])
            pzb_l[k + 1] = _left_vec(pzb_l[k], B[k], zc[k])

        x = TTVector(xc)
        res = tt_residual_norm(a, x, b) / bnorm
        stats.sweeps_used = sweep
        stats.rank_history.append(x.ranks)
        stats.residual_history.append(res)
        _emit(opts, {"stage": "als", "sweep": sweep, "residual": res, "max_rank": max(x.ranks, default=1)})
        log.debug("als sweep %d residual %.3e ranks %s", sweep, res, x.ranks)
        if res <= opts.solver_tol:
            break
        refresh_right()

    x = tt_round(TTVector(xc), opts.tt_tol, opts.rmax)
    stats.final_residual = tt_residual_norm(a, x, b) / bnorm
    stats.converged = stats.final_residual <= opts.solver_tol
    if not stats.converged:
        log.warning("als_solve stopped at relative residual %.3e (target %.1e)", stats.final_residual, opts.solver_tol)
    return x, stats


# --- Newton -------------------------------------------------------------------

@dataclass
class SemilinearSystem:
    """``A u - M (u - u^3) - load = 0`` on interior nodes.

    ``load`` is the assembled forcing ``M(interior, :) F``; boundary terms
    (if any) are already folded into it.
    """

    A: TTMatrix
    M: TTMatrix
    load: TTVector

    def loss(self, u: TTVector, tt_tol: float) -> TTVector:
        u3 = tt_round(tt_hadamard(u, tt_round(tt_hadamard(u, u), tt_tol)), tt_tol)
        inner = tt_axpy(-1.0, u3, u)
        out = tt_axpy(-1.0, ttmat_apply(self.M, inner), ttmat_apply(self.A, u))
        return tt_round(tt_axpy(-1.0, self.load, out), tt_tol * 1e-2)

    def jacobian(self, u: TTVector, tt_tol: float) -> TTMatrix:
        u2 = tt_round(tt_hadamard(u, u), tt_tol)
        m_u2 = ttmat_matmul(self.M, tt_diag(u2))
        j = tt_axpy(-1.0, self.M, self.A)
        return tt_round(tt_axpy(3.0, m_u2, j), tt_tol * 1e-2)


def newton_solve(
    system: SemilinearSystem, u0: TTVector | None = None, opts: SolverOptions | None = None
) -> tuple[TTVector, SolveStats]:
    """Step-truncation Newton: ``J delta = -L(u)``, ``u <- round(u + delta)``.

    Stops when ``||L(u)|| <= solver_tol * ||load||``.  Raises
    :class:`SolverError` if the loss grows on three consecutive iterations.
    """
    opts = opts or SolverOptions()
    _check_system(system.A, system.load)
    if system.M.row_sizes != system.A.row_sizes or system.M.col_sizes != system.A.col_sizes:
        raise ShapeMismatchError("mass and system operators differ in shape")
    shape = system.A.col_sizes
    u = TTVector.zeros(shape) if u0 is None else u0
    scale = system.load.norm()
    if scale == 0.0:
        scale = 1.0
    stats = SolveStats()
    loss = system.loss(u, opts.tt_tol)
    rel = loss.norm() / scale
    stats.residual_history.append(rel)
    increases = 0
    for it in range(1, opts.max_newton + 1):
        if rel <= opts.solver_tol:
            break
        eta = max(min(1e-2, rel), 0.5 * opts.solver_tol / rel)
        eta = float(np.clip(eta, 1e-12, 1e-2))
        jac = system.jacobian(u, opts.tt_tol)
        delta, lin = als_solve(jac, -loss, opts.replace(solver_tol=eta, progress=None, seed=opts.seed + it))
        stats.linear_sweeps.append(lin.sweeps_used)
        step = 1.0
        new_u = tt_round(tt_axpy(step, delta, u), opts.tt_tol, opts.rmax)
        new_loss = system.loss(new_u, opts.tt_tol)
        new_rel = new_loss.norm() / scale
        if opts.backtracking:
            halvings = 0
            while new_rel > rel and halvings < 5:
                step *= 0.5
                halvings += 1
                new_u = tt_round(tt_axpy(step, delta, u), opts.tt_tol, opts.rmax)
                new_loss = system.loss(new_u, opts.tt_tol)
                new_rel = new_loss.norm() / scale
        increases = increases + 1 if new_rel > rel else 0
        u, loss, rel = new_u, new_loss, new_rel
        stats.newton_iterations = it
        stats.residual_history.append(rel)
        stats.rank_history.append(u.ranks)
        _emit(opts, {"stage": "newton", "iteration": it, "residual": rel, "max_rank": max(u.ranks, default=1),
                     "linear_sweeps": lin.sweeps_used})
        log.debug("newton %d loss %.3e ranks %s", it, rel, u.ranks)
        if increases >= 3:
            raise SolverError("Newton diverged: loss grew on three consecutive iterations", stats.residual_history)
    stats.final_residual = rel
    stats.converged = rel <= opts.solver_tol
    if not stats.converged:
        log.warning("newton stopped at relative loss %.3e after %d iterations", rel, stats.newton_iterations)
    return u, stats
