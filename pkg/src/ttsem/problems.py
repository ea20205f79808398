"""Problem catalog: coefficients, data and manufactured solutions.

All closures take ``(t, x, y, z)`` arrays (``t`` is ignored by stationary
problems) and broadcast.  Forcings are derived by hand from the manufactured
solutions; the test suite cross-checks them against finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import InputError

Closure = Callable[..., np.ndarray]
KINDS = ("stationary-diffusion", "linear-cdr", "semilinear")

pi = np.pi


@dataclass(frozen=True)
class ProblemSpec:
    """Convection-diffusion-reaction problem ``u_t - div(k grad u) + b.grad u + c u = f``.

    ``velocity`` is ``(b_x, b_y, b_z)``; any entry (or the whole tuple, or
    ``reaction``) may be ``None`` for an absent term.  Semilinear problems
    add ``u - u^3`` to the right-hand side and fix ``kappa = 1``, ``b = 0``.
    """

    name: str
    kind: str
    kappa: Optional[Closure] = None
    velocity: Optional[tuple] = None
    reaction: Optional[Closure] = None
    forcing: Optional[Closure] = None
    boundary: Optional[Closure] = None
    initial: Optional[Closure] = None
    exact: Optional[Closure] = None
    bounds: tuple = ((0.0, 1.0),) * 3
    final_time: float = 1.0
    description: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown problem kind {self.kind!r}")
        if self.kind == "semilinear" and (self.velocity is not None or self.reaction is not None):
            raise InputError("semilinear problems carry no convection or reaction closures")
        if self.velocity is not None and len(self.velocity) != 3:
            raise InputError("velocity needs three components (b_x, b_y, b_z)")

    @property
    def time_dependent(self) -> bool:
        return self.kind != "stationary-diffusion"

    def grid_bounds(self) -> tuple:
        """Bounds in train order (``t, z, y, x`` or ``z, y, x``)."""
        (x0, x1), (y0, y1), (z0, z1) = self.bounds
        space = ((z0, z1), (y0, y1), (x0, x1))
        return (((0.0, self.final_time),) + space) if self.time_dependent else space


def _ones(t, x, y, z):
    return np.ones(np.broadcast(t, x, y, z).shape)


# --- Poisson ------------------------------------------------------------------

def _poisson_kappa(t, x, y, z):
    return 1.0 + np.cos(pi * (x + y)) * np.cos(pi * z)


def _poisson_exact(t, x, y, z):
    return np.sin(pi * x) * np.sin(pi * y) * np.sin(pi * z) + 0.0 * t


def _poisson_forcing(t, x, y, z):
    sx, sy, sz = np.sin(pi * x), np.sin(pi * y), np.sin(pi * z)
    cx, cy, cz = np.cos(pi * x), np.cos(pi * y), np.cos(pi * z)
    kx = -pi * np.sin(pi * (x + y)) * cz
    kz = -pi * np.cos(pi * (x + y)) * np.sin(pi * z)
    grad_dot = kx * pi * cx * sy * sz + kx * pi * sx * cy * sz + kz * pi * sx * sy * cz
    lap = -3 * pi**2 * sx * sy * sz
    return -(grad_dot + _poisson_kappa(t, x, y, z) * lap)


def poisson() -> ProblemSpec:
    return ProblemSpec(
        name="poisson",
        kind="stationary-diffusion",
        kappa=_poisson_kappa,
        forcing=_poisson_forcing,
        boundary=_poisson_exact,
        exact=_poisson_exact,
        description="-div(k grad u) = f, k = 1 + cos(pi(x+y))cos(pi z), u = sin(pi x)sin(pi y)sin(pi z)",
    )


# --- space-time CDR -----------------------------------------------------------

def _cdr_kappa(t, x, y, z):
    return 1.0 + np.cos(pi * x) * np.cos(pi * y) * np.cos(pi * z) + 0.0 * t


def _cdr_reaction(t, x, y, z):
    return np.exp(-(x + y + z)) + 0.0 * t


def _cdr_exact(t, x, y, z):
    return np.sin(pi * (t + x + y + z))


def _cdr_forcing(t, x, y, z):
    s = t + x + y + z
    cs, ss = np.cos(pi * s), np.sin(pi * s)
    cx, cy, cz = np.cos(pi * x), np.cos(pi * y), np.cos(pi * z)
    sx, sy, sz = np.sin(pi * x), np.sin(pi * y), np.sin(pi * z)
    grad_k_sum = -pi * (sx * cy * cz + cx * sy * cz + cx * cy * sz)
    kappa = _cdr_kappa(t, x, y, z)
    u_t = pi * cs
    grad_k_dot_grad_u = grad_k_sum * pi * cs
    lap = -3 * pi**2 * ss
    conv = (x + y + z) * pi * cs
    return u_t - grad_k_dot_grad_u - kappa * lap + conv + _cdr_reaction(t, x, y, z) * ss


def cdr() -> ProblemSpec:
    return ProblemSpec(
        name="cdr",
        kind="linear-cdr",
        kappa=_cdr_kappa,
        velocity=(lambda t, x, y, z: x + 0.0 * t, lambda t, x, y, z: y + 0.0 * t, lambda t, x, y, z: z + 0.0 * t),
        reaction=_cdr_reaction,
        forcing=_cdr_forcing,
        boundary=_cdr_exact,
        initial=_cdr_exact,
        exact=_cdr_exact,
        description="space-time CDR, k = 1 + cos cos cos, b = (x, y, z), c = exp(-(x+y+z)), u = sin(pi(t+x+y+z))",
    )


# --- semilinear ---------------------------------------------------------------

def _semi_terms(t, x, y, z):
    a = np.sin(pi * x) * np.sin(pi * y) * np.sin(pi * z)
    b = np.sin(2 * pi * x) * np.sin(2 * pi * y) * np.sin(2 * pi * z)
    return a, b


def _semi_exact(t, x, y, z):
    a, b = _semi_terms(t, x, y, z)
    return a * np.sin(pi * t) + b * np.sin(2 * pi * t)


def _semi_forcing(t, x, y, z):
    a, b = _semi_terms(t, x, y, z)
    u = a * np.sin(pi * t) + b * np.sin(2 * pi * t)
    u_t = pi * a * np.cos(pi * t) + 2 * pi * b * np.cos(2 * pi * t)
    lap = -3 * pi**2 * a * np.sin(pi * t) - 12 * pi**2 * b * np.sin(2 * pi * t)
    return u_t - lap - u + u**3


def semilinear() -> ProblemSpec:
    return ProblemSpec(
        name="semilinear",
        kind="semilinear",
        kappa=_ones,
        forcing=_semi_forcing,
        exact=_semi_exact,
        description="u_t - lap u = u - u^3 + f with a two-mode sine solution",
    )


# --- small helpers for tests and the CLI ---------------------------------------

def zero_problem(kind: str = "linear-cdr") -> ProblemSpec:
    zero = lambda t, x, y, z: np.zeros(np.broadcast(t, x, y, z).shape)
    return ProblemSpec(name="zero", kind=kind, kappa=_ones, forcing=zero, boundary=zero, initial=zero, exact=zero)


CATALOG: dict[str, Callable[[], ProblemSpec]] = {
    "poisson": poisson,
    "cdr": cdr,
    "semilinear": semilinear,
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return CATALOG[name]()
    except KeyError:
        raise InputError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None


#: Diffusion coefficients of the operator rank study: (label, closure, tolerance).
RANK_STUDY = [
    ("1", _ones, 1e-12),
    ("1+xyz", lambda t, x, y, z: 1.0 + x * y * z, 1e-12),
    ("1+cos(pi(x+y))cos(pi z)", _poisson_kappa, 1e-12),
    ("1/(1+x+y+z)", lambda t, x, y, z: 1.0 / (1.0 + x + y + z), 1e-6),
    ("1/(1+x+y+z)", lambda t, x, y, z: 1.0 / (1.0 + x + y + z), 1e-12),
]


# --- user-defined problems from expressions -----------------------------------

_SAFE_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh", "arctan", "abs", "pi", "e")
}


def expression(src: str) -> Closure:
    """Compile a numpy expression in ``t, x, y, z`` into a closure.

    Only elementary functions from a fixed whitelist are visible.
    """
    src = src.strip()
    if not src:
        raise InputError("empty expression")
    try:
        code = compile(src, "<expression>", "eval")
    except SyntaxError as exc:
        raise InputError(f"cannot parse expression {src!r}: {exc.msg}") from None
    allowed = set(_SAFE_NAMES) | {"t", "x", "y", "z"}
    for name in code.co_names:
        if name not in allowed:
            raise InputError(f"name {name!r} is not allowed in expression {src!r}")

    def f(t, x, y, z):
        env = dict(_SAFE_NAMES, t=t, x=x, y=y, z=z)
        val = eval(code, {"__builtins__": {}}, env)
        return np.asarray(val, dtype=float) + 0.0 * (t + x + y + z)

    f.__doc__ = src
    return f


def custom_problem(fields: dict[str, str], kind: str = "linear-cdr", final_time: float = 1.0) -> ProblemSpec:
    """Build a problem from expression strings keyed by
    ``kappa, bx, by, bz, c, f, g, u0, exact``.
    """
    known = {"kappa", "bx", "by", "bz", "c", "f", "g", "u0", "exact"}
    unknown = set(fields) - known
    if unknown:
        raise InputError(f"unknown problem field(s): {', '.join(sorted(unknown))}")
    comp = {k: expression(v) for k, v in fields.items() if v is not None and str(v).strip()}
    vel = None
    if any(k in comp for k in ("bx", "by", "bz")):
        vel = (comp.get("bx"), comp.get("by"), comp.get("bz"))
    if not math.isfinite(final_time) or final_time <= 0:
        raise InputError("final time must be positive")
    return ProblemSpec(
        name="custom",
        kind=kind,
        kappa=comp.get("kappa", _ones),
        velocity=vel,
        reaction=comp.get("c"),
        forcing=comp.get("f"),
        boundary=comp.get("g"),
        initial=comp.get("u0"),
        exact=comp.get("exact"),
        final_time=final_time,
        description="user-defined",
    )
