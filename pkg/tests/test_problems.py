import numpy as np
import pytest

from ttsem.exceptions import InputError
from ttsem.problems import CATALOG, cdr, custom_problem, expression, get_problem, poisson, semilinear

H = 1e-3


def _d(f, axis, pt, order=1):
    """Fourth-order central differences of ``f(t, x, y, z)`` along ``axis``."""
    def at(s):
        p = list(pt)
        p[axis] = p[axis] + s * H
        return f(*p)

    if order == 1:
        return (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * H)
    return (-at(2) + 16 * at(1) - 30 * at(0) + 16 * at(-1) - at(-2)) / (12 * H * H)


def _flux_div(kappa, u, pt):
    """``div(kappa grad u)`` by nested differences."""
    total = 0.0
    for ax in (1, 2, 3):
        flux = lambda *p, ax=ax: kappa(*p) * _d(u, ax, p)
        total = total + _d(flux, ax, pt)
    return total


def _points(n, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 0.9, (n, 4)).T


def test_poisson_forcing_is_consistent():
    p = poisson()
    pt = _points(100, 0)
    resid = -_flux_div(p.kappa, p.exact, pt) - p.forcing(*pt)
    assert np.max(np.abs(resid)) <= 1e-6 * np.max(np.abs(p.forcing(*pt)))


def test_cdr_forcing_is_consistent():
    p = cdr()
    pt = _points(100, 1)
    u = p.exact
    conv = sum(b(*pt) * _d(u, ax, pt) for b, ax in zip(p.velocity, (1, 2, 3)))
    lhs = _d(u, 0, pt) - _flux_div(p.kappa, u, pt) + conv + p.reaction(*pt) * u(*pt)
    assert np.max(np.abs(lhs - p.forcing(*pt))) <= 1e-6 * np.max(np.abs(p.forcing(*pt)))


def test_semilinear_forcing_is_consistent():
    p = semilinear()
    pt = _points(100, 2)
    u = p.exact
    uv = u(*pt)
    lap = sum(_d(u, ax, pt, order=2) for ax in (1, 2, 3))
    lhs = _d(u, 0, pt) - lap - (uv - uv**3)
    assert np.max(np.abs(lhs - p.forcing(*pt))) <= 1e-6 * np.max(np.abs(p.forcing(*pt)))


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_exact_solutions_match_boundary_data(name):
    p = get_problem(name)
    rng = np.random.default_rng(3)
    t, a, b = rng.uniform(0, 1, (3, 50))
    for face in (0.0, 1.0):
        for pts in ((t, face + 0 * a, a, b), (t, a, face + 0 * a, b), (t, a, b, face + 0 * a)):
            want = p.boundary(*pts) if p.boundary is not None else 0.0
            np.testing.assert_allclose(p.exact(*pts), want, atol=1e-12)
    if p.time_dependent:
        pts = (0 * t, t, a, b)
        want = p.initial(*pts) if p.initial is not None else 0.0
        np.testing.assert_allclose(p.exact(*pts), want, atol=1e-12)


def test_unknown_problem():
    with pytest.raises(InputError, match="unknown problem"):
        get_problem("heat")


def test_expression_evaluates_and_broadcasts():
    f = expression("sin(pi*x) + t*y - z**2")
    x = np.linspace(0, 1, 5)
    np.testing.assert_allclose(f(0.5, x, 1.0, 2.0), np.sin(np.pi * x) + 0.5 - 4.0)
    assert f(0.0, x, 0.0, 0.0).shape == (5,)
    assert expression("1")(0.0, x, x, x).shape == (5,)


@pytest.mark.parametrize("src", ["__import__('os')", "open('x')", "x.__class__", "np.sin(x)", "", "x +"])
def test_expression_rejects_unsafe_or_bad_input(src):
    with pytest.raises(InputError):
        expression(src)


def test_custom_problem():
    p = custom_problem({"kappa": "1 + x", "bx": "y", "f": "1", "g": "0"}, kind="linear-cdr", final_time=2.0)
    assert p.time_dependent and p.final_time == 2.0
    assert p.velocity[1] is None and p.velocity[0] is not None
    with pytest.raises(InputError):
        custom_problem({"q": "x"})
    with pytest.raises(InputError):
        custom_problem({"f": "1"}, final_time=-1.0)
