from fractions import Fraction
from pathlib import Path

import pytest

from symdde.expr import Expr, ZERO, parse
from symdde.jet import FIRST_ORDER, TODA, TODA_FIELD, make_equation
from symdde.vfield import VectorField

EQUATIONS_DIR = Path(__file__).resolve().parent.parent / "equations"

TODA_RHS = "exp(u[-1]-u[0]) - exp(u[0]-u[1])"
YDKN_RHS = "u[0]^2*u[1]*u[-1]/(u[1]-u[-1])"
VOLTERRA_WINDOW_RHS = "u[0]*(u[2]-u[-2])"


@pytest.fixture(scope="session")
def toda():
    return make_equation(TODA, parse(TODA_RHS))


@pytest.fixture(scope="session")
def ydkn():
    return make_equation(FIRST_ORDER, parse(YDKN_RHS))


@pytest.fixture(scope="session")
def toda2d():
    return make_equation(TODA_FIELD, parse(TODA_RHS))


@pytest.fixture(scope="session")
def volterra_window():
    return make_equation(FIRST_ORDER, parse(VOLTERRA_WINDOW_RHS))


def toda_paper_basis():
    t = Expr.symbol("t")
    n = Expr.symbol("n")
    one = Expr.rational(1)
    return [
        VectorField.lattice(one, ZERO),          # d_t
        VectorField.lattice(ZERO, t),            # t d_u
        VectorField.lattice(ZERO, one),          # d_u
        VectorField.lattice(t, 2 * n),           # t d_t + 2n d_u
    ]


def ydkn_paper_basis():
    t = Expr.symbol("t")
    u = Expr.jet(0)
    alt = Expr.alt()
    one = Expr.rational(1)
    return [
        VectorField.lattice(one, ZERO),                      # d_t
        VectorField.lattice(ZERO, u ** 2),                   # u^2 d_u
        VectorField.lattice(ZERO, alt * u ** 2),             # alt u^2 d_u
        VectorField.lattice(t, -u * Fraction(1, 2)),         # t d_t - u/2 d_u
        VectorField.lattice(ZERO, alt * u),                  # alt u d_u
    ]


def toda2d_families():
    f = parse("f(x)", auto_functions=True)
    fp = parse("f'(x)", auto_functions=True)
    g = parse("g(y)", auto_functions=True)
    gp = parse("g'(y)", auto_functions=True)
    k = parse("k(x)", auto_functions=True)
    l = parse("l(y)", auto_functions=True)
    n = Expr.symbol("n")
    return {
        "X(f)": VectorField.field(f, ZERO, fp * n),
        "X(g)": VectorField.field(ZERO, g, gp * n),
        "U(k)": VectorField.field(ZERO, ZERO, k),
        "W(l)": VectorField.field(ZERO, ZERO, l),
    }
