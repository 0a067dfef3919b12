"""Semidiscrete jet-space operators.

The jet space carries one continuous direction (t) for lattice equations,
or two (x, y) for the field class, together with samples of the field at
every lattice offset.  This module provides the lattice shift, total
derivatives, the solved-form equation type, and reduction of expressions
on the solution manifold of an equation and its differential
consequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .expr import (
    ALT,
    Atom,
    AltAtom,
    DivisionByZero,
    Expr,
    ExprError,
    JetAtom,
    KernelAtom,
    SymbolAtom,
    UnknownAtom,
    ZERO,
    as_expr,
    bump_deriv,
    deriv_contains,
    deriv_from,
    deriv_total,
)


class JetSpaceError(ExprError):
    pass


class IllFormedEquation(ExprError):
    pass


class NonTerminatingReduction(ExprError):
    pass


FIRST_ORDER = "first_order"
TODA = "toda"
TODA_FIELD = "toda_field"

_LHS = {
    FIRST_ORDER: JetAtom(0, deriv_from("t")),
    TODA: JetAtom(0, deriv_from("tt")),
    TODA_FIELD: JetAtom(0, deriv_from("xy")),
}


# ---------------------------------------------------------------------------
# lattice shift
# ---------------------------------------------------------------------------

def shift(e: Expr, k: int) -> Expr:
    """Apply the lattice shift S^k: jets move by k sites, the symbol n
    becomes n+k, the alternating sign picks up (-1)^k, and shift-dependent
    unknown functions move with the lattice."""
    e = as_expr(e)
    if k == 0:
        return e

    n_plus_k = Expr.symbol("n") + k
    alt_k = ALT if k % 2 == 0 else -ALT

    def image(a: Atom):
        if isinstance(a, JetAtom):
            return Expr.from_atom(JetAtom(a.shift + k, a.deriv))
        if isinstance(a, SymbolAtom) and a.name == "n":
            return n_plus_k
        if isinstance(a, AltAtom):
            return alt_k
        if isinstance(a, UnknownAtom) and a.fn.n_dep == "free":
            return Expr.from_atom(UnknownAtom(a.fn, a.shift + k, a.dorders))
        return None

    return e.map_atoms(image)


# ---------------------------------------------------------------------------
# total derivatives
# ---------------------------------------------------------------------------

def total_derivative(e: Expr, direction: str = "t") -> Expr:
    """Total derivative along a continuous direction.

    Jets gain one order in the direction; the chain rule runs through
    kernels and through the declared arguments of unknown functions, so
    e.g. D_t of phi(t, u_n) is phi_t + phi_u * ut[0].
    """
    e = as_expr(e)
    if direction not in ("t", "x", "y"):
        raise JetSpaceError(f"unknown direction {direction!r}")
    for j in e.dependency_jets():
        letters = {d for d, _ in j.deriv}
        if direction == "t" and (letters & {"x", "y"}):
            raise JetSpaceError("t-derivative applied to field-class jets")
        if direction in ("x", "y") and "t" in letters:
            raise JetSpaceError("field derivative applied to lattice-class jets")
    total = e.diff(SymbolAtom(direction))
    for j in sorted(e.dependency_jets(), key=lambda a: (a.shift, a.deriv)):
        coeff = e.diff(j)
        if coeff.is_zero:
            continue
        total = total + coeff * Expr.from_atom(JetAtom(j.shift, bump_deriv(j.deriv, direction)))
    return total


def total_derivative_power(e: Expr, orders) -> Expr:
    """Iterated total derivatives for a multi-index (direction, order)."""
    for d, o in orders:
        for _ in range(o):
            e = total_derivative(e, d)
    return e


# ---------------------------------------------------------------------------
# equations in solved form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DDEquation:
    """A differential-difference equation in solved form lhs = rhs.

    kind selects the class: 'first_order' (ut[0] = f, f free of
    derivatives, arbitrary shift window), 'toda' (utt[0] = f, f may
    contain ut[0] and nearest-neighbour samples), 'toda_field'
    (uxy[0] = f with ux[0], uy[0] and nearest neighbours).
    """

    kind: str
    lhs: JetAtom
    rhs: Expr
    window: tuple[int, int]
    parameters: tuple[str, ...] = ()

    @property
    def directions(self) -> tuple[str, ...]:
        return ("x", "y") if self.kind == TODA_FIELD else ("t",)

    @property
    def order(self) -> int:
        return deriv_total(self.lhs.deriv)


def equation_window(rhs: Expr) -> tuple[int, int]:
    """Tight shift window of an expression: extreme offsets it genuinely
    depends on (dependence certified by a nonvanishing derivative)."""
    shifts = {j.shift for j in rhs.dependency_jets() if not rhs.diff(j).is_zero}
    if not shifts:
        return (0, 0)
    return (min(shifts), max(shifts))


def make_equation(kind: str, rhs: Expr, parameters: tuple[str, ...] = ()) -> DDEquation:
    """Validate and build a DDEquation of the given class."""
    if kind not in _LHS:
        raise IllFormedEquation(f"unknown equation class {kind!r}")
    lhs = _LHS[kind]
    rhs = as_expr(rhs)
    jets = rhs.dependency_jets()
    if any(isinstance(a, UnknownAtom) and a.fn.n_dep == "free"
           for a in rhs.all_atoms()):
        # generic right sides (for template work) are allowed, but their
        # declared window must still come out of the slots
        pass
    if not rhs.diff(lhs).is_zero or lhs in jets:
        raise IllFormedEquation("solved-for jet occurs in the right side")
    for j in jets:
        if kind == FIRST_ORDER:
            if j.deriv:
                raise IllFormedEquation(
                    f"first-order lattice right side contains derivative jet {j}")
        elif kind == TODA:
            if j.deriv and j != JetAtom(0, deriv_from("t")):
                raise IllFormedEquation(
                    f"second-order lattice right side may contain ut[0] only, got {j}")
            if not j.deriv and not -1 <= j.shift <= 1:
                raise IllFormedEquation(
                    f"second-order lattice right side limited to nearest neighbours, got {j}")
        else:
            if j.deriv not in ((), deriv_from("x"), deriv_from("y")):
                raise IllFormedEquation(f"field right side contains {j}")
            if j.deriv and j.shift != 0:
                raise IllFormedEquation(
                    f"field right side may contain ux[0], uy[0] only, got {j}")
            if not -1 <= j.shift <= 1:
                raise IllFormedEquation(
                    f"field right side limited to nearest neighbours, got {j}")
    window = equation_window(rhs)
    return DDEquation(kind, lhs, rhs, window, tuple(parameters))


# ---------------------------------------------------------------------------
# on-solution reduction
# ---------------------------------------------------------------------------

def _reducible(j: JetAtom, eq: DDEquation) -> bool:
    return deriv_contains(j.deriv, eq.lhs.deriv)


def _replacement(j: JetAtom, eq: DDEquation) -> Expr:
    extra = []
    base = dict(eq.lhs.deriv)
    for d, o in j.deriv:
        rem = o - base.get(d, 0)
        if rem:
            extra.append((d, rem))
    r = shift(eq.rhs, j.shift)
    return total_derivative_power(r, extra)


def on_solution_reduce(e: Expr, eq: DDEquation, max_order: int | None = None) -> Expr:
    """Substitute the solved jet and all its shifted differential
    consequences until no reducible jet remains.

    Highest-order jets are eliminated first; every substitution strictly
    lowers the top reducible order, so the loop terminates.
    """
    e = as_expr(e)
    present = max((deriv_total(j.deriv) for j in e.dependency_jets()), default=0)
    if max_order is None:
        max_order = max(eq.order + 1, present)
    guard = 0
    while True:
        reducible = [j for j in e.dependency_jets() if _reducible(j, eq)]
        if not reducible:
            return e
        worst = max(deriv_total(j.deriv) for j in reducible)
        if worst > max_order:
            raise NonTerminatingReduction(
                f"reducible jet of order {worst} exceeds max_order={max_order}")
        guard += 1
        if guard > 1000:
            raise NonTerminatingReduction("reduction did not reach a fixpoint")
        target = max(reducible, key=lambda j: (deriv_total(j.deriv), abs(j.shift), j.shift))
        e = e.substitute({target: _replacement(target, eq)})
