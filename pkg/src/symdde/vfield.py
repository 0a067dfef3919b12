"""Vector fields, characteristics, and prolongations.

Point-symmetry generators act on (t, u_n) for lattice equations or on
(x, y, u_n) for the field class.  Two prolongation formalisms are
implemented: the evolutionary one, which acts only on the field and its
jet coordinates through the characteristic, and the standard one, which
also moves the continuous independent variable and carries a discrete
correction term proportional to the difference of the time coefficient
at distinct sites.  The two are related by

    pr X = pr X_E + tau * D_t        (lattice)
    pr X = pr X_E + xi * D_x + eta * D_y   (field)

and ``equivalence_residual`` returns the defect of that identity, which
must normalize to zero for every field and expression.
"""

from __future__ import annotations

from dataclasses import dataclass

from .expr import (
    Expr,
    ExprError,
    JetAtom,
    SymbolAtom,
    ZERO,
    as_expr,
    bump_deriv,
    deriv_total,
)
from .jet import shift, total_derivative, total_derivative_power


class KindMismatch(ExprError):
    pass


LATTICE = "lattice"
FIELD = "field"


@dataclass(frozen=True)
class VectorField:
    """A point-symmetry generator.

    Lattice kind: tau * d/dt + phi * d/du_n.
    Field kind:   xi * d/dx + eta * d/dy + phi * d/du_n.

    Coefficients may be concrete expressions or applications of unknown
    functions; they depend at most on the base variables and u_n.
    """

    kind: str
    phi: Expr
    tau: Expr | None = None
    xi: Expr | None = None
    eta: Expr | None = None

    @staticmethod
    def lattice(tau, phi) -> "VectorField":
        return VectorField(LATTICE, as_expr(phi), tau=as_expr(tau))

    @staticmethod
    def field(xi, eta, phi) -> "VectorField":
        return VectorField(FIELD, as_expr(phi), xi=as_expr(xi), eta=as_expr(eta))

    def scaled(self, c) -> "VectorField":
        if self.kind == LATTICE:
            return VectorField.lattice(self.tau * c, self.phi * c)
        return VectorField.field(self.xi * c, self.eta * c, self.phi * c)

    def plus(self, other: "VectorField") -> "VectorField":
        if self.kind != other.kind:
            raise KindMismatch("cannot add fields of different kinds")
        if self.kind == LATTICE:
            return VectorField.lattice(self.tau + other.tau, self.phi + other.phi)
        return VectorField.field(self.xi + other.xi, self.eta + other.eta,
                                 self.phi + other.phi)

    def coefficients(self) -> dict[str, Expr]:
        if self.kind == LATTICE:
            return {"tau": self.tau, "phi": self.phi}
        return {"xi": self.xi, "eta": self.eta, "phi": self.phi}

    def __str__(self):
        parts = [f"{name} = {c};" for name, c in self.coefficients().items()]
        return " ".join(parts)


def characteristic(x: VectorField) -> Expr:
    """Evolutionary characteristic: phi - tau*ut (lattice) or
    phi - xi*ux - eta*uy (field)."""
    if x.kind == LATTICE:
        return x.phi - x.tau * Expr.jet(0, "t")
    return x.phi - x.xi * Expr.jet(0, "x") - x.eta * Expr.jet(0, "y")


def apply_prolonged_evolutionary(x: VectorField, e: Expr) -> Expr:
    """Apply the prolonged evolutionary field: the characteristic is
    shifted to every site occurring in the expression and pushed through
    total derivatives onto every jet coordinate present."""
    e = as_expr(e)
    q = characteristic(x)
    total = ZERO
    for j in sorted(e.dependency_jets(), key=lambda a: (a.shift, a.deriv)):
        coeff = e.diff(j)
        if coeff.is_zero:
            continue
        qj = shift(q, j.shift)
        qj = total_derivative_power(qj, j.deriv)
        total = total + coeff * qj
    return total


def _phi_bracket(x: VectorField, j: int, k: int, cache: dict) -> Expr:
    """Classical prolongation coefficient at site j and t-order k:
    phi_j^[k] = D_t phi_j^[k-1] - (D_t tau_j) * u_j^(k)."""
    key = (j, k)
    if key in cache:
        return cache[key]
    if k == 0:
        val = shift(x.phi, j)
    else:
        prev = _phi_bracket(x, j, k - 1, cache)
        tau_j = shift(x.tau, j)
        val = total_derivative(prev) - total_derivative(tau_j) * Expr.jet(j, (("t", k),))
    cache[key] = val
    return val


def apply_prolonged_standard(x: VectorField, e: Expr) -> Expr:
    """Apply the prolonged standard field.

    Lattice kind: tau*d/dt plus, on every jet u_j^(k) present (k >= 0),
    the classical coefficient phi_j^[k] plus the discrete correction
    (tau_n - tau_j) * u_j^(k+1) that has no continuous analogue.
    Field kind: realized as the evolutionary action plus xi*D_x + eta*D_y.
    """
    e = as_expr(e)
    if x.kind == FIELD:
        return (apply_prolonged_evolutionary(x, e)
                + x.xi * total_derivative(e, "x")
                + x.eta * total_derivative(e, "y"))
    cache: dict = {}
    total = x.tau * e.diff(SymbolAtom("t"))
    for j in sorted(e.dependency_jets(), key=lambda a: (a.shift, a.deriv)):
        coeff = e.diff(j)
        if coeff.is_zero:
            continue
        k = deriv_total(j.deriv)
        if j.deriv and j.deriv[0][0] != "t":
            raise KindMismatch("lattice prolongation applied to field-class jets")
        term = _phi_bracket(x, j.shift, k, cache)
        correction = (x.tau - shift(x.tau, j.shift)) * Expr.jet(j.shift, (("t", k + 1),))
        total = total + coeff * (term + correction)
    return total


def equivalence_residual(x: VectorField, e: Expr) -> Expr:
    """Standard minus evolutionary action minus the total-derivative part;
    identically zero by the equivalence of the two formalisms."""
    e = as_expr(e)
    std = apply_prolonged_standard(x, e)
    evo = apply_prolonged_evolutionary(x, e)
    if x.kind == LATTICE:
        return std - evo - x.tau * total_derivative(e, "t")
    return std - evo - x.xi * total_derivative(e, "x") - x.eta * total_derivative(e, "y")


_DERIVATION_VARS = {
    LATTICE: (("tau", SymbolAtom("t")), ("phi", JetAtom(0, ()))),
    FIELD: (("xi", SymbolAtom("x")), ("eta", SymbolAtom("y")), ("phi", JetAtom(0, ()))),
}


def apply_as_derivation(x: VectorField, g: Expr) -> Expr:
    """Apply the field as a first-order derivation in its declared
    variables; n and the alternating sign are passive labels."""
    coeffs = x.coefficients()
    total = ZERO
    for name, var in _DERIVATION_VARS[x.kind]:
        d = as_expr(g).diff(var)
        if not d.is_zero:
            total = total + coeffs[name] * d
    return total


def commutator(x: VectorField, y: VectorField) -> VectorField:
    """Lie bracket [x, y] computed on the coefficient functions."""
    if x.kind != y.kind:
        raise KindMismatch("commutator of fields of different kinds")
    xc, yc = x.coefficients(), y.coefficients()
    new = {name: apply_as_derivation(x, yc[name]) - apply_as_derivation(y, xc[name])
           for name in xc}
    if x.kind == LATTICE:
        return VectorField.lattice(new["tau"], new["phi"])
    return VectorField.field(new["xi"], new["eta"], new["phi"])
