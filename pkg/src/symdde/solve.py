"""Solving determining systems under a finite ansatz.

The unknown coefficient functions are expanded as polynomials in the
field value and the continuous variables, with site dependence running
over a configurable basis (constants, the site index n, and the
alternating sign).  Substituting the expansion into the determining
system and collecting in everything that is not a scalar coefficient
yields an exact homogeneous linear system; its nullspace, computed by
fraction-free-careful Gaussian elimination over the rationals, is the
symmetry algebra within the ansatz.  Structure constants are obtained by
expressing pairwise commutators in the solved basis, again by exact
linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .expr import (
    ALT,
    Expr,
    ExprError,
    JetAtom,
    SymbolAtom,
    UnknownAtom,
    UnknownFn,
    ZERO,
    as_expr,
    atom_key,
)
from .det import DeterminingSystem
from .jet import DDEquation, TODA_FIELD, on_solution_reduce
from .vfield import VectorField, apply_prolonged_evolutionary, commutator


class NotClosed(ExprError):
    pass


N_BASIS = ("1", "n", "alt")


@dataclass(frozen=True)
class AnsatzConfig:
    """Finite search space for the unknown coefficients.

    udeg bounds the degree in the field value, tdeg the degree in each
    continuous variable, nbasis the site-dependence basis.
    """

    udeg: int = 2
    tdeg: int = 2
    nbasis: tuple[str, ...] = N_BASIS

    def __post_init__(self):
        if self.udeg < 0 or self.tdeg < 0:
            raise ExprError("degree bounds must be non-negative")
        if not self.nbasis:
            raise ExprError("site basis must be non-empty")
        for b in self.nbasis:
            if b not in N_BASIS:
                raise ExprError(f"unknown site basis element {b!r}")


@dataclass(frozen=True)
class CoeffVar:
    """One scalar unknown: fn expanded with the given powers and basis."""

    fn_name: str
    sym_powers: tuple[int, ...]   # per symbol slot, in slot order
    u_power: int
    basis: str

    def label(self) -> str:
        return f"{self.fn_name}[{','.join(map(str, self.sym_powers))};u^{self.u_power};{self.basis}]"


@dataclass
class LinearSystem:
    variables: tuple[CoeffVar, ...]
    rows: list[tuple[Fraction, ...]]
    unknown_fns: dict[str, UnknownFn] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.variables))


def _basis_value(b: str, shift: int) -> Expr:
    if b == "1":
        return Expr.rational(1)
    if b == "n":
        return Expr.symbol("n") + shift
    return ALT if shift % 2 == 0 else -ALT


def _falling(e: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= (e - i)
    return out


def ansatz_variables(fn: UnknownFn, cfg: AnsatzConfig) -> list[CoeffVar]:
    sym_slots = [s for s in fn.slots if s[0] == "sym"]
    has_u = any(s[0] == "jet" for s in fn.slots)
    basis = cfg.nbasis if fn.n_dep == "free" else ("1",)
    out = []
    ranges = [range(cfg.tdeg + 1)] * len(sym_slots)

    def rec(i, acc):
        if i == len(ranges):
            for d in range(cfg.udeg + 1 if has_u else 1):
                for b in basis:
                    out.append(CoeffVar(fn.name, tuple(acc), d, b))
            return
        for e in ranges[i]:
            rec(i + 1, acc + [e])

    rec(0, [])
    return out


def _substitution(fn_vars: dict[str, list[CoeffVar]],
                  fns: dict[str, UnknownFn]):
    """Atom substitution realizing the ansatz, with derivatives applied to
    the expansion term by term."""

    def image(a):
        if not isinstance(a, UnknownAtom) or a.fn.name not in fn_vars:
            return None
        fn = a.fn
        sym_slots = [i for i, s in enumerate(fn.slots) if s[0] == "sym"]
        jet_slots = [i for i, s in enumerate(fn.slots) if s[0] == "jet"]
        total = ZERO
        for var in fn_vars[fn.name]:
            coeff = Expr.symbol(_cname(var))
            term = coeff
            ok = True
            for pos, slot_i in enumerate(sym_slots):
                e = var.sym_powers[pos]
                k = a.dorders[slot_i]
                fac = _falling(e, k)
                if fac == 0:
                    ok = False
                    break
                term = term * fac
                if e - k:
                    term = term * Expr.symbol(fn.slots[slot_i][1]) ** (e - k)
            if not ok:
                continue
            for slot_i in jet_slots:
                d = var.u_power
                k = a.dorders[slot_i]
                fac = _falling(d, k)
                if fac == 0:
                    ok = False
                    break
                term = term * fac
                if d - k:
                    rel = fn.slots[slot_i][1]
                    term = term * Expr.jet(a.shift + rel, ()) ** (d - k)
            if not ok:
                continue
            term = term * _basis_value(var.basis, a.shift)
            total = total + term
        return total

    return image


_CPREFIX = "c_"


def _cname(var: CoeffVar) -> str:
    body = f"{var.fn_name}_{'_'.join(map(str, var.sym_powers))}_{var.u_power}_{var.basis}"
    return _CPREFIX + body.replace("-", "m")


def expand_ansatz(system: DeterminingSystem, cfg: AnsatzConfig) -> LinearSystem:
    """Substitute the finite expansion into every constraint, collect in
    all remaining atoms, and return the exact scalar linear system."""
    fns: dict[str, UnknownFn] = {}
    for row in system.rows:
        for a in row.all_atoms():
            if isinstance(a, UnknownAtom):
                prev = fns.setdefault(a.fn.name, a.fn)
                if prev != a.fn:
                    raise ExprError(f"conflicting declarations of unknown {a.fn.name}")
    order = {"tau": 0, "xi": 1, "eta": 2, "phi": 3}
    names = sorted(fns, key=lambda nm: (order.get(nm, 9), nm))
    fn_vars = {nm: ansatz_variables(fns[nm], cfg) for nm in names}
    variables: list[CoeffVar] = [v for nm in names for v in fn_vars[nm]]
    index = {_cname(v): i for i, v in enumerate(variables)}
    image = _substitution(fn_vars, fns)
    rows: list[tuple[Fraction, ...]] = []
    seen = set()
    for row in system.rows:
        expanded = row.map_atoms(image)
        if expanded.is_zero:
            continue
        num = expanded.num
        buckets: dict[tuple, dict[int, Fraction]] = {}
        for mono, c in num.terms.items():
            cvar = None
            rest = []
            for a, e in mono:
                if isinstance(a, SymbolAtom) and a.name in index:
                    if cvar is not None or e != 1:
                        raise ExprError("determining system is not linear in the "
                                        "ansatz coefficients")
                    cvar = index[a.name]
                else:
                    rest.append((a, e))
            if cvar is None:
                raise ExprError("inhomogeneous term in determining system")
            key = tuple((atom_key(a), e) for a, e in rest)
            buckets.setdefault(key, {})[cvar] = buckets.setdefault(key, {}).get(cvar, Fraction(0)) + c
        for key, entries in sorted(buckets.items()):
            vec = [Fraction(0)] * len(variables)
            for i, c in entries.items():
                vec[i] = c
            vec = tuple(vec)
            if any(vec) and vec not in seen:
                seen.add(vec)
                rows.append(vec)
    return LinearSystem(tuple(variables), rows, fns)


# ---------------------------------------------------------------------------
# exact nullspace
# ---------------------------------------------------------------------------

def nullspace(rows: list[tuple[Fraction, ...]], ncols: int) -> list[tuple[Fraction, ...]]:
    """Basis of the solution space of a homogeneous system, by exact
    Gaussian elimination with deterministic (left-to-right) pivoting."""
    m = [list(r) for r in rows]
    pivots: dict[int, int] = {}
    r = 0
    for col in range(ncols):
        sel = None
        for i in range(r, len(m)):
            if m[i][col]:
                sel = i
                break
        if sel is None:
            continue
        m[r], m[sel] = m[sel], m[r]
        pv = m[r][col]
        m[r] = [x / pv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][col]:
                f = m[i][col]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots[col] = r
        r += 1
        if r == len(m):
            break
    free_cols = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free_cols:
        vec = [Fraction(0)] * ncols
        vec[fc] = Fraction(1)
        for pc, pr in pivots.items():
            vec[pc] = -m[pr][fc]
        basis.append(tuple(vec))
    return basis


def _integerize(vec: tuple[Fraction, ...]) -> tuple[Fraction, ...]:
    den = 1
    for c in vec:
        den = den * c.denominator // math.gcd(den, c.denominator)
    scaled = [c * den for c in vec]
    g = 0
    for c in scaled:
        g = math.gcd(g, abs(c.numerator))
    if g > 1:
        scaled = [c / g for c in scaled]
    lead = next((c for c in scaled if c), Fraction(1))
    if lead < 0:
        scaled = [-c for c in scaled]
    return tuple(scaled)


def solve_linear(ls: LinearSystem) -> list[tuple[Fraction, ...]]:
    """Nullspace basis, rescaled to primitive integer vectors and ordered
    for readability (lowest field degree and time degree first)."""
    basis = [_integerize(v) for v in nullspace(ls.rows, len(ls.variables))]

    def sort_key(vec):
        support = [ls.variables[i] for i, c in enumerate(vec) if c]
        ud = max((v.u_power for v in support), default=0)
        td = max((sum(v.sym_powers) for v in support), default=0)
        bidx = max((N_BASIS.index(v.basis) for v in support), default=0)
        return (len(support), ud, td, bidx,
                tuple(i for i, c in enumerate(vec) if c))

    basis.sort(key=sort_key)
    return basis


def vector_to_field(vec, ls: LinearSystem, eq: DDEquation) -> VectorField:
    """Reassemble a concrete generator from a coefficient vector."""
    coeffs: dict[str, Expr] = {}
    for var, c in zip(ls.variables, vec):
        if not c:
            continue
        fn = ls.unknown_fns[var.fn_name]
        term = Expr.rational(c)
        pos = 0
        for slot in fn.slots:
            if slot[0] == "sym":
                e = var.sym_powers[pos]
                pos += 1
                if e:
                    term = term * Expr.symbol(slot[1]) ** e
            else:
                if var.u_power:
                    term = term * Expr.jet(slot[1], ()) ** var.u_power
        term = term * _basis_value(var.basis, 0)
        coeffs[var.fn_name] = coeffs.get(var.fn_name, ZERO) + term
    if eq.kind == TODA_FIELD:
        return VectorField.field(coeffs.get("xi", ZERO), coeffs.get("eta", ZERO),
                                 coeffs.get("phi", ZERO))
    return VectorField.lattice(coeffs.get("tau", ZERO), coeffs.get("phi", ZERO))


# ---------------------------------------------------------------------------
# verification and structure constants
# ---------------------------------------------------------------------------

def verify_candidate(eq: DDEquation, x: VectorField) -> Expr:
    """Fully reduced residual of the prolonged action on the equation;
    zero certifies the symmetry.  Formal one-variable functions in the
    coefficients are carried along with their formal derivatives."""
    e = Expr.from_atom(eq.lhs) - eq.rhs
    return on_solution_reduce(apply_prolonged_evolutionary(x, e), eq)


def _solve_exact(columns: list[tuple[Fraction, ...]], target: tuple[Fraction, ...]):
    """Solve sum_k x_k * columns[k] == target exactly; None if inconsistent."""
    ncols = len(columns)
    nrows = len(target)
    aug = [[columns[k][i] for k in range(ncols)] + [target[i]] for i in range(nrows)]
    piv = []
    r = 0
    for col in range(ncols):
        sel = next((i for i in range(r, nrows) if aug[i][col]), None)
        if sel is None:
            continue
        aug[r], aug[sel] = aug[sel], aug[r]
        pv = aug[r][col]
        aug[r] = [x / pv for x in aug[r]]
        for i in range(nrows):
            if i != r and aug[i][col]:
                f = aug[i][col]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[r])]
        piv.append(col)
        r += 1
    for i in range(r, nrows):
        if aug[i][ncols]:
            return None
    x = [Fraction(0)] * ncols
    for i, col in enumerate(piv):
        x[col] = aug[i][ncols]
    return tuple(x)


@dataclass
class LieAlgebraBasis:
    """Solved generators with their structure constants.

    structure[(i, j)] holds the coordinates of [X_i, X_j] in the basis;
    closed is False when some commutator leaves the span, in which case
    the offending pairs are listed in defects.
    """

    fields: tuple[VectorField, ...]
    structure: dict[tuple[int, int], tuple[Fraction, ...]]
    closed: bool
    defects: tuple[tuple[int, int], ...] = ()

    @property
    def dimension(self) -> int:
        return len(self.fields)

    def adjoint_matrix(self, i: int, on: tuple[int, ...]) -> list[list[Fraction]]:
        """Rows give [X_i, X_j] for j in ``on``, expressed in the ``on``
        sub-basis; nonzero coordinates outside it raise NotClosed."""
        rows = []
        for j in on:
            coords = self.structure[(i, j)]
            for k, c in enumerate(coords):
                if c and k not in on:
                    raise NotClosed(f"[X_{i+1}, X_{j+1}] leaves the requested span")
            rows.append([coords[k] for k in on])
        return rows

    def nilpotent_indices(self) -> tuple[int, ...]:
        """Basis elements whose adjoint action on the span is nilpotent
        (candidates for a nilradical; maximality is not asserted)."""
        out = []
        dim = self.dimension
        for i in range(dim):
            ad = [[self.structure[(i, j)][k] for j in range(dim)] for k in range(dim)]
            m = ad
            for _ in range(dim):
                m = [[sum(m[a][b] * ad[b][c] for b in range(dim)) for c in range(dim)]
                     for a in range(dim)]
            if all(not m[a][c] for a in range(dim) for c in range(dim)):
                out.append(i)
        return tuple(out)


def in_span(basis: list[VectorField], candidate: VectorField):
    """Coordinates of the candidate in the exact span of the basis, or
    None when it lies outside."""
    keys: list[tuple] = []
    key_index: dict[tuple, int] = {}

    def vectorize(f: VectorField, grow: bool):
        entries: dict[int, Fraction] = {}
        for name, c in f.coefficients().items():
            if not c.den.is_const():
                raise NotClosed(f"coefficient {name} is not polynomial")
            scale = Fraction(1) / c.den.const_value()
            for mono, coeff in c.num.terms.items():
                k = (name, tuple((atom_key(a), e) for a, e in mono))
                if k not in key_index:
                    if not grow:
                        return None
                    key_index[k] = len(keys)
                    keys.append(k)
                entries[key_index[k]] = entries.get(key_index[k], Fraction(0)) + coeff * scale
        return entries

    vecs = [vectorize(f, grow=True) for f in basis]
    target = vectorize(candidate, grow=False)
    if target is None:
        return None
    dim = len(keys)
    columns = [tuple(v.get(i, Fraction(0)) for i in range(dim)) for v in vecs]
    return _solve_exact(columns, tuple(target.get(i, Fraction(0)) for i in range(dim)))


def structure_constants(fields: list[VectorField]) -> LieAlgebraBasis:
    """All pairwise commutators expressed in the given basis by exact
    linear algebra; antisymmetry fills the lower triangle."""
    keys: list[tuple] = []
    key_index: dict[tuple, int] = {}
    vectors: list[dict[int, Fraction]] = []
    for f in fields:
        entries: dict[int, Fraction] = {}
        for name, c in f.coefficients().items():
            if not c.den.is_const():
                raise NotClosed(f"coefficient {name} is not polynomial")
            scale = Fraction(1) / c.den.const_value()
            for mono, coeff in c.num.terms.items():
                k = (name, tuple((atom_key(a), e) for a, e in mono))
                if k not in key_index:
                    key_index[k] = len(keys)
                    keys.append(k)
                entries[key_index[k]] = entries.get(key_index[k], Fraction(0)) + coeff * scale
        vectors.append(entries)

    structure: dict[tuple[int, int], tuple[Fraction, ...]] = {}
    defects = []
    n = len(fields)
    zero = tuple([Fraction(0)] * n)
    for i in range(n):
        structure[(i, i)] = zero
    for i in range(n):
        for j in range(i + 1, n):
            c = commutator(fields[i], fields[j])
            entries: dict[int, Fraction] = {}
            outside = False
            for name, ce in c.coefficients().items():
                if not ce.den.is_const():
                    outside = True
                    break
                scale = Fraction(1) / ce.den.const_value()
                for mono, coeff in ce.num.terms.items():
                    k = (name, tuple((atom_key(a), e) for a, e in mono))
                    if k not in key_index:
                        outside = True
                        break
                    entries[key_index[k]] = entries.get(key_index[k], Fraction(0)) + coeff * scale
                if outside:
                    break
            coords = None
            if not outside:
                target = tuple(entries.get(k, Fraction(0)) for k in range(len(keys)))
                columns = [tuple(v.get(k, Fraction(0)) for k in range(len(keys)))
                           for v in vectors]
                coords = _solve_exact(columns, target)
            if coords is None:
                defects.append((i, j))
                coords = zero
            structure[(i, j)] = coords
            structure[(j, i)] = tuple(-x for x in coords)
    return LieAlgebraBasis(tuple(fields), structure, closed=not defects,
                           defects=tuple(defects))
