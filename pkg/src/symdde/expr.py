"""Exact symbolic expression kernel.

Expressions are stored in rational normal form: a pair of multivariate
polynomials over the rationals (numerator, denominator) whose
indeterminates ("atoms") are base symbols, lattice field samples (jets),
the alternating sequence (-1)^n, exponential kernels, and applications of
unknown coefficient functions.  Two expressions that are equal as
rational functions over algebraically independent atoms normalize to
structurally identical objects, so structural equality is semantic
equality and zero-testing is exact.

Extra rewrite rules applied during normalization:

* ``alt**2 == 1`` -- the alternating sign squares to one;
* ``exp(a) * exp(b) == exp(a + b)`` -- exponents of exp factors inside a
  single monomial are combined;
* ``exp`` of an argument whose canonical sign is negative is stored as
  ``1 / exp(-argument)``, which makes ``exp(a)*exp(-a) == 1`` fall out of
  ordinary rational cancellation.

All coefficients are :class:`fractions.Fraction`; no floating point ever
enters a symbolic value.  Every object in this module is immutable and
all operations are pure functions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cmp_to_key, lru_cache
from typing import Callable, Iterable, Mapping, Sequence


class ExprError(Exception):
    """Base class for kernel errors."""


class ParseError(ExprError):
    def __init__(self, message: str, text: str = "", pos: int | None = None):
        if pos is not None:
            message = f"{message} (at position {pos})"
        super().__init__(message)
        self.text = text
        self.pos = pos


class DivisionByZero(ExprError):
    """A denominator normalized to the zero polynomial."""


class NotPolynomialInVars(ExprError):
    """collect() was asked for variables the expression is not polynomial in."""


# ---------------------------------------------------------------------------
# derivative multi-indices
# ---------------------------------------------------------------------------

DIRECTIONS = ("t", "x", "y")

# A multi-index is a sorted tuple of (direction, order) pairs, order >= 1.
Deriv = tuple


def deriv_from(spec) -> Deriv:
    """Build a multi-index from a dict/str/pair-iterable (e.g. 'txy', {'t': 2})."""
    orders: dict[str, int] = {}
    if isinstance(spec, str):
        for ch in spec:
            if ch not in DIRECTIONS:
                raise ExprError(f"unknown derivative direction {ch!r}")
            orders[ch] = orders.get(ch, 0) + 1
    elif isinstance(spec, Mapping):
        orders = {d: int(o) for d, o in spec.items() if o}
    else:
        for d, o in spec:
            if o:
                orders[d] = orders.get(d, 0) + int(o)
    for d, o in orders.items():
        if d not in DIRECTIONS:
            raise ExprError(f"unknown derivative direction {d!r}")
        if o < 0:
            raise ExprError("negative derivative order")
    return tuple(sorted(orders.items()))


def bump_deriv(deriv: Deriv, direction: str, by: int = 1) -> Deriv:
    orders = dict(deriv)
    orders[direction] = orders.get(direction, 0) + by
    return tuple(sorted((d, o) for d, o in orders.items() if o))


def deriv_total(deriv: Deriv) -> int:
    return sum(o for _, o in deriv)


def deriv_contains(deriv: Deriv, base: Deriv) -> bool:
    """True when deriv has at least the orders of base in every direction."""
    d = dict(deriv)
    return all(d.get(dd, 0) >= oo for dd, oo in base)


# ---------------------------------------------------------------------------
# atoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymbolAtom:
    """A base symbol: t, x, y, n, or a named parameter."""

    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class AltAtom:
    """The alternating sequence (-1)^n."""

    def __str__(self) -> str:
        return "alt"


@dataclass(frozen=True)
class JetAtom:
    """A field sample u at lattice offset ``shift`` with derivative multi-index."""

    shift: int
    deriv: Deriv = ()

    def __str__(self) -> str:
        letters = "".join(d * o for d, o in self.deriv)
        return f"u{letters}[{self.shift}]"


@dataclass(frozen=True)
class KernelAtom:
    """A transcendental kernel applied to a normalized argument."""

    head: str
    arg: "Expr"

    def __str__(self) -> str:
        return f"{self.head}({self.arg})"


# Unknown-function argument slots: ('sym', name) or ('jet', rel_shift, deriv).
Slot = tuple


@dataclass(frozen=True)
class UnknownFn:
    """Declaration of an unknown coefficient function.

    ``slots`` lists the declared arguments; derivatives with respect to
    anything else vanish identically.  ``labels`` name the slots for
    printing.  ``n_dep`` is 'free' (a genuinely site-dependent family) or
    'fixed' (one function, unchanged under lattice shifts).
    """

    name: str
    slots: tuple[Slot, ...]
    labels: tuple[str, ...]
    n_dep: str = "free"

    def __post_init__(self):
        if self.n_dep not in ("free", "fixed"):
            raise ExprError(f"bad n-dependence {self.n_dep!r}")
        if len(self.labels) != len(self.slots):
            raise ExprError("labels must match slots")
        if len(set(self.slots)) != len(self.slots):
            raise ExprError("duplicate argument slot")
        if self.n_dep == "fixed":
            for s in self.slots:
                if s[0] == "jet":
                    raise ExprError("shift-independent unknowns cannot take jet arguments")


def unknown_fn(name: str, args: Sequence[str], n_dep: str = "free") -> UnknownFn:
    """Convenience builder: args like 't', 'x', 'y', 'u' (= u at own shift)."""
    slots = []
    labels = []
    for a in args:
        if a in ("t", "x", "y"):
            slots.append(("sym", a))
        elif a == "u":
            slots.append(("jet", 0, ()))
        else:
            raise ExprError(f"unsupported unknown argument {a!r}")
        labels.append(a)
    return UnknownFn(name, tuple(slots), tuple(labels), n_dep)


@dataclass(frozen=True)
class UnknownAtom:
    """An unknown function evaluated at lattice offset ``shift``.

    ``dorders`` holds partial-derivative orders parallel to fn.slots.
    """

    fn: UnknownFn
    shift: int = 0
    dorders: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.dorders:
            object.__setattr__(self, "dorders", (0,) * len(self.fn.slots))
        if len(self.dorders) != len(self.fn.slots):
            raise ExprError("derivative orders must match slots")
        if self.fn.n_dep == "fixed" and self.shift != 0:
            raise ExprError("shift-independent unknown with nonzero shift")

    def dependency_jets(self) -> list[JetAtom]:
        return [JetAtom(self.shift + rel, d)
                for kind, *rest in self.fn.slots if kind == "jet"
                for rel, d in [rest]]

    def __str__(self) -> str:
        suffix = ",".join(
            lbl for lbl, o in zip(self.fn.labels, self.dorders) for _ in range(o)
        )
        if self.fn.n_dep == "fixed":
            if len(self.fn.slots) == 1:
                return self.fn.name + "'" * sum(self.dorders)
            return self.fn.name + (f"_{suffix}" if suffix else "")
        site = "n" if self.shift == 0 else f"n{self.shift:+d}"
        base = self.fn.name + (f"_{suffix}" if suffix else "")
        return f"{base}[{site}]"


Atom = SymbolAtom | AltAtom | JetAtom | KernelAtom | UnknownAtom

_KIND_RANK = {SymbolAtom: 0, AltAtom: 1, JetAtom: 2, KernelAtom: 3, UnknownAtom: 4}


@lru_cache(maxsize=None)
def atom_key(a: Atom) -> tuple:
    """Total-order key on atoms: symbols < alt < jets < kernels < unknowns."""
    rank = _KIND_RANK[type(a)]
    if isinstance(a, SymbolAtom):
        return (rank, a.name)
    if isinstance(a, AltAtom):
        return (rank,)
    if isinstance(a, JetAtom):
        return (rank, a.shift, a.deriv)
    if isinstance(a, KernelAtom):
        return (rank, a.head, a.arg.sort_key())
    return (rank, a.fn.name, a.fn.slots, a.fn.n_dep, a.shift, a.dorders)


# ---------------------------------------------------------------------------
# monomials
# ---------------------------------------------------------------------------

# A monomial is a tuple of (atom, exponent) pairs sorted by atom_key, exp >= 1.
Monomial = tuple

_ALT = AltAtom()


def _normalize_pairs(pairs: Iterable[tuple[Atom, int]]) -> Monomial:
    """Merge duplicate atoms and reduce alt powers mod 2.

    exp kernels are kept as independent indeterminates per primitive
    direction (the constructor already folds integer multiples of a
    direction into the exponent and sends negative directions to the
    denominator), so monomial arithmetic is ordinary polynomial
    arithmetic and normal forms are canonical.
    """
    exps: dict[Atom, int] = {}
    for a, e in pairs:
        if e:
            exps[a] = exps.get(a, 0) + e
    if _ALT in exps:
        exps[_ALT] %= 2
    mono = tuple(sorted(((a, e) for a, e in exps.items() if e),
                        key=lambda p: atom_key(p[0])))
    return mono


def mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    if not m1:
        return m2
    if not m2:
        return m1
    return _normalize_pairs(list(m1) + list(m2))


def mono_pow(m: Monomial, k: int) -> Monomial:
    if k == 0 or not m:
        return ()
    if k == 1:
        return m
    return _normalize_pairs((a, e * k) for a, e in m)


def mono_deg(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_cmp(m1: Monomial, m2: Monomial) -> int:
    """Graded lexicographic order (largest atom compared first)."""
    d1, d2 = mono_deg(m1), mono_deg(m2)
    if d1 != d2:
        return 1 if d1 > d2 else -1
    i, j = len(m1) - 1, len(m2) - 1
    while i >= 0 or j >= 0:
        if i < 0:
            return -1
        if j < 0:
            return 1
        a1, e1 = m1[i]
        a2, e2 = m2[j]
        k1, k2 = atom_key(a1), atom_key(a2)
        if k1 != k2:
            return 1 if k1 > k2 else -1
        if e1 != e2:
            return 1 if e1 > e2 else -1
        i -= 1
        j -= 1
    return 0


_mono_sort_key = cmp_to_key(mono_cmp)


def mono_data(m: Monomial) -> tuple:
    return tuple((atom_key(a), e) for a, e in m)


def mono_divides(m1: Monomial, m2: Monomial) -> bool:
    e2 = dict((atom_key(a), e) for a, e in m2)
    return all(e2.get(atom_key(a), 0) >= e for a, e in m1)


def mono_div(m2: Monomial, m1: Monomial) -> Monomial:
    """m2 / m1, assuming divisibility (no exp/alt re-normalization needed)."""
    e1 = {atom_key(a): e for a, e in m1}
    out = []
    for a, e in m2:
        r = e - e1.get(atom_key(a), 0)
        if r:
            out.append((a, r))
    return tuple(out)


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------

class Poly:
    """Multivariate polynomial over Fraction with atom indeterminates."""

    __slots__ = ("terms", "_key")

    def __init__(self, terms: dict):
        self.terms = terms
        self._key = None

    @staticmethod
    def from_terms(pairs: Iterable[tuple[Monomial, Fraction]]) -> "Poly":
        acc: dict[Monomial, Fraction] = {}
        for m, c in pairs:
            if not c:
                continue
            c0 = acc.get(m)
            c = c if c0 is None else c0 + c
            if c:
                acc[m] = c
            elif c0 is not None:
                del acc[m]
        return Poly(acc)

    @staticmethod
    def const(c) -> "Poly":
        c = Fraction(c)
        return Poly({(): c} if c else {})

    @staticmethod
    def atom(a: Atom) -> "Poly":
        return Poly({((a, 1),): Fraction(1)})

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def is_const(self) -> bool:
        return not self.terms or (len(self.terms) == 1 and () in self.terms)

    def const_value(self) -> Fraction:
        return self.terms.get((), Fraction(0))

    def add(self, other: "Poly") -> "Poly":
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        acc = dict(self.terms)
        for m, c in other.terms.items():
            c0 = acc.get(m)
            c = c if c0 is None else c0 + c
            if c:
                acc[m] = c
            elif c0 is not None:
                del acc[m]
        return Poly(acc)

    def neg(self) -> "Poly":
        return Poly({m: -c for m, c in self.terms.items()})

    def sub(self, other: "Poly") -> "Poly":
        return self.add(other.neg())

    def mul(self, other: "Poly") -> "Poly":
        if self.is_zero or other.is_zero:
            return Poly({})
        if self.is_const():
            return other.scale(self.const_value())
        if other.is_const():
            return self.scale(other.const_value())
        acc: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = mono_mul(m1, m2)
                c = c1 * c2
                c0 = acc.get(m)
                c = c if c0 is None else c0 + c
                if c:
                    acc[m] = c
                elif c0 is not None:
                    del acc[m]
        return Poly(acc)

    def scale(self, c) -> "Poly":
        c = Fraction(c)
        if not c:
            return Poly({})
        if c == 1:
            return self
        return Poly({m: cc * c for m, cc in self.terms.items()})

    def pow(self, k: int) -> "Poly":
        if k < 0:
            raise ExprError("negative polynomial power")
        result = Poly.const(1)
        base = self
        while k:
            if k & 1:
                result = result.mul(base)
            base = base.mul(base) if k > 1 else base
            k >>= 1
        return result

    def mul_mono(self, m: Monomial, c: Fraction = Fraction(1)) -> "Poly":
        if not m and c == 1:
            return self
        return Poly.from_terms((mono_mul(mm, m), cc * c) for mm, cc in self.terms.items())

    def leading(self) -> tuple[Monomial, Fraction]:
        m = max(self.terms, key=_mono_sort_key)
        return m, self.terms[m]

    def partial(self, a: Atom) -> "Poly":
        """Formal partial derivative with respect to the atom itself."""
        ak = atom_key(a)
        out = []
        for m, c in self.terms.items():
            for i, (aa, e) in enumerate(m):
                if atom_key(aa) == ak:
                    rest = m[:i] + ((aa, e - 1),) * (e > 1) + m[i + 1:]
                    out.append((rest, c * e))
                    break
        return Poly.from_terms(out)

    def atoms(self) -> set:
        out = set()
        for m in self.terms:
            for a, _ in m:
                out.add(a)
        return out

    def key(self) -> tuple:
        if self._key is None:
            items = sorted(self.terms.items(), key=lambda kv: _mono_sort_key(kv[0]))
            self._key = tuple((mono_data(m), (c.numerator, c.denominator))
                              for m, c in items)
        return self._key

    def __eq__(self, other):
        return isinstance(other, Poly) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Poly({len(self.terms)} terms)"


_P_ZERO = Poly({})
_P_ONE = Poly.const(1)


# ---------------------------------------------------------------------------
# polynomial gcd (primitive PRS) and exact division
# ---------------------------------------------------------------------------

def _as_univar(p: Poly, x: Atom) -> dict[int, Poly]:
    xk = atom_key(x)
    out: dict[int, dict] = {}
    for m, c in p.terms.items():
        deg = 0
        rest = []
        for a, e in m:
            if atom_key(a) == xk:
                deg = e
            else:
                rest.append((a, e))
        out.setdefault(deg, {})[tuple(rest)] = out.setdefault(deg, {}).get(tuple(rest), Fraction(0)) + c
    return {d: Poly({m: c for m, c in terms.items() if c}) for d, terms in out.items()}


def _from_univar(coeffs: dict[int, Poly], x: Atom) -> Poly:
    total = _P_ZERO
    for d, cp in coeffs.items():
        if cp.is_zero:
            continue
        total = total.add(cp.mul_mono(((x, d),)) if d else cp)
    return total


def _univar_deg(coeffs: dict[int, Poly]) -> int:
    degs = [d for d, c in coeffs.items() if not c.is_zero]
    return max(degs) if degs else -1


def primitive_rational(p: Poly) -> tuple[Fraction, Poly]:
    """Write p = scale * P with P integer-primitive and leading coefficient > 0."""
    if p.is_zero:
        return Fraction(1), p
    num_gcd = 0
    den_lcm = 1
    for c in p.terms.values():
        num_gcd = math.gcd(num_gcd, abs(c.numerator))
        den_lcm = den_lcm * c.denominator // math.gcd(den_lcm, c.denominator)
    scale = Fraction(num_gcd, den_lcm)
    _, lead = p.leading()
    if lead < 0:
        scale = -scale
    return scale, p.scale(1 / scale)


def _primitive(p: Poly) -> Poly:
    return primitive_rational(p)[1]


def _content_pp(p: Poly, x: Atom) -> tuple[Poly, Poly]:
    coeffs = _as_univar(p, x)
    content = _P_ZERO
    for _, cp in sorted(coeffs.items()):
        content = poly_gcd(content, cp)
        if content.is_const() and not content.is_zero:
            content = _P_ONE
            break
    pp = poly_divexact(p, content) if content != _P_ONE else p
    return content, pp


def _pseudo_rem(f: dict[int, Poly], g: dict[int, Poly], x: Atom) -> dict[int, Poly]:
    df, dg = _univar_deg(f), _univar_deg(g)
    lc_g = g[dg]
    f = dict(f)
    while True:
        df = _univar_deg(f)
        if df < dg:
            return f
        lc_f = f[df]
        new: dict[int, Poly] = {}
        for d, c in f.items():
            if d == df or c.is_zero:
                continue
            new[d] = c.mul(lc_g)
        for d, c in g.items():
            if d == dg or c.is_zero:
                continue
            dd = d + df - dg
            sub = c.mul(lc_f)
            new[dd] = new[dd].sub(sub) if dd in new else sub.neg()
        f = {d: c for d, c in new.items() if not c.is_zero}


def _split_alt(p: Poly) -> tuple[Poly, Poly]:
    """Write p = plain + alt * signed with both parts alt-free."""
    plain: dict = {}
    signed: dict = {}
    for m, c in p.terms.items():
        stripped = tuple((a, e) for a, e in m if not isinstance(a, AltAtom))
        if len(stripped) == len(m):
            plain[m] = c
        else:
            signed[stripped] = c
    return Poly(plain), Poly(signed)


def _altfree_gcd(p: Poly) -> Poly:
    plain, signed = _split_alt(p)
    if signed.is_zero:
        return p
    if plain.is_zero:
        return signed
    return poly_gcd(plain, signed)


def poly_gcd(a: Poly, b: Poly) -> Poly:
    """Primitive gcd of two polynomials (unit-normalized, leading coeff > 0).

    The alternating sign squares to one, which makes it a zero divisor of
    the naive polynomial ring; gcds are therefore computed on the
    alt-free components, where the ring is an honest domain.
    """
    if a.is_zero:
        return _primitive(b) if not b.is_zero else _P_ZERO
    if b.is_zero:
        return _primitive(a)
    if a.is_const() or b.is_const():
        return _P_ONE
    if a.key() == b.key():
        return _primitive(a)
    if any(isinstance(at, AltAtom) for at in a.atoms()) or \
            any(isinstance(at, AltAtom) for at in b.atoms()):
        return poly_gcd(_altfree_gcd(a), _altfree_gcd(b))
    shared = a.atoms() & b.atoms()
    if not shared:
        return _P_ONE
    # main variable: smallest combined degree keeps the PRS short
    def max_deg(p: Poly, x: Atom) -> int:
        xk = atom_key(x)
        return max((e for m in p.terms for aa, e in m if atom_key(aa) == xk),
                   default=0)
    x = min(shared, key=lambda v: (max_deg(a, v) + max_deg(b, v), atom_key(v)))
    ca, ppa = _content_pp(a, x)
    cb, ppb = _content_pp(b, x)
    c = poly_gcd(ca, cb)
    f, g = _as_univar(ppa, x), _as_univar(ppb, x)
    if _univar_deg(f) < _univar_deg(g):
        f, g = g, f
    while True:
        r = _pseudo_rem(f, g, x)
        if _univar_deg(r) < 0:
            break
        f, g = g, _as_univar(_primitive(_from_univar(r, x)), x)
    gp = _from_univar(g, x)
    _, gp = _content_pp(gp, x)
    return _primitive(c.mul(gp))


def poly_divexact(num: Poly, den: Poly) -> Poly:
    """Exact multivariate division; raises if the division leaves a remainder."""
    if den.is_const():
        c = den.const_value()
        if not c:
            raise DivisionByZero("polynomial division by zero")
        return num.scale(1 / c)
    if num.is_zero:
        return num
    lm_d, lc_d = den.leading()
    rem = num
    out: list[tuple[Monomial, Fraction]] = []
    guard = 0
    while not rem.is_zero:
        guard += 1
        if guard > 100000:
            raise ExprError("division did not terminate")
        lm_r, lc_r = rem.leading()
        if not mono_divides(lm_d, lm_r):
            raise ExprError("inexact polynomial division")
        qm = mono_div(lm_r, lm_d)
        qc = lc_r / lc_d
        out.append((qm, qc))
        rem = rem.sub(den.mul_mono(qm, qc))
    return Poly.from_terms(out)


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

class Expr:
    """An immutable rational expression in canonical normal form."""

    __slots__ = ("num", "den", "_hash", "_skey")

    def __init__(self, num: Poly, den: Poly, _raw: bool = False):
        if not _raw:
            raise ExprError("use Expr constructors or arithmetic")
        self.num = num
        self.den = den
        self._hash = None
        self._skey = None

    # -- construction -------------------------------------------------------

    @staticmethod
    def _make(num: Poly, den: Poly) -> "Expr":
        if den.is_zero:
            raise DivisionByZero("denominator vanished during normalization")
        if num.is_zero:
            return ZERO
        if any(isinstance(a, AltAtom) for a in den.atoms()):
            # alt^2 == 1: conjugate the alternating part out of the denominator
            plain = {m: c for m, c in den.terms.items()
                     if not any(isinstance(a, AltAtom) for a, _ in m)}
            signed = {m: c for m, c in den.terms.items() if m not in plain}
            conj = Poly(plain).sub(Poly(signed))
            num = num.mul(conj)
            den = den.mul(conj)
            if den.is_zero:
                raise DivisionByZero(
                    "denominator vanishes on every second lattice site")
        if not den.is_const():
            g = poly_gcd(num, den)
            if not g.is_const():
                num = poly_divexact(num, g)
                den = poly_divexact(den, g)
        scale, den = primitive_rational(den)
        if scale != 1:
            num = num.scale(1 / scale)
        if num.is_zero:
            return ZERO
        return Expr(num, den, _raw=True)

    @staticmethod
    def rational(value) -> "Expr":
        return Expr(Poly.const(value), _P_ONE, _raw=True)

    @staticmethod
    def symbol(name: str) -> "Expr":
        return Expr(Poly.atom(SymbolAtom(name)), _P_ONE, _raw=True)

    @staticmethod
    def alt() -> "Expr":
        return Expr(Poly.atom(_ALT), _P_ONE, _raw=True)

    @staticmethod
    def jet(shift: int, deriv=()) -> "Expr":
        return Expr(Poly.atom(JetAtom(shift, deriv_from(deriv) if not isinstance(deriv, tuple) else deriv)),
                    _P_ONE, _raw=True)

    @staticmethod
    def from_atom(a: Atom) -> "Expr":
        return Expr(Poly.atom(a), _P_ONE, _raw=True)

    @staticmethod
    def exp(arg: "Expr") -> "Expr":
        arg = as_expr(arg)
        if arg.is_zero:
            return ONE
        atom, k = _exp_split(arg)
        e = Expr.from_atom(atom)
        return e if k == 1 else e ** k

    @staticmethod
    def unknown(fn: UnknownFn, shift: int = 0, dorders: tuple[int, ...] = ()) -> "Expr":
        return Expr.from_atom(UnknownAtom(fn, shift, dorders))

    # -- basic queries -------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return self.num.is_zero

    @property
    def is_rational(self) -> bool:
        return self.num.is_const() and self.den.is_const()

    def as_fraction(self) -> Fraction:
        if not self.is_rational:
            raise ExprError("not a rational constant")
        return self.num.const_value() / self.den.const_value()

    def top_atoms(self) -> set:
        return self.num.atoms() | self.den.atoms()

    def all_atoms(self) -> set:
        """All atoms including those nested inside kernel arguments."""
        out = set()
        stack = [self]
        while stack:
            e = stack.pop()
            for a in e.top_atoms():
                if a in out:
                    continue
                out.add(a)
                if isinstance(a, KernelAtom):
                    stack.append(a.arg)
        return out

    def dependency_jets(self) -> set:
        """Jets this expression depends on, including implicit unknown-function
        arguments and jets inside kernel arguments."""
        jets = set()
        for a in self.all_atoms():
            if isinstance(a, JetAtom):
                jets.add(a)
            elif isinstance(a, UnknownAtom):
                jets.update(a.dependency_jets())
        return jets

    def depends_on(self, v: Atom) -> bool:
        if isinstance(v, JetAtom):
            return v in self.dependency_jets()
        for a in self.all_atoms():
            if a == v:
                return True
            if isinstance(a, UnknownAtom) and isinstance(v, SymbolAtom):
                if ("sym", v.name) in a.fn.slots:
                    return True
        return False

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Expr":
        other = as_expr(other)
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        n1, d1, n2, d2 = self.num, self.den, other.num, other.den
        if d1.is_const() and d2.is_const():
            if d1.const_value() == 1 and d2.const_value() == 1:
                return Expr._make(n1.add(n2), _P_ONE)
        g = poly_gcd(d1, d2)
        if g.is_const():
            num = n1.mul(d2).add(n2.mul(d1))
            den = d1.mul(d2)
            return Expr._make(num, den)
        e1 = poly_divexact(d1, g)
        e2 = poly_divexact(d2, g)
        num = n1.mul(e2).add(n2.mul(e1))
        common = poly_gcd(num, g)
        if not common.is_const():
            num = poly_divexact(num, common)
            g = poly_divexact(g, common)
        den = g.mul(e1).mul(e2)
        scale, den = primitive_rational(den)
        if scale != 1:
            num = num.scale(1 / scale)
        if num.is_zero:
            return ZERO
        return Expr(num, den, _raw=True)

    def __radd__(self, other):
        return as_expr(other) + self

    def __neg__(self) -> "Expr":
        if self.is_zero:
            return self
        return Expr(self.num.neg(), self.den, _raw=True)

    def __sub__(self, other):
        return self + (-as_expr(other))

    def __rsub__(self, other):
        return as_expr(other) + (-self)

    def __mul__(self, other) -> "Expr":
        other = as_expr(other)
        if self.is_zero or other.is_zero:
            return ZERO
        n1, d1, n2, d2 = self.num, self.den, other.num, other.den
        if not d2.is_const():
            g = poly_gcd(n1, d2)
            if not g.is_const():
                n1 = poly_divexact(n1, g)
                d2 = poly_divexact(d2, g)
        if not d1.is_const():
            g = poly_gcd(n2, d1)
            if not g.is_const():
                n2 = poly_divexact(n2, g)
                d1 = poly_divexact(d1, g)
        num = n1.mul(n2)
        den = d1.mul(d2)
        scale, den = primitive_rational(den)
        if scale != 1:
            num = num.scale(1 / scale)
        return Expr(num, den, _raw=True)

    def __rmul__(self, other):
        return as_expr(other) * self

    def inverse(self) -> "Expr":
        if self.is_zero:
            raise DivisionByZero("inverse of zero")
        return Expr._make(self.den, self.num)

    def __truediv__(self, other):
        return self * as_expr(other).inverse()

    def __rtruediv__(self, other):
        return as_expr(other) * self.inverse()

    def __pow__(self, k: int) -> "Expr":
        if not isinstance(k, int):
            raise ExprError("only integer exponents are supported")
        if k == 0:
            if self.is_zero:
                raise ExprError("0^0 is undefined")
            return ONE
        base = self if k > 0 else self.inverse()
        k = abs(k)
        return Expr(base.num.pow(k), base.den.pow(k), _raw=True)

    # -- calculus --------------------------------------------------------------

    def diff(self, v) -> "Expr":
        """Partial derivative with respect to an atom (symbol or jet).

        Other jets, symbols, and kernels are treated as independent; the
        chain rule is applied through kernel arguments; derivatives of
        unknown functions increment their multi-index.
        """
        v = as_atom(v)
        N, D = self.num, self.den
        dN = _poly_diff(N, v)
        if D.is_const():
            if D.const_value() == 1:
                return dN
            return dN / Expr.rational(D.const_value())
        dD = _poly_diff(D, v)
        d_expr = Expr(D, _P_ONE, _raw=True)
        n_expr = Expr(N, _P_ONE, _raw=True)
        return dN / d_expr - n_expr * dD / (d_expr * d_expr)

    # -- structural rebuilding ---------------------------------------------------

    def map_atoms(self, fn: Callable[[Atom], "Expr | None"]) -> "Expr":
        """Rebuild with atoms replaced by fn(atom); None keeps an atom.
        Kernel arguments are rebuilt recursively."""
        cache: dict[Atom, Expr | None] = {}

        def image(a: Atom):
            if a in cache:
                return cache[a]
            r = fn(a)
            if r is None and isinstance(a, KernelAtom):
                arg2 = a.arg.map_atoms(fn)
                if arg2 is not a.arg and arg2 != a.arg:
                    r = Expr.exp(arg2) if a.head == "exp" else Expr.from_atom(
                        KernelAtom(a.head, arg2))
            cache[a] = r
            return r

        changed = any(image(a) is not None for a in self.top_atoms())
        if not changed:
            return self

        def rebuild(p: Poly) -> Expr:
            total = ZERO
            for m, c in p.terms.items():
                term = Expr.rational(c)
                for a, e in m:
                    img = image(a)
                    base = img if img is not None else Expr.from_atom(a)
                    term = term * base ** e
                total = total + term
            return total

        num = rebuild(self.num)
        if self.den.is_const():
            return num / Expr.rational(self.den.const_value())
        return num / rebuild(self.den)

    def substitute(self, bindings: Mapping) -> "Expr":
        """Simultaneous substitution of atoms by expressions.

        Binding the symbol n to n + k (integer k) consistently flips the
        alternating sign by (-1)^k.
        """
        amap: dict[Atom, Expr] = {}
        for k, val in bindings.items():
            amap[as_atom(k)] = as_expr(val)
        n_atom = SymbolAtom("n")
        if n_atom in amap and _ALT not in amap:
            offset = amap[n_atom] - Expr.symbol("n")
            if offset.is_rational and offset.as_fraction().denominator == 1:
                k = int(offset.as_fraction())
                amap[_ALT] = Expr.alt() * ((-1) ** k)
            elif self.depends_on(_ALT):
                raise ExprError("cannot substitute a non-integer shift of n "
                                "into the alternating sign")
        return self.map_atoms(lambda a: amap.get(a))

    # -- coefficient collection ----------------------------------------------------

    def collect(self, vars: Iterable) -> dict["Expr", "Expr"]:
        """Coefficients with respect to monomials in the given atoms.

        The expression must be polynomial in the variables after clearing
        denominators: the denominator must be free of them and they must
        not occur inside unlisted kernels or unknown-function arguments.
        Returns {monomial expression: coefficient}, with
        sum(monomial * coefficient) == self.
        """
        var_atoms = {as_atom(v) for v in vars}
        for a in self.den.atoms():
            if a in var_atoms:
                raise NotPolynomialInVars(f"denominator contains {a}")
        jet_vars = {a for a in var_atoms if isinstance(a, JetAtom)}
        sym_vars = {a for a in var_atoms if isinstance(a, SymbolAtom)}
        if jet_vars or sym_vars:
            for a in self.top_atoms() | self.den.atoms():
                if a in var_atoms:
                    continue
                if isinstance(a, KernelAtom):
                    nested = a.arg.dependency_jets()
                    bad = jet_vars & nested
                    if bad:
                        raise NotPolynomialInVars(
                            f"{sorted(map(str, bad))} occur inside kernel {a}")
                    for s in sym_vars:
                        if a.arg.depends_on(s):
                            raise NotPolynomialInVars(f"{s} occurs inside kernel {a}")
                elif isinstance(a, UnknownAtom):
                    deps = set(a.dependency_jets())
                    bad = jet_vars & deps
                    if bad:
                        raise NotPolynomialInVars(
                            f"{sorted(map(str, bad))} are arguments of unknown {a}")
                    for s in sym_vars:
                        if ("sym", s.name) in a.fn.slots:
                            raise NotPolynomialInVars(f"{s} is an argument of unknown {a}")
        groups: dict[Monomial, list] = {}
        for m, c in self.num.terms.items():
            var_part = tuple((a, e) for a, e in m if a in var_atoms)
            rest = tuple((a, e) for a, e in m if a not in var_atoms)
            groups.setdefault(var_part, []).append((rest, c))
        den_expr = Expr(_P_ONE, self.den, _raw=True) if not self.den.is_const() \
            else Expr.rational(Fraction(1) / self.den.const_value())
        out: dict[Expr, Expr] = {}
        for var_part, pairs in groups.items():
            mono_expr = Expr(Poly({var_part: Fraction(1)}), _P_ONE, _raw=True)
            coeff = Expr(Poly.from_terms(pairs), _P_ONE, _raw=True) * den_expr
            out[mono_expr] = coeff
        return out

    # -- numeric evaluation -----------------------------------------------------

    def evaluate(self, resolver) -> float:
        """Evaluate to a float; resolver maps non-kernel atoms to numbers."""
        if callable(resolver):
            fn = resolver
        else:
            fn = lambda a: resolver[a]

        def atom_value(a: Atom) -> float:
            if isinstance(a, KernelAtom):
                inner = a.arg.evaluate(resolver)
                if a.head == "exp":
                    return math.exp(inner)
                raise ExprError(f"cannot evaluate kernel {a.head}")
            v = fn(a)
            if v is None:
                raise ExprError(f"no numeric value for atom {a}")
            return float(v)

        def poly_value(p: Poly) -> float:
            total = 0.0
            for m, c in p.terms.items():
                term = float(c)
                for a, e in m:
                    term *= atom_value(a) ** e
                total += term
            return total

        den = poly_value(self.den)
        if den == 0.0:
            raise DivisionByZero("denominator evaluates to zero")
        return poly_value(self.num) / den

    # -- identity ----------------------------------------------------------------

    def sort_key(self) -> tuple:
        if self._skey is None:
            self._skey = (self.num.key(), self.den.key())
        return self._skey

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            return self.is_rational and self.as_fraction() == other
        return isinstance(other, Expr) and self.sort_key() == other.sort_key()

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.sort_key())
        return self._hash

    def __bool__(self):
        return not self.is_zero

    def __str__(self):
        return expr_to_str(self)

    def __repr__(self):
        return f"Expr({expr_to_str(self)})"


ZERO = Expr(_P_ZERO, _P_ONE, _raw=True)
ONE = Expr(Poly.const(1), _P_ONE, _raw=True)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Expr.rational(x)
    raise ExprError(f"cannot convert {x!r} to Expr")


def as_atom(v) -> Atom:
    if isinstance(v, (SymbolAtom, AltAtom, JetAtom, KernelAtom, UnknownAtom)):
        return v
    if isinstance(v, str):
        return SymbolAtom(v)
    if isinstance(v, Expr):
        atoms = v.top_atoms()
        if len(atoms) == 1 and v == Expr.from_atom(next(iter(atoms))):
            return next(iter(atoms))
    raise ExprError(f"{v!r} is not an atom")


def _exp_split(arg: Expr) -> tuple[KernelAtom, int]:
    """Split a nonzero exp argument into (primitive-direction atom, integer
    multiple): exp(arg) == atom ** k.  The atom argument always has positive
    leading coefficient, so exp(a)*exp(-a) cancels by rational arithmetic."""
    s, _ = primitive_rational(arg.num)
    k = s.numerator
    direction = arg * Fraction(1, k)
    return KernelAtom("exp", direction), k


def _poly_diff(p: Poly, v: Atom) -> Expr:
    total = ZERO
    for a in p.atoms():
        da = _atom_diff(a, v)
        if da.is_zero:
            continue
        partial = p.partial(a)
        total = total + Expr(partial, _P_ONE, _raw=True) * da
    return total


def _atom_diff(a: Atom, v: Atom) -> Expr:
    if isinstance(a, SymbolAtom) or isinstance(a, JetAtom):
        return ONE if a == v else ZERO
    if isinstance(a, AltAtom):
        return ZERO
    if isinstance(a, KernelAtom):
        inner = a.arg.diff(v)
        if inner.is_zero:
            return ZERO
        if a.head == "exp":
            return inner * Expr.from_atom(a)
        raise ExprError(f"cannot differentiate kernel {a.head}")
    # unknown function: chain through declared slots only
    for i, slot in enumerate(a.fn.slots):
        if slot[0] == "sym" and isinstance(v, SymbolAtom) and slot[1] == v.name:
            pass
        elif slot[0] == "jet" and isinstance(v, JetAtom) \
                and a.shift + slot[1] == v.shift and slot[2] == v.deriv:
            pass
        else:
            continue
        dorders = list(a.dorders)
        dorders[i] += 1
        return Expr.from_atom(UnknownAtom(a.fn, a.shift, tuple(dorders)))
    return ZERO


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _coeff_str(c: Fraction) -> str:
    return str(c)


def _mono_str(m: Monomial) -> str:
    parts = []
    for a, e in m:
        s = str(a)
        if isinstance(a, KernelAtom):
            pass  # already parenthesized by its own syntax
        parts.append(s if e == 1 else f"{s}^{e}")
    return "*".join(parts)


def _poly_str(p: Poly) -> str:
    if p.is_zero:
        return "0"
    items = sorted(p.terms.items(), key=lambda kv: _mono_sort_key(kv[0]), reverse=True)
    out = ""
    for m, c in items:
        neg = c < 0
        c_abs = -c if neg else c
        if not m:
            body = _coeff_str(c_abs)
        elif c_abs == 1:
            body = _mono_str(m)
        else:
            body = f"{_coeff_str(c_abs)}*{_mono_str(m)}"
        if not out:
            out = ("-" if neg else "") + body
        else:
            out += (" - " if neg else " + ") + body
    return out


def expr_to_str(e: Expr) -> str:
    num = _poly_str(e.num)
    if e.den.is_const() and e.den.const_value() == 1:
        return num
    den = _poly_str(e.den)
    num_wrapped = f"({num})" if (len(e.num.terms) > 1) else num
    den_wrapped = f"({den})" if (len(e.den.terms) > 1 or "*" in den or "^" in den) else den
    return f"{num_wrapped}/{den_wrapped}"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<prime>'+)
  | (?P<op>[-+*/^()\[\],])
  | (?P<ws>\s+)
  | (?P<bad>.)
""", re.VERBOSE)

_JET_RE = re.compile(r"^u([txy]*)$")


class _Parser:
    def __init__(self, text: str, parameters, functions, auto_functions: bool):
        self.text = text
        self.parameters = set(parameters)
        self.functions = dict(functions or {})
        self.auto_functions = auto_functions
        self.tokens: list[tuple[str, str, int]] = []
        for m in _TOKEN_RE.finditer(text):
            kind = m.lastgroup
            if kind == "ws":
                continue
            if kind == "bad":
                raise ParseError(f"unexpected character {m.group()!r}", text, m.start())
            self.tokens.append((kind, m.group(), m.start()))
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else ("eof", "", len(self.text))

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, value: str):
        kind, val, p = self.next()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", self.text, p)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, p = self.peek()
        if kind != "eof":
            raise ParseError(f"unexpected trailing {val!r}", self.text, p)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if val == "+":
                self.next()
                e = e + self.term()
            elif val == "-":
                self.next()
                e = e - self.term()
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            kind, val, _ = self.peek()
            if val == "*":
                self.next()
                e = e * self.unary()
            elif val == "/":
                self.next()
                e = e / self.unary()
            else:
                return e

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if val == "-":
            self.next()
            return -self.unary()
        if val == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        kind, val, _ = self.peek()
        if val == "^":
            self.next()
            k = self.int_exponent()
            try:
                return base ** k
            except DivisionByZero:
                raise
        return base

    def int_exponent(self) -> int:
        kind, val, p = self.next()
        if val == "(":
            k = self.int_exponent()
            self.expect(")")
            return k
        if val == "-":
            return -self.int_exponent()
        if kind == "num":
            return int(val)
        raise ParseError("exponent must be an integer", self.text, p)

    def signed_int(self) -> int:
        kind, val, p = self.next()
        sign = 1
        if val == "-":
            sign = -1
            kind, val, p = self.next()
        elif val == "+":
            kind, val, p = self.next()
        if kind != "num":
            raise ParseError("expected an integer lattice shift", self.text, p)
        return sign * int(val)

    def primary(self) -> Expr:
        kind, val, p = self.next()
        if kind == "num":
            return Expr.rational(int(val))
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind != "ident":
            raise ParseError(f"unexpected {val or 'end of input'!r}", self.text, p)
        jm = _JET_RE.match(val)
        if jm and self.peek()[1] == "[":
            letters = jm.group(1)
            if "t" in letters and ("x" in letters or "y" in letters):
                raise ParseError("mixed time and field derivatives", self.text, p)
            self.expect("[")
            shift = self.signed_int()
            self.expect("]")
            return Expr.jet(shift, deriv_from(letters))
        if val == "alt":
            return Expr.alt()
        if val == "exp":
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Expr.exp(arg)
        if val in ("t", "x", "y", "n"):
            return Expr.symbol(val)
        if val in self.parameters:
            return Expr.symbol(val)
        primes = 0
        if self.peek()[0] == "prime":
            primes = len(self.next()[1])
        if self.peek()[1] == "(" and (val in self.functions or self.auto_functions):
            self.expect("(")
            akind, aval, ap = self.next()
            if aval not in ("x", "y", "t"):
                raise ParseError("formal functions take a single base variable",
                                 self.text, ap)
            self.expect(")")
            fn = self.functions.get(val)
            if fn is None:
                fn = unknown_fn(val, (aval,), n_dep="fixed")
                self.functions[val] = fn
            if fn.slots != (("sym", aval),):
                raise ParseError(f"function {val} used with inconsistent argument",
                                 self.text, ap)
            return Expr.unknown(fn, 0, (primes,))
        if primes:
            raise ParseError(f"unexpected prime after {val!r}", self.text, p)
        raise ParseError(f"unknown identifier {val!r}", self.text, p)


def parse(text: str, parameters: Sequence[str] = (), functions=None,
          auto_functions: bool = False) -> Expr:
    """Parse the expression DSL into a normalized Expr.

    ``u[k]`` is the field at offset k, ``ut/utt/ux/uy/uxy[k]`` its
    derivatives, ``alt`` the alternating sign, ``exp(...)`` the kernel;
    named parameters must be declared.  Formal one-variable functions
    (``f(x)``, ``f'(x)``) are enabled by auto_functions or an explicit
    functions mapping.
    """
    return _Parser(text, parameters, functions, auto_functions).parse()


def normalize(e: Expr) -> Expr:
    """Return the canonical rational normal form (constructors already
    normalize, so this is the identity on Expr values; it re-checks the
    canonical invariants defensively)."""
    return as_expr(e)


# convenience instances
T = Expr.symbol("t")
X = Expr.symbol("x")
Y = Expr.symbol("y")
N = Expr.symbol("n")
ALT = Expr.alt()
