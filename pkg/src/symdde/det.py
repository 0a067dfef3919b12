"""Determining equations: construction, classification, and splitting.

The determining equation of a point symmetry is the on-solution
annihilation of the prolonged evolutionary action on (lhs - rhs), with
the generator coefficients kept as unknown functions.  The classifier
inspects the equation's shift window and decides which simplification
applies: for first-order and second-order lattice equations with genuine
nearest-neighbour coupling the time coefficient depends on t alone; for
wider windows it is site-periodic with the window width; for the field
class the x and y coefficients lose their u and site dependence.
Splitting then separates the determining expression by monomials in the
jets and kernels that no unknown function depends on, yielding a linear
homogeneous system for the unknown coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .expr import (
    Expr,
    ExprError,
    JetAtom,
    KernelAtom,
    NotPolynomialInVars,
    Poly,
    SymbolAtom,
    UnknownAtom,
    UnknownFn,
    ZERO,
    as_expr,
    atom_key,
    poly_gcd,
    poly_divexact,
    unknown_fn,
    _P_ONE,
)
from .jet import (
    FIRST_ORDER,
    TODA,
    TODA_FIELD,
    DDEquation,
    on_solution_reduce,
    shift,
)
from .vfield import VectorField, apply_prolonged_evolutionary


# descriptive labels for the applicable simplification
NEIGHBOR_TIME_TAU = "time-only-tau (nearest-neighbour window)"
SECOND_ORDER_TIME_TAU = "time-only-tau (second-order lattice)"
WINDOW_PERIODIC_TAU = "periodic-tau (wide window)"
SITE_INDEPENDENT_XI_ETA = "site-independent-xi-eta (field)"


@dataclass
class ClassReport:
    """Outcome of classifying an equation prior to building unknowns."""

    theorem: str | None
    tau_u_free: bool = False
    tau_n_independent: bool = False
    tau_periods: tuple[int, ...] = ()
    xi_eta_reduced: bool = False
    witnesses: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def summary(self) -> str:
        if self.theorem is None:
            return "no simplification applies; coefficients stay fully general"
        out = [self.theorem]
        if self.tau_n_independent:
            out.append("tau = tau(t)")
        elif self.tau_u_free:
            out.append("tau = tau_n(t)")
        for p in self.tau_periods:
            out.append(f"tau[n+{p}] = tau[n]")
        if self.xi_eta_reduced:
            out.append("xi = xi(x,y), eta = eta(x,y)")
        return "; ".join(out)


def classify(eq: DDEquation) -> ClassReport:
    """Decide which coefficient simplification the equation admits,
    with dependence witnessed by symbolically nonvanishing derivatives."""
    witnesses = {}
    def depends(k: int) -> bool:
        d = eq.rhs.diff(JetAtom(k, ()))
        witnesses[k] = not d.is_zero
        return witnesses[k]

    kmin, kmax = eq.window
    if eq.kind == TODA_FIELD:
        up, down = depends(1), depends(-1)
        if up or down:
            return ClassReport(SITE_INDEPENDENT_XI_ETA, xi_eta_reduced=True,
                               witnesses=witnesses)
        return ClassReport(None, witnesses=witnesses)
    if eq.kind == TODA:
        up, down = depends(1), depends(-1)
        if up or down:
            return ClassReport(SECOND_ORDER_TIME_TAU, tau_u_free=True,
                               tau_n_independent=True, witnesses=witnesses)
        return ClassReport(None, witnesses=witnesses)
    # first-order lattice, arbitrary window
    if -1 <= kmin and kmax <= 1:
        up, down = depends(1), depends(-1)
        if up or down:
            return ClassReport(NEIGHBOR_TIME_TAU, tau_u_free=True,
                               tau_n_independent=True, witnesses=witnesses)
        return ClassReport(None, witnesses=witnesses)
    periods = []
    if kmax > 0 and depends(kmax):
        periods.append(kmax)
    if kmin < 0 and depends(kmin):
        periods.append(-kmin)
    if not periods:
        return ClassReport(None, witnesses=witnesses)
    if 1 in periods:
        return ClassReport(NEIGHBOR_TIME_TAU, tau_u_free=True,
                           tau_n_independent=True, witnesses=witnesses)
    notes = []
    if 2 in periods:
        notes.append("two-periodic tau: tau[n] = (1+alt)/2 * tau0(t) "
                     "+ (1-alt)/2 * tau1(t)")
    return ClassReport(WINDOW_PERIODIC_TAU, tau_u_free=True,
                       tau_periods=tuple(sorted(set(periods))),
                       witnesses=witnesses, notes=tuple(notes))


def make_unknowns(eq: DDEquation, report: ClassReport | None) -> dict[str, UnknownFn]:
    """Unknown coefficient functions honouring the reduction flags."""
    if report is None:
        report = ClassReport(None)
    if eq.kind == TODA_FIELD:
        base = ("x", "y") if report.xi_eta_reduced else ("x", "y", "u")
        dep = "fixed" if report.xi_eta_reduced else "free"
        return {
            "xi": unknown_fn("xi", base, n_dep=dep),
            "eta": unknown_fn("eta", base, n_dep=dep),
            "phi": unknown_fn("phi", ("x", "y", "u"), n_dep="free"),
        }
    tau_args = ("t",) if report.tau_u_free else ("t", "u")
    tau_dep = "fixed" if report.tau_n_independent else "free"
    return {
        "tau": unknown_fn("tau", tau_args, n_dep=tau_dep),
        "phi": unknown_fn("phi", ("t", "u"), n_dep="free"),
    }


def generator_field(eq: DDEquation, unknowns: dict[str, UnknownFn]) -> VectorField:
    if eq.kind == TODA_FIELD:
        return VectorField.field(Expr.unknown(unknowns["xi"]),
                                 Expr.unknown(unknowns["eta"]),
                                 Expr.unknown(unknowns["phi"]))
    return VectorField.lattice(Expr.unknown(unknowns["tau"]),
                               Expr.unknown(unknowns["phi"]))


def build_determining(eq: DDEquation, report: ClassReport | None = None,
                      unknowns: dict[str, UnknownFn] | None = None) -> Expr:
    """Prolonged evolutionary action on (lhs - rhs), reduced on the
    solution manifold and normalized."""
    if unknowns is None:
        unknowns = make_unknowns(eq, report)
    x = generator_field(eq, unknowns)
    e = Expr.from_atom(eq.lhs) - eq.rhs
    det = apply_prolonged_evolutionary(x, e)
    return on_solution_reduce(det, eq)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass
class DeterminingSystem:
    """Linear constraints on the unknown coefficient functions.

    ``rows`` are cleaned constraints (known nonzero content stripped,
    shifted to a canonical site, deduplicated); ``raw`` maps each
    splitting monomial to its untouched coefficient.
    """

    rows: tuple[Expr, ...]
    raw: tuple[tuple[Expr, Expr], ...]
    splitting_vars: tuple
    report: ClassReport | None = None
    linear: bool = True

    @property
    def pre_split_count(self) -> int:
        return 1

    def __len__(self):
        return len(self.rows)


def _unknown_atoms(e: Expr):
    return [a for a in e.all_atoms() if isinstance(a, UnknownAtom)]


def splitting_variables(det: Expr) -> list:
    """Jets and kernels no unknown function present depends on."""
    declared = set()
    for a in _unknown_atoms(det):
        declared.update(a.dependency_jets())
    vars_: list = []
    for a in sorted(det.num.atoms() | det.den.atoms(), key=atom_key):
        if isinstance(a, JetAtom) and a not in declared:
            vars_.append(a)
        elif isinstance(a, KernelAtom):
            vars_.append(a)
    return vars_


def _unknown_degree(e: Expr) -> int:
    worst = 0
    for m in list(e.num.terms) + list(e.den.terms):
        d = sum(ex for a, ex in m if isinstance(a, UnknownAtom))
        worst = max(worst, d)
    return worst


def _strip_known_content(row: Expr) -> Expr:
    """Drop the denominator and any common unknown-free polynomial factor;
    both are nonzero in generic position, a recorded assumption."""
    num = row.num
    groups: dict[tuple, list] = {}
    for m, c in num.terms.items():
        upart = tuple((a, e) for a, e in m if isinstance(a, UnknownAtom))
        rest = tuple((a, e) for a, e in m if not isinstance(a, UnknownAtom))
        groups.setdefault(upart, []).append((rest, c))
    if not groups:
        return ZERO
    content = None
    polys = {up: Poly.from_terms(pairs) for up, pairs in groups.items()}
    for p in polys.values():
        content = p if content is None else poly_gcd(content, p)
        if content.is_const():
            content = None
            break
    if content is not None and not content.is_const():
        polys = {up: poly_divexact(p, content) for up, p in polys.items()}
    total = ZERO
    for up, p in polys.items():
        mono = Expr(Poly({up: Fraction(1)}), _P_ONE, _raw=True)
        total = total + Expr(p, _P_ONE, _raw=True) * mono
    return _canonical_sign(total)


def _canonical_sign(e: Expr) -> Expr:
    if e.is_zero:
        return e
    _, lead = e.num.leading()
    return -e if lead < 0 else e


def _canonical_site(row: Expr) -> Expr:
    """Shift a for-all-n constraint so the smallest unknown offset is 0."""
    shifts = [a.shift for a in _unknown_atoms(row) if a.fn.n_dep == "free"]
    if not shifts:
        return row
    return shift(row, -min(shifts))


def _closure_rows(row: Expr, max_extra_order: int = 2) -> list[Expr]:
    """Derivatives of a constraint with respect to jets that only enter
    through unknown-function arguments; such derivatives are again valid
    constraints and make site-to-site relations collapse to local ones."""
    out = []
    unknown_atoms = _unknown_atoms(row)
    candidate_jets = set()
    for a in unknown_atoms:
        if max(a.dorders) < max_extra_order:
            candidate_jets.update(a.dependency_jets())
    for v in sorted(candidate_jets, key=atom_key):
        known_touches = False
        for m in list(row.num.terms) + list(row.den.terms):
            for a, _e in m:
                if isinstance(a, UnknownAtom):
                    continue
                if a == v or (isinstance(a, KernelAtom) and a.arg.depends_on(v)):
                    known_touches = True
                    break
            if known_touches:
                break
        if known_touches:
            continue
        d = row.diff(v)
        if not d.is_zero:
            out.append(d)
    return out


def split(det: Expr, eq: DDEquation, report: ClassReport | None = None) -> DeterminingSystem:
    """Separate the determining expression into a DeterminingSystem.

    Denominators are cleared in the splitting variables (the whole
    numerator is used: the expression vanishes identically iff its
    numerator does) and the numerator is collected; every coefficient is
    one constraint.  Cleaned rows strip known nonzero factors, are
    shifted to a canonical site, closed under differentiation by jets
    seen only through unknown arguments, and deduplicated.
    """
    det = as_expr(det)
    vars_ = splitting_variables(det)
    if vars_:
        cleared = Expr(det.num, _P_ONE, _raw=True)
        coeffs = cleared.collect(vars_)
        raw = tuple(sorted(coeffs.items(), key=lambda kv: kv[0].sort_key()))
    else:
        raw = ((Expr.rational(1), det),)
    rows: list[Expr] = []
    seen = set()

    def push(r: Expr):
        r = _canonical_sign(_canonical_site(r))
        if r.is_zero or r in seen:
            return False
        seen.add(r)
        rows.append(r)
        return True

    queue = [_strip_known_content(c) for _, c in raw]
    # the derivative of an identity is an identity: differentiating by the
    # splitting jets isolates the site-to-site relations in clean form
    for v in vars_:
        if isinstance(v, JetAtom):
            d = det.diff(v)
            if not d.is_zero:
                queue.append(_strip_known_content(d))
    if report is not None:
        tau_atoms = [a for a in _unknown_atoms(det) if a.fn.name == "tau"]
        if tau_atoms and tau_atoms[0].fn.n_dep == "free":
            fn = tau_atoms[0].fn
            for p in report.tau_periods:
                if p > 1:
                    queue.append(Expr.unknown(fn, p) - Expr.unknown(fn, 0))
    passes = 0
    while queue and passes < 4:
        next_queue = []
        for r in queue:
            if push(r):
                next_queue.extend(_strip_known_content(d) for d in _closure_rows(r))
        queue = next_queue
        passes += 1
    rows.sort(key=lambda r: r.sort_key())
    linear = all(_unknown_degree(r) <= 1 for r in rows)
    return DeterminingSystem(tuple(rows), raw, tuple(vars_), report, linear)


def substitute_unknowns(e: Expr, solution: dict[str, Expr]) -> Expr:
    """Replace unknown-function atoms by concrete coefficient expressions.

    ``solution`` maps a function name to its value at shift 0 as an
    expression in the declared slots; derivative multi-indices are applied
    to the concrete expression and the result is shifted to the atom's
    site.  Used to back-substitute solved generators into constraints.
    """
    from .jet import shift as _shift

    def image(a):
        if not isinstance(a, UnknownAtom) or a.fn.name not in solution:
            return None
        val = as_expr(solution[a.fn.name])
        for slot, order in zip(a.fn.slots, a.dorders):
            for _ in range(order):
                if slot[0] == "sym":
                    val = val.diff(SymbolAtom(slot[1]))
                else:
                    val = val.diff(JetAtom(slot[1], slot[2]))
        return _shift(val, a.shift) if a.fn.n_dep == "free" else val

    return e.map_atoms(image)


def extreme_derivative_rows(det: Expr, vars_=None) -> dict:
    """The repeated-differentiation splitting technique: the derivative of
    an identity with respect to any splitting variable is again an
    identity.  Returns {variable: derivative row} without any cleanup, for
    comparison against hand-entered templates."""
    det = as_expr(det)
    if vars_ is None:
        vars_ = [v for v in splitting_variables(det) if isinstance(v, JetAtom)]
    return {v: det.diff(v) for v in vars_}
