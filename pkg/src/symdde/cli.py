"""Command-line front end.

Reads equation files in the DSL, runs the analyze / verify / commutators
/ numcheck pipelines, and emits human-readable text plus optional JSON.

Equation files are INI-style with sections [equation] (class, lhs, rhs,
parameters), [ansatz] (udeg, tdeg, nbasis), [lattice] (numeric check
settings); one equation per file.  Vector-field files hold one generator
per line: ``NAME: tau = EXPR; phi = EXPR;`` for lattice classes or
``NAME: xi = EXPR; eta = EXPR; phi = EXPR;`` for the field class, with
formal one-variable functions (f(x), g'(y), ...) allowed.

Exit codes: 0 success, 2 parse error, 3 ill-formed equation, 4 internal
contradiction (a solved generator failing verification), 1 contract
failure (nonzero verify residual or failed numeric check).
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .expr import Expr, ExprError, ParseError, ZERO, parse
from .jet import (
    DDEquation,
    FIRST_ORDER,
    IllFormedEquation,
    TODA,
    TODA_FIELD,
    make_equation,
)
from .det import ClassReport, DeterminingSystem, build_determining, classify, split
from .solve import (
    AnsatzConfig,
    LieAlgebraBasis,
    LinearSystem,
    expand_ansatz,
    solve_linear,
    structure_constants,
    vector_to_field,
    verify_candidate,
)
from .vfield import FIELD, LATTICE, VectorField
from .numverify import LatticeConfig, SYMMETRY_SLOPE, flow_commute_check

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_ILL_FORMED = 3
EXIT_CONTRADICTION = 4

ASSUMPTIONS = (
    "exp kernels and jet monomials in split coefficients are treated as "
    "functionally independent",
    "denominators cleared while splitting are nonzero in generic position",
)

_CLASS_NAMES = {
    "first_order": FIRST_ORDER, "volterra": FIRST_ORDER,
    "toda": TODA, "toda_type": TODA, "second_order": TODA,
    "toda_field": TODA_FIELD, "field": TODA_FIELD,
}
_EXPECTED_LHS = {FIRST_ORDER: "ut[0]", TODA: "utt[0]", TODA_FIELD: "uxy[0]"}


@dataclass
class EquationSpec:
    eq: DDEquation
    ansatz: AnsatzConfig
    lattice: LatticeConfig
    source: str


def read_equation_file(path: str | Path) -> EquationSpec:
    cp = configparser.ConfigParser()
    read = cp.read(str(path))
    if not read:
        raise ParseError(f"cannot read equation file {path}")
    if "equation" not in cp:
        raise ParseError(f"{path}: missing [equation] section")
    sec = cp["equation"]
    kind_raw = sec.get("class", "").strip().lower()
    if kind_raw not in _CLASS_NAMES:
        raise IllFormedEquation(f"{path}: unknown equation class {kind_raw!r}")
    kind = _CLASS_NAMES[kind_raw]
    lhs = sec.get("lhs", _EXPECTED_LHS[kind]).replace(" ", "")
    if lhs != _EXPECTED_LHS[kind]:
        raise IllFormedEquation(
            f"{path}: class {kind_raw} is solved for {_EXPECTED_LHS[kind]}, not {lhs}")
    params = tuple(p.strip() for p in sec.get("parameters", "").split(",") if p.strip())
    rhs_text = sec.get("rhs", "")
    if not rhs_text.strip():
        raise ParseError(f"{path}: missing rhs")
    rhs = parse(rhs_text, parameters=params)
    eq = make_equation(kind, rhs, params)

    ans = cp["ansatz"] if "ansatz" in cp else {}
    nbasis = tuple(b.strip() for b in str(ans.get("nbasis", "1, n, alt")).split(",")
                   if b.strip())
    ansatz = AnsatzConfig(udeg=int(ans.get("udeg", 2)), tdeg=int(ans.get("tdeg", 2)),
                          nbasis=nbasis)

    lat = cp["lattice"] if "lattice" in cp else {}
    lambdas = tuple(float(x) for x in str(lat.get("lambdas", "0.01, 0.005, 0.0025")
                                          ).split(",") if x.strip())
    lattice = LatticeConfig(
        sites=int(lat.get("sites", 16)),
        boundary=str(lat.get("boundary", "periodic")).strip(),
        t_end=float(lat.get("tend", 0.5)),
        step=float(lat.get("step", 1e-3)),
        lambdas=lambdas,
    )
    return EquationSpec(eq, ansatz, lattice, str(path))


def read_fields_file(path: str | Path, eq: DDEquation) -> list[tuple[str, VectorField]]:
    """One generator per line: NAME: coeff = expr; coeff = expr; ..."""
    out = []
    functions: dict = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'NAME: coeff = expr; ...'")
        name, _, body = line.partition(":")
        coeffs: dict[str, Expr] = {}
        for stmt in body.split(";"):
            stmt = stmt.strip()
            if not stmt:
                continue
            if "=" not in stmt:
                raise ParseError(f"{path}:{lineno}: expected 'coeff = expr' in {stmt!r}")
            key, _, val = stmt.partition("=")
            key = key.strip()
            coeffs[key] = parse(val.strip(), parameters=eq.parameters,
                                functions=functions, auto_functions=True)
        if eq.kind == TODA_FIELD:
            allowed = {"xi", "eta", "phi"}
            if not set(coeffs) <= allowed:
                raise ParseError(f"{path}:{lineno}: field-class generators use xi/eta/phi")
            x = VectorField.field(coeffs.get("xi", ZERO), coeffs.get("eta", ZERO),
                                  coeffs.get("phi", ZERO))
        else:
            allowed = {"tau", "phi"}
            if not set(coeffs) <= allowed:
                raise ParseError(f"{path}:{lineno}: lattice generators use tau/phi")
            x = VectorField.lattice(coeffs.get("tau", ZERO), coeffs.get("phi", ZERO))
        out.append((name.strip(), x))
    if not out:
        raise ParseError(f"{path}: no generators found")
    return out


def fields_to_text(named: list[tuple[str, VectorField]]) -> str:
    return "\n".join(f"{name}: {x}" for name, x in named) + "\n"


# ---------------------------------------------------------------------------
# analyze pipeline
# ---------------------------------------------------------------------------

@dataclass
class AnalysisReport:
    source: str
    eq: DDEquation
    report: ClassReport | None
    system: DeterminingSystem
    ansatz: AnsatzConfig
    linear: LinearSystem
    basis: tuple[VectorField, ...]
    algebra: LieAlgebraBasis
    residuals_zero: tuple[bool, ...]
    use_theorems: bool

    def generator_names(self) -> list[str]:
        return [f"X{i+1}" for i in range(len(self.basis))]

    def to_json_dict(self) -> dict:
        struct = {f"[{i+1},{j+1}]": [str(c) for c in coords]
                  for (i, j), coords in sorted(self.algebra.structure.items())
                  if i < j}
        return {
            "source": self.source,
            "equation": {
                "class": self.eq.kind,
                "lhs": str(self.eq.lhs),
                "rhs": str(self.eq.rhs),
                "window": list(self.eq.window),
                "parameters": list(self.eq.parameters),
            },
            "classification": {
                "summary": self.report.summary() if self.report else
                           "disabled (--no-theorems)",
                "witnesses": {str(k): v for k, v in
                              (self.report.witnesses if self.report else {}).items()},
                "notes": list(self.report.notes) if self.report else [],
            },
            "determining_system": {
                "pre_split_rows": 1,
                "post_split_rows": len(self.system.rows),
                "splitting_variables": [str(v) for v in self.system.splitting_vars],
                "rows": [str(r) for r in self.system.rows],
                "linear": self.system.linear,
            },
            "ansatz": {
                "udeg": self.ansatz.udeg,
                "tdeg": self.ansatz.tdeg,
                "nbasis": list(self.ansatz.nbasis),
                "scalar_unknowns": len(self.linear.variables),
                "scalar_rows": len(self.linear.rows),
            },
            "basis": {name: str(x) for name, x in
                      zip(self.generator_names(), self.basis)},
            "structure_constants": struct,
            "closed": self.algebra.closed,
            "nilpotent_candidates": [i + 1 for i in self.algebra.nilpotent_indices()],
            "residuals_zero": list(self.residuals_zero),
            "assumptions": list(ASSUMPTIONS),
        }

    def to_text(self) -> str:
        lines = []
        lines.append(f"equation ({self.eq.kind}): {self.eq.lhs} = {self.eq.rhs}")
        lines.append(f"window: {self.eq.window}")
        if self.report is not None:
            lines.append(f"classification: {self.report.summary()}")
            for note in self.report.notes:
                lines.append(f"  note: {note}")
        else:
            lines.append("classification: disabled (--no-theorems)")
        lines.append(f"splitting variables: "
                     f"{', '.join(str(v) for v in self.system.splitting_vars) or '(none)'}")
        lines.append(f"determining system: 1 expression -> {len(self.system.rows)} rows "
                     f"(linear: {self.system.linear})")
        lines.append(f"ansatz: u-degree {self.ansatz.udeg}, t-degree {self.ansatz.tdeg}, "
                     f"site basis {{{', '.join(self.ansatz.nbasis)}}} -> "
                     f"{len(self.linear.variables)} scalar unknowns, "
                     f"{len(self.linear.rows)} scalar rows")
        lines.append(f"symmetry algebra: dimension {len(self.basis)}")
        for name, x, ok in zip(self.generator_names(), self.basis, self.residuals_zero):
            lines.append(f"  {name}: {x}  [residual {'0' if ok else 'NONZERO'}]")
        if self.basis:
            lines.append(f"closed under commutation: {self.algebra.closed}")
            nil = [f"X{i+1}" for i in self.algebra.nilpotent_indices()]
            lines.append(f"ad-nilpotent elements: {', '.join(nil) or '(none)'}")
            for (i, j), coords in sorted(self.algebra.structure.items()):
                if i < j and any(coords):
                    combo = " + ".join(f"{c}*X{k+1}" for k, c in enumerate(coords) if c)
                    lines.append(f"  [X{i+1},X{j+1}] = {combo}")
        lines.append("assumptions: " + "; ".join(ASSUMPTIONS))
        return "\n".join(lines) + "\n"


def analyze_equation(eq: DDEquation, ansatz: AnsatzConfig,
                     use_theorems: bool = True, source: str = "<memory>") -> AnalysisReport:
    report = classify(eq) if use_theorems else None
    det = build_determining(eq, report)
    system = split(det, eq, report)
    linear = expand_ansatz(system, ansatz)
    vectors = solve_linear(linear)
    basis = tuple(vector_to_field(v, linear, eq) for v in vectors)
    residuals = tuple(verify_candidate(eq, x).is_zero for x in basis)
    algebra = structure_constants(list(basis)) if basis else \
        LieAlgebraBasis((), {}, True)
    return AnalysisReport(source, eq, report, system, ansatz, linear, basis,
                          algebra, residuals, use_theorems)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write_json(path: str, payload: dict):
    payload = dict(payload)
    payload["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_analyze(args) -> int:
    spec = read_equation_file(args.file)
    ansatz = spec.ansatz
    if args.udeg is not None or args.tdeg is not None:
        ansatz = AnsatzConfig(
            udeg=args.udeg if args.udeg is not None else ansatz.udeg,
            tdeg=args.tdeg if args.tdeg is not None else ansatz.tdeg,
            nbasis=ansatz.nbasis)
    rep = analyze_equation(spec.eq, ansatz, use_theorems=not args.no_theorems,
                           source=spec.source)
    sys.stdout.write(rep.to_text())
    if args.json:
        _write_json(args.json, rep.to_json_dict())
    if args.fields_out:
        Path(args.fields_out).write_text(
            fields_to_text(list(zip(rep.generator_names(), rep.basis))))
    if not all(rep.residuals_zero):
        sys.stderr.write("internal contradiction: a solved generator fails "
                         "verification\n")
        return EXIT_CONTRADICTION
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = read_equation_file(args.file)
    named = read_fields_file(args.fields, spec.eq)
    all_zero = True
    payload = {}
    for name, x in named:
        residual = verify_candidate(spec.eq, x)
        ok = residual.is_zero
        all_zero &= ok
        print(f"{name}: residual {'0' if ok else '= ' + str(residual)}")
        payload[name] = "0" if ok else str(residual)
    if args.json:
        _write_json(args.json, {"source": spec.source, "residuals": payload})
    return EXIT_OK if all_zero else EXIT_FAIL


def cmd_commutators(args) -> int:
    spec = read_equation_file(args.file)
    named = read_fields_file(args.fields, spec.eq)
    names = [n for n, _ in named]
    algebra = structure_constants([x for _, x in named])
    for (i, j), coords in sorted(algebra.structure.items()):
        if i >= j:
            continue
        if any(coords):
            combo = " + ".join(f"{c}*{names[k]}" for k, c in enumerate(coords) if c)
        else:
            combo = "0"
        print(f"[{names[i]},{names[j]}] = {combo}")
    print(f"closed: {algebra.closed}")
    if algebra.defects:
        for i, j in algebra.defects:
            print(f"  outside span: [{names[i]},{names[j]}]")
    if args.json:
        payload = {
            "names": names,
            "closed": algebra.closed,
            "structure": {f"[{names[i]},{names[j]}]": [str(c) for c in coords]
                          for (i, j), coords in sorted(algebra.structure.items())
                          if i < j},
        }
        _write_json(args.json, payload)
    return EXIT_OK if algebra.closed else EXIT_FAIL


def cmd_numcheck(args) -> int:
    spec = read_equation_file(args.file)
    if spec.eq.kind == TODA_FIELD:
        sys.stderr.write("numcheck supports lattice classes only\n")
        return EXIT_ILL_FORMED
    named = read_fields_file(args.fields, spec.eq)
    cfg = spec.lattice
    cfg = LatticeConfig(
        sites=args.sites or cfg.sites,
        boundary=cfg.boundary,
        t_end=args.tend or cfg.t_end,
        step=args.step or cfg.step,
        lambdas=cfg.lambdas,
        tolerance=cfg.tolerance,
        margin=cfg.margin,
    )
    all_ok = True
    rows_out = {}
    for name, x in named:
        try:
            fc = flow_commute_check(spec.eq, x, cfg)
        except ExprError as e:
            print(f"{name}: integration failed: {e}")
            all_ok = False
            rows_out[name] = {"error": str(e)}
            continue
        slope = "floor" if fc.at_floor else f"{fc.slope:.3f}"
        verdict = "symmetry" if fc.is_symmetry else "rejected"
        print(f"{name}: slope {slope} [{verdict}]"
              + (f" ({fc.note})" if fc.note else ""))
        for lam, r in fc.rows():
            print(f"    lambda={lam:g}  r={r:.3e}")
        rows_out[name] = {
            "slope": None if fc.slope is None else fc.slope,
            "at_floor": fc.at_floor,
            "is_symmetry": fc.is_symmetry,
            "boundary": fc.boundary,
            "residuals": {str(lam): r for lam, r in fc.rows()},
        }
        all_ok &= fc.is_symmetry
    if args.json:
        _write_json(args.json, {"source": spec.source, "checks": rows_out,
                                "slope_contract": SYMMETRY_SLOPE})
    return EXIT_OK if all_ok else EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="dds",
        description="Lie point symmetries of differential-difference equations")
    sub = ap.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="solve the determining equations")
    pa.add_argument("file")
    pa.add_argument("--json", metavar="PATH")
    pa.add_argument("--fields-out", metavar="PATH")
    pa.add_argument("--no-theorems", action="store_true",
                    help="skip classification; let simplifications emerge")
    pa.add_argument("--udeg", type=int, default=None)
    pa.add_argument("--tdeg", type=int, default=None)
    pa.set_defaults(fn=cmd_analyze)

    pv = sub.add_parser("verify", help="check candidate generators symbolically")
    pv.add_argument("file")
    pv.add_argument("--fields", required=True)
    pv.add_argument("--json", metavar="PATH")
    pv.set_defaults(fn=cmd_verify)

    pc = sub.add_parser("commutators", help="commutator table of given generators")
    pc.add_argument("file")
    pc.add_argument("--fields", required=True)
    pc.add_argument("--json", metavar="PATH")
    pc.set_defaults(fn=cmd_commutators)

    pn = sub.add_parser("numcheck", help="numerical flow-commutation check")
    pn.add_argument("file")
    pn.add_argument("--fields", required=True)
    pn.add_argument("--json", metavar="PATH")
    pn.add_argument("--sites", type=int, default=None)
    pn.add_argument("--tend", type=float, default=None)
    pn.add_argument("--step", type=float, default=None)
    pn.set_defaults(fn=cmd_numcheck)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ParseError as e:
        sys.stderr.write(f"parse error: {e}\n")
        return EXIT_PARSE
    except IllFormedEquation as e:
        sys.stderr.write(f"ill-formed equation: {e}\n")
        return EXIT_ILL_FORMED
    except ExprError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
