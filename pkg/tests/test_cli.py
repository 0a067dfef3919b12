import json
import re
from pathlib import Path

import pytest

from symdde.cli import (
    EXIT_CONTRADICTION,
    EXIT_FAIL,
    EXIT_ILL_FORMED,
    EXIT_OK,
    EXIT_PARSE,
    analyze_equation,
    main,
    read_equation_file,
    read_fields_file,
)
from symdde.solve import AnsatzConfig

from .conftest import EQUATIONS_DIR


def _strip_timestamp(path: Path) -> dict:
    data = json.loads(path.read_text())
    data.pop("generated_at")
    return data


class TestEquationFiles:
    def test_shipped_files_parse(self):
        for name in ("toda.dde", "ydkn_special.dde", "toda2d.dde",
                     "volterra-window.dde"):
            spec = read_equation_file(EQUATIONS_DIR / name)
            assert spec.eq.rhs is not None

    def test_lattice_settings_read(self):
        spec = read_equation_file(EQUATIONS_DIR / "toda.dde")
        assert spec.lattice.sites == 16
        assert spec.lattice.boundary == "periodic"
        assert spec.lattice.lambdas == (0.01, 0.005, 0.0025)

    def test_unknown_class_is_ill_formed(self, tmp_path):
        bad = tmp_path / "bad.dde"
        bad.write_text("[equation]\nclass = pde\nrhs = u[0]\n")
        assert main(["analyze", str(bad)]) == EXIT_ILL_FORMED

    def test_wrong_lhs_is_ill_formed(self, tmp_path):
        bad = tmp_path / "bad.dde"
        bad.write_text("[equation]\nclass = toda\nlhs = ut[0]\nrhs = u[1]\n")
        assert main(["analyze", str(bad)]) == EXIT_ILL_FORMED

    def test_rhs_syntax_error_is_parse_error(self, tmp_path):
        bad = tmp_path / "bad.dde"
        bad.write_text("[equation]\nclass = toda\nrhs = exp(u[0]\n")
        assert main(["analyze", str(bad)]) == EXIT_PARSE

    def test_fields_file_roundtrip(self):
        spec = read_equation_file(EQUATIONS_DIR / "toda.dde")
        named = read_fields_file(EQUATIONS_DIR / "toda.fields", spec.eq)
        assert [n for n, _ in named] == ["X1", "X2", "X3", "X4"]

    def test_fields_file_errors(self, tmp_path):
        spec = read_equation_file(EQUATIONS_DIR / "toda.dde")
        bad = tmp_path / "bad.fields"
        bad.write_text("X1 tau = 1\n")
        with pytest.raises(Exception):
            read_fields_file(bad, spec.eq)


class TestAnalyze:
    def test_toda_exit_and_text(self, capsys):
        assert main(["analyze", str(EQUATIONS_DIR / "toda.dde")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "dimension 4" in out
        assert "residual 0" in out

    def test_json_deterministic(self, tmp_path):
        j1, j2 = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["analyze", str(EQUATIONS_DIR / "ydkn_special.dde"),
                     "--json", str(j1)]) == EXIT_OK
        assert main(["analyze", str(EQUATIONS_DIR / "ydkn_special.dde"),
                     "--json", str(j2)]) == EXIT_OK
        assert _strip_timestamp(j1) == _strip_timestamp(j2)
        raw1 = re.sub(r'"generated_at": "[^"]*"', "", j1.read_text())
        raw2 = re.sub(r'"generated_at": "[^"]*"', "", j2.read_text())
        assert raw1 == raw2

    def test_json_and_text_report_the_same_algebra(self, tmp_path, capsys):
        j = tmp_path / "r.json"
        main(["analyze", str(EQUATIONS_DIR / "toda.dde"), "--json", str(j)])
        out = capsys.readouterr().out
        data = json.loads(j.read_text())
        for name, field in data["basis"].items():
            assert f"{name}: {field}" in out

    def test_no_theorems_same_dimension(self, capsys):
        assert main(["analyze", str(EQUATIONS_DIR / "ydkn_special.dde"),
                     "--no-theorems"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "dimension 5" in out

    def test_degree_flags(self, capsys):
        assert main(["analyze", str(EQUATIONS_DIR / "toda.dde"),
                     "--udeg", "3", "--tdeg", "3"]) == EXIT_OK
        assert "dimension 4" in capsys.readouterr().out

    def test_analyze_then_verify_own_output(self, tmp_path, capsys):
        fields = tmp_path / "solved.fields"
        assert main(["analyze", str(EQUATIONS_DIR / "toda.dde"),
                     "--fields-out", str(fields)]) == EXIT_OK
        capsys.readouterr()
        assert main(["verify", str(EQUATIONS_DIR / "toda.dde"),
                     "--fields", str(fields)]) == EXIT_OK


class TestVerify:
    def test_shipped_algebras_pass(self, capsys):
        for eq, fields in (("toda.dde", "toda.fields"),
                           ("ydkn_special.dde", "ydkn_special.fields"),
                           ("toda2d.dde", "toda2d.fields")):
            assert main(["verify", str(EQUATIONS_DIR / eq),
                         "--fields", str(EQUATIONS_DIR / fields)]) == EXIT_OK
            out = capsys.readouterr().out
            assert "NONZERO" not in out and "residual 0" in out

    def test_non_symmetry_prints_residual_and_fails(self, capsys):
        rc = main(["verify", str(EQUATIONS_DIR / "toda.dde"),
                   "--fields", str(EQUATIONS_DIR / "control.fields")])
        assert rc == EXIT_FAIL
        out = capsys.readouterr().out
        assert "residual =" in out and "exp(" in out


class TestCommutators:
    def test_field_families_table(self, capsys):
        assert main(["commutators", str(EQUATIONS_DIR / "toda.dde"),
                     "--fields", str(EQUATIONS_DIR / "toda.fields")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "[X1,X4] = 1*X1" in out
        assert "closed: True" in out


class TestNumcheck:
    def test_toda_generators_meet_contract(self, capsys):
        assert main(["numcheck", str(EQUATIONS_DIR / "toda.dde"),
                     "--fields", str(EQUATIONS_DIR / "toda.fields")]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("[symmetry]") == 4

    def test_control_rejected(self, capsys):
        rc = main(["numcheck", str(EQUATIONS_DIR / "toda.dde"),
                   "--fields", str(EQUATIONS_DIR / "control.fields")])
        assert rc == EXIT_FAIL
        assert "[rejected]" in capsys.readouterr().out

    def test_field_class_rejected(self, capsys):
        rc = main(["numcheck", str(EQUATIONS_DIR / "toda2d.dde"),
                   "--fields", str(EQUATIONS_DIR / "toda2d.fields")])
        assert rc == EXIT_ILL_FORMED
