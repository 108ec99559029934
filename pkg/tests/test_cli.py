import subprocess
import sys

import pytest

from lurnorm import cli
from lurnorm.errors import ConsistencyError


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def as_dict(out):
    return dict(line.split("=", 1) for line in out.splitlines())


def test_validate_gallery(capsys):
    code, out = run(capsys, "validate", "k2", "--machine")
    assert code == 0 and as_dict(out)["valid"] == "yes"


def test_validate_bad_metric(capsys, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: bad\nkind: finite\npoints: [a, b]\n"
                    "metric:\n  matrix: [[0, 1], [2, 0]]\n")
    code, out = run(capsys, "validate", str(path), "--machine")
    assert code == 1
    assert as_dict(out)["status"] == "invalid"
    assert "metric symmetry (a,b)" in as_dict(out)["error"]


def test_validate_uncovered(capsys, tmp_path):
    path = tmp_path / "gap.yaml"
    path.write_text("name: gap\nkind: finite\npoints: [a, b, c]\ncovering:\n  default:\n"
                    "    - members: [[a], [b]]\n")
    code, out = run(capsys, "validate", str(path), "--machine")
    assert code == 1 and "uncovered: c" in out


def test_norm_of_one_point(capsys):
    code, out = run(capsys, "norm", "k1", "--f", "one", "--lmax", "12", "--machine")
    d = as_dict(out)
    assert code == 0
    assert abs(float(d["value"]) - 12 ** -0.5) <= float(d["error_bound"]) <= 1e-3


def test_norm_of_zero_is_exact(capsys):
    code, out = run(capsys, "norm", "k2", "--f", "zero", "--machine")
    assert code == 0 and as_dict(out)["value"] == "0.0"


def test_norm_on_sequence_is_unsupported(capsys):
    code, out = run(capsys, "norm", "omega8", "--f", "bump3", "--machine")
    assert code == 2 and as_dict(out)["status"] == "unsupported"


def test_usage_errors_exit_one(capsys):
    assert run(capsys, "norm", "k2", "--machine")[0] == 1
    assert run(capsys, "norm", "k2", "--f", "f1", "--bogus")[0] == 1
    assert run(capsys, "decompose", "k2", "--f", "f1", "--eps", "-1")[0] == 1
    assert run(capsys, "norm", "k2", "--f", "nope")[0] == 1


def test_internal_failure_exits_three(capsys, monkeypatch):
    def broken(*args, **kw):
        raise ConsistencyError("leaves miss {b}")

    monkeypatch.setattr(cli, "build_decomposition", broken)
    code, out = run(capsys, "decompose", "k2", "--f", "f1", "--eps", "0.5", "--machine")
    assert code == 3
    assert as_dict(out) == {"status": "internal", "error": "leaves miss {b}"}


def test_tables_list_sequence_derived_families(capsys):
    code, out = run(capsys, "tables", "omega8", "--machine")
    assert code == 0
    assert "derived.l0[0,1]={{inf}}" in out.splitlines()


def test_tables_with_function(capsys):
    code, out = run(capsys, "tables", "k2", "--f", "f1", "--machine")
    d = as_dict(out)
    assert code == 0
    assert float(d["omega.l1.{b}"]) == pytest.approx(6 ** -0.5)
    psi = [line.rsplit("=", 1)[1] for line in out.splitlines()
           if line.startswith("psi.l1.{a,b}.M={a}.N={b}=")]
    assert float(psi[0]) ** 2 == pytest.approx(1 / 18)


def test_derive_minimal_index(capsys):
    code, out = run(capsys, "derive", "omega8", "--H", "{inf}", "--machine")
    d = as_dict(out)
    assert code == 0
    assert d["minimal.index"] == "[0,1]" and d["minimal.M"] == "{{inf}}"


def test_decompose(capsys):
    code, out = run(capsys, "decompose", "k2", "--f", "f1", "--eps", "0.5", "--machine")
    d = as_dict(out)
    assert code == 0 and d["nodes"] == "3"
    assert {d["leaf.0"].split()[0], d["leaf.1"].split()[0]} == {"{a}", "{b}"}


def test_probe_output_is_byte_identical(capsys):
    argv = ("probe", "k2", "--f", "f1", "--eps", "0.5", "--seed", "4", "--budget", "2000",
            "--machine")
    first = run(capsys, *argv)
    second = run(capsys, *argv)
    assert first == second and first[0] == 0
    assert as_dict(first[1])["label"] == "evidence"


def test_probe_followup_violation_exits_three(capsys, monkeypatch):
    real = cli.followup_search

    def generous(model, f, eps, delta, *a, **kw):
        return real(model, f, eps, 1e6, *a, **kw)

    monkeypatch.setattr(cli, "followup_search", generous)
    code, out = run(capsys, "probe", "k2", "--f", "f1", "--eps", "0.01", "--budget", "500",
                    "--machine")
    assert code == 3 and int(as_dict(out)["followup.violations"]) > 0


def test_weights_file(capsys, tmp_path):
    path = tmp_path / "w.yaml"
    path.write_text('"0": 0.25\n"0,1": 0.125\n"1": 0.25\n"0,2": 0.01\n"2": 0.01\n'
                    '"1,2": 0.01\n"0,1,2": 0.01\n')
    code, out = run(capsys, "norm", "k3", "--f", "f3", "--imax", "3", "--weights", "file",
                    "--weights-file", str(path), "--machine")
    assert code == 0
    default = as_dict(run(capsys, "norm", "k3", "--f", "f3", "--imax", "3", "--machine")[1])
    assert as_dict(out)["value"] != default["value"]
    assert run(capsys, "norm", "k3", "--f", "f3", "--weights", "file")[0] == 1


def test_lemma_check_gallery_and_random(capsys):
    code, out = run(capsys, "lemma-check", "k3", "--suite", "3", "--suite", "5", "--random", "2",
                    "--machine")
    d = as_dict(out)
    assert code == 0 and d["all_pass"] == "yes"
    assert d["check.minimal_index.unique"].startswith("pass")


def test_human_output_is_aligned(capsys):
    code, out = run(capsys, "norm", "k1", "--f", "one")
    lines = out.splitlines()
    assert code == 0 and any(line.startswith("elapsed_s") for line in lines)
    assert len({len(line) - len(line.split(None, 1)[1]) for line in lines}) == 1


def test_console_module_runs():
    res = subprocess.run([sys.executable, "-m", "lurnorm.cli", "validate", "k1", "--machine"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "valid=yes" in res.stdout
