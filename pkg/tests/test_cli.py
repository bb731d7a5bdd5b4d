import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from sptcov.cli import cli, main
from sptcov.io import load_model, read_matrix_csv, read_stack, save_model, write_matrix_csv
from sptcov.model import SepPlusBandedCov


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "sim.json").write_text(json.dumps({"k": 12, "n": 80, "tau": 3, "d_true": 3, "rank": 4, "seed": 2}))
    assert main(["simulate", "sim.json", "-o", "s.bin", "--truth", "t.json"]) == 0
    return tmp_path


def report(capsys):
    return json.loads(capsys.readouterr().out)


class TestCommands:
    def test_simulate_deterministic(self, workdir):
        first = (workdir / "s.bin").read_bytes()
        assert main(["simulate", "sim.json", "-o", "s2.bin"]) == 0
        assert (workdir / "s2.bin").read_bytes() == first
        assert load_model(workdir / "t.json").d == 3

    def test_estimate_fixed_d(self, workdir, capsys):
        capsys.readouterr()
        assert main(["estimate", "s.bin", "--d", "3", "-o", "m.json", "--truth", "t.json", "--oracle"]) == 0
        rep = report(capsys)
        assert rep["schema"] == "sptcov-report/1" and rep["d"] == 3
        assert 0 < rep["rel_error"] < rep["oracle_ece_rel_error"]
        assert load_model(workdir / "m.json").banded_kind == "stationary"

    def test_estimate_select(self, workdir, capsys):
        capsys.readouterr()
        code = main(["estimate", "s.bin", "--select", "0,1,3,5", "--folds", "4", "-o", "m.json", "--report", "r.json"])
        assert code == 0
        rep = json.loads((workdir / "r.json").read_text())
        assert rep["d"] in (0, 1, 3, 5) and len(rep["cv_table"]) == 4

    @pytest.mark.parametrize("flags", [["--banded", "banded"], ["--banded", "none", "--no-psd", "--no-center"]])
    def test_estimate_variants(self, workdir, flags):
        assert main(["estimate", "s.bin", "--d", "1", "-o", "m.json", *flags]) == 0

    def test_solve(self, workdir, capsys):
        main(["estimate", "s.bin", "--d", "3", "-o", "m.json"])
        model = load_model(workdir / "m.json")
        x = np.random.default_rng(0).standard_normal((12, 12))
        write_matrix_csv(workdir / "y.csv", model.apply(x) + 1e-5 * x)
        capsys.readouterr()
        assert main(["solve", "m.json", "y.csv", "-o", "x.csv", "--log", "log.csv", "--tol", "1e-8"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["converged"]
        assert np.linalg.norm(read_matrix_csv(workdir / "x.csv") - x) <= 1e-8 * np.linalg.norm(x)
        rows = list(csv.DictReader(open(workdir / "log.csv")))
        assert len(rows) == out["outer_iters"] and "residual" in rows[0]

    def test_solve_identity(self, workdir):
        save_model(workdir / "i.json", SepPlusBandedCov(np.eye(3), np.eye(3)))
        y = np.arange(9.0).reshape(3, 3)
        write_matrix_csv(workdir / "y.csv", y)
        assert main(["solve", "i.json", "y.csv", "-o", "x.csv", "--ridge", "0"]) == 0
        np.testing.assert_allclose(read_matrix_csv(workdir / "x.csv"), y)

    def test_gof(self, workdir, capsys):
        capsys.readouterr()
        assert main(["gof", "s.bin", "--d", "3", "--I", "2", "--J", "1", "--boot", "20", "--seed", "1"]) == 0
        rep = report(capsys)
        assert 1 / 21 <= rep["p_value"] <= 1 and rep["I"] == 2 and rep["J"] == 1

    def test_bench(self, workdir):
        for profile in ("estimation", "pcg"):
            assert main(["bench", "--K", "8,12", "--profile", profile, "-o", f"{profile}.csv"]) == 0
            rows = list(csv.DictReader(open(workdir / f"{profile}.csv")))
            assert [r["K"] for r in rows] == ["8", "12"]

    def test_experiment(self, workdir):
        cfg = {"base": {"k": 10, "n": 40, "d_true": 3, "rank": 4}, "vary": "tau", "values": [1, 3], "reps": 1,
               "folds": 3, "methods": ["SPT-d", "PT"], "bias": False}
        (workdir / "e.json").write_text(json.dumps(cfg))
        assert main(["--threads", "2", "experiment", "e.json", "-o", "e.csv"]) == 0
        rows = list(csv.DictReader(open(workdir / "e.csv")))
        assert {r["method"] for r in rows} == {"SPT-d", "PT"} and len(rows) == 4

    def test_csv_round_trip(self, workdir):
        assert main(["export-csv", "s.bin", "dir"]) == 0
        assert main(["import-csv", "dir", "-o", "back.bin"]) == 0
        assert (workdir / "back.bin").read_bytes()[21:] == (workdir / "s.bin").read_bytes()[21:]
        np.testing.assert_array_equal(read_stack(workdir / "back.bin").data, read_stack(workdir / "s.bin").data)


class TestErrors:
    def test_bad_bandwidth_lists_range(self, workdir, capsys):
        assert main(["estimate", "s.bin", "--d", "40", "-o", "m.json"]) == 1
        assert "[0, 12]" in capsys.readouterr().err

    def test_d_and_select_exclusive(self, workdir):
        assert main(["estimate", "s.bin", "-o", "m.json"]) == 1
        assert main(["estimate", "s.bin", "--d", "1", "--select", "1,2", "-o", "m.json"]) == 1

    def test_malformed_stack(self, workdir, capsys):
        (workdir / "bad.bin").write_bytes(b"NOPE" + bytes(30))
        assert main(["estimate", "bad.bin", "--d", "1", "-o", "m.json"]) == 1
        assert "byte 0" in capsys.readouterr().err

    def test_shape_mismatch(self, workdir, capsys):
        main(["estimate", "s.bin", "--d", "1", "-o", "m.json"])
        write_matrix_csv(workdir / "y.csv", np.ones((3, 3)))
        assert main(["solve", "m.json", "y.csv", "-o", "x.csv"]) == 1
        assert "shape" in capsys.readouterr().err

    def test_degenerate_trace_is_numeric(self, workdir):
        from sptcov.core import SampleStack
        from sptcov.io import write_stack

        write_stack(workdir / "z.bin", SampleStack(np.zeros((4, 5, 5))))
        assert main(["estimate", "z.bin", "--d", "1", "-o", "m.json", "--no-center"]) == 2

    def test_non_convergence_is_numeric(self, workdir):
        main(["estimate", "s.bin", "--d", "3", "-o", "m.json"])
        write_matrix_csv(workdir / "y.csv", np.random.default_rng(1).standard_normal((12, 12)))
        assert main(["solve", "m.json", "y.csv", "-o", "x.csv", "--max-outer", "1", "--tol", "1e-14"]) == 2

    def test_bad_json(self, workdir):
        (workdir / "bad.json").write_text("{")
        assert main(["simulate", "bad.json", "-o", "x.bin"]) == 1

    def test_help_and_version(self):
        runner = CliRunner()
        res = runner.invoke(cli, ["--help"])
        assert res.exit_code == 0
        for name in ("simulate", "estimate", "solve", "gof", "bench", "experiment", "import-csv", "export-csv"):
            assert name in res.output
        assert main(["--version"]) == 0
