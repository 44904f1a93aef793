import csv
import json

import pytest

from lorank.cli import main
from lorank.model import load_sdpa

TOY = """\
* min x subject to x >= 1
1
1
1
1.0
0 1 1 1 1.0
1 1 1 1 1.0
"""


@pytest.fixture()
def toy_file(tmp_path):
    path = tmp_path / "toy.dat-s"
    path.write_text(TOY)
    return path


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("instances")
    assert main(["gen", "tru", "3", "--out", str(out)]) == 0
    assert main(["gen", "tru", "3", "--eps", "1e-4", "--out", str(out)]) == 0
    assert main(["gen", "vib", "3", "--out", str(out)]) == 0
    return out


class TestGen:
    def test_files_written(self, gen_dir):
        assert (gen_dir / "tru3.dat-s").exists()
        assert (gen_dir / "tru3.geom.json").exists()
        assert (gen_dir / "tru3e.dat-s").exists()
        assert (gen_dir / "vib3.dat-s").exists()

    def test_generated_dimensions(self, gen_dir):
        prob = load_sdpa(gen_dir / "tru3.dat-s")
        assert prob.n == 36
        assert prob.block_dims == [13]
        assert prob.nu == 72

    def test_vib_two_blocks(self, gen_dir):
        prob = load_sdpa(gen_dir / "vib3.dat-s")
        assert prob.block_dims == [13, 12]

    def test_e_variant_bounds(self, gen_dir):
        prob = load_sdpa(gen_dir / "tru3e.dat-s")
        # lower-bound rows carry -t <= -1e-4
        assert prob.d.min() == pytest.approx(-1e-4)


class TestSolve:
    def test_toy_json_report(self, toy_file, capsys):
        rc = main(["solve", str(toy_file), "--solver", "ip", "--tol", "1e-7"])
        out = capsys.readouterr().out
        assert rc == 0
        payload = json.loads(out)
        assert payload["schema"] == 1
        assert payload["status"] == "optimal"
        assert payload["sdpa_objective"] == pytest.approx(1.0, abs=1e-5)
        assert payload["dimacs_max"] <= 1e-7

    def test_tru3_hybrid(self, gen_dir, capsys):
        rc = main(["solve", str(gen_dir / "tru3.dat-s"), "--solver", "ip", "--precond", "hybrid"])
        payload = json.loads(capsys.readouterr().out)
        assert rc == 0
        assert 8 <= payload["iterations"] <= 32

    def test_pdal_profile_autodetect(self, gen_dir, capsys):
        rc = main(["solve", str(gen_dir / "vib3.dat-s"), "--solver", "pdal"])
        payload = json.loads(capsys.readouterr().out)
        assert rc == 0
        assert payload["solver"] == "pdal"
        assert payload["status"] == "optimal"

    def test_out_file_and_verify(self, gen_dir, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        rc = main(
            [
                "solve",
                str(gen_dir / "tru3.dat-s"),
                "--solver",
                "ip",
                "--verify",
                "--out",
                str(report_path),
            ]
        )
        assert rc == 0
        payload = json.loads(report_path.read_text())
        assert payload["verification"]["compliance_feasible"]
        assert "written" in capsys.readouterr().out

    def test_nonconverged_exit_code(self, gen_dir, capsys):
        rc = main(["solve", str(gen_dir / "tru3.dat-s"), "--maxiter", "2"])
        capsys.readouterr()
        assert rc == 1

    def test_parse_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.dat-s"
        bad.write_text("1\n1\n1\n1.0\n0 1 1 1 1.0\n1 1 1 1 1.0\n1 1 1 1 2.0\n")
        rc = main(["solve", str(bad)])
        capsys.readouterr()
        assert rc == 2

    def test_missing_file_exit_code(self, tmp_path, capsys):
        rc = main(["solve", str(tmp_path / "nope.dat-s")])
        capsys.readouterr()
        assert rc == 2

    def test_pdal_config_file(self, gen_dir, tmp_path, capsys):
        cfg = tmp_path / "pdal.json"
        cfg.write_text(json.dumps({"r": 0.02, "eps": 1e-6, "gamma_lmi": 0.5}))
        rc = main(
            ["solve", str(gen_dir / "tru3.dat-s"), "--solver", "pdal", "--pdal-config", str(cfg)]
        )
        payload = json.loads(capsys.readouterr().out)
        assert rc == 0 and payload["status"] == "optimal"

    def test_pdal_config_rejects_unknown_keys(self, gen_dir, tmp_path, capsys):
        cfg = tmp_path / "pdal.json"
        cfg.write_text(json.dumps({"bogus": 1.0}))
        rc = main(
            ["solve", str(gen_dir / "tru3.dat-s"), "--solver", "pdal", "--pdal-config", str(cfg)]
        )
        capsys.readouterr()
        assert rc == 2


class TestBench:
    def test_empty_header_only(self, tmp_path):
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--csv", str(out)])
        assert rc == 0
        rows = list(csv.reader(out.open()))
        assert len(rows) == 1
        assert rows[0][0] == "instance"

    def test_rows_and_failure_recorded(self, gen_dir, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        rc = main(
            [
                "bench",
                str(gen_dir / "tru3.dat-s"),
                str(gen_dir / "missing.dat-s"),
                "--csv",
                str(out),
            ]
        )
        capsys.readouterr()
        assert rc == 0
        rows = list(csv.reader(out.open()))
        assert len(rows) == 3
        assert rows[1][0] == "tru3.dat-s"
        assert rows[2][3].startswith("failed")

    def test_determinism(self, gen_dir, tmp_path, capsys):
        """Identical config and seed give bitwise-identical numeric fields."""
        rows = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            rc = main(
                ["bench", str(gen_dir / "tru3.dat-s"), "--seed", "7", "--csv", str(out)]
            )
            capsys.readouterr()
            assert rc == 0
            table = list(csv.reader(out.open()))
            # drop the wall-clock columns, everything else must match exactly
            rows.append([c for i, c in enumerate(table[1]) if i not in (6, 7)])
        assert rows[0] == rows[1]
