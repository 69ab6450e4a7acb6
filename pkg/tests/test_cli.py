"""Command-line interface tests.

Each test drives ``main`` with an argv list and checks printed output,
written artifacts, and exit codes.  The two-bus network is passed through
a JSON case file to also cover the file-loading path.
"""

import json

import numpy as np
import pytest

from conftest import make_twobus
from dcropf.cli import build_parser, main
from dcropf.netcase import save_case


@pytest.fixture()
def twobus_file(tmp_path):
    path = tmp_path / "twobus.json"
    save_case(make_twobus(), path)
    return str(path)


def test_parser_builds_all_subcommands():
    ap = build_parser()
    for argv in (["pf", "--case", "ieee9", "--vref", "510", "--p", "25e3"],
                 ["stabset", "--case", "ieee9"],
                 ["opf", "--case", "ieee9", "--mode", "nominal"],
                 ["simulate", "--case", "ieee9", "--vref", "510",
                  "--ramp", "1,1,1,2"],
                 ["run", "--case", "ieee9"],
                 ["validate", "--case", "ieee9", "--vref", "510"],
                 ["bench", "--cases", "ieee9"]):
        args = ap.parse_args(argv)
        assert callable(args.func)


def test_pf_prints_and_writes_csv(tmp_path, capsys):
    out = tmp_path / "pf.csv"
    rc = main(["pf", "--case", "ieee9", "--vref", "510", "--p", "25000",
               "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "converged" in text and "losses" in text
    lines = out.read_text().splitlines()
    assert lines[0] == "id,value,unit"
    # One row per load, source, and line.
    assert len(lines) == 1 + 6 + 3 + 9


def test_pf_dumps_state_matrices(tmp_path):
    out = tmp_path / "mats.json"
    rc = main(["pf", "--case", "ieee9", "--vref", "510", "--p", "25000",
               "--dump-matrices", str(out)])
    assert rc == 0
    blob = json.loads(out.read_text())
    assert set(blob) == {"A", "B", "C", "D"}
    assert np.array(blob["A"]).shape == (18, 18)


def test_pf_rejects_wrong_vector_length():
    with pytest.raises(SystemExit):
        main(["pf", "--case", "ieee9", "--vref", "510,520", "--p", "25000"])


def test_stabset_prints_exact_two_bus_floor(twobus_file, capsys):
    rc = main(["stabset", "--case", twobus_file, "--method", "passivity"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "beta  = 250000" in text
    assert "500.0000 V" in text


def test_stabset_dumps_witness(twobus_file, tmp_path):
    out = tmp_path / "witness.json"
    rc = main(["stabset", "--case", twobus_file, "--method", "passivity",
               "--dump-witness", str(out)])
    assert rc == 0
    blob = json.loads(out.read_text())
    assert blob["margin"] < 0
    assert np.array(blob["P"]).shape == (3, 3)


def test_opf_nominal_writes_solution(twobus_file, tmp_path, capsys):
    out = tmp_path / "nominal.json"
    rc = main(["opf", "--case", twobus_file, "--mode", "nominal",
               "--out", str(out)])
    assert rc == 0
    assert "nominal set points" in capsys.readouterr().out
    blob = json.loads(out.read_text())
    assert blob["vref_v"][0] == pytest.approx(439.38, abs=0.1)
    assert "r_bar" not in blob


def test_opf_robust_writes_band(twobus_file, tmp_path, capsys):
    out = tmp_path / "robust.json"
    rc = main(["opf", "--case", twobus_file, "--mode", "robust",
               "--gevp", "none", "--out", str(out)])
    assert rc == 0
    assert "certified band radius" in capsys.readouterr().out
    blob = json.loads(out.read_text())
    assert blob["vref_v"][0] == pytest.approx(445.26, abs=0.2)
    assert blob["band_lo_v"][0] >= 425.0 - 1e-6


def test_simulate_detects_ramp_instability(twobus_file, tmp_path, capsys):
    out = tmp_path / "traj.csv"
    rc = main(["simulate", "--case", twobus_file, "--vref", "510",
               "--ramp", "10000,20000,0.5,90000", "--out", str(out)])
    assert rc == 2
    text = capsys.readouterr().out
    assert "instability detected" in text
    header = out.read_text().splitlines()[0]
    assert header == "t,i_t1,v_src_b1,v_load_b2"


def test_simulate_stable_ramp_exits_clean(twobus_file, capsys):
    rc = main(["simulate", "--case", twobus_file, "--vref", "510",
               "--ramp", "10000,10000,0.2,40000"])
    assert rc == 0
    assert "no instability" in capsys.readouterr().out


def test_validate_exit_codes(twobus_file, capsys):
    rc = main(["validate", "--case", twobus_file, "--vref", "510",
               "--gevp", "none", "--samples", "20"])
    assert rc == 0
    assert "samples passed" in capsys.readouterr().out
    # Low set points push boxed samples past the stability crossing.
    rc = main(["validate", "--case", twobus_file, "--vref", "440",
               "--gevp", "none", "--samples", "20"])
    assert rc == 1


def test_run_writes_artifact_directory(twobus_file, tmp_path, capsys):
    out = tmp_path / "artifacts"
    rc = main(["run", "--case", twobus_file, "--samples", "10",
               "--out", str(out)])
    assert rc == 0
    assert "Robust set points" in capsys.readouterr().out
    assert (out / "twobus_report.json").exists()
    assert (out / "twobus_report.md").exists()
    blob = json.loads((out / "twobus_solution.json").read_text())
    # Auto picks the vertex certificate; its scaling beta ~ 217.8e3 puts
    # the floor near 466.6 V (passivity would give exactly 500 V).
    assert blob["v_floor_v"][0] == pytest.approx(466.6, abs=0.5)


def test_bench_cli_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--cases", "ieee9", "--reps", "1",
               "--out", str(out)])
    assert rc == 0
    assert "ieee9" in capsys.readouterr().out
    assert out.read_text().splitlines()[0].startswith("case,")
