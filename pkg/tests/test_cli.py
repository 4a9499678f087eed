from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from impulse_qvi import example, save_spec
from impulse_qvi.cli import main, parse_point

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture()
def v2_json(tmp_path):
    p = tmp_path / "ex31_v2.json"
    save_spec(example("ex31_v2"), p)
    return str(p)


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_parse_point():
    assert parse_point("t=0,x=-0.3,T=1") == {"t": [0.0], "x": [-0.3], "T": [1.0]}
    assert parse_point("t=0.5, x=1,2") == {"t": [0.5], "x": [1.0, 2.0]}


def test_oracle_value(capsys):
    assert main(["oracle", "--name", "V1", "--at", "t=0,x=-1.3,T=1"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.3)
    assert main(["oracle", "--name", "V1", "--at", "s=-0.3"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.3)
    assert main(["oracle", "--name", "V2", "--at", "t=0,x=-1,T=1"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(247 / 180)


def test_usage_errors_exit_2(v2_json):
    for argv in (["bogus"], ["solve"], ["solve", "--spec", v2_json, "--frobnicate"],
                 ["solve", "--spec", v2_json, "--grid", "abc"], ["oracle", "--at", "t=0"],
                 ["synthesize", "--spec", v2_json, "--at", "t=0"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2, argv


def test_module_errors_exit_1(tmp_path, capsys):
    assert main(["solve", "--spec", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"dimension": 1}')
    assert main(["solve", "--spec", str(bad)]) == 1
    assert main(["oracle", "--name", "nope", "--at", "s=0"]) == 1
    assert "error" in capsys.readouterr().err


def test_solve_writes_stamped_outputs(tmp_path, v2_json, capsys):
    out = tmp_path / "v.csv"
    assert main(["solve", "--spec", v2_json, "--grid", "60", "--steps", "30", "--out", str(out)]) == 0
    summary = _json_out(capsys)
    assert summary["finite_nodes"] == 61 * 31
    manifest = json.loads(Path(f"{out}.manifest.json").read_text())
    assert manifest["outputs"] == [str(out)]
    for f in manifest["outputs"]:
        assert Path(f).read_text().startswith(f"# spec_hash={manifest['spec_hash']}")
    assert manifest["parameters"]["steps"] == 30
    assert "solve" in manifest["timings"]
    assert manifest["passed"] is True


def test_csv_is_byte_identical_across_runs_and_threads(tmp_path, v2_json):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["solve", "--spec", v2_json, "--grid", "40", "--steps", "20", "--out", str(a), "--threads", "1"])
    main(["solve", "--spec", v2_json, "--grid", "40", "--steps", "20", "--out", str(b), "--threads", "8"])
    assert a.read_bytes() == b.read_bytes()


def test_validate_reports_without_asserting(capsys):
    assert main(["validate", "--spec", str(CONFIGS / "ex31_v1.json")]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["compatibility_passed"] is False
    assert "warning" in captured.err


def test_verify_exit_code_follows_assertions(tmp_path, v2_json, capsys):
    vpath = tmp_path / "v.npz"
    assert main(["solve", "--spec", v2_json, "--grid", "60", "--steps", "30", "--out", str(vpath)]) == 0
    capsys.readouterr()
    assert main(["verify", "--spec", v2_json, "--load", str(vpath), "--oracle", "V2"]) == 0
    assert _json_out(capsys)["asserted"] == {"dpp": True, "growth": True, "oracle": True}
    assert main(["verify", "--spec", v2_json, "--load", str(vpath), "--oracle", "V2", "--tol-acc", "1e-9"]) == 1
    assert _json_out(capsys)["asserted"]["oracle"] is False


def test_verify_rejects_grid_of_other_spec(tmp_path, v2_json):
    vpath = tmp_path / "v.npz"
    main(["solve", "--spec", v2_json, "--grid", "30", "--steps", "10", "--out", str(vpath)])
    assert main(["verify", "--spec", str(CONFIGS / "ex31_v1.json"), "--load", str(vpath)]) == 1


def test_synthesize(tmp_path, v2_json, capsys):
    out = tmp_path / "ctrl.json"
    assert main(["synthesize", "--spec", v2_json, "--at", "t=0,x=-1", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["spec_hash"] == example("ex31_v2").spec_hash()
    assert payload["cost"]["total"] == pytest.approx(247 / 180, abs=0.02)


def test_synthesis_failure_exit_1(capsys):
    assert main(["synthesize", "--spec", str(CONFIGS / "ex31_v3.json"), "--grid", "60", "--steps", "30",
                 "--at", "t=0,x=0.5"]) == 1
    assert "partial_control" in capsys.readouterr().out


def test_compare_unconstrained(capsys, v2_json):
    assert main(["compare-unconstrained", "--spec", v2_json, "--grid", "60", "--steps", "30"]) == 0
    assert _json_out(capsys)["terminal_identical"] is True


def test_reach(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["reach", "--spec", str(CONFIGS / "ex24_i.json"), "--grid", "60", "--partition", "4",
                 "--out", str(out)]) == 0
    assert len(_json_out(capsys)["times"]) == 5
    assert out.read_text().startswith("# spec_hash=")


def test_trajectory(tmp_path, capsys):
    out = tmp_path / "tr.csv"
    ctrl = '{"tau": [0.0], "xi": [[0.3]]}'
    assert main(["trajectory", "--spec", str(CONFIGS / "ex31_v1.json"), "--at", "t=0,x=-1.3",
                 "--control", ctrl, "--out", str(out)]) == 0
    payload = _json_out(capsys)
    assert payload["cost"]["total"] == pytest.approx(1.3)
    assert payload["bounds"]["passed"] is True


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "impulse_qvi", "oracle", "--name", "V3", "--at", "s=1.5"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and r.stdout.strip() == "inf"
