import json
import subprocess
import sys
from pathlib import Path

import pytest

from gaugedress import cli
from gaugedress.cli import EXIT_CHECK, EXIT_INVALID, EXIT_OK, main, run_config, theta_seed
from gaugedress.config import load_config

ROOT = Path(__file__).resolve().parents[1]
SMALL = ROOT / "tests" / "data" / "small.json"
BROKEN = ROOT / "configs" / "broken_kernel.json"


def records(outdir):
    return [json.loads(line) for line in (Path(outdir) / "results.ndjson").read_text().splitlines()]


def write_cfg(tmp_path, mutate):
    d = json.loads(SMALL.read_text())
    mutate(d)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", str(SMALL), "--out", str(out), "--csv"]) == EXIT_OK
    return out


def test_run_writes_results(small_run):
    recs = records(small_run)
    assert [r["task"] for r in recs] == ["norm", "overlap", "dress-up", "xi"]
    norm = recs[0]
    assert norm["value"][0] > 0 and abs(norm["value"][1]) < 1e-12 * norm["value"][0]
    assert recs[2]["norm_ratio"] == pytest.approx(1.0, abs=1e-12)
    assert recs[3]["pass"] is True
    files = {p.name for p in small_run.iterdir()}
    assert {"results.ndjson", "config.json", "timing.json", "vev2.csv", "dress.csv", "xi-check.csv"} <= files


def test_results_contain_no_timings(small_run):
    text = (small_run / "results.ndjson").read_text()
    assert "wall_time" not in text and "threads" not in text
    timing = json.loads((small_run / "timing.json").read_text())
    assert len(timing["tasks"]) == 4 and timing["threads"] == 1


def test_emitted_config_reparses(small_run):
    cfg = load_config(small_run / "config.json")
    assert cfg.to_dict() == load_config(SMALL).to_dict()


def test_repeat_runs_are_byte_identical(small_run, tmp_path):
    assert main(["run", str(SMALL), "--out", str(tmp_path), "--threads", "8", "--csv"]) == EXIT_OK
    for name in ("results.ndjson", "config.json", "vev2.csv"):
        assert (tmp_path / name).read_bytes() == (small_run / name).read_bytes()


def test_run_config_matches_cli(small_run):
    assert run_config(SMALL) == records(small_run)


def test_stdout_without_out(capsys):
    assert main(["xi-check", str(SMALL)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["pass"] is True


def test_missing_file_is_invalid(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.json")]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_malformed_config_is_invalid(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"schema": "gaugedress.experiment/1", "lattice": }')
    assert main(["run", str(p)]) == EXIT_INVALID
    assert f"{p}:1:" in capsys.readouterr().err


def test_undecayed_field_is_invalid(tmp_path, capsys):
    def widen(d):
        d["fields"]["up"]["terms"][0]["envelope"]["width"] = 2.0

    assert main(["run", str(write_cfg(tmp_path, widen))]) == EXIT_INVALID
    assert "$.fields.up" in capsys.readouterr().err


def test_bad_tolerance_override(capsys):
    assert main(["run", str(SMALL), "--tolerance", "-1"]) == EXIT_INVALID


def test_numerical_failure_exits_3(tmp_path, capsys):
    # a coarse time step puts shell frequencies beyond Nyquist
    def coarse(d):
        d["lattice"] = {"sites": 16, "box": 12.0}
        d["tasks"] = d["tasks"][:1]

    out = tmp_path / "o"
    assert main(["run", str(write_cfg(tmp_path, coarse)), "--out", str(out)]) == EXIT_CHECK
    (rec,) = records(out)
    assert rec["error"].startswith("ShellRangeError")
    assert "norm" in capsys.readouterr().err


def test_failed_xi_check_exits_3(tmp_path):
    def strict(d):
        d["tasks"] = [{"id": "xi", "kind": "xi-check", "options": {"tolerance": 1e-9}}]

    assert main(["xi-check", str(write_cfg(tmp_path, strict))]) == EXIT_CHECK


def test_broken_kernel_fails_xi_check(capsys):
    # improper affine weights do not invert the divergence
    assert main(["xi-check", str(BROKEN)]) == EXIT_CHECK
    rec = json.loads(capsys.readouterr().out)
    assert rec["pass"] is False and abs(rec["value"] + 0.5) < 0.05


def test_gauge_check(tmp_path):
    out = tmp_path / "g"
    code = main(["gauge-check", str(SMALL), "--samples", "2", "--out", str(out), "--seed", "5"])
    (rec,) = records(out)
    assert rec["seed"] == 5 and rec["samples"] == 2
    assert set(rec["tasks"]) == {"norm", "overlap"}
    assert len(rec["seeds"]) == 2 and rec["seeds"][0]["up"] == [theta_seed(5, 0, 1)]
    # coarse grid: the allowance here is the quadrature error, not the relative tolerance
    assert rec["pass"] is True and code == EXIT_OK
    assert all(t["max_excess"] < 1 for t in rec["tasks"].values())


def test_gauge_check_needs_samples():
    assert main(["gauge-check", str(SMALL), "--samples", "0"]) == EXIT_INVALID


def test_gauge_check_needs_vev_tasks(tmp_path):
    def drop(d):
        d["tasks"] = d["tasks"][2:]

    assert main(["gauge-check", str(write_cfg(tmp_path, drop))]) == EXIT_INVALID


def test_theta_seeds_differ():
    seeds = {theta_seed(1, s, i, c) for s in range(3) for i in range(3) for c in range(2)}
    assert len(seeds) == 18
    assert theta_seed(1, 0, 0) == theta_seed(1, 0, 0)


def test_refine_reports_pairs(tmp_path):
    def cheap(d):
        d["lattice"] = {"sites": 8, "box": 12.0, "time_sites": 12, "time_box": 12.0}
        d["fields"]["up"]["terms"][0]["envelope"]["width"] = 0.7
        del d["fields"]["mixed"]
        d["tasks"] = [d["tasks"][2], d["tasks"][3]]

    out = tmp_path / "r"
    assert main(["refine", str(write_cfg(tmp_path, cheap)), "--out", str(out)]) == EXIT_OK
    dress_rec, xi_rec = records(out)
    assert dress_rec["extents"] == [[12, 8, 8, 8], [24, 16, 16, 16]]
    pair = xi_rec["pairs"]["relative_error"]
    assert pair["difference"] == pytest.approx(abs(pair["fine"] - pair["coarse"]))
    assert "norm_ratio" in dress_rec["pairs"]


def test_refine_factor_must_be_at_least_two():
    assert main(["refine", str(SMALL), "--factor", "1"]) == EXIT_INVALID


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gaugedress", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gauge-check" in res.stdout


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args([])
