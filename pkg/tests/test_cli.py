import json
import subprocess
import sys

import pytest

from liouville import cli

SMALL = ["--set", "truncation=4", "--set", "spacing=1/32", "--set", "extent=1", "--replicas", "4"]


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main(list(args) + ["--out", str(out)])
    return code, out


def test_describe(capsys):
    assert cli.main(["describe", "estimate-exponents", "--gamma", "0.5", "--set", "quantity=bracket-decay"]) == 0
    text = capsys.readouterr().out
    assert "schedule c_n    1, 2, 4, 8, 16, 32, 64, 128" in text
    assert "spacing h" in text
    assert "MiB per field stack" in text
    assert "bracket decay" in text


def test_describe_does_not_write(tmp_path, capsys):
    out = tmp_path / "nothing"
    assert cli.main(["describe", "sample-field", "--out", str(out)]) == 0
    assert not out.exists()


def test_usage_error_names_key(tmp_path, capsys):
    code, _ = run(["sample-field", "--gamma", "2.5"], tmp_path)
    assert code == 2
    assert "invalid value for 'gamma'" in capsys.readouterr().err
    code, _ = run(["sample-field", "--set", "resolution=1"], tmp_path)
    assert code == 2
    assert "'resolution'" in capsys.readouterr().err
    code, _ = run(["sample-field", "--set", "bogus=1"], tmp_path)
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_config_file_and_overrides(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# comment\ngamma = 1/2\ntruncation = 3\nspacing = 1/16\n")
    code, out = run(["sample-field", "--config", str(conf), "--seed", "7"], tmp_path)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["gamma"] == 0.5
    assert man["config"]["truncation"] == 3
    assert man["config"]["grid"]["resolution"] == 17
    assert man["seed"] == 7
    assert set(man["artifacts"]) == {"field.bin", "field_summary.csv"}
    for key in ("version", "wall_time_s", "replicas"):
        assert key in man


def test_snapshot_reuse(tmp_path):
    snap = tmp_path / "f.bin"
    code, _ = run(["sample-field", "--gamma", "0.5", *SMALL, "--save-field", str(snap)], tmp_path, "a")
    assert code == 0 and snap.exists()
    code, out = run(["build-measure", "--gamma", "0.5", *SMALL, "--load-field", str(snap)], tmp_path, "b")
    assert code == 0
    assert (out / "ball_masses.csv").read_text().startswith("radius,mass\n")


def test_verify_invariants_degenerate(tmp_path):
    code, out = run(["verify-invariants", *SMALL, "--set", "horizon=1/16", "--set", "dt=1/1024"], tmp_path)
    assert code == 0
    checks = json.loads((out / "invariants.json").read_text())
    names = {c["check"] for c in checks}
    assert {"clock_is_identity", "lbm_equals_bm", "sde_equals_bm", "lebesgue_measure_exact"} <= names
    assert all(c["pass"] for c in checks)


def test_results_schema(tmp_path):
    code, out = run(
        ["estimate-exponents", "--gamma", "0", *SMALL, "--set", "quantity=clock-moment", "--set", "dt=1/4096"],
        tmp_path,
    )
    assert code == 0
    res = json.loads((out / "results.json").read_text())
    assert set(res[0]) == {"experiment", "gamma", "level", "q_or_p", "slope", "stderr", "expected", "tolerance", "pass"}
    header = (out / "estimates.csv").read_text().splitlines()[0]
    assert header == "gamma,p_or_q,level,radius,statistic,stderr,replicas,seed"


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "liouville.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.strip().startswith("liouville ")
