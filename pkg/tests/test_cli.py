import json
import subprocess
import sys

import pytest
import yaml

from hybridformation.cli import main
from hybridformation.config import load_raw


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def small(**extra):
    data = {"partition": {"radius_m": 50, "n_r": 15, "n_theta": 20, "n_phi": 10},
            "checks": {"regions": [[5, 5, 5]], "samples": 5}}
    data.update(extra)
    return data


def test_run_writes_outputs(tmp_path):
    assert main(["run", "reaching", "--out", str(tmp_path)]) == 0
    d = tmp_path / "follower_0"
    header = (d / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t,x,y,z,rel_x,rel_y,rel_z,r,theta,phi,i,j,k")
    summary = json.loads((d / "summary.json").read_text())
    assert summary["reached"] is True and summary["final_region"][0] == 1
    events = [json.loads(line) for line in (d / "events.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "C_r-" and events[-1]["event"] == "C_0"


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "collision", "--out", str(a), "--seed", "3"]) == 0
    assert main(["run", "collision", "--out", str(b), "--seed", "3"]) == 0
    for name in ("trajectory.csv", "events.jsonl", "summary.json"):
        assert (a / "follower_0" / name).read_bytes() == (b / "follower_0" / name).read_bytes()


def test_config_errors_name_the_key(tmp_path, capsys):
    bad = small()
    bad["partition"]["n_theta"] = "many"
    assert main(["synth-check", write(tmp_path, bad)]) == 2
    assert "partition.n_theta" in capsys.readouterr().err
    bad = small()
    del bad["partition"]["n_r"]
    assert main(["des-check", write(tmp_path, bad)]) == 2
    assert "partition.n_r" in capsys.readouterr().err
    bad = small(extra_key=1)
    assert main(["des-check", write(tmp_path, bad)]) == 2
    assert "extra_key" in capsys.readouterr().err
    assert main(["run", "no_such_config", "--out", str(tmp_path)]) == 2


def test_run_needs_followers(tmp_path, capsys):
    assert main(["run", write(tmp_path, small()), "--out", str(tmp_path)]) == 2
    assert "leader" in capsys.readouterr().err


def test_synth_check(tmp_path, capsys):
    assert main(["synth-check", write(tmp_path, small()), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("verdict: PASS") and "5,5,5 C_r- verified" in out
    assert (tmp_path / "synth_report.txt").exists()


def test_synth_check_zero_speed(tmp_path, capsys):
    assert main(["synth-check", write(tmp_path, small(options={"v_max": 0}))]) == 1
    assert "Infeasible" in capsys.readouterr().out


def test_abstract_check(tmp_path, capsys):
    cfg = write(tmp_path, small())
    assert main(["abstract-check", cfg, "--samples", "5"]) == 0
    assert main(["abstract-check", cfg, "--samples", "0"]) == 0
    assert "vacuous" in capsys.readouterr().out
    assert main(["abstract-check", cfg, "--samples", "-1"]) == 2


def test_des_check_reports_witness(capsys):
    assert main(["des-check", "des_small"]) == 1
    out = capsys.readouterr().out
    assert "L(G) = L(G_ref): FAIL witness:" in out
    assert "K_F controllable: PASS" in out and "closed loop nonblocking: PASS" in out


def test_bundled_configs_validate():
    from hybridformation.config import BUNDLED

    for name in BUNDLED:
        load_raw(name)


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hybridformation.cli", "des-check", "des_small"],
                       capture_output=True, text=True)
    assert r.returncode == 1 and r.stdout.startswith("verdict: FAIL")
