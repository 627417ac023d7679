import csv
import json

import pytest

from hardynls import cli

SMALL = ["--n", "2001"]


def run(tmp_path, *args):
    return cli.main([args[0], "--out", str(tmp_path), *SMALL, *args[1:]])


def load(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def gs_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gs")
    assert cli.main(["ground-state", "--out", str(out), *SMALL]) == 0
    return out / "ground-state"


def test_ground_state_outputs(gs_dir, capsys):
    for name in ("profile.csv", "profile.json", "summary.json", "monotonicity.json", "config.json"):
        assert (gs_dir / name).exists()
    summary = load(gs_dir / "summary.json")
    assert summary["b0"] == pytest.approx(3.87598, rel=1e-5)
    assert summary["monotonicity_passed"]
    with open(gs_dir / "profile.csv") as fh:
        assert next(csv.reader(fh)) == ["r", "Q", "Qr", "Q1"]


def test_ground_state_deterministic(gs_dir, tmp_path):
    assert cli.main(["ground-state", "--out", str(tmp_path), *SMALL]) == 0
    # config.json echoes the output root, which differs here
    for f in gs_dir.iterdir():
        if f.name == "config.json":
            continue
        assert (tmp_path / "ground-state" / f.name).read_bytes() == f.read_bytes(), f.name


def test_config_echo(gs_dir):
    cfg = load(gs_dir / "config.json")
    assert cfg["command"] == "ground-state"
    assert (cfg["d"], cfg["p"], cfg["a"], cfg["n"]) == (3, 2.0, -0.1, 2001)


def test_invalid_potential_exit_2(tmp_path):
    assert run(tmp_path, "ground-state", "--a", "-0.3") == 2
    err = load(tmp_path / "ground-state" / "error.json")
    assert err["exit_code"] == 2 and err["type"] == "ParamsError"


def test_bad_bracket_exit_3(tmp_path):
    assert run(tmp_path, "ground-state", "--bracket", "0.1", "0.2") == 3


def test_config_file_overrides_flags(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"a": -0.3}))
    assert run(tmp_path, "gn-check", "--a", "-0.1", "--config", str(conf)) == 2
    conf.write_text(json.dumps({"not_a_key": 1}))
    assert run(tmp_path, "gn-check", "--config", str(conf)) == 2
    conf.write_text("{broken")
    assert run(tmp_path, "gn-check", "--config", str(conf)) == 2


def test_env_var_sets_output_root(tmp_path, monkeypatch, gs_dir):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "env"))
    prof = str(gs_dir / "profile")
    assert cli.main(["gn-check", *SMALL, "--trials", "5", "--profile", prof,
                     "--family-tol", "1e-6"]) == 0
    rep = load(tmp_path / "env" / "gn-check" / "gn_check.json")
    assert rep["passed"] and rep["n_trials"] == 5


def test_classify_scan(tmp_path):
    assert run(tmp_path, "classify-scan", "--n-b", "20") == 0
    rows = list(csv.DictReader(open(tmp_path / "classify-scan" / "scan.csv")))
    tags = [r["tag"] for r in rows]
    assert len(rows) == 20
    flips = sum(a != b for a, b in zip(tags, tags[1:]))
    assert flips == 1 and tags[0] == "Splus" and tags[-1] == "Sminus"


def test_classify_scan_empty(tmp_path):
    assert run(tmp_path, "classify-scan", "--n-b", "0") == 0
    assert (tmp_path / "classify-scan" / "scan.csv").read_text() == "b,tag,r_event\n"


def test_spectrum_missing_profile_exit_4(tmp_path):
    assert run(tmp_path, "spectrum", "--profile", str(tmp_path / "nope")) == 4


def test_spectrum_from_saved_profile(tmp_path, gs_dir):
    assert run(tmp_path, "spectrum", "--profile", str(gs_dir / "profile")) == 0
    rep = load(tmp_path / "spectrum" / "spectrum.json")
    assert rep["neg_count"] == 1
    assert rep["e0"] > 0
    assert set(rep["kernel_residuals"]) == {"L2Q", "L1Q1_plus_2Q"}


def test_profile_params_mismatch(tmp_path, gs_dir):
    assert run(tmp_path, "spectrum", "--profile", str(gs_dir / "profile"), "--a", "-0.2") == 2


def test_evolve_standing_wave(tmp_path, gs_dir):
    prof = str(gs_dir / "profile")
    assert run(tmp_path, "evolve", "--profile", prof, "--direction", "none", "--T", "0.05", "--gnuplot") == 0
    out = tmp_path / "evolve"
    assert load(out / "summary.json")["max_dist"] < 1e-8
    assert (out / "run.gp").exists()
    header = (out / "run.csv").read_text().splitlines()[0]
    assert header == "t,theta,alpha,dist,mass,energy,VR,Vdot,AR"
    conf = load(out / "run_config.json")
    assert conf["T"] == 0.05 and conf["direction"] == "none"


def test_evolve_deterministic(tmp_path, gs_dir):
    prof = str(gs_dir / "profile")
    args = ("evolve", "--profile", prof, "--direction", "stable_plus", "--T", "0.05")
    outs = []
    for sub in ("a", "b"):
        assert run(tmp_path / sub, *args) == 0
        outs.append({f.name: f.read_bytes() for f in (tmp_path / sub / "evolve").iterdir() if f.name != "config.json"})
    assert outs[0] == outs[1]


def test_evolve_inadmissible_exit_2(tmp_path):
    assert run(tmp_path, "evolve", "--p", "1", "--T", "0.01") == 2


def test_virial_check(tmp_path, gs_dir):
    assert run(tmp_path, "virial-check", "--profile", str(gs_dir / "profile"), "--T", "0.3") == 0
    rep = load(tmp_path / "virial-check" / "virial.json")
    assert rep["max_AR_over_dist"] < 1e-3


def test_plots_render(tmp_path, gs_dir):
    assert run(tmp_path, "gn-check", "--profile", str(gs_dir / "profile"), "--trials", "3") == 0
    assert run(tmp_path, "evolve", "--profile", str(gs_dir / "profile"), "--direction", "unstable_plus",
               "--T", "0.05", "--plot") == 0
    png = tmp_path / "evolve" / "run.png"
    assert png.exists() and png.read_bytes()[:4] == b"\x89PNG"


def test_stale_error_removed(tmp_path):
    assert run(tmp_path, "gn-check", "--a", "-0.3") == 2
    assert (tmp_path / "gn-check" / "error.json").exists()
    assert run(tmp_path, "gn-check", "--trials", "3", "--family-tol", "1e-6") == 0
    assert not (tmp_path / "gn-check" / "error.json").exists()
