import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from pulsed_optomech import cli, formats

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, command, config, *extra, name="out"):
    out = tmp_path / name
    code = cli.run([command, "--config", str(config), "--out", str(out), *extra])
    return code, out


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_outputs(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_pulse_summary(tmp_path):
    code, out = run(tmp_path, "pulse", CONFIGS / "pulse_microcavity.yaml")
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert abs(s["chi"] - 1.5) / 1.5 < 0.05
    assert 7e3 <= s["omega_kick"] <= 1.1e4
    assert abs(s["chi"] - s["chi_closed_form"]) / s["chi_closed_form"] < 1e-3
    assert abs(s["x0_m"] - 1.8e-15) / 1.8e-15 < 0.02
    assert max(s["chi_by_shape"], key=s["chi_by_shape"].get) == "optimal"
    header = (out / "envelopes.csv").read_text().splitlines()
    assert header[0] == "# pulse-envelopes v1"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "pulse"
    assert set(manifest["outputs"]) == {"envelopes.csv", "summary.json"}


def test_pulse_missing_field(tmp_path, capsys):
    cfg = write(tmp_path, "p.yaml", "format: pulse-config v1\nphysical: {wavelength: 1.0e-6}\n")
    code, out = run(tmp_path, "pulse", cfg)
    assert code == 2
    err = capsys.readouterr().err
    assert "physical." in err and "missing required field" in err
    assert not (out / "manifest.json").exists()


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "t.yaml", "format: tomography-config v1\nstate: {kind: vacuum}\nmeasurement: {chii: 2}\n")
    assert run(tmp_path, "tomography", cfg)[0] == 2
    assert "measurement.chii: unknown key" in capsys.readouterr().err


def test_zero_chi_is_numeric_failure(tmp_path, capsys):
    text = (CONFIGS / "tomography_vacuum.yaml").read_text().replace("chi: 2.0", "chi: 0.0")
    code, _ = run(tmp_path, "tomography", write(tmp_path, "t.yaml", text))
    assert code == 3
    assert "no position information" in capsys.readouterr().err


def test_tomography_vacuum(tmp_path):
    code, out = run(tmp_path, "tomography", CONFIGS / "tomography_vacuum.yaml")
    assert code == 0
    r = json.loads((out / "report.json").read_text())
    assert abs(r["reconstructed_var_x"] - 0.5) < 0.01
    assert abs(r["reconstructed_var_p"] - 0.5) < 0.01
    assert len(list((out / "marginals").glob("theta_*.csv"))) == 24
    w = formats.read_wigner(out / "wigner.csv")
    assert w.values.shape == (201, 201)


@pytest.mark.slow
def test_tomography_cat(tmp_path):
    code, out = run(tmp_path, "tomography", CONFIGS / "tomography_cat.yaml")
    assert code == 0
    r = json.loads((out / "report.json").read_text())
    assert r["fidelity"] >= 0.98
    assert r["wigner_min"] < -0.01
    assert abs(r["fringe_visibility"]["suppression"] - 0.4066) < 0.02


def test_tomography_sampled_writes_tomogram(tmp_path):
    text = (CONFIGS / "tomography_vacuum.yaml").read_text().replace("mode: exact", "mode: sampled\nshots: 2000")
    code, out = run(tmp_path, "tomography", write(tmp_path, "t.yaml", text), "--seed", "3")
    assert code == 0
    tomo = formats.load_tomogram(out / "tomogram.json")
    assert tomo.shots_per_angle == 2000 and len(tomo.angles) == 24
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 3


def test_purify_forced(tmp_path):
    code, out = run(tmp_path, "purify", CONFIGS / "purify_forced.json")
    assert code == 0
    rows = (out / "neff.csv").read_text().splitlines()
    header = [r for r in rows if not r.startswith("#")]
    cols = header[0].split(",")
    first = dict(zip(cols, header[2].split(",")))
    assert first["step"] == "1"
    assert abs(float(first["mean_x"]) - 3.917) < 1e-3
    assert abs(float(first["var_x"]) - 0.2176) < 1e-4
    traj = json.loads((out / "trajectory.json").read_text())
    assert len(traj["snapshots"]) == 4


def test_purify_sequence_config_matches_shorthand(tmp_path):
    _, a = run(tmp_path, "purify", CONFIGS / "purify_forced.json", name="a")
    _, b = run(tmp_path, "purify", CONFIGS / "sequence_forced.yaml", name="b")
    assert (a / "neff.csv").read_bytes() == (b / "neff.csv").read_bytes()


def test_purify_ideal_and_bath(tmp_path):
    cfg = write(tmp_path, "p.json", json.dumps({"format": "purify-config v1", "nbar": 1e4, "chi": 1.5}))
    code, out = run(tmp_path, "purify", cfg, name="ideal")
    assert code == 0
    assert abs(json.loads((out / "summary.json").read_text())["final_n_eff"] - 0.047) < 1e-3
    code, out = run(tmp_path, "purify", CONFIGS / "purify_bath_1K.yaml", name="bath")
    assert code == 0
    assert abs(json.loads((out / "summary.json").read_text())["final_n_eff"] - 0.15) < 0.05


def test_purify_bad_outcomes(tmp_path):
    cfg = write(tmp_path, "p.json", json.dumps({"nbar": 1, "chi": 1.5, "outcomes": [1, "x"]}))
    assert run(tmp_path, "purify", cfg)[0] == 2


@pytest.mark.parametrize("command,config,extra", [
    ("pulse", "pulse_microcavity.yaml", ()),
    ("purify", "purify_forced.json", ()),
    ("purify", "purify_bath_1K.yaml", ("--seed", "11")),
    ("tomography", "tomography_vacuum.yaml", ()),
])
def test_rerun_is_byte_identical(tmp_path, monkeypatch, command, config, extra):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    _, a = run(tmp_path, command, CONFIGS / config, *extra, name="a")
    _, b = run(tmp_path, command, CONFIGS / config, *extra, name="b")
    fa, fb = read_outputs(a), read_outputs(b)
    ma, mb = json.loads(fa.pop("manifest.json")), json.loads(fb.pop("manifest.json"))
    assert fa == fb
    ma.pop("output_dir"), mb.pop("output_dir")
    assert ma == mb


def test_sampled_rerun_byte_identical(tmp_path):
    text = (CONFIGS / "tomography_vacuum.yaml").read_text().replace("mode: exact", "mode: sampled\nshots: 500")
    cfg = write(tmp_path, "t.yaml", text)
    _, a = run(tmp_path, "tomography", cfg, "--seed", "5", name="a")
    _, b = run(tmp_path, "tomography", cfg, "--seed", "5", name="b")
    _, c = run(tmp_path, "tomography", cfg, "--seed", "6", name="c")
    fa, fb, fc = read_outputs(a), read_outputs(b), read_outputs(c)
    assert fa["tomogram.json"] == fb["tomogram.json"] and fa["wigner.csv"] == fb["wigner.csv"]
    assert fa["tomogram.json"] != fc["tomogram.json"]


def test_env_seed_and_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PULSED_OPTOMECH_SEED", "9")
    monkeypatch.setenv("PULSED_OPTOMECH_CHI", "2.0")
    cfg = write(tmp_path, "p.json", json.dumps({"nbar": 1e4, "chi": 1.5}))
    code, out = run(tmp_path, "purify", cfg)
    assert code == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["master_seed"] == 9
    traj = json.loads((out / "trajectory.json").read_text())
    assert traj["records"][0]["chi"] == 2.0
    monkeypatch.setenv("PULSED_OPTOMECH_SEED", "x")
    assert run(tmp_path, "purify", cfg, name="bad")[0] == 2


def test_threads_flag(tmp_path):
    code, _ = run(tmp_path, "purify", CONFIGS / "purify_forced.json", "--threads", "1")
    assert code == 0
    assert run(tmp_path, "purify", CONFIGS / "purify_forced.json", "--threads", "0", name="z")[0] == 2


def test_main_exits_with_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["purify", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")])
    assert info.value.code == 2


def test_manifest_hashes_match_files(tmp_path):
    import hashlib

    _, out = run(tmp_path, "purify", CONFIGS / "purify_forced.json")
    m = json.loads((out / "manifest.json").read_text())
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert m["config_sha256"] == hashlib.sha256((CONFIGS / "purify_forced.json").read_bytes()).hexdigest()
