import json
from importlib.resources import files

import pytest

from cefsim.cli import main
from cefsim.config import ConfigError, load_config
from cefsim.robot import MotionSet

ORACLE = str(files("cefsim") / "configs" / "oracle.yaml")
DESK = str(files("cefsim") / "configs" / "desk.yaml")


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_bundled_configs_validate():
    assert load_config(DESK).grid.resolution == 16
    assert load_config(ORACLE).grid_spec().resolution == 8


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write(tmp_path, "seed: 1\nbogus: 3\n")
    assert main(["motionset", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "bogus" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="fi.M"):
        load_config(write(tmp_path, "seed: 1\nfi: {M: 0}\n", "m.yaml"))


def test_seed_is_mandatory(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        load_config(write(tmp_path, "grid: {resolution: 8}\n"))


def test_too_many_motions_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "seed: 1\nmotion_set: {n_poses: 4, n_motions: 7}\n")
    assert main(["motionset", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
    assert "n_motions" in capsys.readouterr().err


def test_digest_ignores_out_dir_and_jobs():
    a = load_config(ORACLE, {"out_dir": "x", "jobs": 1})
    b = load_config(ORACLE, {"out_dir": "y", "jobs": 4})
    assert a.digest() == b.digest()
    assert load_config(ORACLE, {"seed": 8}).digest() != a.digest()


def test_motionset_reloadable_and_digest_stable(tmp_path, capsys):
    for run in ("a", "b"):
        assert main(["motionset", "--config", ORACLE, "--out", str(tmp_path / run)]) == 0
    out = capsys.readouterr().out.split()
    assert out[1] == out[3]
    ms = MotionSet.load(tmp_path / "a" / "motionset.json")
    assert len(ms.motions) == 32


def test_stage_order_and_stale_artifacts(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["cef", "--config", ORACLE, "--out", out]) == 2
    assert "cefsim motionset" in capsys.readouterr().err
    assert main(["motionset", "--config", ORACLE, "--out", out]) == 0
    assert main(["cef", "--config", ORACLE, "--out", out, "--kind", "A1_voxel"]) == 0
    (tmp_path / "o" / "cef_A1.bin").write_bytes(b"tampered")
    assert main(["fi", "--config", ORACLE, "--out", out, "--kind", "A1", "--mode", "cef_aware"]) == 2
    assert "stale" in capsys.readouterr().err


def test_full_pipeline_smoke(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", ORACLE, "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {k for st in manifest["stages"].values() for k in st["outputs"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for k in ("A1", "A2", "A3", "A4"):
        assert {f"cef_{k}.bin", f"plan_{k}.csv", f"fi_cef_aware_{k}_D4.json", f"fi_exhaustive_{k}_D4.bin"} <= listed
    assert {"compare.csv", "cef_cdf.csv"} <= listed
    compare = (out / "compare.csv").read_text()
    assert ",A3," in compare and ",A3_scaled," in compare
    # fi reports run counters and speedup
    assert main(["fi", "--config", ORACLE, "--out", str(out), "--kind", "A2", "--mode", "cef_aware"]) == 0
    assert "speedup=" in capsys.readouterr().out


def test_plan_emits_requested_curves(tmp_path):
    out = tmp_path / "o"
    cfg = write(
        tmp_path,
        open(ORACLE).read() + "kinds: [A2_box]\nplanner: {heuristics: [cef, box_volume], hardening: [TMR]}\n",
    )
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "plan_A2.csv").read_text().splitlines()
    heur = {r.split(",")[1] for r in rows[2:]}
    assert heur == {"cef", "box_volume"}


def test_oracle_subcommand(capsys):
    assert main(["oracle", "--pairs", "200"]) == 0
    out = capsys.readouterr().out
    assert out.count("ok") == 4 and "mismatches=0" in out
