import csv
import io
import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from cpicmpm import __version__
from cpicmpm.cli import main
from cpicmpm.engine import load_trajectory
from cpicmpm.sysid import chamfer, emd

from oracles import chamfer_bruteforce, emd_permutations

SMALL = {
    "material": {"kind": "elastic", "E": 1e5, "nu": 0.3},
    "guess": {"kind": "elastic", "E": 1e5, "nu": 0.3},
    "shape": {"kind": "box", "center": [0.5, 0.5, 0.36], "size": [0.1, 0.1, 0.05]},
    "velocity": [0, 0, -1.0],
    "frames": 3,
    "sim": {"substeps": 10},
    "optimizer": {"max_iters": 3},
}


def write_config(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


@pytest.fixture(scope="module")
def ref(tmp_path_factory):
    d = tmp_path_factory.mktemp("ref")
    cfg = write_config(d / "small.yaml", SMALL)
    res = invoke("rollout", "--config", cfg, "--out", d / "out")
    assert res.exit_code == 0, res.output
    return d, cfg, d / "out"


def test_version():
    res = invoke("--version")
    assert __version__ in res.output


def test_rollout_outputs(ref):
    _, _, out = ref
    plys = sorted(out.glob("frame_*.ply"))
    assert len(plys) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tool_version"] == __version__
    assert manifest["mode"] == "cpic"
    assert {"config_hash", "geometry_hash", "timestamps"} <= set(manifest)
    traj, _ = load_trajectory(out)
    assert traj.positions.shape == (3, 108, 3)


def test_rollout_deterministic(ref, tmp_path):
    _, cfg, out = ref
    res = invoke("rollout", "--config", cfg, "--out", tmp_path / "again")
    assert res.exit_code == 0
    for a in sorted(out.glob("*.ply")):
        assert (tmp_path / "again" / a.name).read_bytes() == a.read_bytes()
    m1 = json.loads((out / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "again" / "manifest.json").read_text())
    for m in (m1, m2):
        m.pop("timestamps")
        m.pop("output_dir")
    assert m1 == m2


def test_newtonian_preset_16_frames(tmp_path):
    cfg = write_config(tmp_path / "n.yaml", {"material": {"preset": "newtonian", "row": 1}})
    res = invoke("rollout", "--config", cfg, "--out", tmp_path / "o")
    assert res.exit_code == 0, res.output
    assert len(list((tmp_path / "o").glob("frame_*.ply"))) == 16


def test_missing_collider_file(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", {**SMALL, "colliders": [{"kind": "mesh", "path": "nope.obj"}]})
    res = invoke("rollout", "--config", cfg, "--out", tmp_path / "o")
    assert res.exit_code == 2
    assert "not found" in res.output


def test_missing_config_file(tmp_path):
    assert invoke("rollout", "--config", tmp_path / "none.yaml", "--out", tmp_path / "o").exit_code == 2


def test_divergence_exit_code(tmp_path):
    cfg = write_config(tmp_path / "d.yaml", {**SMALL, "material": {"kind": "elastic", "E": 1e7, "nu": 0.45}, "frames": 10})
    res = invoke("rollout", "--config", cfg, "--out", tmp_path / "o")
    assert res.exit_code == 3


def test_round_trip_identify(ref, tmp_path):
    _, cfg, out = ref
    res = invoke("identify", "--config", cfg, "--ref", out, "--out", tmp_path / "id")
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "id" / "report.json").read_text())
    assert all(v < 1e-6 for v in report["errors_x100"].values())
    assert (tmp_path / "id" / "loss.csv").is_file()


def test_identify_geometry_mismatch(ref, tmp_path):
    d, _, out = ref
    cfg = write_config(tmp_path / "m.yaml", {**SMALL, "velocity": [0, 0, -1.5]})
    res = invoke("identify", "--config", cfg, "--ref", out, "--out", tmp_path / "id")
    assert res.exit_code == 2
    assert "geometry" in res.output


def test_identify_gop_sdf_open_surface(tmp_path):
    cfg = write_config(tmp_path / "q.yaml", {**SMALL, "colliders": [{"kind": "quad", "center": [0.5, 0.5, 0.3], "u": [0.2, 0, 0], "v": [0, 0.2, 0]}]})
    assert invoke("rollout", "--config", cfg, "--out", tmp_path / "r").exit_code == 0
    res = invoke("identify", "--config", cfg, "--ref", tmp_path / "r", "--out", tmp_path / "id", "--mode", "gop_sdf")
    assert res.exit_code == 2
    assert "watertight" in res.output


def test_identify_modes_share_schema(ref, tmp_path):
    _, cfg, out = ref
    keys = []
    for mode in ("cpic", "gop_sdf", "rigid_particles"):
        res = invoke("identify", "--config", cfg, "--ref", out, "--out", tmp_path / mode, "--mode", mode, "--max-iters", 1)
        assert res.exit_code == 0, res.output
        rep = json.loads((tmp_path / mode / "report.json").read_text())
        assert rep["mode"] == mode
        keys.append(sorted(rep))
    assert keys[0] == keys[1] == keys[2]


def read_metrics(text):
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["frame", "cd", "emd"]
    body = np.array([[float(v) for v in r[1:]] for r in rows[1:-2]])
    return rows, body


def test_metrics_self_is_zero(ref):
    _, _, out = ref
    res = invoke("metrics", out, out)
    assert res.exit_code == 0
    rows, body = read_metrics(res.output)
    assert np.all(body == 0)
    assert rows[-2][0] == "mean" and rows[-1][0] == "std"


def test_metrics_match_oracles(tmp_path):
    from cpicmpm.engine import Trajectory, export_trajectory

    rng = np.random.default_rng(7)
    a = rng.uniform(0.2, 0.8, size=(2, 8, 3)).astype(np.float32).astype(float)
    b = rng.uniform(0.2, 0.8, size=(2, 8, 3)).astype(np.float32).astype(float)
    export_trajectory(Trajectory(a, 0.01), tmp_path / "a")
    export_trajectory(Trajectory(b, 0.01), tmp_path / "b")
    res = invoke("metrics", tmp_path / "a", tmp_path / "b", "--out", tmp_path / "m.csv")
    assert res.exit_code == 0
    rows, body = read_metrics((tmp_path / "m.csv").read_text())
    for f in range(2):
        assert body[f, 0] == pytest.approx(chamfer_bruteforce(a[f], b[f]), rel=1e-12)
        assert body[f, 1] == pytest.approx(emd_permutations(a[f], b[f]), rel=1e-12)
        assert body[f, 0] == chamfer(a[f], b[f]) and body[f, 1] == emd(a[f], b[f])
    assert float(rows[-2][1]) == pytest.approx(body[:, 0].mean())
    assert float(rows[-2][2]) == pytest.approx(body[:, 1].mean())


def test_metrics_frame_mismatch(ref, tmp_path):
    d, _, out = ref
    cfg = write_config(tmp_path / "f.yaml", {**SMALL, "frames": 2})
    assert invoke("rollout", "--config", cfg, "--out", tmp_path / "two").exit_code == 0
    assert invoke("metrics", out, tmp_path / "two").exit_code == 2


def test_batch_rollout_jobs(tmp_path):
    a = write_config(tmp_path / "a.yaml", SMALL)
    b = write_config(tmp_path / "b.yaml", {**SMALL, "velocity": [0, 0, -0.5]})
    res = invoke("rollout", "--config", a, "--config", b, "--out", tmp_path / "batch", "--jobs", 2)
    assert res.exit_code == 0, res.output
    for name in ("a", "b"):
        assert len(list((tmp_path / "batch" / name).glob("*.ply"))) == 3


def test_gradcheck_command(tmp_path):
    res = invoke("gradcheck", "--frames", 1, "--material", "elastic", "--out", tmp_path / "g.json")
    assert res.exit_code == 0, res.output
    rows = json.loads((tmp_path / "g.json").read_text())
    assert [r["parameter"] for r in rows] == ["log10(E)", "nu"]
    assert all(r["pass"] for r in rows)
