import numpy as np
import pytest
import yaml

from cpicmpm import materials as M
from cpicmpm.engine import PlanarBoundary
from cpicmpm.errors import ConfigurationError
from cpicmpm.geometry import box_mesh, save_disks, save_obj
from cpicmpm.scenes import PRESETS, Scenario, initial_guess, preset


def test_presets_table():
    assert len(PRESETS["newtonian"]) == 10 and len(PRESETS["non_newtonian"]) == 10 and len(PRESETS["granular"]) == 5
    assert preset("newtonian", 1) == M.Newtonian(19.46, 56075.55)
    assert preset("granular", 1).theta_fric == 30.6577
    assert initial_guess("newtonian") == M.Newtonian(10.0, 1e4)
    with pytest.raises(ConfigurationError):
        preset("newtonian", 11)
    with pytest.raises(ConfigurationError):
        preset("jelly")


def test_default_scenario():
    sc = Scenario.from_dict({})
    st = sc.initial_state()
    assert len(st) == 625
    assert np.allclose(st.v, [0, 0, -2])
    assert sc.material() == preset("newtonian", 1)
    assert sc.guess() == initial_guess("newtonian")
    cols, planes = sc.colliders()
    assert len(cols) == 1 and not planes and cols[0].surface.is_watertight()


def test_explicit_material_and_guess():
    sc = Scenario.from_dict({"material": {"kind": "elastic", "E": 1e5, "nu": 0.3}, "guess": {"kind": "elastic", "E": 3e4, "nu": 0.2}})
    assert sc.material() == M.Elastic(1e5, 0.3) and sc.guess() == M.Elastic(3e4, 0.2)
    # a preset without a row as guess means the shared initial guess
    sc = Scenario.from_dict({"material": {"preset": "granular", "row": 2}, "guess": {"preset": "granular"}})
    assert sc.guess() == initial_guess("granular")


@pytest.mark.parametrize(
    "bad",
    [
        {"nonsense": 1},
        {"material": {"kind": "jelly"}},
        {"material": {"kind": "elastic", "E": 1e5}},
        {"frames": 0},
        {"shape": {"kind": "box", "center": [0.02, 0.5, 0.5], "size": [0.1, 0.1, 0.1]}},
        {"colliders": [{"kind": "mesh", "path": "does_not_exist.obj"}]},
        {"colliders": [{"kind": "teapot"}]},
        {"sim": {"dt": 0.05}},
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigurationError):
        Scenario.from_dict(bad)


def test_planar_mode_uses_planes():
    sc = Scenario.from_dict({"colliders": [{"kind": "plane", "point": [0, 0, 0.3], "normal": [0, 0, 1]}], "sim": {"mode": "planar_analytic"}})
    cols, planes = sc.colliders()
    assert not cols and planes == [PlanarBoundary((0.0, 0.0, 0.3), (0.0, 0.0, 1.0))]
    mesh_mode = sc.with_overrides(mode="cpic")
    cols, planes = mesh_mode.colliders()
    assert len(cols) == 1 and not planes
    assert np.allclose(cols[0].surface.normals, [0, 0, 1])
    with pytest.raises(ConfigurationError):
        Scenario.from_dict({"sim": {"mode": "planar_analytic"}})


def test_mesh_and_disk_files(tmp_path):
    save_obj(box_mesh((0, 0, 0), (1, 1, 1)), tmp_path / "unit.obj")
    q = np.tile([1.0, 0, 0, 0], (4, 1))
    save_disks(tmp_path / "disks.ply", np.array([[0.4, 0.5, 0.3], [0.6, 0.5, 0.3], [0.5, 0.4, 0.3], [0.5, 0.6, 0.3]]), q, np.full((4, 2), 0.03))
    cfg = {
        "colliders": [
            {"kind": "mesh", "path": "unit.obj", "transform": {"scale": 0.2, "translate": [0.5, 0.5, 0.15]}},
            {"kind": "disks", "path": "disks.ply"},
        ]
    }
    (tmp_path / "s.yaml").write_text(yaml.safe_dump(cfg))
    sc = Scenario.load(tmp_path / "s.yaml")
    cols, _ = sc.colliders()
    lo, hi = cols[0].surface.bounds()
    assert np.allclose(lo, [0.4, 0.4, 0.05]) and np.allclose(hi, [0.6, 0.6, 0.25])
    assert cols[1].surface.num_primitives == 4


def test_moving_collider():
    sc = Scenario.from_dict({"colliders": [{"kind": "sphere", "center": [0.3, 0.5, 0.2], "radius": 0.05, "motion": {"linear": [1, 0, 0], "center": [0.3, 0.5, 0.2]}}]})
    col = sc.colliders()[0][0]
    assert not col.is_static
    assert np.allclose(col.rigid_velocity([[0.3, 0.5, 0.2]]), [[1, 0, 0]])


def test_hash_stable_under_reordering():
    a = Scenario.from_dict({"frames": 8, "seed": 3, "velocity": [0, 0, -1]})
    b = Scenario.from_dict({"velocity": [0, 0, -1], "seed": 3, "frames": 8})
    assert a.config_hash() == b.config_hash()


@pytest.mark.parametrize(
    "change",
    [{"frames": 8}, {"seed": 1}, {"velocity": [0, 0, -1.5]}, {"material": {"preset": "newtonian", "row": 2}}, {"sim": {"k_h": 2e4}}],
)
def test_hash_changes_with_meaningful_fields(change):
    assert Scenario.from_dict(change).config_hash() != Scenario.from_dict({}).config_hash()


def test_geometry_hash_ignores_material_and_mode():
    base = Scenario.from_dict({})
    assert base.with_overrides(mode="gop_sdf").geometry_hash() == base.geometry_hash()
    assert Scenario.from_dict({"material": {"preset": "newtonian", "row": 3}}).geometry_hash() == base.geometry_hash()
    assert base.with_overrides(frames=4).geometry_hash() != base.geometry_hash()
