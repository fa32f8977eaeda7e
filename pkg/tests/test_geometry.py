import math
import numpy as np
import pytest

from cpicmpm.errors import BaselineUnsupportedError, MalformedFileError, UnsupportedGeometryError
from cpicmpm.geometry import (
    Disk,
    DiskSet,
    RigidCollider,
    Triangle,
    TriangleMesh,
    box_mesh,
    build_sdf,
    icosphere,
    load_disks,
    load_mesh,
    point_primitive_distance,
    quad_mesh,
    sample_rigid_particles,
    save_disks,
    save_obj,
)
from cpicmpm.grid import GridSpec

CUBE_OBJ = """# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_cube_obj(tmp_path):
    mesh = load_mesh(write(tmp_path, "cube.obj", CUBE_OBJ))
    assert mesh.num_primitives == 12
    assert np.allclose(np.linalg.norm(mesh.face_normals, axis=1), 1.0)
    dirs = {tuple(np.round(n).astype(int)) for n in mesh.face_normals}
    assert len(dirs) == 6
    assert mesh.is_watertight()
    # outward: normal points away from the centre
    centroids = mesh.triangles.mean(1)
    assert np.all(np.sum((centroids - 0.5) * mesh.face_normals, axis=1) > 0)


def test_quad_face_rejected(tmp_path):
    with pytest.raises(UnsupportedGeometryError):
        load_mesh(write(tmp_path, "q.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))


def test_degenerate_face_dropped(tmp_path):
    with pytest.warns(UserWarning, match="1 degenerate"):
        mesh = load_mesh(write(tmp_path, "d.obj", CUBE_OBJ.replace("f 4 5 8\n", "f 1 2 2\n")))
    assert mesh.num_primitives == 11
    assert mesh.dropped == 1


def test_malformed_line_number(tmp_path):
    with pytest.raises(MalformedFileError, match=r":3: "):
        load_mesh(write(tmp_path, "bad.obj", "v 0 0 0\nv 1 0 0\nv 1 x 0\n"))


def test_obj_round_trip(tmp_path):
    mesh = icosphere((0.5, 0.5, 0.5), 0.2, 1)
    save_obj(mesh, tmp_path / "s.obj")
    back = load_mesh(tmp_path / "s.obj")
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_load_disks_identity(tmp_path):
    save_disks(tmp_path / "d.ply", [[0.1, 0.2, 0.3]], [[1, 0, 0, 0]], [[0.1, 0.05]])
    disks = load_disks(tmp_path / "d.ply", cutoff_sigma=2.0)
    assert disks.num_primitives == 1
    assert np.allclose(disks.normals[0], [0, 0, 1])
    assert disks.radii[0] == pytest.approx(0.2, rel=1e-6)


def test_load_disks_rotated(tmp_path):
    h = math.sqrt(0.5)
    save_disks(tmp_path / "d.ply", [[0, 0, 0]], [[h, h, 0, 0]], [[0.1, 0.1]], binary=False)
    disks = load_disks(tmp_path / "d.ply")
    assert np.allclose(np.abs(disks.normals[0]), [0, 1, 0], atol=1e-6)
    assert disks.radii[0] == pytest.approx(0.2, rel=1e-6)


def test_load_disks_empty_and_missing(tmp_path):
    save_disks(tmp_path / "e.ply", np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 2)))
    assert load_disks(tmp_path / "e.ply").num_primitives == 0

    from plyfile import PlyData, PlyElement

    arr = np.zeros(1, dtype=[("x", "f4"), ("y", "f4"), ("z", "f4"), ("rot_0", "f4")])
    PlyData([PlyElement.describe(arr, "vertex")]).write(str(tmp_path / "m.ply"))
    with pytest.raises(MalformedFileError, match="rot_1"):
        load_disks(tmp_path / "m.ply")


def test_sample_single_triangle_centroid():
    s = 0.1
    # right triangle with legs sqrt(2) s: area s^2
    leg = math.sqrt(2) * s
    mesh = TriangleMesh.from_arrays([[0, 0, 0], [leg, 0, 0], [0, leg, 0]], [[0, 1, 2]])
    samples = sample_rigid_particles(mesh, s)
    assert len(samples) == 1
    assert np.allclose(samples.positions[0], mesh.triangles[0].mean(0))


def test_sample_disk_count():
    disks = DiskSet(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), np.array([0.3]))
    assert len(sample_rigid_particles(disks, 0.3)) == 4


def test_sample_unit_cube_count():
    samples = sample_rigid_particles(box_mesh((0, 0, 0), (1, 1, 1)), 0.1)
    assert len(samples) == 600


def test_samples_on_primitives_and_deterministic():
    for surface in (icosphere((0, 0, 0), 1.0, 2), DiskSet(np.random.default_rng(0).normal(size=(5, 3)),
                                                         np.tile([0, 0, 1.0], (5, 1)), np.full(5, 0.4))):
        a = sample_rigid_particles(surface, 0.07, seed=3)
        b = sample_rigid_particles(surface, 0.07, seed=3)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.primitive_ids, b.primitive_ids)
        assert set(np.unique(a.primitive_ids)) == set(range(surface.num_primitives))
        d = np.sum((a.positions - surface.anchors[a.primitive_ids]) * surface.normals[a.primitive_ids], axis=1)
        assert np.abs(d).max() < 1e-9
        assert np.all(surface.projection_inside(a.primitive_ids, a.positions))


@pytest.mark.parametrize("kind", ["triangle", "disk"])
def test_sampling_coverage(kind, rng):
    spacing = 0.05
    if kind == "triangle":
        surface = TriangleMesh.from_arrays([[0, 0, 0], [0.4, 0.05, 0], [0.1, 0.3, 0.02]], [[0, 1, 2]])
        tri = surface.triangles[0]
        uv = rng.random((4000, 2))
        uv[uv.sum(1) > 1] = 1 - uv[uv.sum(1) > 1]
        probes = tri[0] + uv[:, :1] * (tri[1] - tri[0]) + uv[:, 1:] * (tri[2] - tri[0])
    else:
        surface = DiskSet(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), np.array([0.2]))
        r = 0.2 * np.sqrt(rng.random(4000))
        a = rng.random(4000) * 2 * np.pi
        probes = np.stack([r * np.cos(a), r * np.sin(a), np.zeros_like(r)], -1)
    samples = sample_rigid_particles(surface, spacing).positions
    nearest = np.min(np.linalg.norm(probes[:, None] - samples[None], axis=-1), axis=1)
    assert nearest.max() <= 2 * spacing


def test_point_primitive_distance_examples():
    tri = TriangleMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]).primitive(0)
    c = np.array([1 / 3, 1 / 3, 0])
    assert point_primitive_distance(c + [0, 0, 0.05], tri) == pytest.approx(0.05)
    assert point_primitive_distance(c, tri) == 0.0
    assert point_primitive_distance(c - [0, 0, 0.05], tri) == pytest.approx(-0.05)


def test_point_primitive_distance_oracle(rng):
    for _ in range(200):
        a, b, c, p = rng.normal(size=(4, 3))
        tri = TriangleMesh.from_arrays([a, b, c], [[0, 1, 2]]).primitive(0)
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        assert abs(point_primitive_distance(p, tri) - np.dot(p - a, n)) < 1e-12
        disk = Disk(a, n, 1.0)
        assert abs(point_primitive_distance(p, disk) - np.dot(p - a, n)) < 1e-12


def test_sdf_cube():
    grid = GridSpec((21, 21, 21), 0.1, (-1.0, -1.0, -1.0))
    sdf = build_sdf(box_mesh((0, 0, 0), (1, 1, 1)), grid)
    assert sdf[10, 10, 10] == pytest.approx(-0.5)
    assert sdf[20, 10, 10] == pytest.approx(0.5)
    assert sdf[15, 10, 10] == pytest.approx(0.0, abs=1e-12)


def test_sdf_open_surface_refused():
    grid = GridSpec.cube(16)
    with pytest.raises(BaselineUnsupportedError):
        build_sdf(quad_mesh((0.5, 0.5, 0.5), (0.2, 0, 0), (0, 0.2, 0)), grid)
    with pytest.raises(BaselineUnsupportedError):
        build_sdf(DiskSet(np.zeros((1, 3)), np.array([[0, 0, 1.0]]), np.array([0.1])), grid)


def test_sdf_sign_flips_once_along_rays():
    grid = GridSpec.cube(24)
    sdf = build_sdf(icosphere((0.5, 0.5, 0.5), 0.3, 2), grid)
    for j in range(6, 18, 3):
        for k in range(6, 18, 3):
            line = np.sign(sdf[:, j, k])
            flips = np.count_nonzero(np.diff(line[line != 0]))
            if line.min() < 0:
                assert flips == 2  # enters and leaves: one flip per crossing
            else:
                assert flips == 0


def test_collider_rejects_unknown_response():
    with pytest.raises(UnsupportedGeometryError):
        RigidCollider(box_mesh(), "bouncy")
