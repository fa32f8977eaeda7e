"""Rigid collider surfaces: triangle meshes and planar disks.

Colliders are treated as flat lists of primitives. Every primitive has an anchor
point on its plane and a unit normal, which is all the collision grid needs
beyond the primitive-specific "does the projection fall inside" test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Union

import numpy as np

from .errors import BaselineUnsupportedError, MalformedFileError, UnsupportedGeometryError
from .grid import GridSpec

RESPONSES = ("sticky", "slip", "separating")
INSIDE_TOL = 1e-12


class Triangle(NamedTuple):
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    normal: np.ndarray


class Disk(NamedTuple):
    center: np.ndarray
    normal: np.ndarray
    radius: float


def _face_normals(vertices, faces):
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    return cross, norm


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = np.asarray(self.face_normals, dtype=float).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise UnsupportedGeometryError("face index out of range")
        if len(n) != len(f):
            raise UnsupportedGeometryError("one normal per face required")
        if len(n) and np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > 1e-6:
            raise UnsupportedGeometryError("face normals must be unit length")
        for name, arr in (("vertices", v), ("faces", f), ("face_normals", n)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, vertices, faces) -> TriangleMesh:
        """Build a mesh, computing normals from counter-clockwise winding and dropping zero-area faces."""
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise UnsupportedGeometryError("face index out of range")
        cross, norm = _face_normals(v, f)
        keep = norm > 0.0
        if len(f):
            tri = v[f]
            edge2 = max(np.max(np.sum((tri - np.roll(tri, 1, axis=1)) ** 2, axis=-1)), 1e-300)
            keep = norm > 1e-14 * edge2
        dropped = int((~keep).sum())
        if dropped:
            warnings.warn(f"dropped {dropped} degenerate (zero-area) face(s)", stacklevel=2)
        return cls(v, f[keep], cross[keep] / norm[keep, None], dropped)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @property
    def areas(self) -> np.ndarray:
        _, norm = _face_normals(self.vertices, self.faces)
        return 0.5 * norm

    @property
    def num_primitives(self) -> int:
        return len(self.faces)

    @property
    def anchors(self) -> np.ndarray:
        return self.triangles[:, 0]

    @property
    def normals(self) -> np.ndarray:
        return self.face_normals

    def primitive(self, i: int) -> Triangle:
        a, b, c = self.triangles[i]
        return Triangle(a, b, c, self.face_normals[i])

    def bounds(self):
        return self.vertices.min(0), self.vertices.max(0)

    def is_watertight(self) -> bool:
        if not len(self.faces):
            return False
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        _, counts = np.unique(np.sort(edges, axis=1), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def transformed(self, points_fn: Callable[[np.ndarray], np.ndarray]) -> TriangleMesh:
        return TriangleMesh.from_arrays(points_fn(self.vertices), self.faces)

    def projection_inside(self, prim_ids, points) -> np.ndarray:
        tri = self.triangles[prim_ids]
        return _barycentric_inside(tri[:, 0], tri[:, 1], tri[:, 2], points)


@dataclass(frozen=True, eq=False)
class DiskSet:
    centers: np.ndarray
    normals: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        if not (len(c) == len(n) == len(r)):
            raise UnsupportedGeometryError("disk arrays must have equal length")
        if len(r) and r.min() <= 0:
            raise UnsupportedGeometryError("disk radii must be strictly positive")
        if len(n) and np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > 1e-6:
            raise UnsupportedGeometryError("disk normals must be unit length")
        for name, arr in (("centers", c), ("normals", n), ("radii", r)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_primitives(self) -> int:
        return len(self.radii)

    @property
    def anchors(self) -> np.ndarray:
        return self.centers

    @property
    def areas(self) -> np.ndarray:
        return np.pi * self.radii**2

    def primitive(self, i: int) -> Disk:
        return Disk(self.centers[i], self.normals[i], float(self.radii[i]))

    def bounds(self):
        return (self.centers - self.radii[:, None]).min(0), (self.centers + self.radii[:, None]).max(0)

    def is_watertight(self) -> bool:
        return False

    def transformed(self, points_fn, vectors_fn) -> DiskSet:
        return DiskSet(points_fn(self.centers), vectors_fn(self.normals), self.radii)

    def projection_inside(self, prim_ids, points) -> np.ndarray:
        rel = np.asarray(points) - self.centers[prim_ids]
        n = self.normals[prim_ids]
        tangential = rel - np.sum(rel * n, axis=-1, keepdims=True) * n
        return np.linalg.norm(tangential, axis=-1) <= self.radii[prim_ids]


Surface = Union[TriangleMesh, DiskSet]


def _barycentric_inside(a, b, c, p, tol=INSIDE_TOL):
    v0, v1, v2 = b - a, c - a, np.asarray(p) - a
    d00 = np.sum(v0 * v0, -1)
    d01 = np.sum(v0 * v1, -1)
    d11 = np.sum(v1 * v1, -1)
    d20 = np.sum(v2 * v0, -1)
    d21 = np.sum(v2 * v1, -1)
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    u = 1.0 - v - w
    return (u >= -tol) & (v >= -tol) & (w >= -tol)


def _rotation_matrix(axis_angle) -> np.ndarray:
    theta = np.linalg.norm(axis_angle)
    if theta == 0.0:
        return np.eye(3)
    k = np.asarray(axis_angle) / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * kx @ kx


@dataclass(frozen=True)
class RigidMotion:
    """Prescribed rigid velocity field v(x) = linear + angular x (x - center)."""

    linear: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.linear) + np.cross(np.asarray(self.angular), x - np.asarray(self.center))

    @property
    def is_static(self) -> bool:
        return not (np.any(self.linear) or np.any(self.angular))

    def rotation(self, t: float) -> np.ndarray:
        return _rotation_matrix(np.asarray(self.angular) * t)

    def displace_points(self, x, t: float):
        c = np.asarray(self.center)
        return (np.asarray(x) - c) @ self.rotation(t).T + c + np.asarray(self.linear) * t

    def advanced(self, t: float) -> RigidMotion:
        return RigidMotion(self.linear, self.angular, tuple(np.asarray(self.center) + np.asarray(self.linear) * t))


@dataclass(frozen=True, eq=False)
class RigidCollider:
    surface: Surface
    response: str = "sticky"
    motion: RigidMotion | None = None
    name: str = ""

    def __post_init__(self):
        if self.response not in RESPONSES:
            raise UnsupportedGeometryError(f"unknown surface response {self.response!r}; expected one of {RESPONSES}")

    @property
    def is_static(self) -> bool:
        return self.motion is None or self.motion.is_static

    def rigid_velocity(self, x):
        if self.motion is None:
            return np.zeros(np.shape(x))
        return self.motion(x)

    def at_time(self, t: float) -> RigidCollider:
        """The collider displaced along its prescribed motion by time t."""
        if self.is_static or t == 0.0:
            return self
        m = self.motion
        if isinstance(self.surface, TriangleMesh):
            surface = self.surface.transformed(lambda v: m.displace_points(v, t))
        else:
            rot = m.rotation(t)
            surface = self.surface.transformed(lambda p: m.displace_points(p, t), lambda n: n @ rot.T)
        return RigidCollider(surface, self.response, m.advanced(t), self.name)


@dataclass(frozen=True, eq=False)
class RigidParticleSet:
    positions: np.ndarray
    primitive_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.positions)


# ---------------------------------------------------------------------------
# file formats


def load_mesh(path) -> TriangleMesh:
    """Read an ASCII Wavefront OBJ made of triangles."""
    path = Path(path)
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                try:
                    vertices.append([float(t) for t in tok[1:4]])
                except ValueError:
                    raise MalformedFileError("bad vertex record", path, lineno) from None
                if len(tok) < 4:
                    raise MalformedFileError("vertex needs three coordinates", path, lineno)
            elif tok[0] == "f":
                if len(tok) - 1 != 3:
                    raise UnsupportedGeometryError(
                        f"{path}:{lineno}: face with {len(tok) - 1} vertices; only triangles are supported"
                    )
                idx = []
                for t in tok[1:]:
                    try:
                        k = int(t.split("/")[0])
                    except ValueError:
                        raise MalformedFileError("bad face index", path, lineno) from None
                    k = k - 1 if k > 0 else len(vertices) + k
                    if not 0 <= k < len(vertices):
                        raise MalformedFileError("face index out of range", path, lineno)
                    idx.append(k)
                faces.append(idx)
    return TriangleMesh.from_arrays(np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces).reshape(-1, 3))


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


_DISK_PROPS = ("x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1")


def quaternion_to_matrix(q) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions, normalized first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def load_disks(path, cutoff_sigma: float = 2.0, log_scales: bool = False) -> DiskSet:
    """Read planar Gaussian disks from a PLY point file.

    The disk normal is the rotated local z axis and its radius is
    ``cutoff_sigma * max(scale_0, scale_1)``. Set ``log_scales`` for files that
    store log-scales, as splatting trainers usually do.
    """
    from plyfile import PlyData

    path = Path(path)
    try:
        ply = PlyData.read(str(path))
    except Exception as exc:  # plyfile raises a zoo of types
        raise MalformedFileError(f"cannot parse PLY: {exc}", path) from exc
    if "vertex" not in ply:
        raise MalformedFileError("missing 'vertex' element", path)
    vert = ply["vertex"]
    names = {p.name for p in vert.properties}
    for prop in _DISK_PROPS:
        if prop not in names:
            raise MalformedFileError(f"missing required property '{prop}'", path)
    if vert.count == 0:
        return DiskSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    data = vert.data
    centers = np.stack([data["x"], data["y"], data["z"]], -1).astype(float)
    quat = np.stack([data[f"rot_{i}"] for i in range(4)], -1).astype(float)
    scales = np.stack([data["scale_0"], data["scale_1"]], -1).astype(float)
    if log_scales:
        scales = np.exp(scales)
    normals = quaternion_to_matrix(quat)[:, :, 2]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return DiskSet(centers, normals, cutoff_sigma * scales.max(1))


def save_disks(path, centers, quaternions, scales, binary: bool = True) -> None:
    from plyfile import PlyData, PlyElement

    centers = np.asarray(centers, dtype=np.float32).reshape(-1, 3)
    quaternions = np.asarray(quaternions, dtype=np.float32).reshape(-1, 4)
    scales = np.asarray(scales, dtype=np.float32).reshape(-1, 2)
    arr = np.empty(len(centers), dtype=[(p, "f4") for p in _DISK_PROPS])
    for i, p in enumerate(("x", "y", "z")):
        arr[p] = centers[:, i]
    for i in range(4):
        arr[f"rot_{i}"] = quaternions[:, i]
    arr["scale_0"], arr["scale_1"] = scales[:, 0], scales[:, 1]
    PlyData([PlyElement.describe(arr, "vertex")], text=not binary).write(str(path))


# ---------------------------------------------------------------------------
# sampling and distances


def _count(area, spacing):
    return np.maximum(1, np.ceil(area / spacing**2 - 1e-9)).astype(np.int64)


def _subtriangle_centroids(m: int) -> np.ndarray:
    """Barycentric (u, v) centroids of the m*m congruent sub-triangles."""
    out = []
    for i in range(m):
        for j in range(m - i):
            out.append(((i + 1 / 3) / m, (j + 1 / 3) / m))
            if i + j <= m - 2:
                out.append(((i + 2 / 3) / m, (j + 2 / 3) / m))
    return np.array(out)


def _sample_triangle(a, b, c, k, rng):
    m = int(math.isqrt(int(k)))
    uv = _subtriangle_centroids(m)
    extra = k - m * m
    if extra:
        r = rng.random((extra, 2))
        flip = r.sum(1) > 1
        r[flip] = 1 - r[flip]
        uv = np.concatenate([uv, r])
    return a + uv[:, :1] * (b - a) + uv[:, 1:] * (c - a)


def _tangent_basis(n):
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def _sample_disk(center, normal, radius, k, rng):
    if k == 1:
        return center[None].copy()
    rings = int(max(1, min(k, round(math.sqrt(k / math.pi)))))
    weight = np.arange(rings) + 0.5
    share = weight / weight.sum() * k
    per_ring = np.maximum(1, np.floor(share).astype(int))
    while per_ring.sum() < k:
        per_ring[np.argmax(share - per_ring)] += 1
    while per_ring.sum() > k:
        per_ring[np.argmax(per_ring - share)] -= 1
    t1, t2 = _tangent_basis(normal)
    pts = []
    for j, cnt in enumerate(per_ring):
        rho = radius * (j + 0.5) / rings
        phase = rng.random() * 2 * np.pi
        ang = phase + 2 * np.pi * np.arange(cnt) / cnt
        pts.append(center + rho * (np.cos(ang)[:, None] * t1 + np.sin(ang)[:, None] * t2))
    return np.concatenate(pts)


def sample_rigid_particles(collider: RigidCollider | Surface, target_spacing: float, seed: int = 0) -> RigidParticleSet:
    """Place ceil(area / spacing^2) samples (at least one) on every primitive."""
    if not target_spacing > 0:
        raise ValueError("target_spacing must be positive")
    surface = collider.surface if isinstance(collider, RigidCollider) else collider
    rng = np.random.default_rng(seed)
    counts = _count(surface.areas, target_spacing)
    chunks = []
    if isinstance(surface, TriangleMesh):
        for i, (tri, k) in enumerate(zip(surface.triangles, counts)):
            chunks.append(_sample_triangle(tri[0], tri[1], tri[2], k, rng))
    else:
        for i, k in enumerate(counts):
            chunks.append(_sample_disk(surface.centers[i], surface.normals[i], surface.radii[i], k, rng))
    if not chunks:
        return RigidParticleSet(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    return RigidParticleSet(np.concatenate(chunks), np.repeat(np.arange(len(counts)), counts))


def plane_distance(points, anchors, normals):
    """Signed point-plane distance, positive on the normal side."""
    return np.sum((np.asarray(points) - anchors) * normals, axis=-1)


def point_primitive_distance(point, primitive: Triangle | Disk) -> float:
    anchor = primitive.a if isinstance(primitive, Triangle) else primitive.center
    return float(plane_distance(point, anchor, primitive.normal))


# ---------------------------------------------------------------------------
# signed distance field (grid-operation baseline only)


def closest_point_distance(points, tri):
    """Unsigned distance from points (P, 3) to triangles (T, 3, 3), shape (P, T)."""
    p = points[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        closest = a + ab * v[..., None] + ac * w[..., None]
        # edge regions
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    closest = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None], b + t_bc[..., None] * (c - b), closest)
    closest = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None], a + t_ac[..., None] * ac, closest)
    closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, closest)
    closest = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None], a + t_ab[..., None] * ab, closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, closest)
    closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, closest)
    return np.linalg.norm(p - closest, axis=-1)


def _ray_crossings(origins, direction, tri, eps=1e-9):
    """Count ray/triangle crossings; also flag rays grazing an edge or vertex."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1, e2 = b - a, c - a
    h = np.cross(direction, e2)
    det = np.sum(e1 * h, -1)
    parallel = np.abs(det) < 1e-14
    inv = np.where(parallel, 0.0, 1.0 / np.where(parallel, 1.0, det))
    s = origins[:, None, :] - a[None]
    u = np.sum(s * h[None], -1) * inv
    q = np.cross(s, e1[None])
    v = np.sum(q * direction, -1) * inv
    t = np.sum(q * e2[None], -1) * inv
    hit = (~parallel) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    near = (~parallel) & (t > -eps) & (u > -eps) & (v > -eps) & (u + v < 1 + eps)
    grazing = near & ((np.abs(u) < eps) | (np.abs(v) < eps) | (np.abs(1 - u - v) < eps) | (np.abs(t) < eps))
    return hit.sum(1), grazing.any(1)


def build_sdf(mesh: TriangleMesh, grid: GridSpec, chunk: int = 4096, seed: int = 0) -> np.ndarray:
    """Signed distance at every grid node, negative inside; shape grid.resolution."""
    if not isinstance(mesh, TriangleMesh) or not mesh.is_watertight():
        raise BaselineUnsupportedError(
            "grid-operation SDF baseline needs a watertight triangle mesh; use the cpic mode for open surfaces or disks"
        )
    nodes = grid.node_positions().reshape(-1, 3)
    tri = mesh.triangles
    rng = np.random.default_rng(seed)
    base_dir = np.array([0.5773, 0.5792, 0.5754])
    base_dir /= np.linalg.norm(base_dir)
    out = np.empty(len(nodes))
    lo, hi = mesh.bounds()
    for start in range(0, len(nodes), chunk):
        pts = nodes[start : start + chunk]
        dist = closest_point_distance(pts, tri).min(1)
        inside = np.zeros(len(pts), dtype=bool)
        inbox = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
        todo = np.nonzero(inbox)[0]
        direction = base_dir
        for _ in range(16):
            if not len(todo):
                break
            hits, graze = _ray_crossings(pts[todo], direction, tri)
            ok = ~graze
            inside[todo[ok]] = hits[ok] % 2 == 1
            todo = todo[graze]
            direction = base_dir + 0.05 * rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
        out[start : start + chunk] = np.where(inside, -dist, dist)
    return out.reshape(grid.resolution)


# ---------------------------------------------------------------------------
# simple shapes used by scenario presets and tests


def box_mesh(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Axis-aligned box with outward counter-clockwise faces (12 triangles)."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(size, dtype=float) / 2
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    faces = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return TriangleMesh.from_arrays(c + corners * h, faces)


def quad_mesh(center, u, v) -> TriangleMesh:
    """Open rectangle spanned by half-extent vectors u and v; normal along u x v."""
    c, u, v = (np.asarray(a, dtype=float) for a in (center, u, v))
    verts = [c - u - v, c + u - v, c + u + v, c - u + v]
    return TriangleMesh.from_arrays(verts, [(0, 1, 2), (0, 2, 3)])


def icosphere(center=(0.0, 0.0, 0.0), radius=1.0, subdivisions=2) -> TriangleMesh:
    t = (1 + 5**0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh.from_arrays(np.asarray(center) + radius * np.array(verts), faces)
