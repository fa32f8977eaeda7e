"""Material presets, continuum shapes and YAML scenario configs."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import materials
from .engine import MaterialState, PlanarBoundary, SimConfig, Simulator, config_hash, read_points_ply
from .errors import ConfigurationError, MPMError
from .geometry import (
    RigidCollider,
    RigidMotion,
    box_mesh,
    icosphere,
    load_disks,
    load_mesh,
    quad_mesh,
)
from .grid import GridSpec

# Ground-truth rows and shared initial guesses for the identification benchmarks.
PRESETS = {
    "newtonian": [
        dict(mu=19.46, kappa=56075.55),
        dict(mu=436.62, kappa=152696.25),
        dict(mu=155.83, kappa=193525.59),
        dict(mu=121.76, kappa=257356.05),
        dict(mu=49.09, kappa=518012.47),
        dict(mu=38.44, kappa=13772.52),
        dict(mu=64.16, kappa=358237.13),
        dict(mu=228.71, kappa=11041.06),
        dict(mu=552.98, kappa=16789.77),
        dict(mu=106.93, kappa=112569.73),
    ],
    "non_newtonian": [
        dict(mu=13209.25, kappa=201566.59, tau_y=1151.42, eta=6.68),
        dict(mu=65351.08, kappa=171054.03, tau_y=7491.70, eta=26.69),
        dict(mu=43757.04, kappa=249639.94, tau_y=3964.94, eta=23.27),
        dict(mu=36027.61, kappa=134751.55, tau_y=5061.12, eta=22.31),
        dict(mu=19593.71, kappa=121836.33, tau_y=1462.78, eta=38.83),
        dict(mu=20522.72, kappa=14494.30, tau_y=4153.38, eta=27.24),
        dict(mu=51549.45, kappa=370317.66, tau_y=3203.67, eta=20.43),
        dict(mu=121865.90, kappa=32859.59, tau_y=1192.76, eta=10.27),
        dict(mu=241579.97, kappa=30324.98, tau_y=1251.29, eta=10.62),
        dict(mu=33764.59, kappa=122896.10, tau_y=4689.16, eta=22.89),
    ],
    "granular": [
        dict(theta_fric=30.6577),
        dict(theta_fric=32.3751),
        dict(theta_fric=26.8816),
        dict(theta_fric=29.3458),
        dict(theta_fric=42.2861),
    ],
}

INITIAL_GUESS = {
    "newtonian": dict(mu=10.0, kappa=1e4),
    "non_newtonian": dict(mu=100.0, kappa=1e5, tau_y=10.0, eta=1.0),
    "granular": dict(theta_fric=10.0),
}


def preset(kind: str, row: int = 1):
    """Ground-truth model for a 1-based preset row."""
    if kind not in PRESETS:
        raise ConfigurationError(f"no presets for material {kind!r}; choose from {sorted(PRESETS)}")
    rows = PRESETS[kind]
    if not 1 <= row <= len(rows):
        raise ConfigurationError(f"{kind} preset row must be in 1..{len(rows)}, got {row}")
    return materials.MODELS[kind](**rows[row - 1])


def initial_guess(kind: str):
    if kind not in INITIAL_GUESS:
        raise ConfigurationError(f"no initial guess defined for {kind!r}")
    return materials.MODELS[kind](**INITIAL_GUESS[kind])


# ---------------------------------------------------------------------------
# continuum shapes (particle centers on a lattice of the given spacing)


def _lattice(lo, hi, spacing):
    axes = [np.arange(a + 0.5 * spacing, b - 1e-12, spacing) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)


def block_particles(center, size, spacing) -> np.ndarray:
    c, s = np.asarray(center, float), np.asarray(size, float)
    return _lattice(c - s / 2, c + s / 2, spacing)


def cross_particles(center, arm: float = 0.24, width: float = 0.08, spacing: float = 1 / 64) -> np.ndarray:
    """Plus-shaped slab: two orthogonal bars of length ``arm`` and square section ``width``, lying in the xy plane."""
    c = np.asarray(center, float)
    x = block_particles(c, (arm, arm, width), spacing)
    rel = np.abs(x - c)
    keep = (rel[:, 0] <= width / 2) | (rel[:, 1] <= width / 2)
    return x[keep]


def droplet_particles(center, radius: float = 0.06, spacing: float = 1 / 64) -> np.ndarray:
    c = np.asarray(center, float)
    x = block_particles(c, (2 * radius,) * 3, spacing)
    return x[np.linalg.norm(x - c, axis=1) <= radius]


# ---------------------------------------------------------------------------
# scenario configs


DEFAULTS = {
    "material": {"preset": "newtonian", "row": 1},
    "guess": None,
    "shape": {"kind": "cross", "center": [0.5, 0.5, 0.4], "arm": 0.24, "width": 0.08, "spacing": None},
    "density": 1000.0,
    "velocity": [0.0, 0.0, -2.0],
    "colliders": [{"kind": "box", "center": [0.5, 0.5, 0.2], "size": [0.4, 0.4, 0.2], "response": "sticky"}],
    "sim": {
        "resolution": 32,
        "size": 1.0,
        "dt": 2e-4,
        "substeps": 25,
        "gravity": [0.0, 0.0, -9.8],
        "k_h": 1e4,
        "mode": "cpic",
        "v_max": 5.0,
        "sample_spacing": None,
        "rigid_mass_ratio": 1e3,
    },
    "frames": 16,
    "seed": 0,
    "optimizer": {"lr": 0.05, "max_iters": 300, "tol": 1e-4, "window": 20},
}

GEOMETRY_KEYS = ("shape", "density", "velocity", "colliders", "frames")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _material(spec, guess: bool = False):
    """A model from {preset, row} or {kind, **params}; a preset without a row is a truth row 1, or the shared initial guess when ``guess``."""
    if spec is None:
        return None
    if isinstance(spec, tuple(materials.MODELS.values())):
        return spec
    spec = dict(spec)
    if "preset" in spec:
        if "row" in spec or not guess:
            return preset(spec["preset"], int(spec.get("row", 1)))
        return initial_guess(spec["preset"])
    kind = spec.pop("kind", None)
    if kind not in materials.MODELS:
        raise ConfigurationError(f"material kind must be one of {sorted(materials.MODELS)}, got {kind!r}")
    try:
        return materials.MODELS[kind](**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad {kind} parameters: {exc}") from exc


def _transform_fns(tf):
    tf = tf or {}
    scale = np.broadcast_to(np.asarray(tf.get("scale", 1.0), float), (3,))
    R = _euler_deg(tf.get("rotate_deg", [0.0, 0.0, 0.0]))
    t = np.asarray(tf.get("translate", [0.0, 0.0, 0.0]), float)

    def points(x):
        return (np.asarray(x) * scale) @ R.T + t

    def vectors(n):
        n = (np.asarray(n) / scale) @ R.T
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    return points, vectors


def _euler_deg(angles):
    ax, ay, az = np.deg2rad(np.asarray(angles, float))
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _resolve(path, base: Path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ConfigurationError(f"file not found: {p}")
    return p


@dataclass
class Scenario:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, data: dict | None = None, base_dir=None) -> Scenario:
        data = data or {}
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        raw = _merge(DEFAULTS, data)
        # lists and material specs replace the defaults rather than merging into them
        for key in ("colliders", "material", "guess"):
            if key in data:
                raw[key] = copy.deepcopy(data[key])
        if "shape" in data and data["shape"].get("kind", "cross") != "cross":
            raw["shape"] = copy.deepcopy(data["shape"])
        sc = cls(raw, Path(base_dir) if base_dir else Path.cwd())
        sc.validate()
        return sc

    @classmethod
    def load(cls, path) -> Scenario:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        return cls.from_dict(data, path.parent)

    def with_overrides(self, mode=None, frames=None, seed=None) -> Scenario:
        raw = copy.deepcopy(self.raw)
        if mode is not None:
            raw["sim"]["mode"] = mode
        if frames is not None:
            raw["frames"] = int(frames)
        if seed is not None:
            raw["seed"] = int(seed)
        sc = Scenario(raw, self.base_dir)
        sc.validate()
        return sc

    def validate(self):
        self.config()
        self.material()
        self.guess()
        self.particles()
        self.colliders()
        if int(self.raw["frames"]) < 1:
            raise ConfigurationError("frames must be >= 1")

    # -- pieces -------------------------------------------------------------

    def material(self):
        return _material(self.raw["material"])

    def guess(self):
        g = self.raw.get("guess")
        if g is None:
            kind = self.material().kind
            return initial_guess(kind) if kind in INITIAL_GUESS else self.material()
        return _material(g, guess=True)

    @property
    def frames(self) -> int:
        return int(self.raw["frames"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def mode(self) -> str:
        return self.raw["sim"]["mode"]

    def grid(self) -> GridSpec:
        s = self.raw["sim"]
        return GridSpec.cube(int(s["resolution"]), float(s.get("size", 1.0)))

    def config(self) -> SimConfig:
        s = self.raw["sim"]
        return SimConfig(
            grid=self.grid(),
            dt=float(s["dt"]),
            substeps=int(s["substeps"]),
            gravity=tuple(s["gravity"]),
            k_h=float(s["k_h"]),
            collision_mode=s["mode"],
            v_max_expected=float(s["v_max"]),
            sample_spacing=None if s.get("sample_spacing") is None else float(s["sample_spacing"]),
            rigid_mass_ratio=float(s["rigid_mass_ratio"]),
            seed=int(self.raw["seed"]),
        )

    def spacing(self) -> float:
        sp = self.raw["shape"].get("spacing")
        return 0.5 * self.grid().dx if sp is None else float(sp)

    def particles(self) -> np.ndarray:
        sh = self.raw["shape"]
        kind = sh.get("kind", "cross")
        sp = self.spacing()
        if kind == "cross":
            x = cross_particles(sh["center"], sh.get("arm", 0.24), sh.get("width", 0.08), sp)
        elif kind == "droplet":
            x = droplet_particles(sh["center"], sh.get("radius", 0.06), sp)
        elif kind == "box":
            x = block_particles(sh["center"], sh["size"], sp)
        elif kind == "ply":
            x = read_points_ply(_resolve(sh["path"], self.base_dir))
        else:
            raise ConfigurationError(f"unknown shape kind {kind!r}")
        if not len(x):
            raise ConfigurationError("shape produced no particles")
        if not np.all(self.grid().interior_mask(x)):
            raise ConfigurationError("continuum particles must lie inside the grid interior")
        return x

    def initial_state(self) -> MaterialState:
        x = self.particles()
        return MaterialState.create(x, v=self.raw["velocity"], volume=self.spacing() ** 3, density=float(self.raw["density"]))

    def colliders(self):
        """(mesh or disk colliders, planar boundaries) for the configured mode."""
        cols, planes = [], []
        for i, spec in enumerate(self.raw["colliders"]):
            spec = dict(spec)
            kind = spec.get("kind")
            response = spec.get("response", "sticky")
            name = spec.get("name", f"{kind}{i}")
            if kind == "plane":
                point, normal = np.asarray(spec["point"], float), np.asarray(spec["normal"], float)
                normal = normal / np.linalg.norm(normal)
                if self.mode == "planar_analytic":
                    planes.append(PlanarBoundary(tuple(point), tuple(normal), response))
                    continue
                surface = _plane_quad(point, normal, self.grid())
            elif self.mode == "planar_analytic":
                raise ConfigurationError(f"planar_analytic mode only supports plane colliders; got {kind!r}")
            elif kind == "box":
                surface = box_mesh(spec["center"], spec["size"])
            elif kind == "sphere":
                surface = icosphere(spec["center"], spec["radius"], int(spec.get("subdivisions", 2)))
            elif kind == "quad":
                surface = quad_mesh(spec["center"], spec["u"], spec["v"])
            elif kind == "mesh":
                pts, _ = _transform_fns(spec.get("transform"))
                surface = load_mesh(_resolve(spec["path"], self.base_dir)).transformed(pts)
            elif kind == "disks":
                pts, vecs = _transform_fns(spec.get("transform"))
                surface = load_disks(_resolve(spec["path"], self.base_dir), float(spec.get("cutoff_sigma", 2.0)))
                surface = surface.transformed(pts, vecs)
            else:
                raise ConfigurationError(f"unknown collider kind {kind!r}")
            motion = spec.get("motion")
            if motion is not None:
                motion = RigidMotion(
                    tuple(motion.get("linear", (0, 0, 0))),
                    tuple(motion.get("angular", (0, 0, 0))),
                    tuple(motion.get("center", (0, 0, 0))),
                )
            try:
                cols.append(RigidCollider(surface, response, motion, name))
            except MPMError as exc:
                raise ConfigurationError(str(exc)) from exc
        return cols, planes

    def simulator(self, material=None) -> Simulator:
        cols, planes = self.colliders()
        return Simulator(material or self.material(), cols, self.config(), planes)

    def optimizer_settings(self) -> dict:
        return dict(self.raw.get("optimizer") or {})

    # -- hashing ------------------------------------------------------------

    def semantic(self) -> dict:
        """Normalized config with defaults filled in; key order irrelevant."""
        out = copy.deepcopy(self.raw)
        return json.loads(json.dumps(out, sort_keys=True, default=float))

    def config_hash(self) -> str:
        return config_hash(self.semantic())

    def geometry_hash(self) -> str:
        sem = self.semantic()
        g = {k: sem[k] for k in GEOMETRY_KEYS}
        g["grid"] = {k: sem["sim"][k] for k in ("resolution", "size", "dt", "substeps", "gravity")}
        return config_hash(g)


def _plane_quad(point, normal, grid: GridSpec):
    """Square patch of the plane spanning the grid interior, two cells in from the walls."""
    n = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    lo = np.asarray(grid.origin) + 1.5 * grid.dx
    hi = grid.upper - 1.5 * grid.dx
    # the plane's point nearest the domain centre, so any point on the plane gives the same patch
    mid = 0.5 * (np.asarray(grid.origin) + grid.upper)
    center = mid - np.dot(mid - np.asarray(point, float), n) * n
    # corners are center +- half*(u +- v); bound each axis by |u_k| + |v_k|
    span = np.abs(u) + np.abs(v)
    room = np.minimum(center - lo, hi - center)
    with np.errstate(divide="ignore"):
        half = float(np.min(np.where(span > 1e-12, room / span, np.inf)))
    if not half > 0:
        raise ConfigurationError("plane collider does not intersect the grid interior")
    return quad_mesh(center, half * u, half * v)
