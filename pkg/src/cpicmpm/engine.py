"""MLS-MPM time stepping with CPIC rigid-body coupling and the baseline collision strategies.

One substep is transfer-to-particles -> P2G -> grid operations -> G2P. The pure
jax kernels below are shared by forward rollouts and the reverse-mode tape in
``autodiff``; every discrete choice a substep makes (cell assignment, tags,
compatibility, penetration gate, return-map branch) is reported as a
``Decisions`` record and can be fed back in to freeze it.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import materials
from .collision import (
    CollisionGrid,
    ParticleCollisionState,
    collision_grid_for,
    compatibility,
    penetration_mask,
    transfer_kernel,
)
from .errors import (
    BaselineUnsupportedError,
    ConfigurationError,
    DivergenceError,
    NumericalDegeneracyError,
    OutOfDomainError,
)
from .geometry import RigidCollider, TriangleMesh, build_sdf, sample_rigid_particles
from .grid import GridSpec, stencil

log = logging.getLogger(__name__)

MODES = ("cpic", "gop_sdf", "rigid_particles", "planar_analytic")
RESPONSE_CODES = {"sticky": 0, "slip": 1, "separating": 2}


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec = field(default_factory=lambda: GridSpec.cube(64))
    dt: float = 1e-4
    substeps: int = 25
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.8)
    k_h: float = 1e4
    collision_mode: str = "cpic"
    v_max_expected: float = 5.0
    wall_cells: int = 2
    sample_spacing: float | None = None
    rigid_mass_ratio: float = 1e3
    kernel: str = "quadratic_bspline"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if self.collision_mode not in MODES:
            raise ConfigurationError(f"collision_mode must be one of {MODES}, got {self.collision_mode!r}")
        if self.kernel != "quadratic_bspline":
            raise ConfigurationError("only the quadratic B-spline kernel is implemented")
        if self.dt < 0 or self.substeps < 1:
            raise ConfigurationError("dt must be >= 0 and substeps >= 1")
        if self.dt > 0.2 * self.grid.dx / self.v_max_expected:
            raise ConfigurationError(
                f"dt={self.dt} violates CFL bound 0.2*dx/v_max = {0.2 * self.grid.dx / self.v_max_expected:.3g}"
            )
        if self.k_h < 0:
            raise ConfigurationError("k_h must be non-negative")

    @property
    def frame_dt(self) -> float:
        return self.dt * self.substeps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {"resolution": list(self.grid.resolution), "dx": self.grid.dx, "origin": list(self.grid.origin)}
        d["gravity"] = list(self.gravity)
        return d


@dataclass(frozen=True)
class PlanarBoundary:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    response: str = "sticky"

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ConfigurationError("planar boundary normal must be unit length")
        if self.response not in ("sticky", "slip"):
            raise ConfigurationError("planar boundaries support sticky or slip response")


@dataclass(eq=False)
class MaterialState:
    x: np.ndarray
    v: np.ndarray
    C: np.ndarray
    F: np.ndarray
    mass: np.ndarray
    volume: np.ndarray
    collision: ParticleCollisionState

    @classmethod
    def create(cls, x, v=None, mass=None, volume=None, density: float = 1000.0) -> MaterialState:
        x = np.array(x, dtype=float).reshape(-1, 3)
        n = len(x)
        v = np.zeros((n, 3)) if v is None else np.broadcast_to(np.asarray(v, dtype=float), (n, 3)).copy()
        if volume is None:
            raise ConfigurationError("particle volume is required")
        volume = np.broadcast_to(np.asarray(volume, dtype=float), (n,)).copy()
        mass = volume * density if mass is None else np.broadcast_to(np.asarray(mass, dtype=float), (n,)).copy()
        if np.any(mass <= 0):
            raise ConfigurationError("particle masses must be positive")
        return cls(x, v, np.zeros((n, 3, 3)), np.tile(np.eye(3), (n, 1, 1)), mass, volume, ParticleCollisionState.cleared(n))

    def __len__(self):
        return len(self.x)

    def copy(self) -> MaterialState:
        c = self.collision
        return MaterialState(
            self.x.copy(), self.v.copy(), self.C.copy(), self.F.copy(), self.mass.copy(), self.volume.copy(),
            ParticleCollisionState(c.affinity.copy(), c.distance.copy(), c.tag.copy(), c.normal.copy(), c.latched.copy()),
        )


@dataclass(eq=False)
class EulerianGrid:
    grid: GridSpec
    mass: np.ndarray
    momentum: np.ndarray
    velocity: np.ndarray


@dataclass(eq=False)
class Trajectory:
    positions: np.ndarray
    frame_dt: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[-1] != 3:
            raise ValueError("trajectory positions must have shape (frames, N, 3)")

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_particles(self) -> int:
        return self.positions.shape[1]


# ---------------------------------------------------------------------------
# jax-side containers


class Dyn(NamedTuple):
    x: jax.Array
    v: jax.Array
    C: jax.Array
    F: jax.Array


class Decisions(NamedTuple):
    base: jax.Array
    affinity: jax.Array
    tag: jax.Array
    compat: jax.Array
    penetrating: jax.Array
    case: jax.Array


class Scene(NamedTuple):
    mass: jax.Array
    volume: jax.Array
    node_affinity: jax.Array
    node_tag: jax.Array
    node_distance: jax.Array
    node_normal: jax.Array
    node_owner: jax.Array
    col_response: jax.Array
    col_linear: jax.Array
    col_angular: jax.Array
    col_center: jax.Array
    fixed_mask: jax.Array
    fixed_velocity: jax.Array
    slip_mask: jax.Array
    slip_normal: jax.Array
    rp_x: jax.Array
    rp_v: jax.Array
    rp_m: jax.Array


class Aux(NamedTuple):
    distance: jax.Array
    normal: jax.Array
    grid_mass: jax.Array


class SubstepRecord(NamedTuple):
    index: int
    before: Dyn
    after: Dyn
    tag: jax.Array
    decisions: Decisions
    aux: Aux
    scene: Scene


def empty_decisions(n: int) -> Decisions:
    return Decisions(
        jnp.zeros((n, 3), jnp.int32),
        jnp.zeros(n, bool),
        jnp.zeros(n, jnp.int8),
        jnp.ones((n, 27), bool),
        jnp.zeros(n, bool),
        jnp.zeros(n, jnp.int8),
    )


def _rigid_velocity(lin, ang, center, x):
    return lin + jnp.cross(ang, x - center)


def collider_response(v, vr, normal, tag, response):
    """Velocity an incompatible node hands back to a particle.

    sticky: the rigid velocity; slip: remove the normal part of the relative
    velocity; separating: keep v when moving away from the surface on the
    particle's side, otherwise slip.
    """
    u = v - vr
    un = jnp.sum(u * normal, -1, keepdims=True)
    slip = v - un * normal
    signed = un * tag[..., None].astype(v.dtype)
    separating = jnp.where(signed > 0, v, slip)
    return jnp.where(response[..., None] == 0, vr, jnp.where(response[..., None] == 1, slip, separating))


class Kernels:
    """Pure substep kernels bound to a model kind and a configuration."""

    def __init__(self, skeleton: materials.ParameterVector, config: SimConfig):
        self.skeleton = skeleton
        self.kind = skeleton.kind
        self.config = config
        self.grid = config.grid
        self.cpic = config.collision_mode == "cpic"

    def params(self, theta):
        return materials.physical(self.skeleton, theta)

    def collide(self, dyn: Dyn, prev_tag, scene: Scene, frozen: Decisions, use_frozen):
        base_c = jnp.floor((dyn.x - jnp.asarray(self.grid.origin)) / self.grid.dx - 0.5).astype(jnp.int32)
        base = jnp.where(use_frozen, frozen.base, base_c)
        _, idx, w, dpos = stencil(dyn.x, self.grid, base)
        n = dyn.x.shape[0]
        if not self.cpic:
            z = jnp.zeros(n)
            computed = Decisions(base_c, jnp.zeros(n, bool), jnp.zeros(n, jnp.int8), jnp.ones((n, 27), bool),
                                 jnp.zeros(n, bool), jnp.zeros(n, jnp.int8))
            return (idx, w, dpos), computed, computed, z, jnp.zeros((n, 3))
        node_tag = scene.node_tag[idx]
        aff_c, dist, normal, tag_c, degenerate = transfer_kernel(
            w, scene.node_affinity[idx], node_tag, scene.node_distance[idx], scene.node_normal[idx], prev_tag
        )
        compat_c = compatibility(tag_c[:, None], node_tag) | degenerate[:, None]
        pen_c = penetration_mask(aff_c, aff_c, dist, tag_c)
        computed = Decisions(base_c, aff_c, tag_c, compat_c, pen_c, jnp.zeros(n, jnp.int8))
        used = Decisions(
            base,
            jnp.where(use_frozen, frozen.affinity, aff_c),
            jnp.where(use_frozen, frozen.tag, tag_c),
            jnp.where(use_frozen, frozen.compat, compat_c),
            jnp.where(use_frozen, frozen.penetrating, pen_c),
            frozen.case,
        )
        return (idx, w, dpos), computed, used, dist, normal

    def p2g(self, dyn: Dyn, p, scene: Scene, sten, compat):
        cfg = self.config
        idx, w, dpos = sten
        M = self.grid.num_nodes
        inv_d = 4.0 / self.grid.dx**2
        strain_rate = 0.5 * (dyn.C + jnp.swapaxes(dyn.C, 1, 2))
        tau = materials.kirchhoff_stress(self.kind, p, dyn.F, strain_rate)
        affine = (-cfg.dt * inv_d) * scene.volume[:, None, None] * tau + scene.mass[:, None, None] * dyn.C
        wc = w * compat.astype(w.dtype)
        m_contrib = wc * scene.mass[:, None]
        mom = m_contrib[..., None] * dyn.v[:, None, :] + wc[..., None] * jnp.einsum("pij,pkj->pki", affine, dpos)
        grid_m = jnp.zeros(M, dpos.dtype).at[idx.reshape(-1)].add(m_contrib.reshape(-1))
        grid_p = jnp.zeros((M, 3), dpos.dtype).at[idx.reshape(-1)].add(mom.reshape(-1, 3))
        if scene.rp_x.shape[0]:
            _, ridx, rw, _ = stencil(scene.rp_x, self.grid)
            rm = rw * scene.rp_m[:, None]
            grid_m = grid_m.at[ridx.reshape(-1)].add(rm.reshape(-1))
            grid_p = grid_p.at[ridx.reshape(-1)].add((rm[..., None] * scene.rp_v[:, None, :]).reshape(-1, 3))
        return grid_m, grid_p

    def grid_op(self, grid_m, grid_p, scene: Scene):
        has = grid_m > 0
        safe = jnp.where(has, grid_m, 1.0)
        vg = jnp.where(has[:, None], grid_p / safe[:, None], 0.0)
        vg = vg + jnp.where(has[:, None], self.config.dt * jnp.asarray(self.config.gravity), 0.0)
        vn = jnp.sum(vg * scene.slip_normal, -1, keepdims=True)
        vg = jnp.where(scene.slip_mask[:, None] & (vn < 0), vg - vn * scene.slip_normal, vg)
        return jnp.where(scene.fixed_mask[:, None], scene.fixed_velocity, vg)

    def g2p(self, dyn: Dyn, p, vg, scene: Scene, sten, used: Decisions, dist, normal, use_frozen):
        cfg = self.config
        idx, w, dpos = sten
        inv_d = 4.0 / self.grid.dx**2
        v_nodes = vg[idx]
        if self.cpic:
            owner = jnp.maximum(scene.node_owner[idx], 0)
            vr = _rigid_velocity(
                scene.col_linear[owner], scene.col_angular[owner], scene.col_center[owner], dyn.x[:, None, :]
            )
            h = collider_response(
                dyn.v[:, None, :], vr, normal[:, None, :], jnp.broadcast_to(used.tag[:, None], owner.shape),
                scene.col_response[owner],
            )
            v_nodes = jnp.where(used.compat[..., None], v_nodes, h)
        v_new = jnp.einsum("pk,pkd->pd", w, v_nodes)
        C_new = inv_d * jnp.einsum("pk,pki,pkj->pij", w, v_nodes, dpos)
        if self.cpic:
            force = -cfg.k_h * dist[:, None] * normal
            v_new = v_new + cfg.dt * jnp.where(used.penetrating[:, None], force, 0.0)
        x_new = dyn.x + cfg.dt * v_new
        F_trial = (jnp.eye(3) + cfg.dt * C_new) @ dyn.F
        F_new, case_c = materials.return_mapping(self.kind, p, F_trial, cfg.dt, case=used.case, use_case=use_frozen)
        return Dyn(x_new, v_new, C_new, F_new), case_c

    def substep(self, dyn: Dyn, prev_tag, theta, scene: Scene, frozen: Decisions, use_frozen):
        """Advance one substep; returns (dyn', tag', computed decisions, aux)."""
        p = self.params(theta)
        sten, computed, used, dist, normal = self.collide(dyn, prev_tag, scene, frozen, use_frozen)
        grid_m, grid_p = self.p2g(dyn, p, scene, sten, used.compat)
        vg = self.grid_op(grid_m, grid_p, scene)
        new, case_c = self.g2p(dyn, p, vg, scene, sten, used, dist, normal, use_frozen)
        return new, used.tag, computed._replace(case=case_c), Aux(dist, normal, grid_m)


# ---------------------------------------------------------------------------
# simulator


def _node_rigid_velocity(colliders, owner, xg):
    out = np.zeros_like(xg)
    for k, col in enumerate(colliders):
        sel = owner == k
        if sel.any():
            out[sel] = col.rigid_velocity(xg[sel])
    return out


class Simulator:
    """A material, its colliders and planar boundaries under one configuration."""

    def __init__(
        self,
        material,
        colliders: Sequence[RigidCollider] = (),
        config: SimConfig | None = None,
        planes: Sequence[PlanarBoundary] = (),
    ):
        self.config = config or SimConfig()
        self.skeleton = material if isinstance(material, materials.ParameterVector) else materials.pack(material)
        self.colliders = list(colliders)
        self.planes = list(planes)
        self.kernels = Kernels(self.skeleton, self.config)
        mode = self.config.collision_mode
        if mode == "planar_analytic" and self.colliders:
            raise BaselineUnsupportedError("planar_analytic mode handles analytic planes only; pass colliders as planes")
        if mode == "gop_sdf":
            for c in self.colliders:
                if not isinstance(c.surface, TriangleMesh) or not c.surface.is_watertight():
                    raise BaselineUnsupportedError(
                        f"gop_sdf baseline needs watertight meshes; collider {c.name or '?'} is open or not a mesh"
                    )
        self._scene_cache = {}
        self._substep = jax.jit(self.kernels.substep)
        self._grid_node_pos = self.config.grid.node_positions().reshape(-1, 3)

    @property
    def is_static(self) -> bool:
        return all(c.is_static for c in self.colliders)

    # -- scene assembly --------------------------------------------------

    def colliders_at(self, t: float):
        return [c.at_time(t) for c in self.colliders]

    def collision_grid(self, t: float = 0.0) -> CollisionGrid:
        return collision_grid_for(self.colliders_at(t), self.config.grid, self.config.sample_spacing, self.config.seed)

    def _static_masks(self):
        cfg, grid = self.config, self.config.grid
        M = grid.num_nodes
        ijk = np.stack(np.unravel_index(np.arange(M), grid.resolution), -1)
        res = np.asarray(grid.resolution)
        wall = np.any((ijk < cfg.wall_cells) | (ijk >= res - cfg.wall_cells), axis=1)
        fixed_mask = wall.copy()
        fixed_vel = np.zeros((M, 3))
        slip_mask = np.zeros(M, bool)
        slip_normal = np.zeros((M, 3))
        xg = self._grid_node_pos
        for plane in self.planes:
            below = (xg - np.asarray(plane.point)) @ np.asarray(plane.normal) <= 0
            if plane.response == "sticky":
                fixed_mask |= below
            else:
                slip_mask |= below
                slip_normal[below] = plane.normal
        return wall, fixed_mask, fixed_vel, slip_mask, slip_normal

    def scene(self, state: MaterialState, t: float = 0.0) -> Scene:
        key = 0.0 if self.is_static else t
        if key in self._scene_cache:
            cached = self._scene_cache[key]
            return cached._replace(mass=jnp.asarray(state.mass), volume=jnp.asarray(state.volume))
        cfg, grid = self.config, self.config.grid
        M = grid.num_nodes
        cols = self.colliders_at(t)
        wall, fixed_mask, fixed_vel, slip_mask, slip_normal = self._static_masks()
        cg = CollisionGrid.empty(grid)
        rp_x, rp_v, rp_m = np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
        mode = cfg.collision_mode
        if mode == "cpic" and cols:
            cg = collision_grid_for(cols, grid, cfg.sample_spacing, cfg.seed)
        elif mode == "gop_sdf":
            xg = self._grid_node_pos
            for k, col in enumerate(cols):
                inside = build_sdf(col.surface, grid).reshape(-1) <= 0
                fixed_mask |= inside
                fixed_vel[inside] = col.rigid_velocity(xg[inside])
        elif mode == "rigid_particles" and cols:
            spacing = cfg.sample_spacing or 0.5 * grid.dx
            xs, vs = [], []
            for col in cols:
                s = sample_rigid_particles(col, spacing, cfg.seed)
                xs.append(s.positions)
                vs.append(col.rigid_velocity(s.positions))
            rp_x, rp_v = np.concatenate(xs), np.concatenate(vs)
            if not np.all(grid.interior_mask(rp_x)):
                raise ConfigurationError("rigid particles must lie in the grid interior")
            rp_m = np.full(len(rp_x), cfg.rigid_mass_ratio * float(np.mean(state.mass)))
        fixed_vel[wall] = 0.0
        aff, tag, dist, nrm, owner = cg.flat()
        K = max(1, len(cols))
        resp = np.zeros(K, np.int8)
        lin, ang, cen = np.zeros((K, 3)), np.zeros((K, 3)), np.zeros((K, 3))
        for k, col in enumerate(cols):
            resp[k] = RESPONSE_CODES[col.response]
            if col.motion is not None:
                lin[k], ang[k], cen[k] = col.motion.linear, col.motion.angular, col.motion.center
        scene = Scene(
            jnp.asarray(state.mass), jnp.asarray(state.volume),
            jnp.asarray(aff), jnp.asarray(tag), jnp.asarray(dist), jnp.asarray(nrm), jnp.asarray(owner, jnp.int32),
            jnp.asarray(resp), jnp.asarray(lin), jnp.asarray(ang), jnp.asarray(cen),
            jnp.asarray(fixed_mask), jnp.asarray(fixed_vel), jnp.asarray(slip_mask), jnp.asarray(slip_normal),
            jnp.asarray(rp_x), jnp.asarray(rp_v), jnp.asarray(rp_m),
        )
        if self.is_static:
            self._scene_cache[key] = scene
        return scene

    # -- state conversion ------------------------------------------------

    def check_domain(self, x):
        ok = self.config.grid.interior_mask(np.asarray(x))
        if not ok.all():
            raise OutOfDomainError(np.flatnonzero(~ok))

    @staticmethod
    def to_dyn(state: MaterialState) -> Dyn:
        return Dyn(jnp.asarray(state.x), jnp.asarray(state.v), jnp.asarray(state.C), jnp.asarray(state.F))

    @staticmethod
    def from_dyn(dyn: Dyn, like: MaterialState, tag=None, aux: Aux | None = None, affinity=None) -> MaterialState:
        n = len(like)
        col = like.collision
        if tag is not None:
            tag = np.asarray(tag)
            aff = np.asarray(affinity) if affinity is not None else tag != 0
            col = ParticleCollisionState(
                aff,
                np.asarray(aux.distance) if aux is not None else np.zeros(n),
                tag,
                np.asarray(aux.normal) if aux is not None else np.zeros((n, 3)),
                aff.copy(),
            )
        return MaterialState(
            np.asarray(dyn.x), np.asarray(dyn.v), np.asarray(dyn.C), np.asarray(dyn.F), like.mass, like.volume, col
        )

    def theta(self, theta=None):
        return jnp.asarray(self.skeleton.values if theta is None else theta)

    # -- stepping ----------------------------------------------------------

    def substep_raw(self, dyn: Dyn, tag, theta, scene: Scene, frozen: Decisions | None = None):
        use = frozen is not None
        frozen = empty_decisions(dyn.x.shape[0]) if frozen is None else frozen
        return self._substep(dyn, tag, theta, scene, frozen, jnp.asarray(use))

    def step(self, state: MaterialState, theta=None, t: float = 0.0) -> MaterialState:
        """One substep."""
        if self.config.dt == 0.0:
            return state.copy()
        self.check_domain(state.x)
        scene = self.scene(state, t)
        dyn, tag, dec, aux = self.substep_raw(self.to_dyn(state), jnp.asarray(state.collision.tag), self.theta(theta), scene)
        return self.from_dyn(dyn, state, tag, aux, dec.affinity)

    def check_finite(self, dyn: Dyn):
        x = np.asarray(dyn.x)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(np.asarray(dyn.v)))):
            raise DivergenceError()
        det = np.linalg.det(np.asarray(dyn.F))
        bad = np.flatnonzero(~(det > 0))
        if len(bad):
            raise NumericalDegeneracyError(bad, "deformation gradient lost invertibility (simulation diverged)")

    def rollout(
        self,
        initial: MaterialState,
        frames: int,
        theta=None,
        monitor: Callable | None = None,
        return_state: bool = False,
    ):
        """Positions after each frame as a Trajectory (frames x N x 3).

        ``monitor(SubstepRecord)`` is called after every substep.
        """
        if frames < 1:
            raise ConfigurationError("frames must be >= 1")
        cfg = self.config
        th = self.theta(theta)
        out = np.empty((frames, len(initial), 3))
        if cfg.dt == 0.0:
            out[:] = initial.x
            traj = Trajectory(out, 0.0)
            return (traj, initial.copy()) if return_state else traj
        dyn = self.to_dyn(initial)
        tag = jnp.asarray(initial.collision.tag)
        aux = dec = None
        k = 0
        for f in range(frames):
            for _ in range(cfg.substeps):
                self.check_domain(dyn.x)
                scene = self.scene(initial, k * cfg.dt)
                before = dyn
                dyn, tag, dec, aux = self.substep_raw(dyn, tag, th, scene)
                if monitor is not None:
                    monitor(SubstepRecord(k, before, dyn, tag, dec, aux, scene))
                k += 1
            self.check_finite(dyn)
            out[f] = np.asarray(dyn.x)
        traj = Trajectory(out, cfg.frame_dt)
        if return_state:
            return traj, self.from_dyn(dyn, initial, tag, aux, dec.affinity if dec is not None else None)
        return traj

    # -- stage-level access (diagnostics and tests) -----------------------

    def _stage_inputs(self, state: MaterialState, t: float):
        scene = self.scene(state, t)
        dyn = self.to_dyn(state)
        sten, computed, used, dist, normal = self.kernels.collide(
            dyn, jnp.asarray(state.collision.tag), scene, empty_decisions(len(state)), jnp.asarray(False)
        )
        return scene, dyn, sten, used, dist, normal

    def p2g(self, state: MaterialState, theta=None, t: float = 0.0) -> EulerianGrid:
        self.check_domain(state.x)
        scene, dyn, sten, used, _, _ = self._stage_inputs(state, t)
        m, mom = self.kernels.p2g(dyn, self.kernels.params(self.theta(theta)), scene, sten, used.compat)
        m, mom = np.asarray(m), np.asarray(mom)
        vel = np.where(m[:, None] > 0, mom / np.where(m > 0, m, 1.0)[:, None], 0.0)
        shape = self.config.grid.resolution
        return EulerianGrid(self.config.grid, m.reshape(shape), mom.reshape(shape + (3,)), vel.reshape(shape + (3,)))

    def grid_op(self, egrid: EulerianGrid, state: MaterialState, t: float = 0.0) -> EulerianGrid:
        scene = self.scene(state, t)
        m = jnp.asarray(egrid.mass.reshape(-1))
        vg = self.kernels.grid_op(m, jnp.asarray(egrid.momentum.reshape(-1, 3)), scene)
        vel = np.asarray(vg).reshape(egrid.velocity.shape)
        return EulerianGrid(egrid.grid, egrid.mass, egrid.mass[..., None] * vel, vel)

    def g2p(self, state: MaterialState, egrid: EulerianGrid, theta=None, t: float = 0.0) -> MaterialState:
        scene, dyn, sten, used, dist, normal = self._stage_inputs(state, t)
        p = self.kernels.params(self.theta(theta))
        new, _ = self.kernels.g2p(
            dyn, p, jnp.asarray(egrid.velocity.reshape(-1, 3)), scene, sten, used, dist, normal, jnp.asarray(False)
        )
        return self.from_dyn(new, state, used.tag, Aux(dist, normal, None), used.affinity)


def step(state: MaterialState, material, colliders=(), config: SimConfig | None = None, planes=()) -> MaterialState:
    return Simulator(material, colliders, config, planes).step(state)


def rollout(initial: MaterialState, material, colliders=(), config: SimConfig | None = None, frames: int = 16, planes=()):
    return Simulator(material, colliders, config, planes).rollout(initial, frames)


# ---------------------------------------------------------------------------
# export


def config_hash(payload: dict) -> str:
    """Stable hash of a JSON-able mapping, independent of key order."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_points_ply(path, points) -> None:
    from plyfile import PlyData, PlyElement

    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    arr = np.empty(len(pts), dtype=[("x", "f4"), ("y", "f4"), ("z", "f4")])
    arr["x"], arr["y"], arr["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    PlyData([PlyElement.describe(arr, "vertex")], text=False, byte_order="<").write(str(path))


def read_points_ply(path) -> np.ndarray:
    from plyfile import PlyData

    v = PlyData.read(str(path))["vertex"].data
    return np.stack([v["x"], v["y"], v["z"]], -1).astype(float)


def export_trajectory(traj: Trajectory, out_dir, extra: dict | None = None, config_digest: str | None = None) -> dict:
    """One binary PLY per frame plus manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for f in range(traj.frames):
        name = f"frame_{f:04d}.ply"
        write_points_ply(out / name, traj.positions[f])
        files.append(name)
    manifest = {
        "frames": traj.frames,
        "frame_dt": traj.frame_dt,
        "particles": traj.num_particles,
        "config_hash": config_digest,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_trajectory(ref_dir) -> tuple[Trajectory, dict]:
    ref = Path(ref_dir)
    manifest = json.loads((ref / "manifest.json").read_text())
    frames = [read_points_ply(ref / name) for name in manifest["files"]]
    return Trajectory(np.stack(frames), manifest.get("frame_dt", 0.0)), manifest
