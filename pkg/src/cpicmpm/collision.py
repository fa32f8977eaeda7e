"""Collision grid projection, particle transfer with tag latching, penalty force and compatibility.

Tags are stored as int8: +1 / -1 for the two sides of a surface, 0 for unset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError
from .geometry import RigidCollider, RigidParticleSet, plane_distance, sample_rigid_particles
from .grid import OFFSETS, GridSpec, stencil

TIE_TOL = 1e-12
NORMAL_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class CollisionGrid:
    """Per-node affinity, unsigned distance, side tag and normal projected from colliders."""

    grid: GridSpec
    affinity: np.ndarray
    distance: np.ndarray
    tag: np.ndarray
    normal: np.ndarray
    primitive: np.ndarray
    collider: np.ndarray

    @classmethod
    def empty(cls, grid: GridSpec) -> CollisionGrid:
        shape = grid.resolution
        return cls(
            grid,
            np.zeros(shape, bool),
            np.zeros(shape),
            np.zeros(shape, np.int8),
            np.zeros(shape + (3,)),
            np.full(shape, -1, np.int64),
            np.full(shape, -1, np.int64),
        )

    def flat(self):
        """(affinity, tag, distance, normal, collider) flattened over nodes."""
        return (
            self.affinity.reshape(-1),
            self.tag.reshape(-1),
            self.distance.reshape(-1),
            self.normal.reshape(-1, 3),
            self.collider.reshape(-1),
        )

    def __eq__(self, other):
        if not isinstance(other, CollisionGrid):
            return NotImplemented
        return self.grid == other.grid and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("affinity", "distance", "tag", "normal", "primitive", "collider")
        )


@dataclass(frozen=True, eq=False)
class ParticleCollisionState:
    affinity: np.ndarray
    distance: np.ndarray
    tag: np.ndarray
    normal: np.ndarray
    latched: np.ndarray

    @classmethod
    def cleared(cls, n: int) -> ParticleCollisionState:
        return cls(np.zeros(n, bool), np.zeros(n), np.zeros(n, np.int8), np.zeros((n, 3)), np.zeros(n, bool))


class _PrimitiveTable:
    """Primitives of several colliders concatenated under global indices."""

    def __init__(self, colliders: Sequence[RigidCollider]):
        self.colliders = list(colliders)
        counts = [c.surface.num_primitives for c in self.colliders]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        empty = np.zeros((0, 3))
        self.anchors = np.concatenate([c.surface.anchors for c in self.colliders] or [empty])
        self.normals = np.concatenate([c.surface.normals for c in self.colliders] or [empty])
        self.owner = np.repeat(np.arange(len(counts)), counts)

    def inside(self, prim, points) -> np.ndarray:
        out = np.zeros(len(prim), bool)
        for k, col in enumerate(self.colliders):
            sel = self.owner[prim] == k
            if sel.any():
                out[sel] = col.surface.projection_inside(prim[sel] - self.offsets[k], points[sel])
        return out


def _check_enclosed(colliders, grid: GridSpec):
    lo, hi = np.asarray(grid.origin), grid.upper
    for col in colliders:
        if not col.surface.num_primitives:
            continue
        blo, bhi = col.surface.bounds()
        if np.any(blo < lo + grid.dx) or np.any(bhi > hi - grid.dx):
            raise ConfigurationError(
                f"grid [{lo}, {hi}] does not enclose collider {col.name or ''} bounding box [{blo}, {bhi}]"
            )


def build_collision_grid_multi(
    colliders: Sequence[RigidCollider], samples: Sequence[RigidParticleSet], grid: GridSpec
) -> CollisionGrid:
    """Project several colliders onto one collision grid; primitive ids are global across colliders."""
    colliders = list(colliders)
    _check_enclosed(colliders, grid)
    table = _PrimitiveTable(colliders)
    pos = [s.positions for s in samples]
    prim = [s.primitive_ids + table.offsets[k] for k, s in enumerate(samples)]
    if not colliders or not sum(len(p) for p in pos):
        return CollisionGrid.empty(grid)
    pos = np.concatenate(pos)
    prim = np.concatenate(prim)

    nodes = grid.stencil_base(pos)[:, None, :] + OFFSETS[None]
    res = np.asarray(grid.resolution)
    if np.any(nodes < 0) or np.any(nodes >= res):
        raise ConfigurationError("collider samples reach outside the grid")
    node_flat = grid.flat_index(nodes).reshape(-1)
    prim_rep = np.repeat(prim, 27)
    nprim = len(table.anchors)
    pairs = np.unique(node_flat * nprim + prim_rep)
    node_flat, prim_rep = pairs // nprim, pairs % nprim

    xg = np.asarray(grid.origin) + np.stack(np.unravel_index(node_flat, grid.resolution), -1) * grid.dx
    keep = table.inside(prim_rep, xg)
    node_flat, prim_rep, xg = node_flat[keep], prim_rep[keep], xg[keep]
    dist = plane_distance(xg, table.anchors[prim_rep], table.normals[prim_rep])
    absd = np.abs(dist)

    # pairs are sorted by node already (unique sorts by key)
    starts = np.flatnonzero(np.r_[True, node_flat[1:] != node_flat[:-1]]) if len(node_flat) else np.zeros(0, int)
    min_abs = np.minimum.reduceat(absd, starts) if len(starts) else np.zeros(0)
    counts = np.diff(np.r_[starts, len(node_flat)])
    tied = absd <= np.repeat(min_abs, counts) + TIE_TOL
    big = np.iinfo(np.int64).max
    best_prim = np.minimum.reduceat(np.where(tied, prim_rep, big), starts) if len(starts) else np.zeros(0, int)
    chosen = np.flatnonzero(tied & (prim_rep == np.repeat(best_prim, counts)))
    # exactly one chosen per node (prim unique within a node)
    nodes_sel = node_flat[chosen]
    d_sel = dist[chosen]
    p_sel = prim_rep[chosen]

    out = CollisionGrid.empty(grid)
    aff = out.affinity.reshape(-1)
    dd = out.distance.reshape(-1)
    tg = out.tag.reshape(-1)
    nn = out.normal.reshape(-1, 3)
    pp = out.primitive.reshape(-1)
    cc = out.collider.reshape(-1)
    aff[nodes_sel] = True
    dd[nodes_sel] = np.abs(d_sel)
    tg[nodes_sel] = np.where(d_sel >= 0, 1, -1)
    nn[nodes_sel] = table.normals[p_sel]
    pp[nodes_sel] = p_sel
    cc[nodes_sel] = table.owner[p_sel]
    return out


def build_collision_grid(samples: RigidParticleSet, collider: RigidCollider, grid: GridSpec) -> CollisionGrid:
    return build_collision_grid_multi([collider], [samples], grid)


def collision_grid_for(colliders: Sequence[RigidCollider], grid: GridSpec, spacing: float | None = None, seed: int = 0):
    """Sample every collider (default spacing half a cell) and project onto the grid."""
    spacing = 0.5 * grid.dx if spacing is None else spacing
    samples = [sample_rigid_particles(c, spacing, seed) for c in colliders]
    return build_collision_grid_multi(colliders, samples, grid)


# ---------------------------------------------------------------------------
# particle-side kernels (jax; also accept numpy input)


def sign_tag(d):
    return jnp.where(d >= 0, 1, -1).astype(jnp.int8)


def transfer_kernel(w, node_affinity, node_tag, node_distance, node_normal, prev_tag):
    """Interpolate collision properties from the 27 stencil nodes of each particle.

    Inputs are gathered per particle: w (N, 27), node_* (N, 27[, 3]); prev_tag (N,).
    Returns (affinity, distance, normal, tag, degenerate) where degenerate marks a
    cancelled normal sum.
    """
    affinity = jnp.any(node_affinity, axis=1)
    wa = w * node_affinity.astype(w.dtype)
    distance = jnp.sum(wa * node_tag.astype(w.dtype) * node_distance, axis=1)
    nsum = jnp.einsum("pk,pkd->pd", wa, node_normal)
    n2 = jnp.sum(nsum * nsum, axis=1)
    degenerate = n2 < NORMAL_EPS**2
    norm = jnp.sqrt(jnp.where(degenerate, 1.0, n2))
    normal = jnp.where(degenerate[:, None], 0.0, nsum / norm[:, None])
    held = jnp.where(prev_tag != 0, prev_tag, sign_tag(distance)).astype(jnp.int8)
    tag = jnp.where(affinity, held, 0).astype(jnp.int8)
    return affinity, distance, normal, tag, degenerate


def compatibility(tag_p, tag_g):
    """False only when both tags are set and lie on opposite sides."""
    tag_p = jnp.asarray(tag_p)
    tag_g = jnp.asarray(tag_g)
    return ~((tag_p != 0) & (tag_g != 0) & (tag_p != tag_g))


def penetration_mask(affinity, latched, distance, tag):
    return affinity & latched & (tag != 0) & (distance != 0) & (sign_tag(distance) != tag)


def penalty_force(distance, normal, tag, k_h, affinity=True, latched=True):
    """-k_h d n for penetrating particles (sign of d contradicts the latched tag), zero otherwise."""
    distance = jnp.asarray(distance)
    normal = jnp.asarray(normal)
    gate = penetration_mask(jnp.asarray(affinity), jnp.asarray(latched), distance, jnp.asarray(tag))
    return jnp.where(gate[..., None], -k_h * distance[..., None] * normal, 0.0)


def transfer_to_particles(
    cgrid: CollisionGrid, positions, previous: ParticleCollisionState | None = None
) -> ParticleCollisionState:
    positions = np.asarray(positions, dtype=float)
    if not np.all(cgrid.grid.interior_mask(positions)):
        raise ConfigurationError("particles must lie in the grid interior for collision transfer")
    prev_tag = np.zeros(len(positions), np.int8) if previous is None else previous.tag
    _, idx, w, _ = stencil(jnp.asarray(positions), cgrid.grid)
    aff, tag, dist, nrm, _ = cgrid.flat()
    A, d, n, T, _ = transfer_kernel(w, aff[idx], tag[idx], dist[idx], nrm[idx], jnp.asarray(prev_tag))
    A = np.asarray(A)
    return ParticleCollisionState(A, np.asarray(d), np.asarray(T), np.asarray(n), A.copy())
