"""Reverse-mode gradients of trajectory losses through the MPM rollout.

The forward pass checkpoints every substep input together with the discrete
decisions it produced. The backward pass walks the tape in reverse, taking a
vjp of each substep with those decisions frozen, and injects the loss
adjoint at frame boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .engine import Decisions, Dyn, MaterialState, Scene, Simulator, Trajectory
from .errors import DivergenceError, MPMError

LossFn = Callable[[jax.Array], jax.Array]


class FrozenBranchError(MPMError):
    """Backward replay took a different discrete branch than the recorded forward pass."""


@dataclass
class Tape:
    sim: Simulator
    theta: np.ndarray
    frames: int
    dyn: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    scenes: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    frame_ends: list = field(default_factory=list)
    final: Dyn | None = None

    def __len__(self):
        return len(self.dyn)

    def positions(self) -> np.ndarray:
        if not self.dyn:
            # dt = 0: every frame repeats the initial positions
            return np.repeat(np.asarray(self.final.x)[None], self.frames, axis=0)
        out = np.empty((self.frames, self.dyn[0].x.shape[0], 3))
        for f, k in enumerate(self.frame_ends):
            nxt = self.dyn[k + 1] if k + 1 < len(self.dyn) else self.final
            out[f] = np.asarray(nxt.x)
        return out

    def replay(self) -> np.ndarray:
        """Re-run every recorded substep with its frozen decisions; returns frame positions."""
        th = jnp.asarray(self.theta)
        out = []
        ends = set(self.frame_ends)
        for k in range(len(self)):
            dyn, *_ = self.sim.substep_raw(self.dyn[k], self.tags[k], th, self.scenes[k], self.decisions[k])
            if k in ends:
                out.append(np.asarray(dyn.x))
        return np.stack(out) if out else np.zeros((0, 0, 3))


def record(sim: Simulator, initial: MaterialState, frames: int, theta=None) -> Tape:
    """Forward rollout that checkpoints every substep."""
    th = sim.theta(theta)
    tape = Tape(sim, np.asarray(th), frames)
    cfg = sim.config
    if frames == 0 or cfg.dt == 0.0:
        tape.final = sim.to_dyn(initial)
        return tape
    dyn = sim.to_dyn(initial)
    tag = jnp.asarray(initial.collision.tag)
    k = 0
    for _ in range(frames):
        for _ in range(cfg.substeps):
            sim.check_domain(dyn.x)
            scene = sim.scene(initial, k * cfg.dt)
            tape.dyn.append(dyn)
            tape.tags.append(tag)
            tape.scenes.append(scene)
            dyn, tag, dec, _ = sim.substep_raw(dyn, tag, th, scene)
            tape.decisions.append(dec)
            k += 1
        if not np.all(np.isfinite(np.asarray(dyn.x))):
            raise DivergenceError()
        tape.frame_ends.append(k - 1)
    tape.final = dyn
    return tape


def _backward_fn(sim: Simulator):
    fn = getattr(sim, "_backward", None)
    if fn is not None:
        return fn
    kernels = sim.kernels

    def bwd(dyn: Dyn, tag, theta, scene: Scene, dec: Decisions, cot: Dyn):
        def f(d, th):
            out, _, computed, _ = kernels.substep(d, tag, th, scene, dec, jnp.asarray(True))
            return out, computed

        _, vjp, computed = jax.vjp(f, dyn, theta, has_aux=True)
        g_dyn, g_theta = vjp(cot)
        same = jnp.stack([jnp.all(a == b) for a, b in zip(computed, dec)])
        return g_dyn, g_theta, same

    sim._backward = jax.jit(bwd)
    return sim._backward


def backward(tape: Tape, dL_dpos, strict: bool = True) -> np.ndarray:
    """Accumulate dL/dtheta given the loss gradient w.r.t. the frame positions."""
    sim = tape.sim
    th = jnp.asarray(tape.theta)
    g_theta = jnp.zeros_like(th)
    if not len(tape):
        return np.asarray(g_theta)
    bwd = _backward_fn(sim)
    inject = {k: f for f, k in enumerate(tape.frame_ends)}
    dL_dpos = jnp.asarray(dL_dpos)
    cot = jax.tree_util.tree_map(jnp.zeros_like, tape.final)
    for k in range(len(tape) - 1, -1, -1):
        if k in inject:
            cot = cot._replace(x=cot.x + dL_dpos[inject[k]])
        cot, g, same = bwd(tape.dyn[k], tape.tags[k], th, tape.scenes[k], tape.decisions[k], cot)
        if strict and not bool(jnp.all(same)):
            bad = [name for name, ok in zip(Decisions._fields, np.asarray(same)) if not ok]
            raise FrozenBranchError(f"substep {k}: replayed decisions differ from the forward pass ({', '.join(bad)})")
        g_theta = g_theta + g
    g_theta = np.asarray(g_theta)
    if not np.all(np.isfinite(g_theta)):
        raise DivergenceError("gradient is not finite; reduce dt or k_h")
    return g_theta


def grad_rollout(
    sim: Simulator, initial: MaterialState, frames: int, loss: LossFn, theta=None, strict: bool = True
) -> tuple[float, np.ndarray]:
    """(loss value, dL/dtheta) for a rollout; ``loss`` maps (frames, N, 3) positions to a scalar."""
    tape = record(sim, initial, frames, theta)
    if frames == 0:
        return 0.0, np.zeros_like(tape.theta)
    pos = jnp.asarray(tape.positions())
    value, dL = jax.value_and_grad(loss)(pos)
    value = float(value)
    if not np.isfinite(value):
        raise DivergenceError()
    if sim.config.dt == 0.0:
        return value, np.zeros_like(tape.theta)
    return value, backward(tape, dL, strict)


def rollout_loss(sim: Simulator, initial: MaterialState, frames: int, loss: LossFn, theta=None) -> float:
    if frames == 0:
        return 0.0
    traj = sim.rollout(initial, frames, theta)
    return float(loss(jnp.asarray(traj.positions)))


def finite_diff_gradient(
    sim: Simulator, initial: MaterialState, frames: int, loss: LossFn, theta=None, h: float = 1e-3
) -> np.ndarray:
    """Central differences in optimization coordinates (2 rollouts per parameter)."""
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    th = np.asarray(sim.theta(theta), dtype=float)
    grad = np.zeros_like(th)
    for i in range(len(th)):
        e = np.zeros_like(th)
        e[i] = h
        grad[i] = (rollout_loss(sim, initial, frames, loss, th + e) - rollout_loss(sim, initial, frames, loss, th - e)) / (2 * h)
    return grad


def gradient_agreement(adjoint, fd, rel_tol: float = 1e-2, abs_tol: float = 1e-6, small: float = 1e-4):
    """Per-component pass flags: relative error below rel_tol, or absolute below abs_tol for tiny gradients."""
    adjoint, fd = np.asarray(adjoint), np.asarray(fd)
    scale = np.maximum(np.abs(adjoint), np.abs(fd))
    rel = np.abs(adjoint - fd) / np.where(scale > 0, scale, 1.0)
    tiny = scale < small
    return np.where(tiny, np.abs(adjoint - fd) < abs_tol, rel < rel_tol), rel


def trajectory_of(tape: Tape) -> Trajectory:
    return Trajectory(tape.positions(), tape.sim.config.frame_dt)
