"""Trajectory losses, point-cloud metrics and the Adam identification loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import materials
from .autodiff import grad_rollout
from .engine import MaterialState, Simulator, Trajectory
from .errors import ConfigurationError, DimensionError, DivergenceError, NumericalDegeneracyError, OutOfDomainError

log = logging.getLogger(__name__)

EMD_MAX_POINTS = 512
CHAMFER_SCALE = 1e3


def _positions(t) -> np.ndarray:
    return np.asarray(t.positions if isinstance(t, Trajectory) else t, dtype=float)


def loss_mse(sim, ref) -> float:
    a, b = _positions(sim), _positions(ref)
    if a.shape != b.shape:
        raise DimensionError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.sum((a - b) ** 2, axis=-1)))


def mse_loss(ref):
    """Differentiable particle-wise MSE against a reference trajectory."""
    ref = jnp.asarray(_positions(ref))

    def loss(pos):
        if pos.shape != ref.shape:
            raise DimensionError(f"trajectory shapes differ: {pos.shape} vs {ref.shape}")
        return jnp.mean(jnp.sum((pos - ref) ** 2, axis=-1))

    return loss


def _point_set(a, name):
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    if not len(a):
        raise DimensionError(f"point set {name} is empty")
    return a


def _nearest_sq(src, dst):
    # kd-tree candidates, distances recomputed exactly as a brute-force pass would
    k = min(4, len(dst))
    _, idx = cKDTree(dst).query(src, k=k)
    idx = idx.reshape(len(src), k)
    d2 = np.sum((src[:, None, :] - dst[idx]) ** 2, axis=-1)
    return d2.min(axis=1)


def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbour squared distance, times 1e3."""
    a, b = _point_set(a, "a"), _point_set(b, "b")
    return float(0.5 * (np.mean(_nearest_sq(a, b)) + np.mean(_nearest_sq(b, a))) * CHAMFER_SCALE)


def emd(a, b, max_points: int = EMD_MAX_POINTS, seed: int = 0) -> float:
    """Mean Euclidean distance under the optimal one-to-one assignment."""
    a, b = _point_set(a, "a"), _point_set(b, "b")
    n = min(len(a), len(b), max_points)
    # same seed for both sets: equal-size inputs keep matching indices
    if len(a) > n:
        a = a[np.sort(np.random.default_rng(seed).choice(len(a), n, replace=False))]
    if len(b) > n:
        b = b[np.sort(np.random.default_rng(seed).choice(len(b), n, replace=False))]
    cost = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def trajectory_metrics(a: Trajectory, b: Trajectory, seed: int = 0) -> np.ndarray:
    """Per-frame (chamfer, emd) rows."""
    pa, pb = _positions(a), _positions(b)
    if len(pa) != len(pb):
        raise DimensionError(f"frame counts differ: {len(pa)} vs {len(pb)}")
    return np.array([[chamfer(x, y), emd(x, y, seed=seed)] for x, y in zip(pa, pb)])


# ---------------------------------------------------------------------------
# identification


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 300
    tol: float = 1e-4
    window: int = 20
    atol: float = 1e-12
    lr_scale: dict = field(default_factory=lambda: {"theta_fric": 10.0})
    max_halvings: int = 5

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.lr <= 0 or self.max_iters < 0:
            raise ConfigurationError("learning rate must be positive and max_iters non-negative")

    def rates(self, vector: materials.ParameterVector) -> np.ndarray:
        return np.array([self.lr * self.lr_scale.get(n, 1.0) for n in vector.names])


@dataclass
class IdentificationReport:
    estimate: materials.ParameterVector
    truth: materials.ParameterVector | None
    loss_curve: list
    params_curve: list
    best_loss: float
    best_iteration: int
    wall_time: float
    stop_reason: str
    mode: str
    lr_halvings: int = 0

    @property
    def errors(self) -> dict | None:
        if self.truth is None:
            return None
        return {lab: float(100.0 * abs(e - t)) for lab, e, t in zip(self.estimate.labels, self.estimate.values, self.truth.values)}

    def to_dict(self) -> dict:
        est = materials.unpack(self.estimate)
        return {
            "kind": self.estimate.kind,
            "mode": self.mode,
            "parameters": self.estimate.labels,
            "estimate": dict(zip(self.estimate.labels, map(float, self.estimate.values))),
            "estimate_physical": {n: float(getattr(est, n)) for n in self.estimate.names},
            "truth": None if self.truth is None else dict(zip(self.truth.labels, map(float, self.truth.values))),
            "errors_x100": self.errors,
            "best_loss": self.best_loss,
            "best_iteration": self.best_iteration,
            "iterations": len(self.loss_curve),
            "stop_reason": self.stop_reason,
            "lr_halvings": self.lr_halvings,
            "wall_time_s": self.wall_time,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", *self.estimate.labels])
            for i, (loss, p) in enumerate(zip(self.loss_curve, self.params_curve)):
                w.writerow([i, repr(loss), *map(repr, p)])


_DIVERGED = (DivergenceError, NumericalDegeneracyError, OutOfDomainError)


def identify(
    guess,
    ref: Trajectory,
    sim: Simulator,
    initial: MaterialState,
    opt: OptimizerConfig | None = None,
    truth=None,
    callback=None,
) -> IdentificationReport:
    """Fit the material parameters of ``sim`` to ``ref`` starting from ``guess``.

    ``sim`` supplies the scene; only its material kind must match ``guess``.
    """
    opt = opt or OptimizerConfig()
    vec = guess if isinstance(guess, materials.ParameterVector) else materials.pack(guess)
    if vec.kind != sim.skeleton.kind:
        raise ConfigurationError(f"guess is {vec.kind} but the simulator models {sim.skeleton.kind}")
    sim = Simulator(vec, sim.colliders, sim.config, sim.planes)
    truth_vec = None if truth is None else (truth if isinstance(truth, materials.ParameterVector) else materials.pack(truth))
    loss_fn = mse_loss(ref)
    frames = ref.frames
    lo = np.array([b[0] for b in vec.bounds])
    hi = np.array([b[1] for b in vec.bounds])
    rates = opt.rates(vec)

    t0 = time.perf_counter()
    theta = vec.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    losses, params = [], []
    best, best_theta, best_it = np.inf, theta.copy(), 0
    halvings = 0
    prev = None
    reason = "max_iters"

    def adam(theta, g, m, v, step, rates):
        m = opt.beta1 * m + (1 - opt.beta1) * g
        v = opt.beta2 * v + (1 - opt.beta2) * g * g
        mh = m / (1 - opt.beta1**step)
        vh = v / (1 - opt.beta2**step)
        return np.clip(theta - rates * mh / (np.sqrt(vh) + opt.eps), lo, hi), m, v

    while True:
        try:
            loss, g = grad_rollout(sim, initial, frames, loss_fn, theta)
        except _DIVERGED as exc:
            if prev is None or halvings >= opt.max_halvings:
                reason = "diverged"
                log.warning("identification aborted: %s", exc)
                break
            halvings += 1
            rates = rates / 2
            log.info("diverged at %s, halving learning rate (%d)", theta, halvings)
            p_theta, p_g, p_m, p_v, p_step = prev
            theta, m, v = adam(p_theta, p_g, p_m, p_v, p_step, rates)
            continue
        losses.append(loss)
        params.append(theta.copy())
        it = len(losses) - 1
        if callback is not None:
            callback(it, loss, theta, g)
        if loss < best:
            best, best_theta, best_it = loss, theta.copy(), it
        if loss <= opt.atol:
            reason = "converged"
            break
        if it >= opt.window and losses[it - opt.window] > 0:
            window_best = min(losses[: it - opt.window + 1])
            if window_best - best < opt.tol * window_best:
                reason = "converged"
                break
        if it >= opt.max_iters:
            break
        step += 1
        prev = (theta.copy(), g, m.copy(), v.copy(), step)
        theta, m, v = adam(theta, g, m, v, step, rates)

    return IdentificationReport(
        vec.with_values(best_theta),
        truth_vec,
        losses,
        params,
        float(best),
        best_it,
        time.perf_counter() - t0,
        reason,
        sim.config.collision_mode,
        halvings,
    )
