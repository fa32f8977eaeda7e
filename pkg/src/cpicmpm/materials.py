"""Constitutive models: Kirchhoff stress and plastic return mappings.

All kernels are written in jax.numpy and act on batches of 3x3 matrices so the
engine can differentiate through them. ``stress`` and ``return_map`` are thin
numpy-facing wrappers around the same kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar

import jax
import jax.numpy as jnp
import numpy as np

from .errors import BoundsError, NumericalDegeneracyError

INV_GAP_CLAMP = 1e6
LOG_BOUNDS = (0.0, 7.0)
FRICTION_BOUNDS = (5.0, 85.0)
POISSON_BOUNDS = (0.01, 0.49)

# return-map case codes
ELASTIC, PLASTIC, APEX = 0, 1, 2


def _check_positive(obj, *names):
    for n in names:
        if not getattr(obj, n) > 0:
            raise ValueError(f"{type(obj).__name__}.{n} must be positive, got {getattr(obj, n)!r}")


def _check_poisson(nu):
    if not 0.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {nu!r}")


@dataclass(frozen=True)
class Newtonian:
    """Weakly compressible viscous fluid: viscosity mu [Pa s], bulk modulus kappa [Pa]."""

    mu: float
    kappa: float
    kind: ClassVar[str] = "newtonian"
    identified: ClassVar[tuple] = ("mu", "kappa")

    def __post_init__(self):
        _check_positive(self, "mu", "kappa")


@dataclass(frozen=True)
class NonNewtonian:
    """Bingham viscoplastic solid: shear modulus mu, bulk modulus kappa, yield stress tau_y, plastic viscosity eta."""

    mu: float
    kappa: float
    tau_y: float
    eta: float
    kind: ClassVar[str] = "non_newtonian"
    identified: ClassVar[tuple] = ("mu", "kappa", "tau_y", "eta")

    def __post_init__(self):
        _check_positive(self, "mu", "kappa", "tau_y", "eta")


@dataclass(frozen=True)
class Granular:
    """Drucker-Prager sand; only the friction angle (degrees) is identified.

    youngs and poisson set the elastic response and are held fixed.
    """

    theta_fric: float
    youngs: float = 2e5
    poisson: float = 0.3
    kind: ClassVar[str] = "granular"
    identified: ClassVar[tuple] = ("theta_fric",)

    def __post_init__(self):
        if not 0.0 < self.theta_fric < 90.0:
            raise ValueError(f"friction angle must lie in (0, 90) degrees, got {self.theta_fric!r}")
        _check_positive(self, "youngs")
        _check_poisson(self.poisson)


@dataclass(frozen=True)
class Elastic:
    E: float
    nu: float
    kind: ClassVar[str] = "elastic"
    identified: ClassVar[tuple] = ("E", "nu")

    def __post_init__(self):
        _check_positive(self, "E")
        _check_poisson(self.nu)


@dataclass(frozen=True)
class Plasticine:
    """Von Mises plasticity on Hencky strain."""

    E: float
    nu: float
    tau_y: float
    kind: ClassVar[str] = "plasticine"
    identified: ClassVar[tuple] = ("E", "nu", "tau_y")

    def __post_init__(self):
        _check_positive(self, "E", "tau_y")
        _check_poisson(self.nu)


MaterialModel = Newtonian | NonNewtonian | Granular | Elastic | Plasticine
MODELS = {cls.kind: cls for cls in (Newtonian, NonNewtonian, Granular, Elastic, Plasticine)}
LINEAR_PARAMS = {"theta_fric", "nu"}


# ---------------------------------------------------------------------------
# parameter vectors


def _bounds_for(name):
    if name == "theta_fric":
        return FRICTION_BOUNDS
    if name == "nu":
        return POISSON_BOUNDS
    return LOG_BOUNDS


def coordinate_name(name: str) -> str:
    return name if name in LINEAR_PARAMS else f"log10({name})"


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Optimization coordinates of a material: log10 for moduli, viscosities and stresses."""

    kind: str
    values: np.ndarray
    names: tuple
    bounds: tuple
    fixed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))
        if len(self.values) != len(self.names):
            raise ValueError("values and names differ in length")

    def with_values(self, values) -> ParameterVector:
        return ParameterVector(self.kind, np.asarray(values, dtype=float), self.names, self.bounds, self.fixed)

    def clamp(self) -> ParameterVector:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return self.with_values(np.clip(self.values, lo, hi))

    @property
    def labels(self) -> list[str]:
        return [coordinate_name(n) for n in self.names]

    def __eq__(self, other):
        return (
            isinstance(other, ParameterVector)
            and self.kind == other.kind
            and self.names == other.names
            and self.fixed == other.fixed
            and np.array_equal(self.values, other.values)
        )


def pack(model) -> ParameterVector:
    names = type(model).identified
    values, bounds = [], []
    for n in names:
        raw = float(getattr(model, n))
        v = raw if n in LINEAR_PARAMS else math.log10(raw)
        b = _bounds_for(n)
        if not b[0] <= v <= b[1]:
            raise BoundsError(coordinate_name(n), v, b)
        values.append(v)
        bounds.append(b)
    fixed = tuple((f.name, getattr(model, f.name)) for f in fields(model) if f.name not in names)
    return ParameterVector(model.kind, np.array(values), tuple(names), tuple(bounds), fixed)


def unpack(vector: ParameterVector):
    kwargs = dict(vector.fixed)
    for n, v, b in zip(vector.names, vector.values, vector.bounds):
        if not b[0] <= v <= b[1]:
            raise BoundsError(coordinate_name(n), float(v), b)
        kwargs[n] = float(v) if n in LINEAR_PARAMS else float(10.0**v)
    return MODELS[vector.kind](**kwargs)


def physical(vector: ParameterVector, theta=None) -> dict:
    """Physical parameter values as jax scalars; differentiable in ``theta`` (optimization coordinates)."""
    theta = jnp.asarray(vector.values if theta is None else theta)
    out = {k: jnp.asarray(v, dtype=theta.dtype) for k, v in vector.fixed}
    for i, n in enumerate(vector.names):
        out[n] = theta[i] if n in LINEAR_PARAMS else 10.0 ** theta[i]
    return out


def lame(kind: str, p: dict):
    """(mu_L, lambda_L) of the elastic part of the model."""
    if kind == "non_newtonian":
        return p["mu"], p["kappa"] - 2.0 * p["mu"] / 3.0
    if kind == "granular":
        E, nu = p["youngs"], p["poisson"]
    else:
        E, nu = p["E"], p["nu"]
    return E / (2.0 * (1.0 + nu)), E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


# ---------------------------------------------------------------------------
# differentiable SVD pieces


def _t(a):
    return jnp.swapaxes(a, -1, -2)


def _svd_rotations(F):
    U, s, Vh = jnp.linalg.svd(F, full_matrices=False)
    V = _t(Vh)
    du = jnp.sign(jnp.linalg.det(U))
    dv = jnp.sign(jnp.linalg.det(V))
    U = U.at[..., :, 2].multiply(du[..., None])
    V = V.at[..., :, 2].multiply(dv[..., None])
    s = s.at[..., 2].multiply(du * dv)
    return U, s, V


@jax.custom_vjp
def svd3(F):
    """F = U diag(s) V^T with U, V proper rotations (s[2] negative for inverted F)."""
    return _svd_rotations(F)


def _svd3_fwd(F):
    out = _svd_rotations(F)
    return out, out


def _svd3_bwd(res, g):
    U, s, V = res
    gU, gs, gV = g
    s2 = s**2
    gap = s2[..., None, :] - s2[..., :, None]  # [i, j] = s_j^2 - s_i^2
    small = jnp.abs(gap) * INV_GAP_CLAMP < 1.0
    inv = jnp.where(small, jnp.sign(gap) * INV_GAP_CLAMP, 1.0 / jnp.where(small, 1.0, gap))
    inv = inv * (1.0 - jnp.eye(3))
    J = _t(U) @ gU
    K = _t(V) @ gV
    S = s[..., None, :] * jnp.eye(3)  # diag(s)
    inner = (inv * (J - _t(J))) @ S + gs[..., None, :] * jnp.eye(3) + S @ (inv * (K - _t(K)))
    return (U @ inner @ _t(V),)


svd3.defvjp(_svd3_fwd, _svd3_bwd)


@jax.custom_vjp
def polar_rotation(F):
    """Rotation factor R of the polar decomposition F = R S."""
    U, _, V = _svd_rotations(F)
    return U @ _t(V)


def _polar_fwd(F):
    U, s, V = _svd_rotations(F)
    return U @ _t(V), (U, s, V)


def _polar_bwd(res, G):
    U, s, V = res
    M = _t(U) @ G @ V
    X = (M - _t(M)) / (s[..., :, None] + s[..., None, :])
    return (U @ X @ _t(V),)


polar_rotation.defvjp(_polar_fwd, _polar_bwd)


# ---------------------------------------------------------------------------
# kernels


def kirchhoff_stress(kind: str, p: dict, F, strain_rate=None):
    """Kirchhoff stress for a batch of elastic deformation gradients F (N, 3, 3)."""
    eye = jnp.eye(3, dtype=F.dtype)
    J = jnp.linalg.det(F)
    if kind == "newtonian":
        tau = (p["kappa"] * (J - 1.0) * J)[..., None, None] * eye
        if strain_rate is not None:
            tau = tau + 2.0 * p["mu"] * strain_rate
        return tau
    mu, lam = lame(kind, p)
    R = polar_rotation(F)
    return 2.0 * mu * (F - R) @ _t(F) + (lam * J * (J - 1.0))[..., None, None] * eye


def _safe_norm(v):
    n2 = jnp.sum(v * v, axis=-1)
    pos = n2 > 0
    return jnp.where(pos, jnp.sqrt(jnp.where(pos, n2, 1.0)), 0.0)


def _compose(U, e, V):
    return (U * jnp.exp(e)[..., None, :]) @ _t(V)


def _choose(computed, case, use_case):
    if case is None:
        return computed
    return case if use_case is None else jnp.where(use_case, case, computed).astype(jnp.int8)


def return_mapping(kind: str, p: dict, F, dt, case=None, use_case=None):
    """Project trial elastic deformation gradients F (N, 3, 3) back to the admissible set.

    Returns (F_new, computed_case). Passing ``case`` freezes the branch selection;
    with a traced boolean ``use_case`` the frozen case only applies where it is true.
    """
    n = F.shape[0]
    if kind == "elastic":
        return F, jnp.zeros(n, jnp.int8) if case is None else case
    if kind == "newtonian":
        J = jnp.linalg.det(F)
        return jnp.cbrt(J)[:, None, None] * jnp.eye(3, dtype=F.dtype), jnp.zeros(n, jnp.int8) if case is None else case

    mu, lam = lame(kind, p)
    U, s, V = svd3(F)
    eps = jnp.log(jnp.abs(s))
    tr = jnp.sum(eps, axis=-1, keepdims=True)
    dev = eps - tr / 3.0
    nrm = _safe_norm(dev)[:, None]
    safe = jnp.where(nrm > 0, nrm, 1.0)

    if kind in ("plasticine", "non_newtonian"):
        radius = p["tau_y"] / (2.0 * mu)
        computed = (nrm[:, 0] > radius).astype(jnp.int8)
        chosen = _choose(computed, case, use_case)
        if kind == "plasticine":
            target = radius
        else:
            target = radius + (nrm - radius) / (1.0 + 2.0 * mu * dt / p["eta"])
        e_new = tr / 3.0 + dev * (target / safe)
        F_new = jnp.where((chosen == PLASTIC)[:, None, None], _compose(U, e_new, V), F)
        return F_new, computed if case is None or use_case is not None else case

    if kind == "granular":
        sin = jnp.sin(jnp.deg2rad(p["theta_fric"]))
        alpha = math.sqrt(2.0 / 3.0) * 2.0 * sin / (3.0 - sin)
        dgamma = nrm + (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr * alpha
        computed = jnp.where(
            tr[:, 0] > 0, APEX, jnp.where(dgamma[:, 0] > 0, PLASTIC, ELASTIC)
        ).astype(jnp.int8)
        chosen = _choose(computed, case, use_case)
        e_cone = eps - dev * (dgamma / safe)
        F_cone = _compose(U, e_cone, V)
        F_apex = U @ _t(V)
        F_new = jnp.where(
            (chosen == APEX)[:, None, None], F_apex, jnp.where((chosen == PLASTIC)[:, None, None], F_cone, F)
        )
        return F_new, computed if case is None or use_case is not None else case

    raise ValueError(f"unknown material kind {kind!r}")


def yield_value(model, F) -> np.ndarray:
    """Yield function on Hencky strain: <= 0 means admissible (Plasticine and Granular)."""
    p = physical(pack(model))
    mu, lam = lame(model.kind, p)
    F = jnp.asarray(np.asarray(F, dtype=float).reshape(-1, 3, 3))
    _, s, _ = svd3(F)
    eps = jnp.log(jnp.abs(s))
    tr = jnp.sum(eps, -1)
    nrm = _safe_norm(eps - tr[:, None] / 3.0)
    if model.kind == "plasticine":
        return np.asarray(nrm - p["tau_y"] / (2.0 * mu))
    if model.kind == "granular":
        sin = jnp.sin(jnp.deg2rad(p["theta_fric"]))
        alpha = math.sqrt(2.0 / 3.0) * 2.0 * sin / (3.0 - sin)
        return np.asarray(nrm + (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr * alpha)
    raise ValueError(f"no yield surface for {model.kind}")


def yield_radius(model) -> float:
    if model.kind == "plasticine":
        mu, _ = lame("plasticine", physical(pack(model)))
        return float(model.tau_y / (2.0 * mu))
    raise ValueError(f"no von Mises radius for {model.kind}")


# ---------------------------------------------------------------------------
# numpy-facing wrappers


def _batched(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 3, 3), a.ndim == 2


def _check_invertible(F):
    det = np.linalg.det(F)
    bad = np.flatnonzero(~(det > 0))
    if len(bad):
        raise NumericalDegeneracyError(bad)


def stress(model, F_E, strain_rate=None) -> np.ndarray:
    """Kirchhoff stress of one (3, 3) or many (N, 3, 3) elastic deformation gradients."""
    F, single = _batched(F_E)
    _check_invertible(F)
    D = None if strain_rate is None else jnp.asarray(np.asarray(strain_rate, dtype=float).reshape(-1, 3, 3))
    tau = np.asarray(kirchhoff_stress(model.kind, physical(pack(model)), jnp.asarray(F), D))
    return tau[0] if single else tau


def return_map(model, F_E_trial, dt: float = 0.0):
    """Return (F_E, case) where case marks elastic (0), plastic (1) or apex (2) projection."""
    F, single = _batched(F_E_trial)
    _check_invertible(F)
    F_new, case = return_mapping(model.kind, physical(pack(model)), jnp.asarray(F), dt)
    F_new, case = np.asarray(F_new), np.asarray(case)
    return (F_new[0], case[0]) if single else (F_new, case)
