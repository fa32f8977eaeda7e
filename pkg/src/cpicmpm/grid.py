"""Background grid description and the quadratic B-spline transfer stencil."""

from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from .errors import ConfigurationError

# 27 offsets of the 3x3x3 stencil, x-major.
OFFSETS = np.stack(np.meshgrid(np.arange(3), np.arange(3), np.arange(3), indexing="ij"), -1).reshape(27, 3)


@dataclass(frozen=True)
class GridSpec:
    """Uniform node lattice: node (i, j, k) sits at origin + (i, j, k) * dx."""

    resolution: tuple[int, int, int] = (64, 64, 64)
    dx: float = 1.0 / 64
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or min(res) < 5:
            raise ConfigurationError(f"grid resolution must be three integers >= 5, got {self.resolution}")
        if not self.dx > 0:
            raise ConfigurationError(f"grid dx must be positive, got {self.dx}")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def cube(cls, n: int, size: float = 1.0) -> GridSpec:
        return cls((n, n, n), size / n)

    @property
    def num_nodes(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    @property
    def strides(self) -> np.ndarray:
        _, ny, nz = self.resolution
        return np.array([ny * nz, nz, 1])

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.resolution) - 1) * self.dx

    def node_positions(self) -> np.ndarray:
        """All node positions, shape (nx, ny, nz, 3)."""
        axes = [o + self.dx * np.arange(n) for o, n in zip(self.origin, self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1)

    def flat_index(self, ijk):
        return (np.asarray(ijk) * self.strides).sum(-1)

    def stencil_base(self, x) -> np.ndarray:
        """Lowest-corner node index of the 3x3x3 stencil around each point."""
        x = np.asarray(x, dtype=float)
        return np.floor((x - np.asarray(self.origin)) / self.dx - 0.5).astype(np.int64)

    def interior_mask(self, x) -> np.ndarray:
        """True where the full 3x3x3 stencil lies on the grid."""
        base = self.stencil_base(x)
        hi = np.asarray(self.resolution) - 3
        return np.all((base >= 0) & (base <= hi), axis=-1)


def bspline_weights(fx):
    """Per-axis quadratic B-spline weights, fx is the position relative to the base node in cells.

    Returns an array of shape fx.shape[:-1] + (3, 3): [..., node, axis].
    """
    return jnp.stack([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2], axis=-2)


def stencil(x, grid: GridSpec, base=None):
    """Transfer stencil for particle positions x of shape (N, 3).

    Returns (base, idx, w, dpos): integer base node (N, 3), flat node indices (N, 27),
    weights (N, 27) and node-minus-particle offsets (N, 27, 3) in world units.
    ``base`` may be supplied to freeze the cell assignment.
    """
    origin = jnp.asarray(grid.origin)
    xl = (x - origin) / grid.dx
    if base is None:
        base = jnp.floor(xl - 0.5).astype(jnp.int32)
    fx = xl - base
    w3 = bspline_weights(fx)
    off = jnp.asarray(OFFSETS)
    w = w3[:, off[:, 0], 0] * w3[:, off[:, 1], 1] * w3[:, off[:, 2], 2]
    nodes = base[:, None, :] + off[None]
    idx = (nodes * jnp.asarray(grid.strides, dtype=jnp.int32)).sum(-1)
    dpos = (off[None].astype(fx.dtype) - fx[:, None, :]) * grid.dx
    return base, idx, w, dpos
