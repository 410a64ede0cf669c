"""Uniform cell-centred grids on square boxes and finite-difference helpers.

Fields are stored as arrays indexed ``f[i, j, ...]`` with ``x1 = c[i]`` and
``x2 = c[j]``.  Vector fields carry a trailing axis of length 2 and matrix
fields two trailing axes with ``G[..., i, j] = d_j u^i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    n: int
    half_width: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs at least two cells per side")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def origin(self) -> float:
        return -self.half_width + 0.5 * self.spacing

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    def coords(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.coords()
        return np.meshgrid(c, c, indexing="ij")

    def points(self) -> np.ndarray:
        x1, x2 = self.mesh()
        return np.stack([x1, x2], axis=-1)

    def extended(self, factor: int) -> "Grid":
        """Same spacing, box enlarged by an integer factor about the origin."""
        return Grid(self.n * factor, self.half_width * factor)

    def refined(self) -> "Grid":
        return Grid(2 * self.n, self.half_width)

    def to_index(self, x: np.ndarray) -> np.ndarray:
        """Fractional grid index of physical coordinates."""
        return (np.asarray(x, dtype=float) - self.origin) / self.spacing


def _d(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    out = np.gradient(f, h, axis=axis, edge_order=2)
    n = f.shape[axis]
    if n < 5:
        return out
    sl = [slice(None)] * f.ndim

    def s(a, b):
        q = list(sl)
        q[axis] = slice(a, b)
        return tuple(q)

    inner = (-f[s(4, n)] + 8.0 * f[s(3, n - 1)] - 8.0 * f[s(1, n - 3)] + f[s(0, n - 4)]) / (12.0 * h)
    out[s(2, n - 2)] = inner
    return out


def d1(f: np.ndarray, h: float) -> np.ndarray:
    """4th-order centred derivative along x1 (2nd order in the two edge rows)."""
    return _d(f, h, 0)


def d2(f: np.ndarray, h: float) -> np.ndarray:
    return _d(f, h, 1)


def divergence(v: np.ndarray, h: float) -> np.ndarray:
    return d1(v[..., 0], h) + d2(v[..., 1], h)


def curl(v: np.ndarray, h: float) -> np.ndarray:
    return d1(v[..., 1], h) - d2(v[..., 0], h)


def jacobian(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty(v.shape[:2] + (2, 2))
    for i in range(2):
        out[..., i, 0] = d1(v[..., i], h)
        out[..., i, 1] = d2(v[..., i], h)
    return out


def perp(v: np.ndarray) -> np.ndarray:
    """Rotation by +pi/2: (v1, v2) -> (-v2, v1)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


J = np.array([[0.0, -1.0], [1.0, 0.0]])
