"""Closed-form comparisons used by ``striated oracle`` and the test-suite."""

from __future__ import annotations

import numpy as np

from .biot_savart import VorticityField, grad_velocity, lattice_velocity
from .grid import Grid
from .oracles import (ShearProfile, patch_area_fraction, patch_profile, radial_gradu, radial_u,
                      shear_fields)
from .striated_algebra import (correction_matrix_2d, partition_of_unity_2d, select_members)


def probe_points(count: int = 50, seed: int = 0, radius: float = 1.0, gap: float = 0.1,
                 r_max: float = 1.8) -> np.ndarray:
    """Half inside, half outside the disc, at least ``gap`` from its edge."""
    rng = np.random.default_rng(seed)
    k_in = count // 2
    r_in = rng.uniform(0.05, radius - gap, k_in)
    r_out = rng.uniform(radius + gap, r_max, count - k_in)
    r = np.concatenate([r_in, r_out])
    th = rng.uniform(0, 2 * np.pi, count)
    return r[:, None] * np.stack([np.cos(th), np.sin(th)], -1)


def radial_gradient_check(n: int = 256, half_width: float = 2.0, count: int = 50, seed: int = 0):
    """grad u of the unit patch at probe points vs the radial closed form.

    Error per probe: max entry of |numeric - exact| over the largest exact
    entry at that probe.
    """
    g = Grid(n, half_width)
    w = VorticityField(g, patch_area_fraction(g, 1.0))
    pts = probe_points(count, seed)
    prof = patch_profile(1.0)
    inside = lambda x: (np.linalg.norm(np.atleast_2d(x), axis=-1) < 1.0).astype(float)
    num = grad_velocity(w, pts, split_radius=0.05, omega_at=inside).grad
    ex = radial_gradu(prof, pts)
    err = np.max(np.abs(num - ex), axis=(-2, -1)) / np.max(np.abs(ex), axis=(-2, -1))
    return pts, num, ex, err


def _radial(n: int):
    pts, num, ex, err = radial_gradient_check(n)
    header = ["x1", "x2", "num11", "num12", "num21", "num22", "ex11", "ex12", "ex21", "ex22", "rel_err"]
    rows = [[*p, *a.ravel(), *b.ravel(), e] for p, a, b, e in zip(pts, num, ex, err)]
    return header, rows, bool(np.all(err <= 0.02))


def patch_velocity_check(n: int = 256, half_width: float = 2.0, r_lo: float = 0.25, r_hi: float = 3.0):
    """Lattice velocity of the unit patch on the doubled box vs the closed form.

    Returns radii, |error| and the relative L-infinity error (max error over
    max |u| on the annulus)."""
    g = Grid(n, half_width)
    u = lattice_velocity(patch_area_fraction(g, 1.0), g, 2)
    P = g.extended(2).points()
    r = np.linalg.norm(P, axis=-1)
    m = (r >= r_lo) & (r <= r_hi)
    ex = radial_u(patch_profile(1.0), P[m])
    e = np.linalg.norm(u[m] - ex, axis=-1)
    return r[m], e, float(e.max() / np.max(np.linalg.norm(ex, axis=-1)))


def _patch(n: int):
    r, e, rel = patch_velocity_check(n)
    edges = np.linspace(0.25, 3.0, 12)
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (r >= a) & (r < b)
        rows.append([a, b, float(e[m].max())])
    rows.append([0.25, 3.0, rel])
    return ["r_lo", "r_hi", "max_abs_err"], rows, rel <= 0.01


def shear_check(n: int = 64, half_width: float = 1.0):
    """grad u - omega A on a shear flow with family {e_1}; exact zero expected."""
    prof = ShearProfile(lambda s: np.sin(3 * s) + s ** 2, -0.8, 0.8)
    g = Grid(n, half_width)
    P = g.points()
    f = shear_fields(prof, P)
    e1 = np.zeros_like(P)
    e1[..., 0] = 1.0
    part = partition_of_unity_2d(0.25, half_width, spacing=g.spacing)
    select_members(part, [e1], P, 1.0)
    cm = correction_matrix_2d([e1], part, P, I_value=1.0)
    res = f["gradu"] - f["omega"][..., None, None] * cm.A
    return float(np.max(np.abs(res))), float(np.max(np.abs(f["gradu"] @ e1[..., None])))


def _shear(n: int):
    res, ygu = shear_check(n)
    return ["corrected_residual", "Ygradu_max"], [[res, ygu]], res <= 1e-12 and ygu == 0.0


ORACLES = {"radial": _radial, "patch": _patch, "shear": _shear}
