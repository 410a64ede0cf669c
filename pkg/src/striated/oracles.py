"""Closed-form stationary solutions used as ground truth.

Radial vorticity omega(x) = g(|x|) gives u = (-x2, x1) G(r) / r^2 with
G(r) = int_0^r rho g(rho) d rho.  With S = [[2 x1 x2, x2^2 - x1^2],
[x2^2 - x1^2, -2 x1 x2]] and N = [[-x1 x2, -x2^2], [x1^2, x1 x2]]:

    grad u = G / r^4 S + g / r^2 N,    A = chi / r^2 N.

Shear flows u = (C - int_c^x2 W, 0) have grad u = [[0, -W], [0, 0]],
omega = W and A = [[0, -1], [0, 0]].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .grid import Grid, J
from .kernels import _rho_raw, eval_a, mollifier_constant


@dataclass
class RadialProfile:
    """Piecewise-smooth radial vorticity profile g with break points.

    ``breaks`` are the radii where g may jump; g vanishes beyond the last
    break.  G is tabulated per smooth piece from adaptive quadrature and
    interpolated with cubic Hermite splines using G' = r g(r).
    """

    g: Callable
    breaks: list
    name: str = "radial"
    nodes: int = 400
    _pieces: list = field(default_factory=list, repr=False)
    _totals: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        b = [0.0] + [float(v) for v in self.breaks]
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("breaks must be increasing and positive")
        acc = 0.0
        for a, c in zip(b, b[1:]):
            r = np.linspace(a, c, self.nodes)
            tiny = 1e-12 * max(1.0, c)
            inner = np.clip(r, a + tiny, c - tiny)
            dG = r * self._g(inner)
            vals = [acc]
            for r0, r1 in zip(r, r[1:]):
                v, _ = integrate.quad(lambda t: t * float(self._g(np.array(t))), r0, r1,
                                      epsabs=1e-14, epsrel=1e-12)
                vals.append(vals[-1] + v)
            self._pieces.append((a, c, CubicHermiteSpline(r, np.array(vals), dG)))
            acc = vals[-1]
            self._totals.append(acc)
        self.support = b[-1]

    def _g(self, r):
        return np.asarray(self.g(np.asarray(r, dtype=float)), dtype=float)

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.where(r < self.support, self._g(np.minimum(r, self.support)), 0.0)

    def G(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, self._totals[-1])
        for a, c, sp in self._pieces:
            m = (r >= a) & (r < c)
            out[m] = sp(r[m])
        return out

    @property
    def mass(self) -> float:
        return 2.0 * np.pi * self._totals[-1]


def patch_profile(radius: float = 1.0) -> RadialProfile:
    return RadialProfile(lambda r: np.ones_like(r, dtype=float), [radius], f"patch({radius})")


def ring_profile(r0: float, r1: float) -> RadialProfile:
    return RadialProfile(lambda r: np.where(np.asarray(r) >= r0, 1.0, 0.0), [r0, r1],
                         f"ring({r0},{r1})")


def smooth_profile(radius: float = 1.0, power: int = 4) -> RadialProfile:
    """g(r) = (1 - (r / radius)^2)^power, a resolved C^(power-1) profile."""
    return RadialProfile(lambda r: (1.0 - (np.asarray(r) / radius) ** 2) ** power, [radius],
                         f"smooth({radius},{power})")


def mollified_patch_values(r, radius: float, eps: float) -> np.ndarray:
    """(rho_eps * chi_{B_radius})(x) at |x| = r, by radial quadrature.

    The circle of radius t about x meets B_radius in an arc of angle
    2 arccos((r^2 + t^2 - radius^2) / (2 r t)).
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    c = mollifier_constant(2)
    gx, gw = np.polynomial.legendre.leggauss(64)
    # composite Gauss on [0, eps] in t, split where the arc angle has kinks
    out = np.empty(r.shape)
    for k, rk in enumerate(r.ravel()):
        if rk <= radius - eps:
            out.flat[k] = 1.0
            continue
        if rk >= radius + eps:
            out.flat[k] = 0.0
            continue
        kink = abs(rk - radius)
        edges = sorted({0.0, min(kink, eps), eps})
        tot = 0.0
        for a, b in zip(edges, edges[1:]):
            if b <= a:
                continue
            t = 0.5 * (b - a) * gx + 0.5 * (a + b)
            w = 0.5 * (b - a) * gw
            if rk == 0:
                ang = np.where(t < radius, 2 * np.pi, 0.0)
            else:
                cosv = (rk * rk + t * t - radius * radius) / (2 * rk * t)
                ang = 2.0 * np.arccos(np.clip(cosv, -1.0, 1.0))
            tot += np.sum(w * c * _rho_raw(t / eps) / eps ** 2 * t * ang)
        out.flat[k] = tot
    return out


def mollified_patch_profile(radius: float, eps: float, nodes: int = 801) -> RadialProfile:
    """The radial profile of rho_eps * chi_{B_radius} (tabulated + cubic spline)."""
    if not 0 < eps < radius:
        raise ValueError("need 0 < eps < radius")
    rr = np.linspace(radius - eps, radius + eps, nodes)
    vals = mollified_patch_values(rr, radius, eps)
    sp = CubicSpline(rr, vals)

    def g(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= radius - eps, 1.0, np.where(r >= radius + eps, 0.0, sp(np.clip(r, rr[0], rr[-1]))))

    return RadialProfile(g, [radius - eps, radius + eps], f"mollified_patch({radius},{eps})")


def _S(x):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([np.stack([2 * x1 * x2, x2 * x2 - x1 * x1], -1),
                     np.stack([x2 * x2 - x1 * x1, -2 * x1 * x2], -1)], -2)


def _N(x):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([np.stack([-x1 * x2, -x2 * x2], -1), np.stack([x1 * x1, x1 * x2], -1)], -2)


def radial_u(profile: RadialProfile, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, -1)
    G = profile.G(np.sqrt(r2))
    c = np.where(r2 > 0, G / np.where(r2 > 0, r2, 1.0), 0.0)
    return np.stack([-x[..., 1] * c, x[..., 0] * c], -1)


def radial_gradu(profile: RadialProfile, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, -1)
    r = np.sqrt(r2)
    safe = np.where(r2 > 0, r2, 1.0)
    G = profile.G(r)
    g = profile(r)
    out = (G / safe ** 2)[..., None, None] * _S(x) + (g / safe)[..., None, None] * _N(x)
    at0 = (0.5 * float(profile(np.array(0.0))) * J)
    return np.where((r2 > 0)[..., None, None], out, at0)


def default_chi_delta(profile: RadialProfile) -> float:
    """Half the gap between the origin and the inner edge of supp g (0 if none)."""
    r = np.linspace(0.0, profile.support, 4001)
    nz = np.nonzero(profile(r) != 0)[0]
    if nz.size == 0:
        return 0.0
    return 0.5 * r[nz[0]]


def radial_A(profile: RadialProfile, x, chi: Callable | None = None, delta: float | None = None) -> np.ndarray:
    """A = chi(|x|) / r^2 N with chi = 1 - a_{delta/2} by default."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, -1)
    if chi is None:
        d = default_chi_delta(profile) if delta is None else delta
        if d > 0:
            cv = 1.0 - eval_a(x, d / 2.0)
        else:
            cv = np.ones(r2.shape)
    else:
        cv = np.asarray(chi(np.sqrt(r2)), dtype=float)
    safe = np.where(r2 > 0, r2, 1.0)
    out = (cv / safe)[..., None, None] * _N(x)
    return np.where((r2 > 0)[..., None, None], out, 0.0)


def radial_corrected(profile: RadialProfile, x) -> np.ndarray:
    """grad u - omega A = G / r^4 S (valid where chi = 1 on supp g)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, -1)
    safe = np.where(r2 > 0, r2, 1.0)
    G = profile.G(np.sqrt(r2))
    out = (G / safe ** 2)[..., None, None] * _S(x)
    return np.where((r2 > 0)[..., None, None], out, 0.0)


@dataclass
class ShearProfile:
    """Shear profile W on [c, d]; shifted to zero mean at construction."""

    W: Callable
    c: float
    d: float
    C: float = 0.0

    def __post_init__(self):
        m, _ = integrate.quad(lambda s: float(self.W(np.array(s))), self.c, self.d, limit=400)
        self.mean = m / (self.d - self.c)
        raw = self.W
        self.W = lambda s, _raw=raw, _m=self.mean: np.where(
            (np.asarray(s) >= self.c) & (np.asarray(s) <= self.d), _raw(np.asarray(s, dtype=float)) - _m, 0.0)
        s = np.linspace(self.c, self.d, 4001)
        w = self.W(s)
        prim = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(s))])
        self._s, self._prim = s, prim

    def primitive(self, x2) -> np.ndarray:
        x2 = np.asarray(x2, dtype=float)
        return np.interp(x2, self._s, self._prim, left=0.0, right=self._prim[-1])


def shear_fields(profile: ShearProfile, x) -> dict:
    x = np.asarray(x, dtype=float)
    x2 = x[..., 1]
    W = profile.W(x2)
    u = np.stack([profile.C - profile.primitive(x2), np.zeros_like(x2)], -1)
    gradu = np.zeros(x.shape[:-1] + (2, 2))
    gradu[..., 0, 1] = -W
    A = np.zeros_like(gradu)
    A[..., 0, 1] = -1.0
    return {"u": u, "gradu": gradu, "omega": W, "A": A}


# ----------------------------------------------------------------------------
# sampling and reference quadrature

def sample_radial(profile: RadialProfile, grid: Grid, supersample: int = 1) -> np.ndarray:
    """Cell averages of g(|x|) using supersample^2 sub-cell points."""
    if supersample <= 1:
        X1, X2 = grid.mesh()
        return profile(np.hypot(X1, X2))
    s = grid.spacing
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    X1, X2 = grid.mesh()
    acc = np.zeros_like(X1)
    for a in off:
        for b in off:
            acc += profile(np.hypot(X1 + a * s, X2 + b * s))
    return acc / supersample ** 2


def patch_area_fraction(grid: Grid, radius: float = 1.0, supersample: int = 16) -> np.ndarray:
    """Fraction of each cell inside the disc, refined only on boundary cells."""
    X1, X2 = grid.mesh()
    r = np.hypot(X1, X2)
    h = grid.spacing * np.sqrt(2) / 2
    out = np.where(r < radius - h, 1.0, 0.0)
    edge = np.abs(r - radius) <= h
    off = ((np.arange(supersample) + 0.5) / supersample - 0.5) * grid.spacing
    A, B = np.meshgrid(off, off, indexing="ij")
    e1, e2 = X1[edge], X2[edge]
    inside = np.hypot(e1[:, None] + A.ravel()[None], e2[:, None] + B.ravel()[None]) < radius
    out[edge] = inside.mean(axis=1)
    return out


def reference_velocity(omega_fn: Callable, x, half_width: float, n: int = 256,
                       supersample: int = 4) -> np.ndarray:
    """Slow direct quadrature of K * omega with Richardson extrapolation.

    ``omega_fn`` maps points (..., 2) to vorticity values; it is sampled as
    cell averages on grids with n and 2n cells per side and the two direct
    sums are combined assuming a second-order error.  Inside the support the
    integrand is regularised by subtracting omega(x) a_R(x - y), R = 8 coarse
    cells, whose integral against K vanishes.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    wx = np.asarray(omega_fn(x), dtype=float)
    R = 8.0 * 2.0 * half_width / n
    res = []
    for m in (n, 2 * n):
        g = Grid(m, half_width)
        s = g.spacing
        off = ((np.arange(supersample) + 0.5) / supersample - 0.5) * s
        X1, X2 = g.mesh()
        acc = np.zeros_like(X1)
        for a in off:
            for b in off:
                acc += omega_fn(np.stack([X1 + a, X2 + b], -1))
        w = acc / supersample ** 2
        nz = w != 0
        src = np.stack([X1[nz], X2[nz]], -1)
        wt = w[nz] * s * s
        k = np.arange(-int(2 * R / s) - 2, int(2 * R / s) + 3)
        out = np.zeros((x.shape[0], 2))
        for j, xk in enumerate(x):
            z = xk - src
            r2 = np.sum(z * z, -1)
            inv = np.where(r2 > 0, 1.0 / (2 * np.pi * np.where(r2 > 0, r2, 1.0)), 0.0) * wt
            out[j] = [np.sum(-z[:, 1] * inv), np.sum(z[:, 0] * inv)]
            if wx[j] != 0:
                base = g.origin + s * np.floor((xk - g.origin) / s)
                c1, c2 = base[0] + s * k, base[1] + s * k
                Z = xk - np.stack(np.meshgrid(c1, c2, indexing="ij"), -1).reshape(-1, 2)
                q2 = np.sum(Z * Z, -1)
                cut = np.where(q2 > 0, eval_a(Z, R) / (2 * np.pi * np.where(q2 > 0, q2, 1.0)), 0.0) * s * s
                out[j] -= wx[j] * np.array([np.sum(-Z[:, 1] * cut), np.sum(Z[:, 0] * cut)])
        res.append(out)
    return (4.0 * res[1] - res[0]) / 3.0
