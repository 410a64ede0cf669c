"""Velocity and velocity-gradient recovery from a gridded vorticity.

Quadrature is the midpoint rule on the vorticity grid.  For targets on the
grid (or on an enlarged grid with the same spacing and alignment) the
lattice sums are evaluated with zero-padded FFTs, which reproduces the
direct sum to roundoff; arbitrary targets use chunked direct summation.
The singular cell is dropped; the grad K lattice sum over any centred disc
vanishes by symmetry, so on grid targets the principal value needs no
further treatment.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import map_coordinates

from .grid import Grid, J, curl as grid_curl, divergence, perp
from .kernels import (CutoffSpec, eval_a, eval_grad_mu_gradF2, eval_mollifier, grad_a,
                      gradK_components)

FFT_WORKERS = -1


@dataclass
class VorticityField:
    grid: Grid
    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.shape != (self.grid.n, self.grid.n):
            raise ValueError("vorticity samples do not match the grid")

    @cached_property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.omega)) * self.grid.cell_area)

    @cached_property
    def l2(self) -> float:
        return float(np.sqrt(np.sum(self.omega ** 2) * self.grid.cell_area))

    @cached_property
    def linf(self) -> float:
        return float(np.max(np.abs(self.omega)))

    def lp(self, p: float) -> float:
        if np.isinf(p):
            return self.linf
        return float((np.sum(np.abs(self.omega) ** p) * self.grid.cell_area) ** (1.0 / p))

    @cached_property
    def support_radius(self) -> float:
        """Largest distance from the origin of a cell with nonzero vorticity."""
        nz = self.omega != 0
        if not nz.any():
            return 0.0
        X1, X2 = self.grid.mesh()
        return float(np.sqrt(np.max((X1 * X1 + X2 * X2)[nz])) + 0.5 * self.grid.spacing * np.sqrt(2))

    def sources(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell centres and weights omega * s^2 of the nonzero cells."""
        nz = self.omega != 0
        return self.grid.points()[nz], self.omega[nz] * self.grid.cell_area

    def at(self, x) -> np.ndarray:
        """Bilinear interpolation of omega at arbitrary points (zero outside)."""
        idx = self.grid.to_index(np.asarray(x, dtype=float))
        return map_coordinates(self.omega, [idx[..., 0], idx[..., 1]], order=1, mode="constant")


@dataclass
class GradVelocityField:
    grad: np.ndarray
    antisym_part: np.ndarray
    sym_part: np.ndarray

    @property
    def antisym_matrix(self) -> np.ndarray:
        return 0.5 * self.antisym_part[..., None, None] * J


# ----------------------------------------------------------------------------
# lattice sums

class LatticeSolver:
    """Zero-padded FFT evaluation of lattice sums sum_j k(x_a - y_j) f_j s^2.

    Targets form a grid with the same spacing as the sources, ``factor``
    times as many points per side and the same centre.
    """

    def __init__(self, grid: Grid, factor: int = 1):
        n = grid.n
        nt = factor * n
        if (nt - n) % 2:
            raise ValueError("target grid must share the source alignment")
        self.grid = grid
        self.target = Grid(nt, grid.half_width * factor)
        self.n, self.nt = n, nt
        self.shift = (nt - n) // 2
        self.size = sfft.next_fast_len(n + nt - 1, real=True)
        m = (np.arange(n + nt - 1) - (n - 1) - self.shift) * grid.spacing
        self._X1, self._X2 = np.meshgrid(m, m, indexing="ij")
        self._cache: dict = {}

    def _kernel_hat(self, name: str) -> np.ndarray:
        if name not in self._cache:
            X1, X2 = self._X1, self._X2
            r2 = X1 * X1 + X2 * X2
            safe = np.where(r2 > 0, r2, 1.0)
            if name == "K1":
                k = np.where(r2 > 0, -X2 / (2 * np.pi * safe), 0.0)
            elif name == "K2":
                k = np.where(r2 > 0, X1 / (2 * np.pi * safe), 0.0)
            elif name in ("P", "Q"):
                p, q = gradK_components(X1, X2)
                k = p if name == "P" else q
            elif name == "G1":
                k = np.where(r2 > 0, X1 / (2 * np.pi * safe), 0.0)
            elif name == "G2":
                k = np.where(r2 > 0, X2 / (2 * np.pi * safe), 0.0)
            elif name.startswith("rho:"):
                eps = float(name[4:])
                k = eval_mollifier(eps, np.stack([X1, X2], -1))
            else:
                raise KeyError(name)
            s = (self.size, self.size)
            self._cache[name] = sfft.rfft2(k * self.grid.cell_area, s, workers=FFT_WORKERS)
        return self._cache[name]

    def apply(self, f: np.ndarray, names) -> list[np.ndarray]:
        s = (self.size, self.size)
        fh = sfft.rfft2(np.asarray(f, dtype=float), s, workers=FFT_WORKERS)
        o = self.n - 1
        out = []
        for name in names:
            full = sfft.irfft2(fh * self._kernel_hat(name), s, workers=FFT_WORKERS)
            out.append(full[o:o + self.nt, o:o + self.nt])
        return out


@lru_cache(maxsize=16)
def lattice_solver(n: int, half_width: float, factor: int = 1) -> LatticeSolver:
    return LatticeSolver(Grid(n, half_width), factor)


def _solver(grid: Grid, factor: int = 1) -> LatticeSolver:
    return lattice_solver(grid.n, grid.half_width, factor)


def lattice_velocity(f: np.ndarray, grid: Grid, factor: int = 1) -> np.ndarray:
    u1, u2 = _solver(grid, factor).apply(f, ("K1", "K2"))
    return np.stack([u1, u2], -1)


def lattice_gradK(f: np.ndarray, grid: Grid, factor: int = 1) -> np.ndarray:
    """PV lattice sum of grad K against f, as a symmetric matrix field."""
    p, q = _solver(grid, factor).apply(f, ("P", "Q"))
    return np.stack([np.stack([p, q], -1), np.stack([q, -p], -1)], -2)


def lattice_gradK_vector(Z: np.ndarray, grid: Grid) -> np.ndarray:
    """(grad K * Z)^i = sum_j grad K_ij * Z_j on the grid."""
    sv = _solver(grid)
    p1, q1 = sv.apply(Z[..., 0], ("P", "Q"))
    p2, q2 = sv.apply(Z[..., 1], ("P", "Q"))
    return np.stack([p1 + q2, q1 - p2], -1)


def mollify_lattice(f: np.ndarray, grid: Grid, eps: float) -> np.ndarray:
    """rho_eps * f on the grid (midpoint rule)."""
    return _solver(grid).apply(f, (f"rho:{eps!r}",))[0]


# ----------------------------------------------------------------------------
# direct sums

def _direct(targets: np.ndarray, src: np.ndarray, w: np.ndarray, fn, ncomp: int,
            chunk: int = 2048) -> np.ndarray:
    t = np.asarray(targets, dtype=float).reshape(-1, 2)
    out = np.zeros((t.shape[0], ncomp))
    budget = max(1, 4_000_000 // max(1, src.shape[0]))
    step = max(1, min(chunk, budget))
    for a in range(0, t.shape[0], step):
        z = t[a:a + step, None, :] - src[None, :, :]
        out[a:a + step] = fn(z, w, t[a:a + step])
    return out.reshape(np.asarray(targets).shape[:-1] + (ncomp,))


def _vel_fn(z, w, _t):
    r2 = np.sum(z * z, -1)
    inv = np.where(r2 > 0, 1.0 / (2 * np.pi * np.where(r2 > 0, r2, 1.0)), 0.0) * w
    return np.stack([np.sum(-z[..., 1] * inv, 1), np.sum(z[..., 0] * inv, 1)], -1)


def _lattice_cutoff_K(x: np.ndarray, grid: Grid, R: float) -> np.ndarray:
    """sum over lattice cells y of (a_R K)(x - y) s^2; zero in the continuum."""
    s = grid.spacing
    m = int(np.ceil(2.0 * R / s)) + 1
    out = np.zeros(x.shape[:-1] + (2,))
    flat = out.reshape(-1, 2)
    for a, xa in enumerate(x.reshape(-1, 2)):
        k0 = np.floor(grid.to_index(xa)).astype(int)
        k = np.arange(-m, m + 2)
        c1 = grid.origin + s * (k0[0] + k)
        c2 = grid.origin + s * (k0[1] + k)
        Z = xa - np.stack(np.meshgrid(c1, c2, indexing="ij"), -1).reshape(-1, 2)
        r2 = np.sum(Z * Z, -1)
        wgt = np.where(r2 > 0, eval_a(Z, R) / (2 * np.pi * np.where(r2 > 0, r2, 1.0)), 0.0)
        flat[a] = [np.sum(-Z[:, 1] * wgt), np.sum(Z[:, 0] * wgt)]
    return out * grid.cell_area


def direct_velocity(omega: VorticityField, targets, R: float | None = None, omega_at=None) -> np.ndarray:
    """Midpoint sum of K * omega at arbitrary targets.

    Near-singular cells are tamed by subtracting omega(x) a_R(x - y) inside
    the sum (a_R K is odd, so its integral vanishes); R defaults to 8 grid
    spacings and ``omega_at`` to bilinear interpolation.
    """
    src, w = omega.sources()
    t = np.asarray(targets, dtype=float)
    if src.shape[0] == 0:
        return np.zeros(t.shape[:-1] + (2,))
    R = 8.0 * omega.grid.spacing if R is None else float(R)
    at = omega.at if omega_at is None else omega_at
    wx = np.asarray(at(t), dtype=float).reshape(t.shape[:-1])
    corr = _lattice_cutoff_K(t, omega.grid, R)
    return _direct(t, src, w, _vel_fn, 2) - wx[..., None] * corr


def direct_gradK(omega: VorticityField, targets, R: float, omega_at) -> np.ndarray:
    """PV grad K * omega at arbitrary targets with omega(x)-subtraction near x.

    The subtraction is weighted by the radial cutoff a_R (1 on B_R, 0 outside
    B_2R), whose product with grad K has zero principal value; a hard disc
    would leave an O(s / R^2) lattice error from cells cut by its edge.
    """
    src, w = omega.sources()
    t = np.asarray(targets, dtype=float)
    if src.shape[0] == 0:
        return np.zeros(t.shape[:-1] + (2, 2))
    # every source cell is needed near the target, including zero cells
    pts_all = omega.grid.points().reshape(-1, 2)
    om_all = omega.omega.ravel()
    area = omega.grid.cell_area
    wx = np.asarray(omega_at(t), dtype=float).reshape(-1)
    tf = t.reshape(-1, 2)
    out = np.zeros((tf.shape[0], 2))
    for a in range(tf.shape[0]):
        x = tf[a]
        z = x - pts_all
        p, q = gradK_components(z[:, 0], z[:, 1])
        vals = (om_all - wx[a] * eval_a(z, R)) * area
        out[a] = [np.sum(p * vals), np.sum(q * vals)]
    p, q = out[:, 0], out[:, 1]
    G = np.stack([np.stack([p, q], -1), np.stack([q, -p], -1)], -2)
    return G.reshape(t.shape[:-1] + (2, 2))


# ----------------------------------------------------------------------------
# public operations

def velocity(omega: VorticityField, targets=None, omega_at=None) -> np.ndarray:
    """u = K * omega.

    ``targets`` is ``None`` (the vorticity grid), ``"extended"`` (a grid of
    twice the width, same spacing) or an array of points; ``omega_at``
    evaluates omega at off-grid targets (see ``direct_velocity``).
    """
    if targets is None:
        return lattice_velocity(omega.omega, omega.grid)
    if isinstance(targets, str):
        if targets != "extended":
            raise ValueError(f"unknown target spec {targets!r}")
        return lattice_velocity(omega.omega, omega.grid, 2)
    t = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite targets")
    return direct_velocity(omega, t, omega_at=omega_at)


def grad_velocity(omega: VorticityField, targets=None, split_radius: float | None = None,
                  omega_at=None) -> GradVelocityField:
    """grad u = (omega / 2) J + PV grad K * omega.

    Off-grid targets use omega(x)-subtraction inside B_R(x) with R defaulting
    to half the support radius.  ``omega_at`` evaluates omega at the targets
    (default: bilinear interpolation of the samples).
    """
    g = omega.grid
    if targets is None:
        sym = lattice_gradK(omega.omega, g)
        w = omega.omega
    else:
        t = np.asarray(targets, dtype=float)
        R = 0.5 * omega.support_radius if split_radius is None else float(split_radius)
        if R <= 2.0 * g.spacing:
            raise ValueError("split radius must exceed twice the grid spacing")
        if 2.0 * R > g.half_width:
            raise ValueError("split radius exceeds the grid box")
        at = omega.at if omega_at is None else omega_at
        sym = direct_gradK(omega, t, R, at)
        w = np.asarray(at(t), dtype=float).reshape(t.shape[:-1])
    grad = sym + 0.5 * w[..., None, None] * J
    return GradVelocityField(grad, w, sym)


def _div_or_fd(Z: np.ndarray, grid: Grid, div):
    if div is None:
        return divergence(Z, grid.spacing)
    div = np.asarray(div, dtype=float)
    if div.shape != Z.shape[:-1]:
        raise ValueError("divergence samples do not match the field")
    return div


def directional_grad_u(omega: VorticityField, Y: np.ndarray, div_omega_Y=None) -> dict:
    """Y . grad u = PV int grad K(x-y)[Y(x) - Y(y)] omega(y) dy + K * div(omega Y).

    Evaluated on the grid.  ``div_omega_Y`` defaults to 4th-order differences
    of omega Y.  Returns both terms, their sum and grad u Y for comparison.
    """
    g = omega.grid
    Y = np.asarray(Y, dtype=float)
    wY = omega.omega[..., None] * Y
    dv = _div_or_fd(wY, g, div_omega_Y)
    P = lattice_gradK(omega.omega, g)
    first = np.einsum("...ij,...j->...i", P, Y) - lattice_gradK_vector(wY, g)
    second = lattice_velocity(dv, g)
    gu = grad_velocity(omega).grad
    direct = np.einsum("...ij,...j->...i", gu, Y)
    return {"pv_term": first, "div_term": second, "total": first + second, "direct": direct}


def perp_directional_identity(omega: VorticityField, Y: np.ndarray, div_omega_Y=None,
                              printed_sign: bool = False) -> np.ndarray:
    """Pointwise |LHS - RHS| for the Y^perp . grad u identity.

    RHS = PV int grad K(x-y)[Y^perp(x) - Y^perp(y)] omega(y) dy
          - [K * div(omega Y)]^perp - omega Y.
    ``printed_sign=True`` uses +[K * div(omega Y)]^perp instead.
    """
    g = omega.grid
    Y = np.asarray(Y, dtype=float)
    Yp = perp(Y)
    wY = omega.omega[..., None] * Y
    dv = _div_or_fd(wY, g, div_omega_Y)
    P = lattice_gradK(omega.omega, g)
    gu = P + 0.5 * omega.omega[..., None, None] * J
    lhs = np.einsum("...ij,...j->...i", gu, Yp)
    pv = np.einsum("...ij,...j->...i", P, Yp) - lattice_gradK_vector(omega.omega[..., None] * Yp, g)
    kd = perp(lattice_velocity(dv, g))
    rhs = pv + (kd if printed_sign else -kd) - wY
    return np.linalg.norm(lhs - rhs, axis=-1)


def k_curl_div_identity(Z: np.ndarray, grid: Grid, divZ=None, curlZ=None) -> np.ndarray:
    """Pointwise |K * div Z - Z^perp + (K * curl Z)^perp|."""
    Z = np.asarray(Z, dtype=float)
    if not np.all(np.isfinite(Z)):
        raise ValueError("unresolved field")
    dv = _div_or_fd(Z, grid, divZ)
    cu = grid_curl(Z, grid.spacing) if curlZ is None else np.asarray(curlZ, dtype=float)
    kd = lattice_velocity(dv, grid)
    kc = lattice_velocity(cu, grid)
    return np.linalg.norm(kd - perp(Z) + perp(kc), axis=-1)


def _cut_hessF2(z: np.ndarray, w: np.ndarray, gw: np.ndarray) -> np.ndarray:
    """grad[w grad F2] with entry [i, j] = w d_ij F2 + d_j w d_i F2."""
    r2 = np.sum(z * z, -1)
    safe = np.where(r2 > 0, r2, 1.0)
    gF = z / (2 * np.pi * safe)[..., None]
    H = (safe[..., None, None] * np.eye(2) - 2 * z[..., :, None] * z[..., None, :]) / (
        2 * np.pi * (safe * safe)[..., None, None])
    out = w[..., None, None] * H + gF[..., :, None] * gw[..., None, :]
    return np.where((r2 > 0)[..., None, None], out, 0.0)


def pv_split(omega: VorticityField, x, r: float, cutoff: CutoffSpec | None = None) -> dict:
    """Near/far split of grad K * omega at one point x.

    near = grad(mu_rh K) * omega with h one grid spacing by default and
    far = grad((1 - a_r) K) * omega.  As h -> 0, near + far tends to the full
    grad u, i.e. the principal value plus omega(x)/2 J; ``pv`` is that sum
    minus the rotation part.  Also returns B = grad(mu_rh grad F2) * omega
    (near = J B) and tr B.  The near sums use omega(y) - omega(x), valid
    because the near kernel has compact support and integrates to 0.
    """
    g = omega.grid
    if r < 4.0 * g.spacing:
        raise ValueError("r below 4x grid spacing")
    spec = CutoffSpec(r, g.spacing) if cutoff is None else cutoff
    x = np.asarray(x, dtype=float)
    pts = g.points().reshape(-1, 2)
    om = omega.omega.ravel()
    wx = float(omega.at(x[None])[0])
    z = x - pts
    area = g.cell_area
    near_mask = np.sum(z * z, -1) < (2.0 * spec.r) ** 2
    zn = z[near_mask]
    Bk = eval_grad_mu_gradF2(spec, zn)
    vals = (om[near_mask] - wx) * area
    B = np.einsum("pij,p->ij", Bk, vals)
    near = J @ B
    far_w = 1.0 - eval_a(z, spec.r)
    far_gw = -grad_a(z, spec.r)
    Fk = _cut_hessF2(z, far_w, far_gw)
    far = J @ np.einsum("pij,p->ij", Fk, om * area)
    pv = near + far - 0.5 * wx * J
    return {"near": near, "far": far, "pv": pv, "B": B, "tr_near": float(np.trace(B)),
            "h": spec.h, "omega_x": wx}


def kernel_commutator(Omega: np.ndarray, f: np.ndarray, grid: Grid, kind: str = "gradK",
                      eps: float | None = None) -> np.ndarray:
    """x -> PV int L(x, y) (f(y) - f(x)) dy on the grid.

    ``gradK``: L(x, y) = Omega(y) grad K(x - y), a symmetric matrix field.
    ``mollifier``: L(x, y) = rho_eps(x - y) Omega(y).
    """
    Omega = np.asarray(Omega, dtype=float)
    f = np.asarray(f, dtype=float)
    if kind == "gradK":
        return lattice_gradK(Omega * f, grid) - f[..., None, None] * lattice_gradK(Omega, grid)
    if kind == "mollifier":
        if eps is None:
            raise ValueError("mollifier kernel needs eps")
        return mollify_lattice(Omega * f, grid, eps) - f * mollify_lattice(Omega, grid, eps)
    raise ValueError(f"unknown kernel kind {kind!r}")


def annulus_quadrature(integrand, h: float, r_out: float, n_theta: int = 128,
                       nodes_per_panel: int = 24, panels_per_decade: int = 4) -> np.ndarray:
    """int_{h < |z| < r_out} integrand(z) dz by Gauss-Legendre in log|z| and
    the periodic trapezoid rule in angle.  ``integrand`` maps (..., 2) -> (..., k)."""
    decades = np.log10(r_out / h)
    npan = max(3, int(np.ceil(decades * panels_per_decade)))
    edges = np.log(h) + (np.log(r_out) - np.log(h)) * np.arange(npan + 1) / npan
    gx, gw = np.polynomial.legendre.leggauss(nodes_per_panel)
    s = np.concatenate([0.5 * (edges[k + 1] - edges[k]) * gx + 0.5 * (edges[k + 1] + edges[k])
                        for k in range(npan)])
    ws = np.concatenate([0.5 * (edges[k + 1] - edges[k]) * gw for k in range(npan)])
    rho = np.exp(s)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(rho, th, indexing="ij")
    z = np.stack([R * np.cos(T), R * np.sin(T)], -1)
    vals = np.asarray(integrand(z), dtype=float)
    w = np.broadcast_to((ws * rho * rho)[:, None] * (2 * np.pi / n_theta), R.shape)
    return np.tensordot(w, vals, axes=([0, 1], [0, 1]))


def intcal_integral1(f, g, x, spec: CutoffSpec, **quad) -> np.ndarray:
    """int grad[mu_rh grad F2](x - y) (f(x) - f(y)) g(y) dy as a 2x2 matrix.

    ``f`` and ``g`` are callables on points (..., 2) returning (...,).
    """
    x = np.asarray(x, dtype=float)
    fx = float(f(x[None])[0])

    def integrand(z):
        y = x - z
        k = eval_grad_mu_gradF2(spec, z)
        return (k * ((fx - f(y)) * g(y))[..., None, None]).reshape(z.shape[:-1] + (4,))

    return annulus_quadrature(integrand, spec.h, 2.0 * spec.r, **quad).reshape(2, 2)


def intcal_integral2(f, x, spec: CutoffSpec, **quad) -> np.ndarray:
    """int (mu_rh grad F2)(x - y) f(y) dy as a vector."""
    from .kernels import eval_mu_gradF2
    x = np.asarray(x, dtype=float)

    def integrand(z):
        return eval_mu_gradF2(spec, z) * f(x - z)[..., None]

    return annulus_quadrature(integrand, spec.h, 2.0 * spec.r, **quad)
