"""Closed-form kernels, radial cutoffs, mollifiers and kernel-norm estimators.

All evaluators are vectorised over leading axes: a point argument has shape
``(..., d)`` and the result has shape ``(...,)``, ``(..., d)`` or
``(..., d, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

TWO_PI = 2.0 * np.pi
FOUR_PI = 4.0 * np.pi


def _points(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d is not None and x.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x


def _nonzero(r2: np.ndarray) -> None:
    if np.any(r2 == 0.0):
        raise ValueError("kernel evaluated at the singular point x = 0")


# ----------------------------------------------------------------------------
# fundamental solutions and Biot-Savart kernels

def eval_F2(x) -> np.ndarray:
    """Fundamental solution of the Laplacian in 2D, log|x| / (2 pi)."""
    x = _points(x, 2)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    return 0.5 * np.log(r2) / TWO_PI


def eval_F3(x) -> np.ndarray:
    """Fundamental solution in 3D, -1 / (4 pi |x|), so that grad F3 = K3."""
    x = _points(x, 3)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    return -1.0 / (FOUR_PI * np.sqrt(r2))


def eval_K(x) -> np.ndarray:
    """2D Biot-Savart kernel x^perp / (2 pi |x|^2)."""
    x = _points(x, 2)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    c = 1.0 / (TWO_PI * r2)
    return np.stack([-x[..., 1] * c, x[..., 0] * c], axis=-1)


def eval_K3(x) -> np.ndarray:
    """3D kernel x / (4 pi |x|^3)."""
    x = _points(x, 3)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    return x / (FOUR_PI * r2 ** 1.5)[..., None]


def eval_gradF2(x) -> np.ndarray:
    """grad F2 = x / (2 pi |x|^2)."""
    x = _points(x, 2)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    return x / (TWO_PI * r2)[..., None]


def gradK_components(x1, x2):
    """The two independent entries (P, Q) of grad K.

    grad K = [[P, Q], [Q, -P]] with P = x1 x2 / (pi r^4) and
    Q = (x2^2 - x1^2) / (2 pi r^4).  Zero is returned at the origin, which is
    what the lattice sums want (the singular cell is dropped).
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    r2 = x1 * x1 + x2 * x2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(r2 > 0, 1.0 / (TWO_PI * r2 * r2), 0.0)
    return 2.0 * x1 * x2 * inv, (x2 * x2 - x1 * x1) * inv


def eval_gradK(x) -> np.ndarray:
    """Jacobian of K, (grad K)[i, j] = d_j K^i.  Symmetric and trace free."""
    x = _points(x, 2)
    _nonzero(np.sum(x * x, axis=-1))
    p, q = gradK_components(x[..., 0], x[..., 1])
    return np.stack([np.stack([p, q], -1), np.stack([q, -p], -1)], -2)


def eval_grad2K(x) -> np.ndarray:
    """Second derivatives of K: out[..., i, j, k] = d_k d_j K^i."""
    x = _points(x, 2)
    x1, x2 = x[..., 0], x[..., 1]
    r2 = x1 * x1 + x2 * x2
    _nonzero(r2)
    r4 = r2 * r2
    r6 = r4 * r2
    # P = x1 x2 / (pi r^4),  Q = (x2^2 - x1^2) / (2 pi r^4)
    p1 = (x2 / r4 - 4.0 * x1 * x1 * x2 / r6) / np.pi
    p2 = (x1 / r4 - 4.0 * x1 * x2 * x2 / r6) / np.pi
    q1 = (-2.0 * x1 / r4 - 4.0 * x1 * (x2 * x2 - x1 * x1) / r6) / TWO_PI
    q2 = (2.0 * x2 / r4 - 4.0 * x2 * (x2 * x2 - x1 * x1) / r6) / TWO_PI
    out = np.empty(x.shape[:-1] + (2, 2, 2))
    out[..., 0, 0, :] = np.stack([p1, p2], -1)
    out[..., 0, 1, :] = np.stack([q1, q2], -1)
    out[..., 1, 0, :] = np.stack([q1, q2], -1)
    out[..., 1, 1, :] = np.stack([-p1, -p2], -1)
    return out


def eval_hessF2(x) -> np.ndarray:
    """Hessian of F2: (|x|^2 I - 2 x x^T) / (2 pi |x|^4)."""
    x = _points(x, 2)
    r2 = np.sum(x * x, axis=-1)
    _nonzero(r2)
    eye = np.eye(2)
    xx = x[..., :, None] * x[..., None, :]
    return (r2[..., None, None] * eye - 2.0 * xx) / (TWO_PI * (r2 * r2)[..., None, None])


@dataclass(frozen=True)
class KernelHandle:
    """A kernel evaluator together with its dimension and homogeneity degree."""

    name: str
    dim: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    degree: int

    def __call__(self, x):
        return self.evaluator(x)

    def homogeneity_defect(self, trials: int = 64, seed: int = 0) -> float:
        """Max relative defect of K(lam x) = lam^degree K(x) at random x, lam."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(trials, self.dim))
        lam = np.exp(rng.uniform(-2.0, 2.0, size=trials))
        shape = (trials,) + (1,) * (np.ndim(self.evaluator(x[:1])) - 1)
        lhs = np.asarray(self.evaluator(lam[:, None] * x))
        rhs = lam.reshape(shape) ** self.degree * np.asarray(self.evaluator(x))
        scale = np.maximum(np.abs(rhs), 1e-300)
        return float(np.max(np.abs(lhs - rhs) / scale))


KERNELS = {
    "K": KernelHandle("K", 2, eval_K, -1),
    "gradK": KernelHandle("gradK", 2, eval_gradK, -2),
    "K3": KernelHandle("K3", 3, eval_K3, -2),
    "F3": KernelHandle("F3", 3, eval_F3, -1),
    "gradF2": KernelHandle("gradF2", 2, eval_gradF2, -1),
}


# ----------------------------------------------------------------------------
# radial cutoffs

def bump_profile(t) -> np.ndarray:
    """Profile of the radial cutoff a: 1 on [0, 1], 0 on [2, inf), smooth between."""
    t = np.asarray(t, dtype=float)
    u = t - 1.0
    mid = (t > 1.0) & (t < 2.0)
    out = np.where(t <= 1.0, 1.0, 0.0)
    um = np.where(mid, u, 0.0)
    with np.errstate(divide="ignore", over="ignore"):
        val = np.exp(1.0 - 1.0 / (1.0 - um * um))
    return np.where(mid, val, out)


def bump_profile_deriv(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    mid = (t > 1.0) & (t < 2.0)
    u = np.where(mid, t - 1.0, 0.0)
    w = 1.0 - u * u
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        val = -2.0 * u * np.exp(1.0 - 1.0 / w) / (w * w)
    return np.where(mid, val, 0.0)


def eval_a(x, r: float = 1.0) -> np.ndarray:
    """a_r(x) = a(x / r)."""
    x = _points(x)
    return bump_profile(np.linalg.norm(x, axis=-1) / r)


def grad_a(x, r: float = 1.0) -> np.ndarray:
    x = _points(x)
    rad = np.linalg.norm(x, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(rad[..., None] > 0, x / rad[..., None], 0.0)
    return (bump_profile_deriv(rad / r) / r)[..., None] * e


@dataclass(frozen=True)
class CutoffSpec:
    """Annular cutoff mu_rh = a_r (1 - a_h): zero for |x| <= h and |x| >= 2r."""

    r: float
    h: float

    def __post_init__(self):
        if not (self.h > 0 and self.r > 0):
            raise ValueError("cutoff radii must be positive")
        if not 2.0 * self.h < self.r:
            raise ValueError(f"invalid cutoff: need 2h < r, got h={self.h}, r={self.r}")


def eval_mu_rh(spec: CutoffSpec, x) -> np.ndarray:
    return eval_a(x, spec.r) * (1.0 - eval_a(x, spec.h))


def grad_mu_rh(spec: CutoffSpec, x) -> np.ndarray:
    ar = eval_a(x, spec.r)[..., None]
    ah = eval_a(x, spec.h)[..., None]
    return grad_a(x, spec.r) * (1.0 - ah) - ar * grad_a(x, spec.h)


def eval_mu_gradF2(spec: CutoffSpec, x) -> np.ndarray:
    """The smooth kernel mu_rh grad F2 (zero near the origin)."""
    x = _points(x, 2)
    mu = eval_mu_rh(spec, x)
    r2 = np.sum(x * x, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(r2[..., None] > 0, x / (TWO_PI * r2)[..., None], 0.0)
    return mu[..., None] * g


def eval_grad_mu_gradF2(spec: CutoffSpec, x) -> np.ndarray:
    """grad[mu_rh grad F2] = grad mu (x) grad F2 + mu Hess F2, entry [i, j] = d_j (mu d_i F2)."""
    x = _points(x, 2)
    r2 = np.sum(x * x, axis=-1)
    safe = np.where(r2 > 0, r2, 1.0)
    g = x / (TWO_PI * safe)[..., None]
    xx = x[..., :, None] * x[..., None, :]
    hess = (safe[..., None, None] * np.eye(2) - 2.0 * xx) / (TWO_PI * (safe * safe)[..., None, None])
    mu = eval_mu_rh(spec, x)
    gm = grad_mu_rh(spec, x)
    out = g[..., :, None] * gm[..., None, :] + mu[..., None, None] * hess
    return np.where((r2 > 0)[..., None, None], out, 0.0)


def radial_gradient_constant(spec: CutoffSpec, samples: int = 4096) -> float:
    """Measured sup of |x| |grad mu_rh(x)| along a ray (radial, so a ray suffices)."""
    t = np.linspace(0.5 * spec.h, 2.5 * spec.r, samples)
    x = np.stack([t, np.zeros_like(t)], -1)
    return float(np.max(t * np.linalg.norm(grad_mu_rh(spec, x), axis=-1)))


# ----------------------------------------------------------------------------
# mollifier

def _rho_raw(t):
    t = np.asarray(t, dtype=float)
    inside = t < 1.0
    tt = np.where(inside, t, 0.0)
    with np.errstate(divide="ignore", over="ignore"):
        v = np.exp(-1.0 / (1.0 - tt * tt))
    return np.where(inside, v, 0.0)


@lru_cache(maxsize=None)
def mollifier_constant(d: int) -> float:
    """Normalisation so that the radial bump rho integrates to one in R^d."""
    sphere = {1: 2.0, 2: TWO_PI, 3: FOUR_PI}[d]
    val, _ = integrate.quad(lambda t: float(_rho_raw(t)) * t ** (d - 1), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return 1.0 / (sphere * val)


def eval_mollifier(eps: float, x, d: int | None = None) -> np.ndarray:
    """rho_eps(x) = eps^-d rho(x / eps)."""
    if not eps > 0:
        raise ValueError("mollifier scale must be positive")
    x = _points(x)
    d = x.shape[-1] if d is None else d
    t = np.linalg.norm(x, axis=-1) / eps
    return mollifier_constant(d) * _rho_raw(t) / eps ** d


def grad_mollifier(eps: float, x) -> np.ndarray:
    x = _points(x)
    d = x.shape[-1]
    rad = np.linalg.norm(x, axis=-1)
    t = rad / eps
    inside = t < 1.0
    tt = np.where(inside, t, 0.0)
    w = 1.0 - tt * tt
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        dr = np.where(inside, -2.0 * tt * np.exp(-1.0 / w) / (w * w), 0.0)
        e = np.where(rad[..., None] > 0, x / rad[..., None], 0.0)
    return (mollifier_constant(d) * dr / eps ** (d + 1))[..., None] * e


# ----------------------------------------------------------------------------
# kernel norms

@dataclass
class StarNorms:
    star: float
    tail: float
    samples: int

    @property
    def star2(self) -> float:
        return self.star + self.tail


def _fd_grad_x(kernel, x, y, rel=1e-6):
    d = x.shape[-1]
    h = rel * np.maximum(np.linalg.norm(x - y, axis=-1), 1e-12)
    out = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        step = h[:, None] * e
        fp = np.asarray(kernel(x + step, y))
        fm = np.asarray(kernel(x - step, y))
        out.append((fp - fm) / (2.0 * h.reshape((-1,) + (1,) * (fp.ndim - 1))))
    return np.stack(out, axis=-1)


def _flat_norm(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))


def kernel_star_norms(kernel: Callable, box, *, grad_x: Callable | None = None,
                      dim: int = 2, samples: int = 20000, seed: int = 0,
                      r_range: tuple[float, float] = (1e-4, 1.0), strata: int = 16,
                      tail_points: int = 16, far_radius: float = 4.0,
                      tail_nodes: int = 96) -> StarNorms:
    """Estimate ||L||_* and the far-field tail of ||L||_** for a pair kernel.

    ``kernel(x, y)`` takes stacked points of shape ``(M, dim)`` and returns
    ``(M, ...)``.  The sup of ``|x-y|^d |L| + |x-y|^(d+1) |grad_x L|`` is
    sampled with ``x`` uniform in ``box = (lo, hi)`` and ``|x - y|``
    log-uniform within each of ``strata`` radial strata.  Vector or matrix
    values are measured in the Euclidean (Frobenius) norm.  The tail
    ``sup_x int_{|x-y|>1} |L(x,y)| dy`` is a polar midpoint quadrature over
    ``1 < |x-y| < far_radius`` at ``tail_points`` sampled centres, so the
    kernel must vanish beyond ``far_radius`` for it to be complete.
    """
    rng = np.random.default_rng(seed)
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (dim,))
    per = max(1, samples // strata)
    edges = np.linspace(np.log(r_range[0]), np.log(r_range[1]), strata + 1)
    logr = np.concatenate([rng.uniform(edges[k], edges[k + 1], per) for k in range(strata)])
    m = logr.size
    x = lo + (hi - lo) * rng.uniform(size=(m, dim))
    direc = rng.normal(size=(m, dim))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    rad = np.exp(logr)
    y = x + rad[:, None] * direc
    val = np.asarray(kernel(x, y), dtype=float)
    gx = np.asarray(grad_x(x, y) if grad_x is not None else _fd_grad_x(kernel, x, y), dtype=float)
    if not (np.all(np.isfinite(val)) and np.all(np.isfinite(gx))):
        return StarNorms(np.inf, np.inf, m)
    star = float(np.max(rad ** dim * _flat_norm(val) + rad ** (dim + 1) * _flat_norm(gx)))

    tail = 0.0
    if far_radius > 1.0 and dim == 2:
        xs = lo + (hi - lo) * rng.uniform(size=(tail_points, dim))
        rr = np.linspace(1.0, far_radius, tail_nodes + 1)
        rc = 0.5 * (rr[1:] + rr[:-1])
        dr = rr[1] - rr[0]
        th = (np.arange(2 * tail_nodes) + 0.5) * np.pi / tail_nodes
        dth = np.pi / tail_nodes
        R, T = np.meshgrid(rc, th, indexing="ij")
        off = np.stack([R * np.cos(T), R * np.sin(T)], -1).reshape(-1, 2)
        wts = (R * dr * dth).ravel()
        for xc in xs:
            xx = np.broadcast_to(xc, off.shape)
            v = np.asarray(kernel(xx, xx + off), dtype=float)
            if not np.all(np.isfinite(v)):
                return StarNorms(star, np.inf, m)
            tail = max(tail, float(np.sum(_flat_norm(v) * wts)))
    return StarNorms(star, tail, m)
