"""Discrete Holder-norm estimators for sampled fields and curves.

Differences of vector or matrix valued fields are measured in the Euclidean
(Frobenius) norm.  Three pair-enumeration modes are available:

``exhaustive``
    every pair of samples inside the shell (default up to 4096 samples).
``stencil``
    grid fields only: every integer offset within a few cells plus a fixed
    log-polar family of long offsets, evaluated by array slicing.  This is
    the default for large grids.
``sampled``
    seeded random pairs in dyadic shells followed by a local ascent.

The sup of a difference quotient can only be underestimated by sampling, so
the stencil and sampled modes are biased downward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.spatial import cKDTree

from .grid import Grid, divergence
from .kernels import eval_gradF2

EXHAUSTIVE_LIMIT = 4096


@dataclass
class HolderReport:
    alpha: float
    linf: float
    seminorm: float
    pairs_used: int
    shell: tuple[float, float]

    @property
    def norm(self) -> float:
        return self.linf + self.seminorm

    @staticmethod
    def csv_header() -> str:
        return "alpha,linf,seminorm,pairs_used,shell_min,shell_max"

    def to_csv_row(self) -> str:
        return ",".join([f"{self.alpha:.17g}", f"{self.linf:.17g}", f"{self.seminorm:.17g}",
                         str(self.pairs_used), f"{self.shell[0]:.17g}", f"{self.shell[1]:.17g}"])


@dataclass
class NegHolderReport:
    alpha: float
    value: float
    method: str = "potential_estimate"
    potential: HolderReport | None = field(default=None, repr=False)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _flatten_components(values: np.ndarray, lead: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v.reshape(v.shape[:lead] + (-1,))


# ----------------------------------------------------------------------------
# grid stencil mode

def stencil_offsets(max_cells: float, min_cells: float = 2.0, near: int = 8,
                    directions: int = 24, per_octave: int = 4) -> np.ndarray:
    """Half-plane integer offsets: all with |o| <= near, plus log-polar ones.

    The long offsets have lengths ``min_cells * 2**(k / per_octave)`` so that
    the set only grows when ``max_cells`` grows.
    """
    offs = set()
    for a in range(0, near + 1):
        for b in range(-near, near + 1):
            if a == 0 and b <= 0:
                continue
            L = np.hypot(a, b)
            if min_cells - 1e-9 <= L <= max_cells + 1e-9 and L <= near + 1e-9:
                offs.add((a, b))
    k = 0
    while True:
        L = min_cells * 2.0 ** (k / per_octave)
        if L > max_cells + 1e-9:
            break
        k += 1
        if L <= near:
            continue
        for t in np.arange(directions) * np.pi / directions:
            a = int(round(L * np.cos(t)))
            b = int(round(L * np.sin(t)))
            if a < 0 or (a == 0 and b <= 0):
                a, b = -a, -b
            LL = np.hypot(a, b)
            if min_cells - 1e-9 <= LL <= max_cells + 1e-9:
                offs.add((a, b))
    return np.array(sorted(offs), dtype=int).reshape(-1, 2)


def _grid_pairs_sup(v: np.ndarray, mask: np.ndarray | None, spacing: float, alpha: float,
                    offsets: np.ndarray) -> tuple[float, int]:
    n1, n2 = v.shape[:2]
    best = 0.0
    count = 0
    for a, b in offsets:
        if a >= n1 or abs(b) >= n2:
            continue
        if b >= 0:
            s0 = (slice(0, n1 - a), slice(0, n2 - b))
            s1 = (slice(a, n1), slice(b, n2))
        else:
            s0 = (slice(0, n1 - a), slice(-b, n2))
            s1 = (slice(a, n1), slice(0, n2 + b))
        diff = v[s1] - v[s0]
        d2 = np.einsum("...k,...k->...", diff, diff)
        if mask is not None:
            m = mask[s0] & mask[s1]
            npair = int(np.count_nonzero(m))
            if npair == 0:
                continue
            d2 = np.where(m, d2, 0.0)
        else:
            npair = d2.size
        count += npair
        dist = spacing * np.hypot(a, b)
        best = max(best, float(np.sqrt(d2.max())) / dist ** alpha)
    return best, count


# ----------------------------------------------------------------------------
# point-set modes

def _exhaustive_sup(pts: np.ndarray, v: np.ndarray, alpha: float, lo: float, hi: float,
                    chunk: int = 256) -> tuple[float, int]:
    best = 0.0
    count = 0
    n = pts.shape[0]
    for i0 in range(0, n - 1, chunk):
        i1 = min(n, i0 + chunk)
        p = pts[i0:i1]
        q = pts[i0 + 1:]
        dist = np.sqrt(np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=-1))
        # keep only j > i
        jj = np.arange(i0 + 1, n)[None, :]
        ii = np.arange(i0, i1)[:, None]
        ok = (jj > ii) & (dist >= lo) & (dist <= hi)
        if not ok.any():
            continue
        dv = v[i0:i1, None, :] - v[None, i0 + 1:, :]
        num = np.sqrt(np.einsum("ijk,ijk->ij", dv, dv))
        with np.errstate(divide="ignore", invalid="ignore"):
            q_ = np.where(ok, num / np.where(ok, dist, 1.0) ** alpha, 0.0)
        best = max(best, float(q_.max()))
        count += int(np.count_nonzero(ok))
    return best, count


def _sampled_sup(pts: np.ndarray, v: np.ndarray, alpha: float, lo: float, hi: float,
                 seed: int, pairs_per_shell: int, ascent_steps: int = 40) -> tuple[float, int]:
    rng = np.random.default_rng(seed)
    tree = cKDTree(pts)
    n = pts.shape[0]
    nshell = max(1, int(np.ceil(np.log2(hi / lo))))
    edges = lo * (hi / lo) ** (np.arange(nshell + 1) / nshell)
    best = 0.0
    best_pair = None
    count = 0
    dim = pts.shape[1]

    def quotient(i, j):
        d = np.linalg.norm(pts[i] - pts[j], axis=-1)
        ok = (d >= lo) & (d <= hi) & (i != j)
        num = np.linalg.norm(v[i] - v[j], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(ok, num / np.where(ok, d, 1.0) ** alpha, -1.0), ok

    for k in range(nshell):
        m = pairs_per_shell * 4
        i = rng.integers(0, n, m)
        rad = np.exp(rng.uniform(np.log(edges[k]), np.log(edges[k + 1]), m))
        dirs = rng.normal(size=(m, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        _, j = tree.query(pts[i] + rad[:, None] * dirs)
        qv, ok = quotient(i, j)
        count += int(np.count_nonzero(ok))
        if ok.any():
            t = int(np.argmax(qv))
            if qv[t] > best:
                best = float(qv[t])
                best_pair = (int(i[t]), int(j[t]))
    # local ascent: move either endpoint to a neighbouring sample while it helps
    if best_pair is not None:
        nn = min(9, n)
        for _ in range(ascent_steps):
            i, j = best_pair
            _, ni = tree.query(pts[i], nn)
            _, nj = tree.query(pts[j], nn)
            cand_i = np.concatenate([np.atleast_1d(ni), np.full(nn, i)])
            cand_j = np.concatenate([np.full(nn, j), np.atleast_1d(nj)])
            qv, ok = quotient(cand_i, cand_j)
            count += int(np.count_nonzero(ok))
            t = int(np.argmax(qv))
            if qv[t] > best * (1.0 + 1e-14):
                best = float(qv[t])
                best_pair = (int(cand_i[t]), int(cand_j[t]))
            else:
                break
    return best, count


def holder_report(values, alpha: float, *, spacing: float | None = None, points=None,
                  shell: tuple[float | None, float | None] | None = None, mode: str = "auto",
                  mask=None, seed: int = 0, pairs_per_shell: int = 64,
                  stencil: dict | None = None) -> HolderReport:
    """L-infinity norm and Holder seminorm of sampled data.

    Grid data: ``values`` has shape ``(n1, n2, ...)`` and ``spacing`` is the
    grid step.  Scattered data: ``values`` has shape ``(P, ...)`` and
    ``points`` shape ``(P, d)``.  ``shell = (min_sep, max_sep)`` restricts the
    pair separations; it defaults to twice the spacing and the sample
    diameter.
    """
    _check_alpha(alpha)
    if (spacing is None) == (points is None):
        raise ValueError("give exactly one of spacing (grid data) or points (scattered data)")
    if points is None:
        v = _flatten_components(values, 2)
        n1, n2 = v.shape[:2]
        if n1 * n2 < 2:
            raise ValueError("need at least two samples")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if np.count_nonzero(mask) < 2:
                raise ValueError("mask selects fewer than two samples")
        diam = spacing * np.hypot(n1 - 1, n2 - 1)
        lo = 2.0 * spacing if shell is None or shell[0] is None else float(shell[0])
        hi = diam if shell is None or shell[1] is None else float(shell[1])
        if lo < spacing * (1 - 1e-12):
            raise ValueError("shell minimum below the grid spacing")
        sel = mask if mask is not None else np.ones((n1, n2), dtype=bool)
        linf = float(np.sqrt(np.max(np.einsum("...k,...k->...", v, v)[sel])))
        npts = int(np.count_nonzero(sel))
        if mode == "auto":
            mode = "exhaustive" if npts <= EXHAUSTIVE_LIMIT else "stencil"
        if mode == "stencil":
            offs = stencil_offsets(hi / spacing, lo / spacing, **(stencil or {}))
            semi, count = _grid_pairs_sup(v, mask, spacing, alpha, offs)
        else:
            i, j = np.nonzero(sel)
            pts = spacing * np.stack([i, j], -1).astype(float)
            vv = v[i, j]
            if mode == "exhaustive":
                semi, count = _exhaustive_sup(pts, vv, alpha, lo, hi)
            elif mode == "sampled":
                semi, count = _sampled_sup(pts, vv, alpha, lo, hi, seed, pairs_per_shell)
            else:
                raise ValueError(f"unknown mode {mode!r}")
    else:
        pts = np.asarray(points, dtype=float)
        v = _flatten_components(values, 1)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            pts, v = pts[mask], v[mask]
        if pts.shape[0] < 2:
            raise ValueError("need at least two samples")
        tree = cKDTree(pts)
        dnn, _ = tree.query(pts, 2)
        h = float(np.median(dnn[:, 1]))
        diam = float(np.linalg.norm(pts.max(0) - pts.min(0)))
        lo = 2.0 * h if shell is None or shell[0] is None else float(shell[0])
        hi = diam if shell is None or shell[1] is None else float(shell[1])
        linf = float(np.sqrt(np.max(np.einsum("pk,pk->p", v, v))))
        if mode == "auto":
            mode = "exhaustive" if pts.shape[0] <= EXHAUSTIVE_LIMIT else "sampled"
        if mode == "exhaustive":
            semi, count = _exhaustive_sup(pts, v, alpha, lo, hi)
        elif mode == "sampled":
            semi, count = _sampled_sup(pts, v, alpha, lo, hi, seed, pairs_per_shell)
        else:
            raise ValueError(f"mode {mode!r} needs grid data")
    if count == 0:
        raise ValueError(f"empty shell: no sample pairs with separation in [{lo}, {hi}]")
    return HolderReport(float(alpha), float(linf), float(semi), int(count), (float(lo), float(hi)))


def local_holder(values, spacing: float, mask, beta: float, **kw) -> HolderReport:
    """Holder report restricted to pairs with both ends inside ``mask``."""
    return holder_report(values, beta, spacing=spacing, mask=mask, **kw)


# ----------------------------------------------------------------------------
# negative Holder norm through the potential grad F2 * div Z

class _PotentialSolver:
    """Lattice sum of grad F2 against grid data, by zero-padded FFT."""

    def __init__(self, grid: Grid):
        n = grid.n
        self.n = n
        self.size = sfft.next_fast_len(2 * n - 1, real=True)
        m = np.arange(-(n - 1), n) * grid.spacing
        X1, X2 = np.meshgrid(m, m, indexing="ij")
        r2 = X1 * X1 + X2 * X2
        with np.errstate(divide="ignore", invalid="ignore"):
            k1 = np.where(r2 > 0, X1 / (2.0 * np.pi * r2), 0.0)
            k2 = np.where(r2 > 0, X2 / (2.0 * np.pi * r2), 0.0)
        shape = (self.size, self.size)
        self.kh = [sfft.rfft2(k * grid.cell_area, shape) for k in (k1, k2)]

    def __call__(self, f: np.ndarray) -> np.ndarray:
        n = self.n
        fh = sfft.rfft2(f, (self.size, self.size))
        out = []
        for kh in self.kh:
            full = sfft.irfft2(fh * kh, (self.size, self.size))
            out.append(full[n - 1:2 * n - 1, n - 1:2 * n - 1])
        return np.stack(out, -1)


def potential_of_divergence(div: np.ndarray, grid: Grid) -> np.ndarray:
    """v = grad F2 * f on the grid (midpoint lattice sum, singular cell dropped)."""
    return _PotentialSolver(grid)(np.asarray(div, dtype=float))


def neg_holder_estimate(Z, grid: Grid, alpha: float, *, div=None, shell=None,
                        mode: str = "auto", **kw) -> NegHolderReport:
    """Surrogate C^(alpha-1) norm of div Z: the C^alpha norm of grad F2 * div Z.

    ``div`` may be supplied as grid samples; otherwise it is obtained from
    ``Z`` by 4th-order centred differences.
    """
    _check_alpha(alpha)
    if div is None:
        if Z is None:
            raise ValueError("need Z or its divergence")
        Z = np.asarray(Z, dtype=float)
        if not np.all(np.isfinite(Z)):
            raise ValueError("unbounded field")
        div = divergence(Z, grid.spacing)
    div = np.asarray(div, dtype=float)
    if not np.all(np.isfinite(div)):
        raise ValueError("unbounded field")
    v = potential_of_divergence(div, grid)
    rep = holder_report(v, alpha, spacing=grid.spacing, shell=shell, mode=mode, **kw)
    return NegHolderReport(float(alpha), float(rep.norm), "potential_estimate", rep)


def spectral_potential(f: np.ndarray, grid: Grid, component: int = 0, pad: int = 4) -> np.ndarray:
    """Independent spectral evaluation of d_k F2 * f on a padded periodic box.

    In Fourier variables grad F2 * f has symbol -i k / |k|^2; this is only an
    approximation of the free-space convolution (periodic images), accurate
    when the padding is large compared with the support of f.
    """
    n = grid.n
    N = pad * n
    buf = np.zeros((N, N))
    buf[:n, :n] = f
    k = 2.0 * np.pi * sfft.fftfreq(N, d=grid.spacing)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    k2 = K1 ** 2 + K2 ** 2
    kc = (K1, K2)[component]
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.where(k2 > 0, -1j * kc / k2, 0.0)
    # d_k F2 * f = d_k (F2 * f) and F2 * f has symbol -1 / |k|^2
    out = np.real(sfft.ifft2(sym * sfft.fft2(buf)))
    return out[:n, :n]


# ----------------------------------------------------------------------------
# curves

def _segments_intersect(p: np.ndarray, closed: bool) -> bool:
    a = p
    b = np.roll(p, -1, axis=0) if closed else p[1:]
    a = a[: b.shape[0]]
    m = a.shape[0]

    def orient(p_, q_, r_):
        return np.sign((q_[..., 0] - p_[..., 0]) * (r_[..., 1] - p_[..., 1])
                       - (q_[..., 1] - p_[..., 1]) * (r_[..., 0] - p_[..., 0]))

    for i0 in range(0, m, 512):
        A, B = a[i0:i0 + 512, None, :], b[i0:i0 + 512, None, :]
        C, D = a[None, :, :], b[None, :, :]
        o1, o2 = orient(A, B, C), orient(A, B, D)
        o3, o4 = orient(C, D, A), orient(C, D, B)
        hit = (o1 * o2 < 0) & (o3 * o4 < 0)
        ii = np.arange(i0, min(m, i0 + 512))[:, None]
        jj = np.arange(m)[None, :]
        gap = np.abs(ii - jj)
        if closed:
            gap = np.minimum(gap, m - gap)
        hit &= gap > 1
        if hit.any():
            return True
    return False


def curve_c1alpha_norm(curve, alpha: float, *, closed: bool = True,
                       param_spacing: float | None = None) -> float:
    """||gamma||_inf + ||gamma'||_inf + Holder seminorm of gamma'.

    ``curve`` holds ordered samples at uniform parameter spacing; for a
    closed curve that spacing defaults to perimeter / n, matching an
    arc-length parameterisation.  Parameter distances are periodic for
    closed curves.  gamma' uses centred differences.
    """
    _check_alpha(alpha)
    g = np.asarray(curve, dtype=float)
    n = g.shape[0]
    if n < 8:
        raise ValueError("need at least 8 curve samples")
    seg = np.linalg.norm(np.diff(np.vstack([g, g[:1]]) if closed else g, axis=0), axis=1)
    if np.any(seg <= 1e-12 * max(seg.max(), 1e-300)):
        raise ValueError("degenerate spacing: repeated curve samples")
    if _segments_intersect(g, closed):
        raise ValueError("self-intersecting curve")
    ds = float(seg.sum() / (n if closed else n - 1)) if param_spacing is None else float(param_spacing)
    if closed:
        dg = (np.roll(g, -1, 0) - np.roll(g, 1, 0)) / (2.0 * ds)
    else:
        dg = np.gradient(g, ds, axis=0, edge_order=2)
    idx = np.arange(n)
    best = 0.0
    for i0 in range(0, n, 512):
        ii = idx[i0:i0 + 512, None]
        gap = np.abs(ii - idx[None, :]).astype(float)
        if closed:
            gap = np.minimum(gap, n - gap)
        ok = gap > 0
        diff = np.linalg.norm(dg[i0:i0 + 512, None, :] - dg[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(ok, diff / np.where(ok, gap * ds, 1.0) ** alpha, 0.0)
        best = max(best, float(q.max()))
    return float(np.max(np.linalg.norm(g, axis=1)) + np.max(np.linalg.norm(dg, axis=1)) + best)
