"""Vector-family bookkeeping, Serfati's linear-algebra bound, partitions of
unity and the correction matrices A.

Matrix conventions: ``G[..., i, j] = d_j u^i`` so that ``Y . grad u = G @ Y``.
All functions are vectorised over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .holder_norms import holder_report


# ----------------------------------------------------------------------------
# wedge products and the family functional I

def wedge(vectors) -> np.ndarray:
    """Y^perp for one vector in R^2, Y1 x Y2 for two vectors in R^3."""
    vs = [np.asarray(v, dtype=float) for v in vectors]
    if not vs:
        raise ValueError("no vectors supplied")
    d = vs[0].shape[-1]
    if any(v.shape[-1] != d for v in vs) or len(vs) != d - 1 or d not in (2, 3):
        raise ValueError("wedge needs d - 1 vectors in R^d with d in {2, 3}")
    if d == 2:
        y = vs[0]
        return np.stack([-y[..., 1], y[..., 0]], -1)
    return np.cross(vs[0], vs[1])


def family_infimum(members) -> float:
    """Discrete I(Y): inf over samples of sup over members of |Y|.

    ``members`` is a list of arrays of shape ``(..., d)`` sampled at the same
    points.  In 3D the wedge branch (sup over ordered pairs of |Y_i x Y_j|)
    enters through a min with the first branch.
    """
    ms = [np.asarray(m, dtype=float) for m in members]
    if not ms:
        raise ValueError("empty family")
    d = ms[0].shape[-1]
    mags = np.stack([np.linalg.norm(m, axis=-1) for m in ms])
    first = float(np.min(np.max(mags, axis=0)))
    if d == 2:
        return first
    if d != 3:
        raise ValueError("only d in {2, 3} supported")
    if len(ms) < 2:
        return 0.0
    wedges = [np.linalg.norm(np.cross(ms[i], ms[j]), axis=-1)
              for i in range(len(ms)) for j in range(i + 1, len(ms))]
    second = float(np.min(np.max(np.stack(wedges), axis=0)))
    return min(first, second)


# ----------------------------------------------------------------------------
# operator norms in closed form

def opnorm2(M) -> np.ndarray:
    """Largest singular value of 2x2 matrices."""
    M = np.asarray(M, dtype=float)
    a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
    return 0.5 * (np.hypot(a + d, c - b) + np.hypot(a - d, b + c))


def _sym3_eig_max_abs(S) -> np.ndarray:
    """max |eigenvalue| of symmetric 3x3 matrices (trigonometric formula)."""
    S = np.asarray(S, dtype=float)
    q = np.trace(S, axis1=-2, axis2=-1) / 3.0
    p1 = S[..., 0, 1] ** 2 + S[..., 0, 2] ** 2 + S[..., 1, 2] ** 2
    p2 = ((S[..., 0, 0] - q) ** 2 + (S[..., 1, 1] - q) ** 2 + (S[..., 2, 2] - q) ** 2 + 2.0 * p1)
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    Bm = (S - q[..., None, None] * np.eye(3)) / safe[..., None, None]
    r = np.clip(np.linalg.det(Bm) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    out = np.maximum(np.abs(e1), np.abs(e3))
    return np.where(p > 0, out, np.abs(q))


def opnorm(M) -> np.ndarray:
    """Operator norm max_{|v|=1} |Mv| for 2x2 or 3x3 matrices, in closed form."""
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    if d == 2:
        return opnorm2(M)
    if d == 3:
        MtM = np.swapaxes(M, -1, -2) @ M
        return np.sqrt(_sym3_eig_max_abs(MtM))
    raise ValueError("opnorm supports 2x2 and 3x3 matrices")


def sym_opnorm(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.shape[-1] == 3:
        return _sym3_eig_max_abs(B)
    return opnorm(B)


# ----------------------------------------------------------------------------
# Serfati's lemma

@dataclass
class SerfatiResult:
    lhs: np.ndarray
    bound: np.ndarray
    holds: np.ndarray
    extra: dict = field(default_factory=dict)


def _require_symmetric(B):
    asym = np.max(np.abs(B - np.swapaxes(B, -1, -2)), initial=0.0)
    if asym > 1e-12 * max(1.0, float(np.max(np.abs(B), initial=0.0))):
        raise ValueError("B must be symmetric")


def serfati_bound_2d(B, M, *, printed_form: bool = False) -> SerfatiResult:
    """|B| <= 2 |M|^3 / det(M)^2 |B M_1| + |tr B| for symmetric 2x2 B.

    ``printed_form=True`` uses a single power of |det M|, which is not
    invariant under M -> lam M and fails for small M.
    """
    B = np.asarray(B, dtype=float)
    M = np.asarray(M, dtype=float)
    _require_symmetric(B)
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    if np.any(det == 0.0):
        raise ValueError("singular M")
    nM = opnorm2(M)
    BM1 = np.linalg.norm(np.einsum("...ij,...j->...i", B, M[..., :, 0]), axis=-1)
    tr = np.abs(B[..., 0, 0] + B[..., 1, 1])
    denom = np.abs(det) if printed_form else det * det
    bound = 2.0 * nM ** 3 / denom * BM1 + tr
    lhs = sym_opnorm(B)
    return SerfatiResult(lhs, bound, lhs <= bound * (1.0 + 1e-9))


def cofactor(M) -> np.ndarray:
    """Cofactor matrix, cof(M) = det(M) M^{-T}, for 2x2 and 3x3."""
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    if d == 2:
        a, b, c, e = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        return np.stack([np.stack([e, -c], -1), np.stack([-b, a], -1)], -2)
    if d == 3:
        cols = [M[..., :, k] for k in range(3)]
        cof_cols = [np.cross(cols[1], cols[2]), np.cross(cols[2], cols[0]), np.cross(cols[0], cols[1])]
        return np.stack(cof_cols, -1)
    raise ValueError("cofactor supports d in {2, 3}")


def serfati_polynomials(M) -> tuple[np.ndarray, np.ndarray]:
    """Per-column coefficient numerators N_i (i < d) and P2 = |det M|.

    With D = M^T B M and cof(M)^T M = det(M) I one has
    det^2 B = sum_ij D_ij cof_i cof_j^T, and the trace fixes D_dd because
    cof_d = M_d.  Bounding |D_ij| <= |B M_i| |M_j| for i < d gives
    |B| <= sum_{i<d} N_i / det^2 |B M_i| + |tr B| with
    N_i = 2 |cof_i| (sum_{j<d} |M_j| |cof_j| + |M_d|^2).
    N_i is homogeneous of degree 4d - 5 in (M_1, ..., M_{d-1}).
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    C = cofactor(M)
    ncol = np.linalg.norm(M, axis=-2)
    ncof = np.linalg.norm(C, axis=-2)
    inner = np.sum(ncol[..., : d - 1] * ncof[..., : d - 1], axis=-1) + ncol[..., d - 1] ** 2
    N = 2.0 * ncof[..., : d - 1] * inner[..., None]
    return N, np.abs(np.linalg.det(M))


def in_mtilde(M, tol: float = 1e-9) -> np.ndarray:
    """Whether the last column of M equals the last column of cof(M)."""
    M = np.asarray(M, dtype=float)
    C = cofactor(M)
    diff = np.linalg.norm(M[..., :, -1] - C[..., :, -1], axis=-1)
    scale = np.maximum(np.linalg.norm(M[..., :, -1], axis=-1), 1e-300)
    return diff <= tol * scale


def serfati_bound_general(B, M) -> SerfatiResult:
    """Constructive bound for symmetric B and M whose last column is the
    wedge of the others (last column of its cofactor matrix).

    ``extra`` holds the P1 form, max_i N_i / det^2 * sum_i |B M_i| + |tr B|,
    which is also a valid (looser) bound.
    """
    B = np.asarray(B, dtype=float)
    M = np.asarray(M, dtype=float)
    _require_symmetric(B)
    d = M.shape[-1]
    if not np.all(in_mtilde(M)):
        raise ValueError("M is not in M~: last column differs from last cofactor column")
    det = np.linalg.det(M)
    if np.any(np.abs(det) <= 1e-300):
        raise ValueError("singular M")
    N, _ = serfati_polynomials(M)
    BM = np.linalg.norm(B @ M, axis=-2)[..., : d - 1]
    tr = np.abs(np.trace(B, axis1=-2, axis2=-1))
    d2 = det * det
    bound = np.sum(N * BM, axis=-1) / d2 + tr
    P1 = np.max(N, axis=-1)
    bound_p1 = P1 / d2 * np.sum(BM, axis=-1) + tr
    lhs = sym_opnorm(B)
    return SerfatiResult(lhs, bound, lhs <= bound * (1.0 + 1e-9),
                         {"P1": P1, "bound_P1": bound_p1, "det": det})


def gradient_linf_bound(Y, Omega, Ygradu) -> np.ndarray:
    """Bound on |grad u(x)| from Y . grad u and the vorticity matrix.

    ``Y`` is a list with one vector (2D) or two vectors (3D); ``Ygradu`` the
    matching values of (Y . grad u)(x) = grad u(x) Y; ``Omega`` the
    antisymmetric part grad u - grad u^T.  With B = grad u + grad u^T =
    2 grad u - Omega, |grad u| <= |B| / 2 + |Omega| / 2 and |B| is bounded
    through Serfati's lemma with M = (Y, Y^perp) or (Y1, Y2, Y1 x Y2); the
    trace term vanishes because div u = 0.
    """
    Omega = np.asarray(Omega, dtype=float)
    d = Omega.shape[-1]
    Ys = [np.asarray(y, dtype=float) for y in Y]
    Gs = [np.asarray(g, dtype=float) for g in Ygradu]
    if len(Ys) != d - 1 or len(Gs) != d - 1:
        raise ValueError("need d - 1 family vectors and their Y . grad u values")
    BY = [2.0 * g - np.einsum("...ij,...j->...i", Omega, y) for y, g in zip(Ys, Gs)]
    nO = opnorm(Omega)
    if d == 2:
        y = Ys[0]
        ny = np.linalg.norm(y, axis=-1)
        if np.any(ny == 0):
            raise ValueError("degenerate family at x")
        # |M| = |Y| and det M = |Y|^2 for M = (Y, Y^perp)
        bB = 2.0 * np.linalg.norm(BY[0], axis=-1) / ny
        return 0.5 * bB + 0.5 * nO
    M = np.stack([Ys[0], Ys[1], np.cross(Ys[0], Ys[1])], -1)
    det = np.linalg.det(M)
    if np.any(det == 0):
        raise ValueError("degenerate family at x")
    N, _ = serfati_polynomials(M)
    BMn = np.stack([np.linalg.norm(b, axis=-1) for b in BY], -1)
    bB = np.sum(N * BMn, axis=-1) / (det * det)
    return 0.5 * bB + 0.5 * nO


# ----------------------------------------------------------------------------
# partitions of unity

def _psi(s):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(pos, np.exp(-1.0 / np.where(pos, s, 1.0)), 0.0)


def smooth_step(t, tau: float):
    """C-infinity step: 0 for t <= -tau, 1 for t >= tau."""
    a = _psi(tau + np.asarray(t, dtype=float))
    b = _psi(tau - np.asarray(t, dtype=float))
    return a / (a + b)


def brick_profile(t, tau: float):
    """beta(t) = S(t) - S(t - 1); sum_i beta(t - i) = 1, support [-tau, 1 + tau]."""
    return smooth_step(t, tau) - smooth_step(np.asarray(t) - 1.0, tau)


def cell_profile(t):
    """1-periodic f with f in C_c((0, 1)) on each period, f = 1 on [1/2, 3/4]."""
    s = np.mod(np.asarray(t, dtype=float), 1.0)
    up = smooth_step((s - 0.25) / 0.25, 0.999)  # 0 below 0, 1 above 1/2
    down = 1.0 - smooth_step((s - 0.875) / 0.125, 0.999)
    return np.where(s <= 0.0, 0.0, up * down)


@dataclass
class Bump:
    label: tuple
    box: tuple[float, float, float, float]  # x1min, x1max, x2min, x2max
    member: int | None = None
    min_norm: float = float("nan")


@dataclass
class Partition:
    R: float
    layout: str
    bumps: list[Bump]
    tau: float = 0.2

    def bump_values(self, k: int, x: np.ndarray) -> np.ndarray:
        b = self.bumps[k]
        x = np.asarray(x, dtype=float)
        t1, t2 = x[..., 0] / self.R, x[..., 1] / self.R
        kind, i, j = b.label
        if self.layout == "brick":
            off = 0.5 * (j % 2)
            return brick_profile(t2 - j, self.tau) * brick_profile(t1 - i - off, self.tau)
        ff = cell_profile(t1) * cell_profile(t2)
        if kind == "f":
            inside = (t1 >= i) & (t1 < i + 1) & (t2 >= j) & (t2 < j + 1)
            return np.where(inside, ff, 0.0)
        inside = (t1 >= i + 0.5) & (t1 < i + 1.5) & (t2 >= j + 0.5) & (t2 < j + 1.5)
        return np.where(inside, 1.0 - ff, 0.0)

    def support_mask(self, k: int, x: np.ndarray) -> np.ndarray:
        x1min, x1max, x2min, x2max = self.bumps[k].box
        return (x[..., 0] >= x1min) & (x[..., 0] <= x1max) & (x[..., 1] >= x2min) & (x[..., 1] <= x2max)

    def active(self, x: np.ndarray):
        """Yield (k, mask, values) for bumps nonzero somewhere on ``x``."""
        for k in range(len(self.bumps)):
            m = self.support_mask(k, x)
            if not m.any():
                continue
            vals = np.zeros(x.shape[:-1])
            vals[m] = self.bump_values(k, x[m])
            if np.any(vals != 0):
                yield k, m, vals

    def total(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(np.asarray(x).shape[:-1])
        for _, _, v in self.active(np.asarray(x, dtype=float)):
            out += v
        return out

    def multiplicity(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(np.asarray(x).shape[:-1], dtype=int)
        for _, _, v in self.active(np.asarray(x, dtype=float)):
            out += v > 0
        return out

    def neighbour_counts(self) -> list[int]:
        """For each bump, the number of bumps (itself included) whose support box meets it."""
        boxes = np.array([b.box for b in self.bumps])
        out = []
        for bx in boxes:
            hit = ((boxes[:, 0] < bx[1]) & (boxes[:, 1] > bx[0])
                   & (boxes[:, 2] < bx[3]) & (boxes[:, 3] > bx[2]))
            out.append(int(np.count_nonzero(hit)))
        return out

    def manifest(self) -> str:
        lines = ["label,x1min,x1max,x2min,x2max,member"]
        for b in self.bumps:
            lab = ":".join(str(v) for v in b.label)
            lines.append(",".join([lab] + [f"{v:.17g}" for v in b.box]
                                  + [str(b.member if b.member is not None else -1)]))
        return "\n".join(lines) + "\n"


def partition_of_unity_2d(R: float, half_width: float, *, spacing: float | None = None,
                          layout: str = "brick", tau: float = 0.2) -> Partition:
    """Bumps of scale R covering the box [-half_width, half_width]^2.

    ``brick``: phi_ij(x) = beta(x2/R - j) beta(x1/R - i - o_j) with row
    offsets o_j = (j mod 2) / 2.  Smooth, sums to one, every point lies in at
    most 3 supports.  ``product``: the literal f_ij / g_ij construction on unit
    and half-shifted cells (discontinuous across the shifted cell edges).
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if spacing is not None and R < 4.0 * spacing:
        raise ValueError("R below 4x grid spacing")
    if not 0 < tau < 0.25:
        raise ValueError("tau must lie in (0, 1/4)")
    n_lo = int(np.floor(-half_width / R)) - 2
    n_hi = int(np.ceil(half_width / R)) + 2
    bumps = []

    def meets(box):
        return box[1] > -half_width and box[0] < half_width and box[3] > -half_width and box[2] < half_width

    for j in range(n_lo, n_hi):
        for i in range(n_lo, n_hi):
            if layout == "brick":
                off = 0.5 * (j % 2)
                box = ((i + off - tau) * R, (i + off + 1 + tau) * R, (j - tau) * R, (j + 1 + tau) * R)
                if meets(box):
                    bumps.append(Bump(("b", i, j), box))
            elif layout == "product":
                box = (i * R, (i + 1) * R, j * R, (j + 1) * R)
                if meets(box):
                    bumps.append(Bump(("f", i, j), box))
                box = ((i + 0.5) * R, (i + 1.5) * R, (j + 0.5) * R, (j + 1.5) * R)
                if meets(box):
                    bumps.append(Bump(("g", i, j), box))
            else:
                raise ValueError(f"unknown layout {layout!r}")
    return Partition(R, layout, bumps, tau)


def bump_holder_norm(partition: Partition, k: int, alpha: float, n: int = 96) -> float:
    """C^alpha norm of one bump sampled on its support box."""
    x1min, x1max, x2min, x2max = partition.bumps[k].box
    pad = 0.1 * (x1max - x1min)
    c1 = np.linspace(x1min - pad, x1max + pad, n)
    c2 = np.linspace(x2min - pad, x2max + pad, n)
    h = c1[1] - c1[0]
    X = np.stack(np.meshgrid(c1, c2, indexing="ij"), -1)
    v = partition.bump_values(k, X)
    return holder_report(v, alpha, spacing=h, shell=(h, None)).norm


def select_members(partition: Partition, members, points: np.ndarray, I_value: float,
                   strict: bool = True) -> Partition:
    """Greedy per-bump choice of the member maximising min |Y| on the support.

    Ties go to the lowest member index.  The choice must satisfy
    min |Y| > I / 2 on the (sampled) support.
    """
    mags = [np.linalg.norm(np.asarray(m, dtype=float), axis=-1) for m in members]
    for k, mask, vals in partition.active(points):
        sup = vals > 0
        if not sup.any():
            continue
        mins = [float(np.min(m[sup])) for m in mags]
        best = int(np.argmax(mins))
        b = partition.bumps[k]
        b.member, b.min_norm = best, mins[best]
        if strict and not mins[best] > 0.5 * I_value:
            raise ValueError(f"bump {b.label}: no member with |Y| > I/2 on its support "
                             f"(best min {mins[best]:.3g}, I = {I_value:.3g})")
    return partition


# ----------------------------------------------------------------------------
# correction matrices

def A_from_vector(Y) -> np.ndarray:
    """A_n = [[Y1 Y2, -Y1^2], [Y2^2, -Y1 Y2]] / |Y|^2 (zero where Y = 0)."""
    Y = np.asarray(Y, dtype=float)
    y1, y2 = Y[..., 0], Y[..., 1]
    n2 = y1 * y1 + y2 * y2
    inv = np.where(n2 > 0, 1.0 / np.where(n2 > 0, n2, 1.0), 0.0)
    A = np.empty(Y.shape[:-1] + (2, 2))
    A[..., 0, 0] = y1 * y2 * inv
    A[..., 0, 1] = -y1 * y1 * inv
    A[..., 1, 0] = y2 * y2 * inv
    A[..., 1, 1] = -y1 * y2 * inv
    return A


@dataclass
class CorrectionMatrix:
    A: np.ndarray
    tag: str
    checks: dict = field(default_factory=dict)
    projector: np.ndarray | None = None


def correction_matrix_2d(members, partition: Partition, points: np.ndarray, labels=None,
                         I_value: float | None = None, strict: bool = True) -> CorrectionMatrix:
    """A = sum_n phi_n(labels) A_n with A_n built from the member chosen for bump n.

    ``members`` are the (current-time) family fields sampled at ``points``;
    ``labels`` are the Lagrangian labels eta^{-1}(t, points) (identity when
    omitted).  Bump members must already be selected (``select_members``).
    Also assembles P = sum_n phi_n |Y_n|^-2 Y_n (x) Y_n, for which
    omega A = P [[0, -omega], [omega, 0]].
    """
    points = np.asarray(points, dtype=float)
    labels = points if labels is None else np.asarray(labels, dtype=float)
    ms = [np.asarray(m, dtype=float) for m in members]
    A = np.zeros(points.shape[:-1] + (2, 2))
    P = np.zeros_like(A)
    worst_null, worst_perp, worst_mag = 0.0, 0.0, np.inf
    for k, mask, vals in partition.active(labels):
        b = partition.bumps[k]
        if b.member is None:
            raise ValueError(f"bump {b.label} has no selected member")
        sup = vals > 0
        Y = ms[b.member][sup]
        mag = np.linalg.norm(Y, axis=-1)
        worst_mag = min(worst_mag, float(mag.min()))
        if I_value is not None and strict and not np.all(mag > 0.5 * I_value):
            raise ValueError(f"bump {b.label}: member magnitude below I/2 on the support")
        An = A_from_vector(Y)
        scale = np.maximum(mag, 1e-300)
        worst_null = max(worst_null, float(np.max(np.linalg.norm(
            np.einsum("pij,pj->pi", An, Y), axis=-1) / scale)))
        Yp = np.stack([-Y[:, 1], Y[:, 0]], -1)
        worst_perp = max(worst_perp, float(np.max(np.linalg.norm(
            np.einsum("pij,pj->pi", An, Yp) + Y, axis=-1) / scale)))
        w = vals[sup][:, None, None]
        A[sup] += w * An
        P[sup] += w * (Y[:, :, None] * Y[:, None, :]) / (scale ** 2)[:, None, None]
    checks = {"AY_rel": worst_null, "AYperp_rel": worst_perp, "min_member_norm": worst_mag}
    return CorrectionMatrix(A, "2d_partition", checks, P)


def projector_identity_residual(cm: CorrectionMatrix, omega) -> float:
    """max | omega A - P Omega | with Omega = [[0, -omega], [omega, 0]]."""
    omega = np.asarray(omega, dtype=float)
    Om = np.zeros(omega.shape + (2, 2))
    Om[..., 0, 1] = -omega
    Om[..., 1, 0] = omega
    lhs = omega[..., None, None] * cm.A
    rhs = cm.projector @ Om
    return float(np.max(np.abs(lhs - rhs), initial=0.0))


def q_map(phi) -> np.ndarray:
    """Q(phi) with Q(phi) v = phi x v."""
    p = np.asarray(phi, dtype=float)
    z = np.zeros(p.shape[:-1])
    return np.stack([np.stack([z, -p[..., 2], p[..., 1]], -1),
                     np.stack([p[..., 2], z, -p[..., 0]], -1),
                     np.stack([-p[..., 1], p[..., 0], z], -1)], -2)


def q_inverse(Q, tol: float = 1e-12) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    asym = np.max(np.abs(Q + np.swapaxes(Q, -1, -2)), initial=0.0)
    if asym > tol * max(1.0, float(np.max(np.abs(Q), initial=0.0))):
        raise ValueError("q_inverse needs an antisymmetric matrix")
    return np.stack([Q[..., 2, 1], Q[..., 0, 2], Q[..., 1, 0]], -1)


def vorticity_vector(gradU) -> np.ndarray:
    """curl u from grad u; Q(curl u) = grad u - grad u^T."""
    G = np.asarray(gradU, dtype=float)
    return q_inverse(G - np.swapaxes(G, -1, -2), tol=np.inf)


def correction_matrix_3d(Y1, Y2, *, threshold: float | None = None) -> CorrectionMatrix:
    """A = Y1' (x) Y1' + Y2' (x) Y2' from a modified Gram-Schmidt frame.

    Samples where |Y1 x Y2| < threshold (default I/4 with I the discrete
    family functional of {Y1, Y2}) are rejected with an error.
    """
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    w = np.linalg.norm(np.cross(Y1, Y2), axis=-1)
    if threshold is None:
        threshold = 0.25 * family_infimum([Y1, Y2])
    if np.any(w <= max(threshold, 0.0)) or np.any(w == 0):
        raise ValueError("near-parallel Y1, Y2: |Y1 x Y2| below threshold")
    e1 = Y1 / np.linalg.norm(Y1, axis=-1, keepdims=True)
    v = Y2 - np.sum(Y2 * e1, axis=-1, keepdims=True) * e1
    e2 = v / np.linalg.norm(v, axis=-1, keepdims=True)
    A = e1[..., :, None] * e1[..., None, :] + e2[..., :, None] * e2[..., None, :]
    return CorrectionMatrix(A, "3d_frame", {"min_wedge": float(w.min())})


def omega_decomposition(omega_vec, Y1, Y2) -> np.ndarray:
    """Coefficients (a1, a2, a3) with omega = a1 Y1 + a2 Y2 + a3 Y1 x Y2."""
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    M = np.stack([Y1, Y2, np.cross(Y1, Y2)], -1)
    return np.linalg.solve(M, np.asarray(omega_vec, dtype=float)[..., None])[..., 0]


def agoal_residuals(cm: CorrectionMatrix, Y1, Y2, coeffs) -> dict:
    """Residuals of the defining relations of the 3D correction matrix.

    With Omega = Q(a1 Y1 + a2 Y2 + a3 Y1 x Y2) and Omega_P = Q(a1 Y1 + a2 Y2):
    A Omega_P Y_j = 0 (j = 1, 2), A Omega (Y1 x Y2) = Omega (Y1 x Y2),
    A Y_j = Y_j.  Residuals are relative to the size of the data.
    """
    A = cm.A
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    a = np.asarray(coeffs, dtype=float)
    W = np.cross(Y1, Y2)
    wvec = a[..., 0:1] * Y1 + a[..., 1:2] * Y2 + a[..., 2:3] * W
    wP = a[..., 0:1] * Y1 + a[..., 1:2] * Y2
    Om, OmP = q_map(wvec), q_map(wP)

    def mv(Mx, v):
        return np.einsum("...ij,...j->...i", Mx, v)

    def rel(x, s):
        return float(np.max(np.linalg.norm(x, axis=-1) / np.maximum(s, 1e-300)))

    n1, n2 = np.linalg.norm(Y1, axis=-1), np.linalg.norm(Y2, axis=-1)
    nw, nW = np.linalg.norm(wvec, axis=-1), np.linalg.norm(W, axis=-1)
    nP = np.linalg.norm(wP, axis=-1)
    return {
        "A_OmegaP_Y1": rel(mv(A, mv(OmP, Y1)), nP * n1),
        "A_OmegaP_Y2": rel(mv(A, mv(OmP, Y2)), nP * n2),
        "A_Omega_W": rel(mv(A, mv(Om, W)) - mv(Om, W), nw * nW),
        "A_Y1": rel(mv(A, Y1) - Y1, n1),
        "A_Y2": rel(mv(A, Y2) - Y2, n2),
    }


def a3_identity_residual(gradU, Y1, Y2) -> float:
    """| curl u . (Y1 x Y2) - [(grad u Y1) . Y2 - (grad u Y2) . Y1] |.

    The left side is the third coefficient of the vorticity in the frame
    (Y1, Y2, Y1 x Y2) scaled by |Y1 x Y2|^2, so it is that coefficient
    itself for orthonormal frames.
    """
    G = np.asarray(gradU, dtype=float)
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    w = vorticity_vector(G)
    lhs = np.sum(w * np.cross(Y1, Y2), axis=-1)
    rhs = (np.sum(np.einsum("...ij,...j->...i", G, Y1) * Y2, axis=-1)
           - np.sum(np.einsum("...ij,...j->...i", G, Y2) * Y1, axis=-1))
    return float(np.max(np.abs(lhs - rhs), initial=0.0))


def graduT_identity_3d(gradU, Y1, Y2, *, solenoidal_tol: float = 1e-10) -> dict:
    """Check grad u^T (Y1 x Y2) = -(grad u Y1) x Y2 - Y1 x (grad u Y2) for div u = 0.

    Returns the max residual of all three components and separately of the
    explicit first-component formula
    Y2^2 (Y1.grad u)^3 - Y2^3 (Y1.grad u)^2 + Y1^3 (Y2.grad u)^2 - Y1^2 (Y2.grad u)^3.
    """
    G = np.asarray(gradU, dtype=float)
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    tr = np.trace(G, axis1=-2, axis2=-1)
    if np.max(np.abs(tr), initial=0.0) > solenoidal_tol * max(1.0, float(np.max(np.abs(G), initial=0.0))):
        raise ValueError("non-solenoidal input: trace of grad u is not zero")
    lhs = np.einsum("...ji,...j->...i", G, np.cross(Y1, Y2))
    a = np.einsum("...ij,...j->...i", G, Y1)
    c = np.einsum("...ij,...j->...i", G, Y2)
    rhs = -np.cross(a, Y2) - np.cross(Y1, c)
    first = Y2[..., 1] * a[..., 2] - Y2[..., 2] * a[..., 1] + Y1[..., 2] * c[..., 1] - Y1[..., 1] * c[..., 2]
    return {"residual": float(np.max(np.abs(lhs - rhs), initial=0.0)),
            "first_component": float(np.max(np.abs(lhs[..., 0] - first), initial=0.0))}


def corrected_gradient(gradU, omega_or_Omega, A) -> np.ndarray:
    """grad u - omega A in 2D; grad u - A Omega in 3D."""
    G = np.asarray(gradU, dtype=float)
    W = np.asarray(omega_or_Omega, dtype=float)
    A = np.asarray(A, dtype=float)
    if G.shape != A.shape:
        raise ValueError(f"shape mismatch: grad u {G.shape} vs A {A.shape}")
    d = G.shape[-1]
    if d == 2:
        if W.shape != G.shape[:-2]:
            raise ValueError("omega must be a scalar field on the same samples")
        return G - W[..., None, None] * A
    if W.shape != G.shape:
        raise ValueError("Omega must be a matrix field on the same samples")
    return G - A @ W
