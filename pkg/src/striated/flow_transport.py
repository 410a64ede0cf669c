"""Lagrangian flow maps, pushforwards, transported scalars and mollification.

The Eulerian state of a run is the inverse flow map X(t, x) = eta^{-1}(t, x)
sampled on the grid, so that every transported quantity is an exact
evaluation of initial data at the labels: omega(t) = omega_0(X(t)).  The map
is updated by composition, X_{n+1} = X_n o D, where D traces grid points back
over one step with RK4.  Forward markers eta(t, a) on the reference lattice
are advanced with classical RK4 and cubic-spline velocity interpolation,
together with grad eta along them from d/dt grad eta = grad u(eta) grad eta.
Interpolating trace-free grad u samples keeps the trace zero, so det grad eta
stays 1 up to the RK4 error even where grad u varies on a few cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter

from .biot_savart import _solver, mollify_lattice
from .grid import Grid, d1, d2, divergence, jacobian
from .holder_norms import holder_report


class MarkerEscape(RuntimeError):
    """A marker or back-traced point left the velocity safety box."""


class NumericalAbort(RuntimeError):
    """A non-finite value appeared during a run."""


# ----------------------------------------------------------------------------
# interpolation helpers

class GriddedField:
    """Samples on a cell-centred grid with cubic-spline or bilinear evaluation."""

    def __init__(self, grid: Grid, values: np.ndarray, order: int = 3, fill: float | None = 0.0):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self.order = order
        self.fill = fill
        v = self.values.reshape(grid.n, grid.n, -1)
        if order > 1:
            mode = "nearest" if fill is None else "constant"
            self._coef = [spline_filter(v[..., k], order=order, mode=mode) for k in range(v.shape[-1])]
        else:
            self._coef = [v[..., k] for k in range(v.shape[-1])]
        self._tail = self.values.shape[2:]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = self.grid.to_index(x)
        coords = [idx[..., 0].ravel(), idx[..., 1].ravel()]
        mode = "nearest" if self.fill is None else "constant"
        cval = 0.0 if self.fill is None else self.fill
        out = [map_coordinates(c, coords, order=self.order, mode=mode, cval=cval, prefilter=False)
               for c in self._coef]
        res = np.stack(out, -1).reshape(x.shape[:-1] + (len(out),))
        return res.reshape(x.shape[:-1] + self._tail)

    def inside(self, x, margin_cells: float = 1.0) -> np.ndarray:
        idx = self.grid.to_index(np.asarray(x, dtype=float))
        lo, hi = margin_cells - 0.5, self.grid.n - 0.5 - margin_cells
        return np.all((idx >= lo) & (idx <= hi), axis=-1)


def gridded_function(values: np.ndarray, grid: Grid, fill: float = 0.0) -> Callable:
    """Cubic-spline interpolant of grid samples, ``fill`` outside the box."""
    return GriddedField(grid, values, 3, fill)


# ----------------------------------------------------------------------------
# state

@dataclass
class FlowState:
    t: float
    grid: Grid
    markers: np.ndarray          # eta(t, a) for a on the grid lattice
    inv_markers: np.ndarray      # X(t, x) = eta^{-1}(t, x) on the grid
    steps: int = 0
    curve: np.ndarray | None = None   # extra markers, e.g. a patch boundary
    deform: np.ndarray | None = None  # grad eta evolved along the markers

    @classmethod
    def initial(cls, grid: Grid, curve=None) -> "FlowState":
        P = grid.points()
        c = None if curve is None else np.array(curve, dtype=float)
        F = np.broadcast_to(np.eye(2), P.shape[:-1] + (2, 2)).copy()
        return cls(0.0, grid, P.copy(), P.copy(), 0, c, F)

    @property
    def grad_eta(self) -> np.ndarray:
        if self.deform is None:
            return self.grad_eta_fd
        return self.deform

    @property
    def grad_eta_fd(self) -> np.ndarray:
        """Centred differences of the markers (cross-check for ``deform``)."""
        return jacobian(self.markers, self.grid.spacing)

    @property
    def grad_inv(self) -> np.ndarray:
        return jacobian(self.inv_markers, self.grid.spacing)

    def volume_drift(self, mask=None) -> float:
        G = self.grad_eta
        det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
        e = np.abs(det - 1.0)
        if mask is None and self.deform is None:
            # edge rows use lower-order differences; skip them
            e = e[2:-2, 2:-2]
        elif mask is not None:
            e = e[mask]
        return float(e.max())

    def roundtrip_error(self) -> float:
        """max |eta(X(x)) - x| over grid points whose labels stay inside the box.

        Points closer to the box edge than their displacement |x - X| (plus 3
        cells) are skipped: their back-trajectories may have left the box,
        where the inverse map is extrapolated.
        """
        g = self.grid
        eta = GriddedField(g, self.markers, 3, None)
        X = self.inv_markers
        P = g.points()
        edge = g.half_width - np.max(np.abs(P), axis=-1)
        ok = eta.inside(X, 3.0) & (edge > np.linalg.norm(X - P, axis=-1) + 3.0 * g.spacing)
        back = eta(X)
        err = np.linalg.norm(back - P, axis=-1)
        return float(err[ok].max()) if ok.any() else 0.0


# ----------------------------------------------------------------------------
# velocity sources

class TimeLevels:
    """Velocity samples at t0, t0 + dt/2, t0 + dt on a (possibly larger) grid,
    with quadratic interpolation in time.  ``grads`` optionally holds grad u
    samples at the same levels."""

    def __init__(self, vgrid: Grid, t0: float, dt: float, u0, uh, u1, order: int,
                 grads=None):
        self.vgrid, self.t0, self.dt = vgrid, t0, dt
        self.order = order
        self.fields = [GriddedField(vgrid, u, order, 0.0) for u in (u0, uh, u1)]
        self.gfields = None
        if grads is not None:
            m = vgrid.n
            self.gfields = [GriddedField(vgrid, np.reshape(A, (m, m, 4)), order, 0.0) for A in grads]
        self._box = vgrid

    def _weights(self, t: float) -> np.ndarray:
        tau = (t - self.t0) / self.dt
        return np.array([(tau - 0.5) * (tau - 1.0) / 0.5, tau * (tau - 1.0) / -0.25,
                         tau * (tau - 0.5) / 0.5])

    @staticmethod
    def _combine(w, fields, x):
        out = 0.0
        for wk, f in zip(w, fields):
            if abs(wk) > 1e-15:
                out = out + wk * f(x)
        return out

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._combine(self._weights(t), self.fields, x)

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        A = self._combine(self._weights(t), self.gfields, x)
        return np.reshape(A, np.shape(x)[:-1] + (2, 2))

    def check(self, x: np.ndarray, what: str) -> None:
        if not np.all(self.fields[0].inside(x, 2.0)):
            raise MarkerEscape(f"{what} left the velocity safety box")


def _rk4_back(levels: TimeLevels, x: np.ndarray, t1: float, h: float) -> np.ndarray:
    k1 = levels(t1, x)
    k2 = levels(t1 - 0.5 * h, x - 0.5 * h * k1)
    k3 = levels(t1 - 0.5 * h, x - 0.5 * h * k2)
    k4 = levels(t1 - h, x - h * k3)
    return x - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_forward(levels: TimeLevels, x: np.ndarray, t0: float, h: float) -> np.ndarray:
    k1 = levels(t0, x)
    k2 = levels(t0 + 0.5 * h, x + 0.5 * h * k1)
    k3 = levels(t0 + 0.5 * h, x + 0.5 * h * k2)
    k4 = levels(t0 + h, x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_forward_deform(levels: TimeLevels, x: np.ndarray, F: np.ndarray, t0: float,
                       h: float) -> tuple[np.ndarray, np.ndarray]:
    """RK4 for (eta, grad eta): x' = u(t, x), F' = grad u(t, x) F."""
    mm = lambda A, B: np.einsum("...ij,...jk->...ik", A, B)
    th = t0 + 0.5 * h
    k1 = levels(t0, x)
    K1 = mm(levels.gradient(t0, x), F)
    x2 = x + 0.5 * h * k1
    k2 = levels(th, x2)
    K2 = mm(levels.gradient(th, x2), F + 0.5 * h * K1)
    x3 = x + 0.5 * h * k2
    k3 = levels(th, x3)
    K3 = mm(levels.gradient(th, x3), F + 0.5 * h * K2)
    x4 = x + h * k3
    k4 = levels(t0 + h, x4)
    K4 = mm(levels.gradient(t0 + h, x4), F + h * K3)
    return (x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4),
            F + h / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4))


def _compose(X: np.ndarray, grid: Grid, D: np.ndarray) -> np.ndarray:
    """X o D using cubic interpolation of the displacement X - id."""
    disp = GriddedField(grid, X - grid.points(), 3, None)
    return D + disp(D)


def advance(state: FlowState, velocity_provider: Callable, dt: float,
            marker_order: int = 3, gradient_provider: Callable | None = None) -> FlowState:
    """One RK4 step of the forward markers and the inverse map for a
    prescribed velocity ``velocity_provider(t, x)``.

    grad u for the evolved grad eta comes from ``gradient_provider(t, x)``
    (G[..., i, j] = d_j u^i) or, by default, from centred differences of the
    velocity samples.  ``marker_order`` 1 gives bilinear marker velocities."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.grid
    vg = g.extended(2)
    P = vg.points()
    t0 = state.t
    ts = (t0, t0 + 0.5 * dt, t0 + dt)
    us = [velocity_provider(t, P) for t in ts]
    if gradient_provider is None:
        grads = [jacobian(u, vg.spacing) for u in us]
    else:
        grads = [gradient_provider(t, P) for t in ts]
    levels = TimeLevels(vg, t0, dt, *us, 3, grads=grads)
    return _step_with_levels(state, levels, dt, marker_order)


def _step_with_levels(state: FlowState, levels: TimeLevels, dt: float,
                      marker_order: int = 3) -> FlowState:
    g = state.grid
    t0 = state.t
    D = _rk4_back(levels, g.points(), t0 + dt, dt)
    levels.check(D, "back-traced point")
    X1 = _compose(state.inv_markers, g, D)
    ml = levels if marker_order == 3 else _reorder(levels, marker_order)
    F1 = None
    if state.deform is not None and ml.gfields is not None:
        m1, F1 = _rk4_forward_deform(ml, state.markers, state.deform, t0, dt)
    else:
        m1 = _rk4_forward(ml, state.markers, t0, dt)
    ml.check(m1, "marker")
    c1 = None
    if state.curve is not None:
        c1 = _rk4_forward(ml, state.curve, t0, dt)
        ml.check(c1, "curve marker")
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(m1))):
        raise NumericalAbort("non-finite flow map")
    if F1 is not None and not np.all(np.isfinite(F1)):
        raise NumericalAbort("non-finite grad eta")
    return FlowState(t0 + dt, g, m1, X1, state.steps + 1, c1, F1)


def _reorder(levels: TimeLevels, order: int) -> TimeLevels:
    out = TimeLevels.__new__(TimeLevels)
    out.vgrid, out.t0, out.dt = levels.vgrid, levels.t0, levels.dt
    out.order = order
    out.fields = [GriddedField(levels.vgrid, f.values, order, 0.0) for f in levels.fields]
    out.gfields = None
    if levels.gfields is not None:
        out.gfields = [GriddedField(levels.vgrid, f.values, order, 0.0) for f in levels.gfields]
    out._box = levels.vgrid
    return out


class EulerSolver:
    """2D Euler via the inverse flow map: omega(t) = omega_0(X(t)).

    Each step computes velocities at t_n, t_n + dt/2 and t_n + dt from the
    vorticity at those times (Biot-Savart on a grid twice as wide, same
    spacing): a predictor uses velocities extrapolated from earlier levels,
    a corrector retraces with the predicted ones.  Three Biot-Savart solves
    per step, each also giving grad u for the evolved grad eta.
    """

    def __init__(self, grid: Grid, omega0: Callable, state: FlowState | None = None,
                 marker_order: int = 3):
        self.grid = grid
        self.marker_order = marker_order
        self.vgrid = grid.extended(2)
        self.omega0 = omega0
        self.state = state if state is not None else FlowState.initial(grid)
        self._u, self._A = self.fields_for(self.state.inv_markers)
        self._u_prev = None
        self._dt_prev = None
        self.last_levels: TimeLevels | None = None

    def checkpoint(self):
        return (self.state, self._u, self._A, self._u_prev, self._dt_prev)

    def restore(self, cp) -> None:
        self.state, self._u, self._A, self._u_prev, self._dt_prev = cp

    def vorticity_for(self, X: np.ndarray) -> np.ndarray:
        w = np.asarray(self.omega0(X), dtype=float)
        if not np.all(np.isfinite(w)):
            raise NumericalAbort("non-finite vorticity")
        return w

    def velocity_for(self, X: np.ndarray) -> np.ndarray:
        return self.fields_for(X)[0]

    def fields_for(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocity and grad u = (omega / 2) J + PV grad K * omega on the
        extended grid; omega vanishes outside the base grid."""
        w = self.vorticity_for(X)
        u1, u2, p, q = _solver(self.grid, 2).apply(w, ("K1", "K2", "P", "Q"))
        n = self.grid.n
        a = (self.vgrid.n - n) // 2
        half = np.zeros_like(p)
        half[a:a + n, a:a + n] = 0.5 * w
        A = np.stack([np.stack([p, q - half], -1), np.stack([q + half, -p], -1)], -2)
        return np.stack([u1, u2], -1), A

    @property
    def omega(self) -> np.ndarray:
        return self.vorticity_for(self.state.inv_markers)

    @property
    def velocity_ext(self) -> np.ndarray:
        return self._u

    @property
    def velocity(self) -> np.ndarray:
        n = self.grid.n
        a = n // 2
        return self._u[a:a + n, a:a + n]

    def step(self, dt: float) -> FlowState:
        g = self.grid
        st = self.state
        u0, A0 = self._u, self._A
        if self._u_prev is None:
            uh_p, u1_p = u0, u0
        else:
            # linear extrapolation in time from the previous level
            slope = (u0 - self._u_prev) * (dt / self._dt_prev)
            uh_p, u1_p = u0 + 0.5 * slope, u0 + slope
        pts = g.points()
        # predictor
        lev = TimeLevels(self.vgrid, st.t, dt, u0, uh_p, u1_p, 3)
        Dh = _rk4_back(lev, pts, st.t + 0.5 * dt, 0.5 * dt)
        D1 = _rk4_back(lev, pts, st.t + dt, dt)
        lev.check(D1, "back-traced point")
        Xh = _compose(st.inv_markers, g, Dh)
        X1 = _compose(st.inv_markers, g, D1)
        uh, Ah = self.fields_for(Xh)
        u1, A1 = self.fields_for(X1)
        # corrector
        lev = TimeLevels(self.vgrid, st.t, dt, u0, uh, u1, 3, grads=(A0, Ah, A1))
        new = _step_with_levels(st, lev, dt, self.marker_order)
        u1c, A1c = self.fields_for(new.inv_markers)
        if not np.all(np.isfinite(u1c)):
            raise NumericalAbort("non-finite velocity")
        self.last_levels = TimeLevels(self.vgrid, st.t, dt, u0, uh, u1c, 3)
        self._u_prev, self._u, self._A, self._dt_prev = u0, u1c, A1c, dt
        self.state = new
        return new


# ----------------------------------------------------------------------------
# transported quantities

def transport_scalar(f0, state: FlowState) -> np.ndarray:
    """f(t, x) = f0(X(t, x)); ``f0`` is a callable on points or grid samples
    (bicubic interpolation)."""
    if callable(f0):
        return np.asarray(f0(state.inv_markers), dtype=float)
    f0 = np.asarray(f0, dtype=float)
    if f0.shape[:2] != (state.grid.n, state.grid.n):
        raise ValueError("scalar samples do not match the grid")
    return GriddedField(state.grid, f0, 3, 0.0)(state.inv_markers)


def _eval_field(Y0, pts: np.ndarray, grid: Grid) -> np.ndarray:
    if callable(Y0):
        return np.asarray(Y0(pts), dtype=float)
    return GriddedField(grid, np.asarray(Y0, dtype=float), 3, 0.0)(pts)


def pushforward(Y0, state: FlowState, *, crosscheck: bool = False):
    """Y(t, x) = (grad eta Y0)(X(t, x)).

    The product P(a) = grad eta(a) Y0(a) is formed on the marker lattice and
    interpolated at the labels X(t, x).  With ``crosscheck=True`` the
    alternative [grad X]^{-1} Y0(X) is returned as well.
    """
    g = state.grid
    a = g.points()
    Pa = np.einsum("...ij,...j->...i", state.grad_eta, _eval_field(Y0, a, g))
    X = state.inv_markers
    # labels beyond the lattice edge take the edge value
    Y = GriddedField(g, Pa, 3, None)(X)
    if not crosscheck:
        return Y
    GX = state.grad_inv
    Y0X = _eval_field(Y0, X, g)
    Y2 = np.linalg.solve(GX, Y0X[..., None])[..., 0]
    return Y, Y2


@dataclass
class PushedFamily:
    labels: list
    members: list
    divergences: list

    def __len__(self):
        return len(self.members)


def push_family(family: list, state: FlowState, div_family: list | None = None) -> PushedFamily:
    """Push every member of a family; divergences are transported as scalars."""
    members = [pushforward(Y0, state) for Y0 in family]
    divs = []
    for k, Y0 in enumerate(family):
        if div_family is not None and div_family[k] is not None:
            divs.append(transport_scalar(div_family[k], state))
        else:
            g = state.grid
            d0 = divergence(_eval_field(Y0, g.points(), g), g.spacing)
            divs.append(transport_scalar(d0, state))
    return PushedFamily(list(range(len(family))), members, divs)


def transport_residual(Y_prev, Y_next, Y_mid, u_mid, gradu_mid, dt: float, spacing: float) -> np.ndarray:
    """Pointwise residual of d_t Y + u . grad Y - grad u Y at the midpoint."""
    dYdt = (Y_next - Y_prev) / dt
    adv = u_mid[..., 0:1] * np.stack([d1(Y_mid[..., k], spacing) for k in range(2)], -1) \
        + u_mid[..., 1:2] * np.stack([d2(Y_mid[..., k], spacing) for k in range(2)], -1)
    stretch = np.einsum("...ij,...j->...i", gradu_mid, Y_mid)
    return np.linalg.norm(dYdt + adv - stretch, axis=-1)


# ----------------------------------------------------------------------------
# mollification

def mollify(f: np.ndarray, grid: Grid, delta: float) -> np.ndarray:
    """rho_delta * f by midpoint quadrature; ``f`` scalar or vector samples."""
    if delta < grid.spacing:
        raise ValueError("delta below the resolvable scale (grid spacing)")
    f = np.asarray(f, dtype=float)
    if f.ndim == 2:
        return mollify_lattice(f, grid, delta)
    flat = f.reshape(grid.n, grid.n, -1)
    out = np.stack([mollify_lattice(flat[..., k], grid, delta) for k in range(flat.shape[-1])], -1)
    return out.reshape(f.shape)


def convergence_study(f: np.ndarray, grid: Grid, deltas, alpha: float,
                      f_delta: Callable | None = None, **holder_kw) -> list[dict]:
    """C^alpha distance between f and its delta-regularisation for each delta.

    ``f_delta(delta)`` supplies the regularised field (default: rho_delta * f).
    """
    rows = []
    for delta in deltas:
        fd = mollify(f, grid, delta) if f_delta is None else f_delta(delta)
        rep = holder_report(fd - f, alpha, spacing=grid.spacing, **holder_kw)
        rows.append({"delta": float(delta), "distance": rep.norm, "linf": rep.linf,
                     "seminorm": rep.seminorm})
    return rows


def commutator(omega0: np.ndarray, Y0: np.ndarray, grid: Grid, eps: float) -> np.ndarray:
    """(rho_eps * omega0) Y0 - rho_eps * (omega0 Y0)."""
    w = np.asarray(omega0, dtype=float)
    Y = np.asarray(Y0, dtype=float)
    return mollify(w, grid, eps)[..., None] * Y - mollify(w[..., None] * Y, grid, eps)


def r0_correction(omega0: np.ndarray, Y0: np.ndarray, grid: Grid, eps: float,
                  div_omega0_Y0=None) -> np.ndarray:
    """R0 = omega_{0,eps} Y0 + rho_eps * grad F2 * div(omega0 Y0) - rho_eps * (omega0 Y0).

    ``div_omega0_Y0`` must be supplied (use zeros where it vanishes exactly,
    as for a patch with a tangential field).
    """
    from .holder_norms import potential_of_divergence
    if div_omega0_Y0 is None:
        raise ValueError("missing div(omega0 Y0) data")
    w = np.asarray(omega0, dtype=float)
    Y = np.asarray(Y0, dtype=float)
    dv = np.asarray(div_omega0_Y0, dtype=float)
    pot = potential_of_divergence(dv, grid) if np.any(dv) else np.zeros_like(Y)
    return mollify(w, grid, eps)[..., None] * Y + mollify(pot, grid, eps) - mollify(w[..., None] * Y, grid, eps)
