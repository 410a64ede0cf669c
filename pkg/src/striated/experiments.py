"""Run orchestration, diagnostics, envelope fits and verification suites."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import least_squares

from .biot_savart import (VorticityField, directional_grad_u, grad_velocity, mollify_lattice)
from .flow_transport import (EulerSolver, FlowState, GriddedField, NumericalAbort, MarkerEscape,
                             pushforward, transport_scalar)
from .grid import Grid, divergence
from .holder_norms import curve_c1alpha_norm, holder_report, neg_holder_estimate
from .io import ConfigError, fmt, read_config, write_csv, write_manifest, write_snapshot
from .kernels import bump_profile, bump_profile_deriv
from .oracles import mollified_patch_profile, patch_profile, smooth_profile
from .striated_algebra import (correction_matrix_2d, family_infimum, opnorm, partition_of_unity_2d,
                               select_members, serfati_bound_2d, serfati_bound_general)


class PropertyViolation(RuntimeError):
    """A checked property failed (exit code 4)."""


# ----------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    n: int = 128
    half_width: float = 2.0
    alpha: float = 0.5
    dt: float = 0.01
    t_final: float = 1.0
    eps: float | None = None          # default 2 x spacing, 0 disables mollification
    profile: str = "patch"            # patch | perturbed_patch | smooth | zero
    radius: float = 1.0
    amplitude: float = 0.0            # cubic perturbation of the patch level set
    power: int = 4
    family: str = "patch"             # patch | coordinate
    inner: float = 0.4                # Z0 cutoff: f = 1 for r < inner
    outer: float = 0.6                # f = 0 for r > outer
    partition_R: float = 0.15
    curve_points: int = 256
    rows_per_unit: int = 10
    seed: int = 0
    marker_order: int = 3
    volume_tol: float = 1e-3
    out_dir: str = "out"

    _SECTIONS = {
        "grid": ("n", "half_width"),
        "run": ("alpha", "dt", "t_final", "eps", "rows_per_unit", "seed", "marker_order"),
        "profile": ("profile", "radius", "amplitude", "power"),
        "family": ("family", "inner", "outer", "partition_R", "curve_points"),
        "tolerances": ("volume_tol",),
        "output": ("out_dir",),
    }

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.half_width)

    @property
    def eps_value(self) -> float:
        return 2.0 * self.grid.spacing if self.eps is None else float(self.eps)

    def validate(self) -> None:
        n = self.n
        if not (isinstance(n, (int, np.integer)) and 64 <= n <= 1024 and n & (n - 1) == 0):
            raise ConfigError("n must be a power of two in [64, 1024]")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not (self.dt > 0 and self.t_final > 0):
            raise ConfigError("dt and t_final must be positive")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigError("t_final must be a multiple of dt")
        if self.profile not in ("patch", "perturbed_patch", "smooth", "zero"):
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.family not in ("patch", "coordinate"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.eps is not None and self.eps != 0 and self.eps < self.grid.spacing:
            raise ConfigError("eps below the grid spacing")
        if self.radius >= self.half_width:
            raise ConfigError("profile radius must be inside the box")
        if self.partition_R < 4 * self.grid.spacing:
            raise ConfigError("partition_R must be at least 4 grid spacings")
        if not 0 < self.inner < self.outer:
            raise ConfigError("need 0 < inner < outer")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cp = read_config(path)
        kw = {}
        types = {k: type(v) for k, v in cls().__dict__.items()}
        for sec, keys in cls._SECTIONS.items():
            if not cp.has_section(sec):
                continue
            for k, v in cp.items(sec):
                if k not in keys:
                    raise ConfigError(f"unknown key {sec}.{k}")
                try:
                    if k == "eps":
                        kw[k] = None if v.strip().lower() in ("", "auto") else float(v)
                    elif types[k] is int:
                        kw[k] = int(v)
                    elif types[k] is float:
                        kw[k] = float(v)
                    else:
                        kw[k] = v.strip()
                except ValueError as e:
                    raise ConfigError(f"bad value for {sec}.{k}: {v!r}") from e
        for sec in cp.sections():
            if sec not in cls._SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
        return cls(**kw)

    def sections(self) -> dict:
        return {sec: {k: getattr(self, k) for k in keys} for sec, keys in self._SECTIONS.items()}


# ----------------------------------------------------------------------------
# initial data and families

@dataclass
class InitialData:
    omega0: Callable
    omega0_linf: float
    curve: np.ndarray | None = None
    radial: object | None = None
    level: Callable | None = None


def _level(cfg: RunConfig):
    """F(x) = |y|^2 + a (y1^3 - 3 y1 y2^2), y = x / radius; the patch is {F < 1}."""
    rho, a = cfg.radius, cfg.amplitude

    def F(x):
        y = np.asarray(x, dtype=float) / rho
        return y[..., 0] ** 2 + y[..., 1] ** 2 + a * (y[..., 0] ** 3 - 3 * y[..., 0] * y[..., 1] ** 2)

    def gradF(x):
        y = np.asarray(x, dtype=float) / rho
        g1 = 2 * y[..., 0] + 3 * a * (y[..., 0] ** 2 - y[..., 1] ** 2)
        g2 = 2 * y[..., 1] - 6 * a * y[..., 0] * y[..., 1]
        return np.stack([g1, g2], -1) / rho

    return F, gradF


def level_curve(cfg: RunConfig, m: int) -> np.ndarray:
    """Samples of {F = 1} at equally spaced polar angles (Newton in r)."""
    th = 2 * np.pi * np.arange(m) / m
    c3 = np.cos(3 * th)
    r = np.ones(m)
    for _ in range(60):
        f = r * r + cfg.amplitude * c3 * r ** 3 - 1.0
        r = r - f / (2 * r + 3 * cfg.amplitude * c3 * r * r)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ConfigError("patch level set is not star-shaped for this amplitude")
    return cfg.radius * r[:, None] * np.stack([np.cos(th), np.sin(th)], -1)


def initial_data(cfg: RunConfig) -> InitialData:
    g = cfg.grid
    eps = cfg.eps_value
    if cfg.profile == "zero":
        return InitialData(lambda x: np.zeros(np.asarray(x).shape[:-1]), 0.0)
    if cfg.profile == "patch" and cfg.amplitude == 0.0:
        prof = patch_profile(cfg.radius) if eps == 0 else mollified_patch_profile(cfg.radius, eps)
        curve = level_curve(cfg, cfg.curve_points)
        return InitialData(lambda x: prof(np.linalg.norm(x, axis=-1)), 1.0, curve, prof)
    if cfg.profile == "smooth":
        prof = smooth_profile(cfg.radius, cfg.power)
        if eps == 0:
            return InitialData(lambda x: prof(np.linalg.norm(x, axis=-1)), 1.0, None, prof)
        raw = lambda x: prof(np.linalg.norm(x, axis=-1))
        curve = None
    else:
        F, _ = _level(cfg)
        raw = lambda x: (F(x) < 1.0).astype(float)
        curve = level_curve(cfg, cfg.curve_points)
        if eps == 0:
            return InitialData(raw, 1.0, curve, None, F)
    # generic route: sub-cell averages on a twice finer grid, mollified there
    fine = g.refined()
    sub = 4
    off = ((np.arange(sub) + 0.5) / sub - 0.5) * fine.spacing
    P = fine.points()
    acc = np.zeros((fine.n, fine.n))
    for a in off:
        for b in off:
            acc += raw(P + np.array([a, b]))
    acc /= sub * sub
    vals = mollify_lattice(acc, fine, eps)
    fn = GriddedField(fine, vals, 3, 0.0)
    linf = float(np.max(np.abs(vals)))
    return InitialData(fn, linf, curve, None, _level(cfg)[0] if cfg.profile != "smooth" else None)


def _cutoff(x, r_in: float, r_out: float):
    """f = 1 for |x| <= r_in, 0 for |x| >= r_out, and its gradient."""
    r = np.linalg.norm(x, axis=-1)
    w = r_out - r_in
    t = 1.0 + (r - r_in) / w
    f = bump_profile(t)
    df = bump_profile_deriv(t) / w
    safe = np.where(r > 0, r, 1.0)
    grad = (df / safe)[..., None] * x
    return f, grad


@dataclass
class Member:
    label: str
    field: Callable          # points -> vectors
    div: Callable            # points -> div Y0


def build_family(cfg: RunConfig) -> list[Member]:
    if cfg.family == "coordinate":
        e1 = lambda x: np.broadcast_to(np.array([1.0, 0.0]), np.asarray(x).shape).copy()
        e2 = lambda x: np.broadcast_to(np.array([0.0, 1.0]), np.asarray(x).shape).copy()
        zero = lambda x: np.zeros(np.asarray(x).shape[:-1])
        return [Member("e1", e1, zero), Member("e2", e2, zero)]
    _, gradF = _level(cfg)

    def Y0(x):
        gF = gradF(x)
        return 0.5 * np.stack([gF[..., 1], -gF[..., 0]], -1)

    def Z0(x):
        x = np.asarray(x, dtype=float)
        f, gf = _cutoff(x, cfg.inner, cfg.outer)
        return np.stack([f + x[..., 1] * gf[..., 1], -x[..., 1] * gf[..., 0]], -1)

    zero = lambda x: np.zeros(np.asarray(x).shape[:-1])
    return [Member("tangent", Y0, zero), Member("core", Z0, zero)]


# ----------------------------------------------------------------------------
# diagnostics

COLUMNS = [
    "t",
    "gradu_linf",              # sup |grad u|
    "V",                       # ||omega_0||_inf + sup |PV grad K * omega|
    "family_holder",           # max_lambda ||Y_lambda(t)||_{C^alpha}
    "family_div_holder",       # max_lambda ||div Y_lambda(t)||_{C^alpha}
    "div_omegaY_neg_holder",   # max_lambda ||div(omega Y_lambda)||_{C^{alpha-1}} (estimate)
    "Ygradu_holder",           # max_lambda ||Y_lambda . grad u||_{C^alpha}
    "grad_eta_linf",
    "grad_eta_inv_linf",
    "I_family",
    "corrected_grad_holder",   # ||grad u - omega A||_{C^alpha}
    "boundary_c1alpha",        # C^{1+alpha} norm of the transported boundary curve
    "V_current",               # V with ||omega(t)||_inf in place of ||omega_0||_inf
    "u_linf",
    "omega_l1",
    "omega_l2",
    "omega_linf",
    "volume_drift",
]


@dataclass
class RunContext:
    cfg: RunConfig
    data: InitialData
    family: list[Member]
    div_omegaY0: list[Callable]
    partition: object
    edge: int = 2


def make_context(cfg: RunConfig, data: InitialData | None = None) -> RunContext:
    g = cfg.grid
    data = initial_data(cfg) if data is None else data
    fam = build_family(cfg)
    divs = [div_product(data.omega0, m) for m in fam]
    part = partition_of_unity_2d(cfg.partition_R, g.half_width, spacing=g.spacing)
    return RunContext(cfg, data, fam, divs, part)


def div_product(omega0: Callable, member: Member, h: float = 1e-5) -> Callable:
    """x -> div(omega_0 Y_0)(x) = Y_0 . grad omega_0 + omega_0 div Y_0, with
    grad omega_0 from centred differences of the (smooth) callable."""
    def fn(x):
        x = np.asarray(x, dtype=float)
        e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
        g1 = (omega0(x + e1) - omega0(x - e1)) / (2 * h)
        g2 = (omega0(x + e2) - omega0(x - e2)) / (2 * h)
        Y = member.field(x)
        return Y[..., 0] * g1 + Y[..., 1] * g2 + omega0(x) * member.div(x)
    return fn


def _interior(a: np.ndarray, e: int) -> np.ndarray:
    return a[e:-e, e:-e]


def diagnostics(solver: EulerSolver, ctx: RunContext, *, strict_partition: bool = False) -> dict:
    cfg, g = ctx.cfg, solver.grid
    st = solver.state
    al = cfg.alpha
    P = g.points()
    X = st.inv_markers
    w = solver.omega
    wf = VorticityField(g, w)
    gv = grad_velocity(wf)
    gradu = gv.grad
    pv_sup = float(np.max(opnorm(gv.sym_part)))
    members = [pushforward(m.field, st) for m in ctx.family]
    divY = [transport_scalar(m.div, st) for m in ctx.family]
    div_wY = [transport_scalar(d, st) for d in ctx.div_omegaY0]
    hs = dict(spacing=g.spacing)
    row = {"t": st.t}
    row["gradu_linf"] = float(np.max(opnorm(gradu)))
    row["V"] = ctx.data.omega0_linf + pv_sup
    row["family_holder"] = max(holder_report(Y, al, **hs).norm for Y in members)
    row["family_div_holder"] = max(holder_report(d, al, **hs).norm for d in divY)
    row["div_omegaY_neg_holder"] = max(
        neg_holder_estimate(w[..., None] * Y, g, al, div=d).value for Y, d in zip(members, div_wY))
    row["Ygradu_holder"] = max(
        holder_report(np.einsum("...ij,...j->...i", gradu, Y), al, **hs).norm for Y in members)
    e = ctx.edge
    row["grad_eta_linf"] = float(np.max(opnorm(_interior(st.grad_eta, e))))
    row["grad_eta_inv_linf"] = float(np.max(opnorm(_interior(st.grad_inv, e))))
    I = family_infimum(members)
    row["I_family"] = I
    part = select_members(ctx.partition, members, X, I, strict=strict_partition)
    cm = correction_matrix_2d(members, part, P, labels=X, I_value=I, strict=strict_partition)
    row["corrected_grad_holder"] = holder_report(gradu - w[..., None, None] * cm.A, al, **hs).norm
    row["boundary_c1alpha"] = curve_c1alpha_norm(st.curve, al) if st.curve is not None else 0.0
    row["V_current"] = float(np.max(np.abs(w))) + pv_sup
    row["u_linf"] = float(np.max(np.linalg.norm(solver.velocity_ext, axis=-1)))
    row["omega_l1"] = wf.l1
    row["omega_l2"] = wf.l2
    row["omega_linf"] = wf.linf
    row["volume_drift"] = st.volume_drift()
    for k, v in row.items():
        if not np.isfinite(v):
            raise NumericalAbort(f"diagnostics: non-finite {k}")
    return row


# ----------------------------------------------------------------------------
# run

@dataclass
class RunResult:
    rows: list[dict]
    csv_path: Path | None
    snapshots: list[Path] = field(default_factory=list)
    solver: EulerSolver | None = None
    context: RunContext | None = None
    states: dict = field(default_factory=dict)


def _guarded_step(solver: EulerSolver, dt: float, tol: float, depth: int = 0) -> None:
    """One step, retried as two half steps (up to 3 levels) when this step
    takes the volume drift across ``tol``."""
    cp = solver.checkpoint()
    before = solver.state.volume_drift()
    solver.step(dt)
    if before <= tol < solver.state.volume_drift() and depth < 3:
        solver.restore(cp)
        _guarded_step(solver, 0.5 * dt, tol, depth + 1)
        _guarded_step(solver, 0.5 * dt, tol, depth + 1)


def run(cfg: RunConfig, *, write: bool = True, keep_states=(), callback=None) -> RunResult:
    """Advance the mollified data to t_final, one diagnostics row per output time.

    ``keep_states`` lists times whose FlowState is retained in the result.
    ``callback(solver)`` is called after every step.
    """
    g = cfg.grid
    ctx = make_context(cfg)
    state = FlowState.initial(g, ctx.data.curve)
    try:
        solver = EulerSolver(g, ctx.data.omega0, state, cfg.marker_order)
    except MarkerEscape as e:
        raise NumericalAbort(f"init: {e}") from e
    umax = float(np.max(np.linalg.norm(solver.velocity_ext, axis=-1)))
    if umax > 0 and cfg.dt > 0.5 * g.spacing / umax:
        raise ConfigError(f"dt = {cfg.dt} violates dt <= 0.5 spacing / |u| = {0.5 * g.spacing / umax:.4g}")
    n_steps = int(round(cfg.t_final / cfg.dt))
    every = max(1, int(round(1.0 / (cfg.rows_per_unit * cfg.dt))))
    snap_steps = {0, n_steps // 2, n_steps}
    keep = {int(round(t / cfg.dt)) for t in keep_states}
    out = Path(cfg.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    rows, snaps, states = [], [], {}

    def record(step):
        if step % every == 0 or step == n_steps:
            rows.append(diagnostics(solver, ctx))
        if step in keep:
            states[round(step * cfg.dt, 12)] = (solver.state, solver.omega.copy(), solver.velocity.copy())
        if write and step in snap_steps:
            tag = f"t{step * cfg.dt:.4f}"
            for name, arr in (("omega", solver.omega), ("velocity", solver.velocity),
                              ("inv_map", solver.state.inv_markers)):
                p = out / f"snap_{tag}_{name}.bin"
                write_snapshot(p, arr, g)
                snaps.append(p)

    stage = "diagnostics t=0"
    try:
        record(0)
        for k in range(1, n_steps + 1):
            stage = f"step {k}"
            _guarded_step(solver, cfg.dt, cfg.volume_tol)
            u = float(np.max(np.linalg.norm(solver.velocity_ext, axis=-1)))
            if not np.isfinite(u):
                raise NumericalAbort("non-finite velocity")
            if cfg.dt > 0.5 * g.spacing / max(u, 1e-300) * 1.5:
                raise NumericalAbort(f"CFL violated (|u| = {u:.4g})")
            if callback is not None:
                callback(solver)
            stage = f"diagnostics step {k}"
            record(k)
    except (NumericalAbort, MarkerEscape) as e:
        raise NumericalAbort(f"{stage}: {e}") from e
    csv_path = None
    if write:
        csv_path = out / "diagnostics.csv"
        write_csv(csv_path, COLUMNS, [[r[c] for c in COLUMNS] for r in rows])
        sec = cfg.sections()
        sec["derived"] = {"eps": cfg.eps_value, "spacing": g.spacing, "steps": n_steps,
                          "rows": len(rows)}
        write_manifest(out / "manifest.txt", sec)
        (out / "partition.txt").write_text(ctx.partition.manifest())
    return RunResult(rows, csv_path, snaps, solver, ctx, states)


# ----------------------------------------------------------------------------
# envelopes and Gronwall

@dataclass
class GronwallResult:
    hypothesis: bool
    conclusion: bool | None
    max_hypothesis_gap: float
    max_conclusion_gap: float | None

    def __bool__(self) -> bool:
        return bool(self.hypothesis and self.conclusion)


def _cumtrapz(y, t):
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def gronwall_check(t, f, g, h, direction: str = "forward", rtol: float = 1e-4) -> GronwallResult:
    """Discrete Gronwall: forward  f <= h + int g f  implies  f <= h exp(int g);
    reverse  f >= h - int g f  implies  f >= h exp(-int g).  Trapezoid integrals,
    relative tolerance ``rtol``."""
    t = np.asarray(t, dtype=float)
    f, g, h = (np.broadcast_to(np.asarray(v, dtype=float), t.shape) for v in (f, g, h))
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("need increasing sample times")
    if np.any(g < 0):
        raise ValueError("g must be non-negative")
    dh = np.diff(h)
    if not (np.all(dh >= 0) or np.all(dh <= 0)):
        raise ValueError("h must be monotone")
    Ig = _cumtrapz(g, t)
    Igf = _cumtrapz(g * f, t)
    scale = np.maximum(np.abs(f), np.abs(h)) + 1e-300
    if direction == "forward":
        hyp_gap = (f - (h + Igf)) / scale
        con_gap = (f - h * np.exp(Ig)) / scale
    elif direction == "reverse":
        hyp_gap = ((h - Igf) - f) / scale
        con_gap = (h * np.exp(-Ig) - f) / scale
    else:
        raise ValueError("direction must be 'forward' or 'reverse'")
    hyp = bool(np.max(hyp_gap) <= rtol)
    if not hyp:
        return GronwallResult(False, None, float(np.max(hyp_gap)), None)
    return GronwallResult(True, bool(np.max(con_gap) <= rtol), float(np.max(hyp_gap)),
                          float(np.max(con_gap)))


@dataclass
class EnvelopeFit:
    shape: str
    constants: dict
    within_envelope: bool
    fit_until: float
    max_ratio: float           # max over all samples of series / envelope

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        c = self.constants
        if self.shape == "exp":
            return c["c"] * np.exp(c["rate"] * t)
        return c["c"] * np.exp(c["rate"] * np.exp(c["rate"] * t))


def envelope_fit(t, y, shape: str = "exp", *, fit_until: float | None = None,
                 slack: float = 10.0) -> EnvelopeFit:
    """Fit c e^{k t} (``exp``) or c exp(k e^{k t}) (``double_exp``) on the first
    quarter of the series (or t <= fit_until), raise c until the fitted part
    is covered, and test the remainder against ``slack`` x envelope."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 4 or t.shape != y.shape:
        raise ValueError("need at least 4 samples")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("series must be positive and finite")
    if shape not in ("exp", "double_exp"):
        raise ValueError("shape must be 'exp' or 'double_exp'")
    if fit_until is None:
        fit_until = t[0] + 0.25 * (t[-1] - t[0])
    m = t <= fit_until + 1e-12
    if m.sum() < 2:
        m[:2] = True
    tf, ly = t[m], np.log(y[m])
    if np.all(np.diff(ly) < 0):
        raise ValueError("growth envelope requested on decreasing data")
    if shape == "exp":
        k = float(np.polyfit(tf, ly, 1)[0]) if np.ptp(ly) > 0 else 0.0
        k = max(k, 0.0)
        logc = float(np.max(ly - k * tf))
        fit = EnvelopeFit("exp", {"c": np.exp(logc), "rate": k}, True, float(fit_until), 0.0)
        g = gronwall_check(t, y, np.full(t.shape, k), np.full(t.shape, slack * fit.constants["c"]),
                           rtol=0.0)
        within = bool(g)
    else:
        def resid(p):
            k = p[1]
            return p[0] + k * np.exp(k * tf) - ly
        k0 = 0.0 if np.ptp(ly) == 0 else 0.5
        sol = least_squares(resid, [float(ly[0]), k0], bounds=([-np.inf, 0.0], [np.inf, 50.0]))
        k = float(sol.x[1])
        logc = float(np.max(ly - k * np.exp(k * tf)))
        fit = EnvelopeFit("double_exp", {"c": np.exp(logc), "rate": k}, True, float(fit_until), 0.0)
        within = bool(np.all(y <= slack * fit.envelope(t)))
    fit.max_ratio = float(np.max(y / fit.envelope(t)))
    fit.within_envelope = within
    return fit


# ----------------------------------------------------------------------------
# equivalence and lemma fuzz

def equivalence_report(omega: VorticityField, family, alpha: float) -> list[dict]:
    """Per member: ||Y . grad u||_{C^alpha} and ||div(omega Y)||_{C^{alpha-1}}.

    ``family`` is a list of (label, Y, div_omega_Y) with grid samples.  Both
    ratios divide by the other side plus the lower-order term
    ||omega||_inf ||Y||_{C^alpha}, so bounded ratios exhibit both directions.
    """
    g = omega.grid
    rows = []
    for label, Y, dv in family:
        Y = np.asarray(Y, dtype=float)
        if Y.shape != (g.n, g.n, 2) or not np.all(np.isfinite(Y)):
            raise ValueError(f"member {label!r} is not resolved on the grid")
        dv = None if dv is None else np.asarray(dv, dtype=float)
        yg = directional_grad_u(omega, Y, dv)["total"]
        a = holder_report(yg, alpha, spacing=g.spacing).norm
        b = neg_holder_estimate(omega.omega[..., None] * Y, g, alpha, div=dv).value
        low = omega.linf * holder_report(Y, alpha, spacing=g.spacing).norm
        rows.append({"member": label, "Ygradu_holder": a, "div_neg_holder": b, "lower": low,
                     "ratio_fwd": a / (b + low) if b + low > 0 else 0.0,
                     "ratio_bwd": b / (a + low) if a + low > 0 else 0.0})
    return rows


@dataclass
class FuzzReport:
    dim: int
    trials: int
    violations: int
    degenerate: int
    min_slack: float          # min bound / |B| over non-degenerate instances
    seconds: float
    extra_violations: int = 0

    def csv_row(self) -> list:
        return [self.dim, self.trials, self.violations, self.degenerate, self.min_slack,
                self.extra_violations]


def _random_instances(rng, k: int, d: int):
    scale_m = 10.0 ** rng.uniform(-3, 3, k)
    scale_b = 10.0 ** rng.uniform(-3, 3, k)
    B = rng.standard_normal((k, d, d))
    B = 0.5 * (B + np.swapaxes(B, 1, 2)) * scale_b[:, None, None]
    M = rng.standard_normal((k, d, d)) * scale_m[:, None, None]
    if d == 3:
        M[:, :, 2] = np.cross(M[:, :, 0], M[:, :, 1])
    return B, M


def lemma_fuzz(dim: int, trials: int, seed: int = 0, chunk: int = 100_000) -> FuzzReport:
    """Seeded random symmetric B and invertible M (last column the cross
    product in 3D); degenerate M with |det M| < 1e-12 |M|^d is excluded."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    viol = degen = extra = 0
    slack = np.inf
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        B, M = _random_instances(rng, k, dim)
        det = np.linalg.det(M)
        scale = np.linalg.norm(M, axis=(1, 2)) ** dim
        ok = np.abs(det) >= 1e-12 * scale
        degen += int(k - ok.sum())
        B, M = B[ok], M[ok]
        if dim == 2:
            res = serfati_bound_2d(B, M)
        else:
            res = serfati_bound_general(B, M)
            extra += int(np.sum(res.extra["bound_P1"] * (1 + 1e-9) < res.lhs))
        viol += int(np.sum(~res.holds))
        pos = res.lhs > 0
        if pos.any():
            slack = min(slack, float(np.min(res.bound[pos] / res.lhs[pos])))
        done += k
    return FuzzReport(dim, trials, viol, degen, slack, time.perf_counter() - t0, extra)
