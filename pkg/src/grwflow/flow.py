"""Time integration of the graph flow, its conformal-gauge twin, and slice ODEs.

Method of lines on the radial/slab grid of :mod:`grwflow.geom`. The graph
velocity is

    u_t = (W/rho) div(Du/(rho W)) + (rho'/rho)(n + |Du|^2/rho^2)

with the divergence in conservative face-flux form. Two steppers are offered:
Heun's explicit RK2 (default) and a first-order IMEX step that treats the
diffusion implicitly with frozen coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.linalg import solve_banded

from .geom import Grid, GraphState, NotSpacelike, d1, extend
from .leaf import Ball, Interval, LeafGeometry
from .verify import CHECK_IDS, Monitor, TheoremConstants, theorem_constants
from .warp import ProfileError, WarpProfile, make_profile

Array = np.ndarray

SCHEMES = ("explicit_rk2", "imex")


class ConfigError(ValueError):
    pass


class LeftInterval(RuntimeError):
    """The height left the time interval I of the profile."""

    def __init__(self, node: int, value: float, t: float):
        self.node, self.value, self.t = node, value, t
        super().__init__(f"u={value:.6g} left the profile interval at node {node}, t={t:.6g}")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InitialData:
    kind: str = "constant"
    c: float = 1.0
    amplitude: float = 0.0

    def evaluate(self, grid: Grid) -> Array:
        if self.kind == "constant":
            return np.full(grid.points, float(self.c))
        if self.kind == "bump":
            d = grid.leaf.domain
            if isinstance(d, Ball):
                phase = np.pi * grid.x / d.R
            else:
                phase = np.pi * (grid.x - d.a) / d.length
            return self.c + self.amplitude * np.cos(phase)
        raise ConfigError(f"unknown initial data kind {self.kind!r}; expected 'constant' or 'bump'")


@dataclass(frozen=True)
class CheckConfig:
    enabled: tuple[str, ...] = CHECK_IDS
    eps_slack: float = 1e-6
    osc_slack: float = 1e-8
    companion_gap: float = 0.05
    residual_every: int = 10
    kappa_C0: float = 1.0


@dataclass(frozen=True)
class FlowConfig:
    profile: str | None = "reference"
    table: str | None = None
    s_base: float | None = None
    n: int = 1
    K_M: float = 0.0
    domain: str = "interval"
    a: float = 0.0
    b: float = 1.0
    R: float = 1.0
    points: int = 200
    t_end: float = 1.0
    scheme: str = "explicit_rk2"
    cfl_safety: float = 0.9
    dt_max: float = 1e-2
    initial: InitialData = field(default_factory=InitialData)
    checks: CheckConfig = field(default_factory=CheckConfig)
    out_dir: str | None = None

    def with_(self, **kw) -> FlowConfig:
        return replace(self, **kw)

    def build_leaf(self) -> LeafGeometry:
        if self.domain == "interval":
            dom = Interval(float(self.a), float(self.b))
        elif self.domain == "ball":
            dom = Ball(float(self.R))
        else:
            raise ConfigError(f"unknown domain {self.domain!r}; expected 'interval' or 'ball'")
        return LeafGeometry(int(self.n), float(self.K_M), dom)

    def build_grid(self) -> Grid:
        return Grid(self.build_leaf(), int(self.points))

    def build_profile(self, u0: Array | None = None) -> WarpProfile:
        base = self.s_base
        prof = make_profile(self.profile, self.table, None)
        if base is None and u0 is not None:
            base = 0.5 * (float(np.min(u0)) + float(np.max(u0)))
        return prof if base is None else prof.with_base(base)

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 0.0 < self.cfl_safety < 1.0:
            raise ConfigError(f"cfl_safety must lie in (0, 1), got {self.cfl_safety}")
        if not self.t_end > 0.0:
            raise ConfigError(f"t_end must be positive, got {self.t_end}")
        if not self.dt_max > 0.0:
            raise ConfigError(f"dt_max must be positive, got {self.dt_max}")
        bad = [c for c in self.checks.enabled if c not in CHECK_IDS]
        if bad:
            raise ConfigError(f"unknown check id {bad[0]!r}")

    def setup(self) -> GraphState:
        """Validated initial state (spacelike with margin 1e-3 rho, inside I)."""
        self.validate()
        grid = self.build_grid()
        u0 = self.initial.evaluate(grid)
        prof = make_profile(self.profile, self.table, None)
        if prof.contains(u0):
            prof = self.build_profile(u0)
        else:
            i = int(np.argmax(~((u0 > prof.s_minus) & (u0 < prof.s_plus))))
            raise ConfigError(f"initial data leaves I=({prof.s_minus}, {prof.s_plus}) at node {i} "
                              f"(x={grid.x[i]:.6g}, u={u0[i]:.6g})")
        du = np.abs(d1(extend(u0), grid.h))
        rho = prof.rho(u0)
        slack = rho - du - 1e-3 * rho
        if np.any(slack < 0.0):
            i = int(np.argmin(slack))
            raise ConfigError(f"initial data not spacelike with margin 1e-3 rho at node {i} "
                              f"(x={grid.x[i]:.6g}): |Du|={du[i]:.6g}, rho={rho[i]:.6g}")
        return GraphState(0.0, grid, u0, prof)


# ---------------------------------------------------------------------------
# right-hand sides


def _face_terms(grid: Grid, prof: WarpProfile, ue: Array, t: float):
    h = grid.h
    p = (ue[1:] - ue[:-1]) / h
    rf = prof.rho(0.5 * (ue[1:] + ue[:-1]))
    Wf2 = rf * rf - p * p
    if np.any(Wf2 <= 0.0):
        j = int(np.argmax(Wf2 <= 0.0))
        raise NotSpacelike(j, float(grid.x_face[j]), abs(float(p[j])), float(rf[j]), t, where="face")
    return p, rf, np.sqrt(Wf2)


def _node_terms(grid: Grid, prof: WarpProfile, u: Array, ue: Array, t: float):
    ur = d1(ue, grid.h)
    rho = prof.rho(u)
    W2 = rho * rho - ur * ur
    if np.any(W2 <= 0.0):
        i = int(np.argmax(W2 <= 0.0))
        raise NotSpacelike(i, float(grid.x[i]), abs(float(ur[i])), float(rho[i]), t)
    return ur, rho, np.sqrt(W2)


def _check_interval(prof: WarpProfile, u: Array, t: float) -> None:
    bad = ~((u > prof.s_minus) & (u < prof.s_plus)) | ~np.isfinite(u)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise LeftInterval(i, float(u[i]), t)


def velocity(grid: Grid, prof: WarpProfile, u: Array, t: float = 0.0) -> Array:
    """u_t of the graph flow at every node."""
    _check_interval(prof, u, t)
    ue = extend(u)
    p, rf, Wf = _face_terms(grid, prof, ue, t)
    F = grid.c_face * p / (rf * Wf)
    div = (F[1:] - F[:-1]) / grid.vol
    ur, rho, W = _node_terms(grid, prof, u, ue, t)
    return W / rho * div + prof.ratio(u) * (grid.n + ur * ur / (rho * rho))


def diffusion_coeff(state: GraphState) -> float:
    """Largest linearised diffusion coefficient (W/rho) rho_f / W_f^3 over the grid."""
    grid, prof, u = state.grid, state.profile, state.u
    ue = state.ue
    _, rf, Wf = _face_terms(grid, prof, ue, state.t)
    ur, rho, W = _node_terms(grid, prof, u, ue, state.t)
    kf = rf / Wf**3
    return float(np.max(W / rho * np.maximum(kf[:-1], kf[1:])))


def cfl_dt(state: GraphState, cfl_safety: float = 0.9, dt_max: float = math.inf) -> float:
    """Explicit stability limit; reduces to safety * h^2 / (2 coeff) on an interval."""
    grid = state.grid
    coeff = diffusion_coeff(state)
    lam = grid.lam_max if grid.radial else 4.0 / grid.h**2
    if coeff <= 0.0:
        return float(dt_max)
    return float(min(dt_max, cfl_safety * 2.0 / (lam * coeff)))


def _imex(state: GraphState, dt: float) -> Array:
    grid, prof, u, t = state.grid, state.profile, state.u, state.t
    _check_interval(prof, u, t)
    ue = state.ue
    h, N = grid.h, grid.points
    _, rf, Wf = _face_terms(grid, prof, ue, t)
    ur, rho, W = _node_terms(grid, prof, u, ue, t)
    k = grid.c_face / (rf * Wf * h)  # face conductance
    s = W / rho / grid.vol
    lower = prof.ratio(u) * (grid.n + ur * ur / (rho * rho))
    # (I - dt L) u_new = u + dt * lower; ghosts fold outer faces onto the neighbour
    left = k[:-1].copy()
    right = k[1:].copy()
    right[0] += left[0] if not grid.singular_centre else 0.0
    left[0] = 0.0
    left[-1] += right[-1]
    right[-1] = 0.0
    ab = np.zeros((3, N))
    ab[1] = 1.0 + dt * s * (k[:-1] + k[1:])
    if grid.singular_centre:
        ab[1, 0] = 1.0 + dt * s[0] * k[1]
    ab[0, 1:] = -dt * s[:-1] * right[:-1]
    ab[2, :-1] = -dt * s[1:] * left[1:]
    return solve_banded((1, 1), ab, u + dt * lower)


def step_u(state: GraphState, dt: float, scheme: str = "explicit_rk2") -> GraphState:
    """One step of the graph flow; raises NotSpacelike / LeftInterval on breakdown."""
    grid, prof, t = state.grid, state.profile, state.t
    if scheme == "explicit_rk2":
        k1 = velocity(grid, prof, state.u, t)
        mid = state.u + dt * k1
        k2 = velocity(grid, prof, mid, t + dt)
        new = state.u + 0.5 * dt * (k1 + k2)
    elif scheme == "imex":
        new = _imex(state, dt)
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    _check_interval(prof, new, t + dt)
    out = GraphState(t + dt, grid, new, prof)
    _node_terms(grid, prof, new, out.ue, out.t)
    return out


# ---------------------------------------------------------------------------
# slices


def slice_flow(profile: WarpProfile, s_init: float, t: float, n: int = 1):
    """Height s(t) of the slice flow ds/dt = n rho'/rho started at s_init."""
    sol = slice_solution(profile, s_init, float(np.max(t)), n)
    return sol(t)


def slice_solution(profile: WarpProfile, s_init: float, t_end: float, n: int = 1) -> Callable:
    profile.require(s_init, "s_init")
    if t_end == 0.0:
        return lambda t: np.full(np.shape(t), float(s_init)) if np.ndim(t) else float(s_init)

    def rhs(_, s):
        return n * profile.ratio(s)

    def leave(_, s):
        lo = s[0] - profile.s_minus if math.isfinite(profile.s_minus) else 1.0
        hi = profile.s_plus - s[0] if math.isfinite(profile.s_plus) else 1.0
        return min(lo, hi)

    leave.terminal = True
    sol = solve_ivp(rhs, (0.0, t_end), [float(s_init)], method="DOP853", rtol=1e-12, atol=1e-12,
                    dense_output=True, events=leave)
    if sol.status != 0:
        raise ProfileError(f"slice flow from s={s_init} failed before t={t_end}: {sol.message}")

    def ev(t):
        v = sol.sol(np.asarray(t, dtype=float))[0]
        return float(v) if np.ndim(v) == 0 else v

    return ev


def slice_time_of_flight(profile: WarpProfile, s_init: float, s_target: float, n: int = 1) -> float:
    """t with s(t) = s_target, i.e. (1/n) int rho/rho' from s_init to s_target."""
    profile.require(np.array([s_init, s_target]), "slice endpoint")
    lo, hi = sorted((float(s_init), float(s_target)))
    path = np.linspace(lo, hi, 257)
    if np.any(profile.rho_prime(path) <= 0.0):
        raise ProfileError(f"rho' <= 0 on [{lo}, {hi}]: slice time of flight undefined")
    val, err = quad(lambda s: 1.0 / float(profile.ratio(s)), s_init, s_target,
                    epsabs=1e-13, epsrel=1e-13, limit=200)
    return val / n


# ---------------------------------------------------------------------------
# runs


@dataclass
class FlowTrace:
    t: list = field(default_factory=list)
    min_u: list = field(default_factory=list)
    max_u: list = field(default_factory=list)
    osc: list = field(default_factory=list)
    max_theta: list = field(default_factory=list)
    min_H: list = field(default_factory=list)
    max_H: list = field(default_factory=list)
    max_A2: list = field(default_factory=list)
    defect: list = field(default_factory=list)
    final: GraphState | None = None
    initial: GraphState | None = None
    constants: TheoremConstants | None = None
    monitor: Monitor | None = None
    kappa_C0: float = 1.0
    steps: int = 0

    COLUMNS = ("t", "min_u", "max_u", "osc", "max_theta", "min_H", "max_H", "max_A2")

    def record(self, state: GraphState) -> None:
        s = state.sample
        u = state.u
        self.t.append(state.t)
        lo, hi = float(np.min(u)), float(np.max(u))
        self.min_u.append(lo)
        self.max_u.append(hi)
        self.osc.append(hi - lo)
        self.max_theta.append(float(np.max(s.theta)))
        self.min_H.append(float(np.min(s.H)))
        self.max_H.append(float(np.max(s.H)))
        self.max_A2.append(float(np.max(s.A2)))
        self.defect.append(float(np.max(np.abs(s.u_r) / s.rho)))

    @property
    def ledger(self):
        return None if self.monitor is None else self.monitor.ledger

    @property
    def windows(self):
        return [] if self.monitor is None else self.monitor.windows

    @property
    def residual_rows(self):
        return [] if self.monitor is None else self.monitor.residual_rows

    def passed(self) -> bool:
        return self.ledger is None or self.ledger.passed()


class RunAborted(RuntimeError):
    """Flow breakdown mid-run; carries the partial trace and the last good state."""

    def __init__(self, cause: Exception, trace: FlowTrace, last: GraphState):
        self.cause, self.trace, self.last = cause, trace, last
        super().__init__(str(cause))


def run_u(config: FlowConfig, checks: bool = True, keep_windows: bool = False,
          on_step: Callable[[GraphState], None] | None = None) -> FlowTrace:
    """Integrate the graph flow to ``t_end``, evaluating the enabled checks each step."""
    state = config.setup()
    cc = config.checks
    trace = FlowTrace(initial=state, kappa_C0=cc.kappa_C0)
    if checks:
        k = theorem_constants(state, config.t_end, cc.eps_slack, cc.companion_gap)
        n = config.n
        gap = cc.companion_gap
        lo = _companion(state.profile, float(np.min(state.u)) - gap, config.t_end, n)
        hi = _companion(state.profile, float(np.max(state.u)) + gap, config.t_end, n)
        comp = (lambda t: (lo(t), hi(t))) if lo is not None and hi is not None else None
        if comp is None:
            k.applicability["avoidance"] = (False, "companion slice outside I")
            k.applicability["slice_osc_monotone"] = (False, "companion slice outside I")
        trace.constants = k
        trace.monitor = Monitor(state, k, cc.enabled, comp, gap, cc.osc_slack, cc.residual_every,
                                keep_windows, cc.kappa_C0)
    _observe(trace, state, on_step)
    T = config.t_end
    while state.t < T * (1.0 - 1e-14):
        # implicit diffusion: the step is bounded by dt_max only
        dt = config.dt_max if config.scheme == "imex" else cfl_dt(state, config.cfl_safety, config.dt_max)
        if state.t + dt > T or T - (state.t + dt) < 1e-3 * dt:
            dt = T - state.t
        try:
            new = step_u(state, dt, config.scheme)
            if new.t > T * (1.0 - 1e-14):
                new = GraphState(T, new.grid, new.u, new.profile)
            _observe(trace, new, on_step)
        except (NotSpacelike, LeftInterval) as exc:
            trace.final = state
            raise RunAborted(exc, trace, state) from exc
        state = new
        trace.steps += 1
    trace.final = state
    return trace


def _companion(p: WarpProfile, s0: float, T: float, n: int):
    if not p.contains(s0):
        return None
    try:
        return slice_solution(p, s0, T, n)
    except ProfileError:
        return None


def _observe(trace: FlowTrace, state: GraphState, on_step) -> None:
    trace.record(state)
    if trace.monitor is not None:
        trace.monitor.observe(state)
    if on_step is not None:
        on_step(state)


# ---------------------------------------------------------------------------
# conformal gauge


def z_velocity(grid: Grid, prof: WarpProfile, z: Array, t: float = 0.0) -> Array:
    """z_t = [(Wc/rho) div(Dz/Wc) + n rho'/rho] / rho with Wc = sqrt(1 - |Dz|^2), rho at varsigma^-1(z)."""
    h = grid.h
    ze = extend(z)
    p = (ze[1:] - ze[:-1]) / h
    Wf2 = 1.0 - p * p
    if np.any(Wf2 <= 0.0):
        j = int(np.argmax(Wf2 <= 0.0))
        raise NotSpacelike(j, float(grid.x_face[j]), abs(float(p[j])), 1.0, t, where="face (z gauge)")
    F = grid.c_face * p / np.sqrt(Wf2)
    div = (F[1:] - F[:-1]) / grid.vol
    zr = d1(ze, h)
    Wc2 = 1.0 - zr * zr
    if np.any(Wc2 <= 0.0):
        i = int(np.argmax(Wc2 <= 0.0))
        raise NotSpacelike(i, float(grid.x[i]), abs(float(zr[i])), 1.0, t, where="node (z gauge)")
    s = prof.varsigma_inv(z)
    _check_interval(prof, s, t)
    rho = prof.rho(s)
    return (np.sqrt(Wc2) / rho * div + grid.n * prof.ratio(s)) / rho


def step_z(grid: Grid, prof: WarpProfile, z: Array, dt: float, t: float = 0.0) -> Array:
    k1 = z_velocity(grid, prof, z, t)
    k2 = z_velocity(grid, prof, z + dt * k1, t + dt)
    return z + 0.5 * dt * (k1 + k2)


@dataclass
class ZTrace:
    t: list = field(default_factory=list)
    z: Array | None = None
    height: Array | None = None
    gauge_defect: list = field(default_factory=list)


def run_z(config: FlowConfig) -> ZTrace:
    """Conformal-gauge flow with its own CFL step; exposes varsigma^-1(z)."""
    st = config.setup()
    grid, prof = st.grid, st.profile
    z = prof.varsigma(st.u)
    t, T = 0.0, config.t_end
    out = ZTrace(t=[0.0])
    while t < T * (1.0 - 1e-14):
        s = prof.varsigma_inv(z)
        dt = cfl_dt(GraphState(t, grid, s, prof), config.cfl_safety, config.dt_max)
        dt = min(dt, T - t)
        z = step_z(grid, prof, z, dt, t)
        t += dt
        out.t.append(t)
    out.z = z
    out.height = prof.varsigma_inv(z)
    return out


def run_gauge(config: FlowConfig) -> ZTrace:
    """u- and z-flows in lockstep on the u-flow's step sizes; records sup |varsigma(u) - z|."""
    st = config.setup()
    grid, prof = st.grid, st.profile
    z = prof.varsigma(st.u)
    state = st
    T = config.t_end
    out = ZTrace(t=[0.0], gauge_defect=[0.0])
    while state.t < T * (1.0 - 1e-14):
        dt = min(cfl_dt(state, config.cfl_safety, config.dt_max), T - state.t)
        z = step_z(grid, prof, z, dt, state.t)
        state = step_u(state, dt, "explicit_rk2")
        out.t.append(state.t)
        out.gauge_defect.append(float(np.max(np.abs(prof.varsigma(state.u) - z))))
    out.z = z
    out.height = prof.varsigma_inv(z)
    return out
