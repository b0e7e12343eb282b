"""Run-time verification: a priori bound ledger, ODE comparison, evolution residuals.

Margins are signed and normalised: ``(bound - measured) / scale`` for upper
bounds and ``(measured - bound) / scale`` for lower ones, so a check holds
when its margin is non-negative (up to a per-check slack).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geom import GraphState, GeometrySample, d1, extend, laplace_beltrami
from .leaf import Ball, LeafGeometry, cutoff, default_cutoff_scale
from .warp import HypothesisReport, ProfileError, WarpProfile, hypothesis_check

Array = np.ndarray

RESIDUAL_KINDS = ("s", "phi", "Theta", "H", "kappa")

# id -> (rule, default slack); rule "min": min margin >= -slack, "strict": min margin > 0,
# "final_strict": last margin > 0, "diagnostic": never a verdict
CHECKS: dict[str, tuple[str, float | None]] = {
    "height_lower": ("min", None),
    "height_upper": ("min", None),
    "height_refined": ("min", None),
    "rho_lower": ("min", None),
    "rho_upper": ("min", None),
    "tilt_matM": ("min", None),
    "gradient_conv": ("min", None),
    "gradient_estW": ("min", None),
    "tilt_time": ("diagnostic", None),
    "H_schedule": ("min", None),
    "H_ode": ("min", None),
    "mean_convex_floor": ("min", None),
    "H_positive": ("strict", None),
    "ncc": ("min", 1e-10),
    "heat_s_positive": ("strict", None),
    "avoidance": ("strict", None),
    "osc_monotone": ("min", "osc"),
    "slice_osc_monotone": ("min", "osc"),
    "conformal_defect_decay": ("final_strict", None),
}
CHECK_IDS = tuple(CHECKS)

_FLOOR = 1e-12


def _rel(num: float, scale: float) -> float:
    return float(num) / max(abs(float(scale)), _FLOOR)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class TheoremConstants:
    n: int
    T: float
    s_range: tuple[float, float]
    hypothesis: HypothesisReport
    C_minus_eff: float
    C_plus_eff: float
    lambda_eff: float
    C1: float
    E: float | None
    M: float | None
    script_M: float
    beta: float
    eps_slack: float
    s_b: float
    min_u0: float
    max_u0: float
    min_rho0: float
    max_rho0: float
    max_H0_sq: float
    min_H0: float
    max_theta0: float
    min_v0_sq: float
    d0: float
    applicability: dict = field(default_factory=dict)

    def applicable(self, check: str) -> bool:
        return self.applicability.get(check, (True, ""))[0]

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "T": self.T,
            "s_range": list(self.s_range),
            "C_minus_eff": self.C_minus_eff,
            "C_plus_eff": self.C_plus_eff,
            "lambda_eff": self.lambda_eff,
            "C1": self.C1,
            "E": self.E,
            "M": self.M,
            "script_M": self.script_M,
            "beta": self.beta,
            "eps_slack": self.eps_slack,
        }


def reachable_range(p: WarpProfile, u0: Array, T: float, n: int, gap: float = 0.0,
                    iterations: int = 60) -> tuple[float, float]:
    """Compact s-interval containing the graph and its companion slices on [0, T].

    The lower end never moves below ``min u0 - gap`` (rho' >= 0 flows only rise);
    the upper end is a fixed point of ``b = max u0 + gap + n T sup_[a,b] rho'/rho``.
    """
    lo, hi = float(np.min(u0)), float(np.max(u0))
    a = lo - gap if p.contains(lo - gap) else 0.5 * (lo + p.s_minus)
    top = hi + gap if p.contains(hi + gap) else hi

    def clip(b: float) -> float:
        if math.isfinite(p.s_plus) and b >= p.s_plus:
            return 0.5 * (top + p.s_plus)
        return b

    b = clip(top + 1e-9)
    for _ in range(iterations):
        s = np.linspace(a, b, 513)
        nb = clip(top + n * T * max(float(np.max(p.ratio(s))), 0.0) + 1e-9)
        if abs(nb - b) <= 1e-12 * (1.0 + abs(b)):
            b = nb
            break
        b = nb
    return a, max(b, top + 1e-9)


def theorem_constants(initial: GraphState, T: float, eps_slack: float = 1e-6,
                      companion_gap: float = 0.05, hyp_tol: float = 1e-10) -> TheoremConstants:
    p, leaf = initial.profile, initial.leaf
    n = leaf.n
    u0 = initial.u
    smp = initial.sample
    rng = reachable_range(p, u0, T, n, companion_gap)
    hyp = hypothesis_check(p, rng, tol=hyp_tol, n=n, K_M=leaf.K_M)
    Cm, Cp, lam = hyp.C_minus_eff, hyp.C_plus_eff, hyp.lambda_eff
    H0 = smp.H
    maxH = float(np.max(np.abs(H0)))
    C1 = maxH * math.exp(n * Cm * Cm * T)
    E = n / (2.0 * C1) if C1 > 0.0 else None
    M = None
    if E is not None:
        M = float(np.max(E * smp.Theta - p.phi(u0))) + float(p.phi(rng[1]))
    max_theta0 = float(np.max(smp.theta))
    script_M = 2.0 * Cm * C1 * T + max_theta0
    rho0 = smp.rho
    v0 = H0 / smp.Theta

    mono = hyp.monotone
    ncc = hyp.ncc_holds
    mean_convex = bool(np.min(H0) > 0.0)
    rp_pos = bool(np.min(p.rho_prime(np.linspace(*rng, 513))) > 0.0)
    d0 = float(np.max(np.abs(smp.u_r) / rho0))
    why_mono = "" if mono else "warping hypotheses fail on the reachable range"
    why_ncc = "" if ncc else "null convergence condition fails"
    app: dict[str, tuple[bool, str]] = {}
    for c in ("height_lower", "height_upper", "rho_lower", "rho_upper", "osc_monotone",
              "slice_osc_monotone"):
        app[c] = (mono, why_mono)
    app["height_refined"] = (mono and Cp > 0.0, why_mono or ("" if Cp > 0 else "C_plus_eff = 0"))
    tilt_ok = mono and ncc
    why_tilt = why_mono or why_ncc
    for c in ("tilt_matM", "gradient_conv", "tilt_time", "H_schedule", "H_ode"):
        app[c] = (tilt_ok, why_tilt)
    app["gradient_estW"] = (tilt_ok and E is not None, why_tilt or ("" if E else "C1 = 0, E undefined"))
    mc = tilt_ok and mean_convex and math.isfinite(lam)
    why_mc = why_tilt or ("" if mean_convex else "initial graph not mean convex")
    app["mean_convex_floor"] = (mc, why_mc)
    app["H_positive"] = (mc, why_mc)
    app["ncc"] = (ncc, why_ncc)
    app["heat_s_positive"] = (rp_pos, "" if rp_pos else "rho' not positive on the reachable range")
    app["avoidance"] = (True, "")
    strict = mono and hyp.strict_somewhere and d0 > 0.0
    app["conformal_defect_decay"] = (
        strict, "" if strict else "needs strict warping hypothesis and non-flat initial data")
    return TheoremConstants(
        n=n, T=float(T), s_range=rng, hypothesis=hyp,
        C_minus_eff=Cm, C_plus_eff=Cp, lambda_eff=lam,
        C1=C1, E=E, M=M, script_M=script_M, beta=4.0 * Cm * C1,
        eps_slack=eps_slack,
        s_b=float(np.min(u0)),
        min_u0=float(np.min(u0)), max_u0=float(np.max(u0)),
        min_rho0=float(np.min(rho0)), max_rho0=float(np.max(rho0)),
        max_H0_sq=maxH * maxH, min_H0=float(np.min(H0)),
        max_theta0=max_theta0, min_v0_sq=float(np.min(v0 * v0)), d0=d0,
        applicability=app,
    )


# ---------------------------------------------------------------------------
# ledger


@dataclass
class BoundLedger:
    enabled: tuple[str, ...]
    k: TheoremConstants
    osc_slack: float = 1e-8
    t: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)

    def __post_init__(self):
        for c in self.enabled:
            self.t[c], self.m[c] = [], []

    def active(self, c: str) -> bool:
        return c in self.t and self.k.applicable(c)

    def slack(self, c: str) -> float:
        s = CHECKS[c][1]
        if s == "osc":
            return self.osc_slack
        return self.k.eps_slack if s is None else s

    def record(self, c: str, t: float, margin: float) -> None:
        if self.active(c):
            self.t[c].append(float(t))
            self.m[c].append(float(margin))

    def status(self, c: str) -> dict:
        rule = CHECKS[c][0]
        ok, why = self.k.applicability.get(c, (True, ""))
        ms, ts = self.m[c], self.t[c]
        if not ok:
            return {"id": c, "status": "not-applicable", "min_margin": None, "t_of_min_margin": None,
                    "reason": why}
        if not ms:
            return {"id": c, "status": "diagnostic" if rule == "diagnostic" else "fail",
                    "min_margin": None, "t_of_min_margin": None, "reason": "no samples"}
        arr = np.asarray(ms)
        if np.any(~np.isfinite(arr)):
            i = int(np.argmax(~np.isfinite(arr)))
            mm, tm = float("-inf"), ts[i]
        else:
            i = int(np.argmin(arr))
            mm, tm = float(arr[i]), ts[i]
        if rule == "diagnostic":
            st = "diagnostic"
        elif rule == "strict":
            st = "pass" if mm > 0.0 else "fail"
        elif rule == "final_strict":
            st = "pass" if ms[-1] > 0.0 else "fail"
        else:
            st = "pass" if mm >= -self.slack(c) else "fail"
        out = {"id": c, "status": st, "min_margin": None if not math.isfinite(mm) else mm,
               "t_of_min_margin": tm}
        if rule == "final_strict":
            out["final_margin"] = ms[-1]
        return out

    def verdicts(self) -> list[dict]:
        return [self.status(c) for c in self.enabled]

    def passed(self) -> bool:
        return all(v["status"] != "fail" for v in self.verdicts())

    def series(self, c: str) -> tuple[Array, Array]:
        return np.asarray(self.t[c]), np.asarray(self.m[c])


def evaluate_bounds(state: GraphState, sample: GeometrySample, k: TheoremConstants,
                    companions: tuple[float, float] | None = None,
                    companion_gap: float = 0.05) -> dict[str, float]:
    """Signed margins of the pointwise a priori bounds at one time.

    Only checks applicable under ``k`` are returned.
    """
    t, n, u = state.t, k.n, state.u
    p = state.profile
    Cm, Cp = k.C_minus_eff, k.C_plus_eff
    out: dict[str, float] = {}
    umin, umax = float(np.min(u)), float(np.max(u))

    def put(c, v):
        if k.applicable(c):
            out[c] = float(v)

    lo_b = k.min_u0 + Cp * n * t
    hi_b = k.max_u0 + Cm * n * t
    put("height_lower", _rel(umin - lo_b, lo_b))
    put("height_upper", _rel(hi_b - umax, hi_b))
    if k.applicable("height_refined"):
        up = k.s_b + (Cm / Cp) * (k.max_u0 - k.s_b) + Cm * n * t
        out["height_refined"] = min(_rel(umin - lo_b, lo_b), _rel(up - umax, up))
    rho = sample.rho
    r_lo = math.exp(Cp * Cp * n * t) * k.min_rho0
    r_hi = math.exp(Cm * Cm * n * t) * k.max_rho0
    put("rho_lower", _rel(float(np.min(rho)) - r_lo, r_lo))
    put("rho_upper", _rel(r_hi - float(np.max(rho)), r_hi))
    theta_max = float(np.max(sample.theta))
    put("tilt_matM", _rel(k.script_M - theta_max, k.script_M))
    du = np.abs(sample.u_r)
    conv = math.sqrt(max(0.0, 1.0 - 1.0 / k.script_M**2))
    put("gradient_conv", float(np.min(conv - du / rho)))
    if k.applicable("gradient_estW"):
        X = (k.E / k.M) ** 2 * math.exp(2.0 * Cp * Cp * n * t) * k.min_rho0**2
        out["gradient_estW"] = float(np.min(np.sqrt(max(0.0, 1.0 - X)) - du / rho)) if X <= 1.0 else -1.0
    tt = 2.0 * Cm * k.C1 * t + k.max_theta0
    put("tilt_time", _rel(tt - theta_max, tt))
    H = sample.H
    h_b = k.max_H0_sq * math.exp(2.0 * n * Cm * Cm * t)
    put("H_schedule", _rel(h_b - float(np.max(H * H)), h_b))
    if k.applicable("mean_convex_floor"):
        v2 = (H / sample.Theta) ** 2
        floor = math.exp(-(k.beta + 2.0 * n * k.lambda_eff) * t) * k.min_v0_sq
        out["mean_convex_floor"] = _rel(float(np.min(v2)) - floor, floor)
        out["H_positive"] = float(np.min(H)) / max(float(np.max(np.abs(H))), _FLOOR)
    put("ncc", float(np.min(sample.ncc_gap)))
    if k.applicable("heat_s_positive"):
        q = p.ratio(u) * (n + sample.grad_s2)
        out["heat_s_positive"] = float(np.min(q)) / max(float(np.max(q)), _FLOOR)
    if companions is not None:
        lo, hi = companions
        out["avoidance"] = min(umin - lo, hi - umax) / companion_gap
    return out


# ---------------------------------------------------------------------------
# ODE comparison


@dataclass(frozen=True)
class ComparisonVerdict:
    passed: bool
    min_margin: float
    t_of_min_margin: float | None
    gamma: Array
    expired_at: float | None = None

    @property
    def message(self) -> str:
        if self.expired_at is not None:
            return f"comparison expired at t*={self.expired_at:.6g}"
        return "pass" if self.passed else f"fail (min margin {self.min_margin:.3e})"


class ComparisonIntegrator:
    """RK4 for d gamma/dt = F(gamma) with relative-change-limited substeps."""

    def __init__(self, F: Callable[[float], float], gamma0: float, rel_step: float = 1e-2,
                 blowup: float = 1e12):
        self.F, self.gamma, self.t = F, float(gamma0), 0.0
        self.rel, self.blowup = rel_step, blowup
        self.expired_at: float | None = None

    def advance(self, t: float) -> float:
        F = self.F
        while self.t < t and self.expired_at is None:
            g = self.gamma
            f = F(g)
            h = t - self.t
            lim = self.rel * max(abs(g), 1e-300)
            if abs(f) * h > lim:
                h = lim / abs(f)
            k1 = f
            k2 = F(g + 0.5 * h * k1)
            k3 = F(g + 0.5 * h * k2)
            k4 = F(g + h * k3)
            g = g + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            self.t = self.t + h if h < t - self.t else t
            self.gamma = g
            if not math.isfinite(g) or abs(g) > self.blowup:
                self.expired_at = self.t
        return self.gamma


def ode_comparison(times: Sequence[float], f: Sequence[float], F: Callable[[float], float],
                   gamma0: float, eps_slack: float = 1e-6) -> ComparisonVerdict:
    """Check f(t) <= gamma(t)(1 + eps_slack) along the comparison solution gamma."""
    times = np.asarray(times, dtype=float)
    f = np.asarray(f, dtype=float)
    if len(times) and gamma0 < f[0] * (1.0 - eps_slack) - eps_slack:
        raise ValueError(f"gamma0={gamma0} below f(0)={f[0]}")
    integ = ComparisonIntegrator(F, gamma0)
    gam = np.full(len(times), np.nan)
    margins = np.full(len(times), np.nan)
    for i, t in enumerate(times):
        if t < integ.t:
            raise ValueError("timestamps must be non-decreasing")
        g = integ.advance(t)
        if integ.expired_at is not None:
            break
        gam[i] = g
        margins[i] = _rel(g - f[i], g)
    done = np.isfinite(margins)
    if not np.any(done):
        return ComparisonVerdict(False, float("-inf"), None, gam, integ.expired_at)
    j = int(np.argmin(np.where(done, margins, np.inf)))
    mm = float(margins[j])
    ok = integ.expired_at is None and mm >= -eps_slack
    return ComparisonVerdict(ok, mm, float(times[j]), gam, integ.expired_at)


# ---------------------------------------------------------------------------
# evolution-equation residuals


def _dt3(t0, t1, t2, f0, f1, f2):
    """Second-order first derivative at t1 from three (possibly uneven) samples."""
    h1, h2 = t1 - t0, t2 - t1
    return (-h2 / (h1 * (h1 + h2))) * f0 + ((h2 - h1) / (h1 * h2)) * f1 + (h1 / (h2 * (h1 + h2))) * f2


def field_values(which: str, state: GraphState, C0: float = 1.0) -> Array:
    p, u, smp = state.profile, state.u, state.sample
    if which == "s":
        return u.copy()
    if which == "phi":
        return p.phi(u)
    if which == "Theta":
        return smp.Theta
    if which == "H":
        return smp.H
    if which == "kappa":
        return p.kappa_values(u, C0)
    raise ValueError(f"unknown residual kind {which!r}; expected one of {RESIDUAL_KINDS}")


def heat_rhs(which: str, state: GraphState, C0: float = 1.0) -> Array:
    """Right-hand side of (d/dt - Delta) f for the five monitored scalars."""
    p, u, s = state.profile, state.u, state.sample
    n = state.grid.n
    if which == "s":
        return p.ratio(u) * (n + s.grad_s2)
    if which == "phi":
        return n * s.rho_p
    if which == "Theta":
        return 2.0 * s.rho_p * s.H - s.Theta * (s.ric_nu + s.A2 + n * s.rho_pp / s.rho)
    if which == "H":
        return -(s.A2 + s.ric_nu) * s.H
    if which == "kappa":
        return C0 * n + C0 * (s.rho / s.rho_p) * (s.rho_pp / s.rho_p) * s.grad_s2
    raise ValueError(f"unknown residual kind {which!r}; expected one of {RESIDUAL_KINDS}")


def normal_time_derivative(window: Sequence[GraphState], f: Sequence[Array]) -> Array:
    """d/dt of f along the normal flow at the middle state.

    The graph is sampled at fixed x, which moves tangentially relative to the
    normal parametrisation; the correction is u_t u_r f_r / W^2.
    """
    a, b, c = window
    ft = _dt3(a.t, b.t, c.t, *f)
    ut = _dt3(a.t, b.t, c.t, a.u, b.u, c.u)
    smp = b.sample
    fr = d1(extend(np.asarray(f[1])), b.grid.h)
    return ft + ut * smp.u_r * fr / (smp.W * smp.W)


def residual_field(window: Sequence[GraphState], which: str, C0: float = 1.0) -> Array:
    """Per-node (D_t f - Delta_g f) - RHS at the middle state; NaN at end nodes."""
    if len(window) != 3:
        raise ValueError("residuals need three consecutive states")
    f = [field_values(which, st, C0) for st in window]
    mid = window[1]
    return normal_time_derivative(window, f) - laplace_beltrami(mid, f[1]) - heat_rhs(which, mid, C0)


def residual_nodes(grid) -> slice:
    """Nodes whose residual stencil (five u-values wide) never reaches a ghost value."""
    return slice(2, grid.points - 2)


def _norms(r: Array, grid) -> tuple[float, float]:
    i = residual_nodes(grid)
    ri = r[i]
    return float(np.max(np.abs(ri))), float(np.sqrt(np.sum(ri * ri * grid.vol[i]) / np.sum(grid.vol[i])))


@dataclass(frozen=True)
class ResidualSeries:
    which: str
    t: Array
    sup: Array
    l2: Array


def residual_Q(trace, which: str, C0: float | None = None, t_min: float = 0.0) -> ResidualSeries:
    """Sup and L2 residual norms over stored windows whose middle time is >= t_min."""
    windows = [w for w in (getattr(trace, "windows", None) or []) if w[1].t >= t_min]
    if not windows:
        raise ValueError("insufficient stored history: run with stored residual windows")
    C0 = trace.kappa_C0 if C0 is None else C0
    ts, sups, l2s = [], [], []
    for w in windows:
        r = residual_field(w, which, C0)
        a, b = _norms(r, w[1].grid)
        ts.append(w[1].t)
        sups.append(a)
        l2s.append(b)
    return ResidualSeries(which, np.asarray(ts), np.asarray(sups), np.asarray(l2s))


# ---------------------------------------------------------------------------
# boundary identities


def _boundary_nodes(state: GraphState) -> list[tuple[int, int]]:
    """(node, inward step) pairs for boundary nodes."""
    N = state.grid.points
    if isinstance(state.leaf.domain, Ball):
        return [(N - 1, -1)]
    return [(0, 1), (N - 1, -1)]


def _one_sided(f: Array, i: int, step: int, h: float) -> float:
    # derivative along the outward direction, in difference form so constants give exactly 0
    a, b = f[i] - f[i + step], f[i + step] - f[i + 2 * step]
    return (3.0 * a - b) / (2.0 * h)


def boundary_identities(state: GraphState, sample: GeometrySample | None = None,
                        C0: float = 1.0) -> dict[str, float]:
    """Max |<grad f, mu>| over boundary nodes for f in {s, rho, Theta, H, kappa}.

    The identities predict zero for all five in the symmetric setups; for ``s``
    the ghost-node central difference is used, which is the Neumann enforcement
    error itself.
    """
    smp = sample if sample is not None else state.sample
    h = state.grid.h
    p = state.profile
    out = {}
    fields = {"rho": smp.rho, "Theta": smp.Theta, "H": smp.H}
    try:
        fields["kappa"] = p.kappa_values(state.u, C0)
    except ProfileError:
        pass
    out["s"] = max(abs(float(smp.u_r[i])) / float(smp.W[i]) for i, _ in _boundary_nodes(state))
    for name, f in fields.items():
        out[name] = max(abs(_one_sided(f, i, st, h)) / float(smp.W[i]) for i, st in _boundary_nodes(state))
    if "kappa" not in out:
        out["kappa"] = float("nan")
    return out


# ---------------------------------------------------------------------------
# cutoff monitor and Simons identity


def cutoff_radius(state: GraphState) -> tuple[Array, float]:
    """Distance from the centre and the cutoff radius R for the xi monitor."""
    d = state.leaf.domain
    x = state.grid.x
    if isinstance(d, Ball):
        return x, d.R
    mid = 0.5 * (d.a + d.b)
    return np.abs(x - mid), 0.5 * d.length


def xi_A2(state: GraphState, sample: GeometrySample | None = None) -> tuple[float, float]:
    """sup xi |A|^2 and the outward boundary derivative of xi |A|^2 (not assumed zero)."""
    smp = sample if sample is not None else state.sample
    r, R = cutoff_radius(state)
    leaf = state.leaf
    flat = LeafGeometry(1, 0.0, leaf.domain) if not leaf.radial else leaf
    C_R = default_cutoff_scale(flat, R)
    xi, _, _ = cutoff(flat, R, C_R, r)
    g = xi * smp.A2
    h = state.grid.h
    flux = max(abs(_one_sided(g, i, st, h)) / float(smp.W[i]) for i, st in _boundary_nodes(state))
    return float(np.max(g)), float(flux)


def flat_mode(state: GraphState) -> bool:
    p = state.profile
    s = np.linspace(-1.0, 1.0, 5) + float(np.mean(state.u))
    return (state.grid.n == 1 and state.leaf.K_M == 0.0
            and np.allclose(p.rho(s), 1.0, rtol=0, atol=1e-14)
            and np.allclose(p.rho_prime(s), 0.0, rtol=0, atol=1e-14))


@dataclass(frozen=True)
class SimonsSample:
    t: float
    vs_heat: float  # sup |(1/2)Q|A|^2 + |grad A|^2 + |A|^4|
    vs_printed: float  # sup |(1/2)Q|A|^2 + |grad A|^2 - |A|^4|
    l2_heat: float


def simons_window(window: Sequence[GraphState]) -> SimonsSample:
    mid = window[1]
    if not flat_mode(mid):
        raise ValueError("Simons residual is only defined in flat-ambient mode (rho = 1, n = 1, K_M = 0)")
    f = [st.sample.A2 for st in window]
    smp = mid.sample
    q = normal_time_derivative(window, f) - laplace_beltrami(mid, f[1])
    Hr = d1(extend(smp.H), mid.grid.h)
    grad_A2 = Hr * Hr / (smp.W * smp.W)
    direct = 0.5 * q + grad_A2
    a4 = smp.A2 * smp.A2
    i = residual_nodes(mid.grid)
    r_heat = (direct + a4)[i]
    return SimonsSample(
        t=mid.t,
        vs_heat=float(np.max(np.abs(r_heat))),
        vs_printed=float(np.max(np.abs(direct - a4)[i])),
        l2_heat=_norms(direct + a4, mid.grid)[1],
    )


def simons_residual(trace, t_min: float = 0.0) -> list[SimonsSample]:
    windows = [w for w in (getattr(trace, "windows", None) or []) if w[1].t >= t_min]
    if not windows:
        raise ValueError("insufficient stored history: run with stored residual windows")
    return [simons_window(w) for w in windows]


# ---------------------------------------------------------------------------
# asymptotics


def conformal_defect(state: GraphState, sample: GeometrySample | None = None) -> float:
    smp = sample if sample is not None else state.sample
    return float(np.max(np.abs(smp.u_r) / smp.rho))


@dataclass(frozen=True)
class AsymptoticsReport:
    osc0: float
    osc_end: float
    osc_min_step_margin: float
    osc_non_increasing: bool
    d0: float
    d_end: float
    defect_decay: bool | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def asymptotics_report(trace, osc_slack: float = 1e-8) -> AsymptoticsReport:
    osc = np.asarray(trace.osc)
    steps = np.diff(osc)
    mm = float(np.min(-steps)) if len(steps) else 0.0
    d = np.asarray(trace.defect)
    k = trace.constants
    decay = None
    if k is not None and k.applicable("conformal_defect_decay"):
        decay = bool(d[-1] < d[0])
    return AsymptoticsReport(
        osc0=float(osc[0]), osc_end=float(osc[-1]), osc_min_step_margin=mm,
        osc_non_increasing=mm >= -osc_slack, d0=float(d[0]), d_end=float(d[-1]), defect_decay=decay,
    )


# ---------------------------------------------------------------------------
# per-step monitor used by the run loop


class Monitor:
    """Evaluates every enabled check on each accepted step and keeps residual windows."""

    def __init__(self, initial: GraphState, k: TheoremConstants, enabled: Iterable[str],
                 companions: Callable[[float], tuple[float, float]] | None,
                 companion_gap: float, osc_slack: float = 1e-8, residual_every: int = 10,
                 keep_windows: bool = False, kappa_C0: float = 1.0):
        self.k = k
        self.ledger = BoundLedger(tuple(enabled), k, osc_slack)
        self.companions = companions
        self.gap = companion_gap
        self.every = max(1, int(residual_every))
        self.keep = keep_windows
        self.C0 = kappa_C0
        self.recent: list[GraphState] = []
        self.windows: list[tuple[GraphState, GraphState, GraphState]] = []
        self.residual_rows: list[dict] = []
        self.margin_rows: list[dict] = []
        self.step = 0
        self.prev_osc: float | None = None
        self.prev_slice_osc: float | None = None
        n = k.n
        c = 2.0 * n * k.C_minus_eff**2
        self.h_ode = ComparisonIntegrator(lambda g: c * g, k.max_H0_sq)
        self.flat = flat_mode(initial)
        self.has_kappa = k.applicable("heat_s_positive")

    def observe(self, state: GraphState) -> GeometrySample:
        smp = state.sample
        L, t = self.ledger, state.t
        row: dict[str, float] = {}

        def rec(c: str, m: float) -> None:
            if L.active(c):
                L.record(c, t, m)
                row[c] = float(m)

        comp = self.companions(t) if self.companions is not None else None
        for c, m in evaluate_bounds(state, smp, self.k, comp, self.gap).items():
            rec(c, m)
        u = state.u
        osc = float(np.max(u) - np.min(u))
        if self.prev_osc is not None:
            rec("osc_monotone", self.prev_osc - osc)
        self.prev_osc = osc
        if comp is not None:
            so = comp[1] - comp[0]
            if self.prev_slice_osc is not None:
                rec("slice_osc_monotone", self.prev_slice_osc - so)
            self.prev_slice_osc = so
        if L.active("H_ode"):
            g = self.h_ode.advance(t)
            hm = float(np.max(smp.H * smp.H))
            rec("H_ode", -math.inf if self.h_ode.expired_at is not None else _rel(g - hm, g))
        if L.active("conformal_defect_decay"):
            rec("conformal_defect_decay", _rel(self.k.d0 - conformal_defect(state, smp), self.k.d0))
        self.margin_rows.append(row)
        self._residuals(state)
        self.step += 1
        return smp

    def _residuals(self, state: GraphState) -> None:
        self.recent.append(state)
        if len(self.recent) > 3:
            self.recent.pop(0)
        if len(self.recent) < 3 or self.step % self.every:
            return
        w = tuple(self.recent)
        if self.keep:
            self.windows.append(w)
        mid = w[1]
        row = {"t": mid.t}
        for which in RESIDUAL_KINDS:
            if which == "kappa" and not self.has_kappa:
                row["res_kappa_sup"] = row["res_kappa_l2"] = float("nan")
                continue
            r = residual_field(w, which, self.C0)
            row[f"res_{which}_sup"], row[f"res_{which}_l2"] = _norms(r, mid.grid)
            if which == "s":
                lhs = r + heat_rhs("s", mid, self.C0)
                row["heat_s_lhs_min"] = float(np.min(lhs[residual_nodes(mid.grid)]))
        for name, v in boundary_identities(mid, C0=self.C0).items():
            row[f"bnd_{name}"] = v
        row["xi_A2_sup"], row["xi_A2_flux"] = xi_A2(mid)
        row["defect"] = conformal_defect(mid)
        if self.flat:
            sm = simons_window(w)
            row["simons_vs_heat"], row["simons_vs_printed"] = sm.vs_heat, sm.vs_printed
        self.residual_rows.append(row)
