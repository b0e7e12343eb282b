"""Differential geometry of a spacelike graph ``s = u(x)`` in ``-I x_rho M``.

Everything is evaluated node-wise on a uniform grid in the radial (or slab)
coordinate. Spatial derivatives are second-order central differences with one
ghost node per side mirroring the interior (homogeneous Neumann, plus the
smoothness condition ``u_r(0) = 0`` at the centre of a ball).

Two independent routes to the mean curvature are provided:

* trace form   H = kappa_r + (n-1) kappa_t  from the principal curvatures;
* divergence   H = div(Du/(rho W)) + rho'|Du|^2/(rho^2 W) + n rho'/W, with the
  divergence taken in conservative finite-volume form over face fluxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .leaf import Ball, LeafGeometry
from .warp import WarpProfile, _GL_W, _GL_X

Array = np.ndarray


class NotSpacelike(RuntimeError):
    """|Du| >= rho(u) somewhere: the graph stopped being spacelike."""

    def __init__(self, node: int, x: float, du: float, rho: float, t: float | None = None,
                 where: str = "node"):
        self.node, self.x, self.du, self.rho, self.t = node, x, du, rho, t
        at = f" at t={t:.6g}" if t is not None else ""
        super().__init__(f"not spacelike at {where} {node} (x={x:.6g}): |Du|={du:.6g} >= rho={rho:.6g}{at}")


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class Grid:
    leaf: LeafGeometry
    points: int

    def __post_init__(self):
        if self.points < 5:
            raise ValueError(f"need at least 5 grid points, got {self.points}")

    @property
    def radial(self) -> bool:
        return isinstance(self.leaf.domain, Ball)

    @property
    def n(self) -> int:
        return self.leaf.n

    @cached_property
    def x(self) -> Array:
        d = self.leaf.domain
        if self.radial:
            return np.linspace(0.0, d.R, self.points)
        return np.linspace(d.a, d.b, self.points)

    @cached_property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @cached_property
    def x_face(self) -> Array:
        """N+1 faces, the outermost two between a boundary node and its ghost."""
        return self.x[0] - 0.5 * self.h + self.h * np.arange(self.points + 1)

    @property
    def singular_centre(self) -> bool:
        return self.radial and self.n >= 2

    @cached_property
    def c_face(self) -> Array:
        c = self.leaf.measure(np.abs(self.x_face))
        if self.singular_centre:
            c[0] = 0.0
        return c

    @cached_property
    def vol(self) -> Array:
        lo = self.x_face[:-1].copy()
        hi = self.x_face[1:]
        if self.singular_centre:
            lo[0] = 0.0
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[:, None] + half[:, None] * _GL_X
        return half * (self.leaf.measure(nodes) @ _GL_W)

    @cached_property
    def chi_ratio(self) -> Array:
        """chi'/chi at the nodes (NaN at a ball centre, zero on a slab)."""
        if not self.singular_centre:
            return np.zeros(self.points)
        from .leaf import _jacobi
        c, c1, _ = _jacobi(self.leaf.K_M, self.x)
        out = np.full(self.points, np.nan)
        out[1:] = c1[1:] / c[1:]
        return out

    @cached_property
    def chi_node(self) -> Array:
        return self.leaf.chi(self.x) if self.singular_centre else np.ones(self.points)

    @cached_property
    def chi_face(self) -> Array:
        return self.leaf.chi(self.x_face) if self.singular_centre else np.ones(self.points + 1)

    @cached_property
    def lam_max(self) -> float:
        """Largest eigenvalue of the unit-coefficient flux operator (4/h^2 on a plain interval)."""
        from scipy.linalg import eigvalsh_tridiagonal
        N, h, c, V = self.points, self.h, self.c_face, self.vol
        diag = (c[:-1] + c[1:]) / (h * V)
        upper = c[1:-1] / (h * V[:-1])  # row i -> column i+1
        lower = c[1:-1] / (h * V[1:])  # row i+1 -> column i
        # ghosts fold the outer face onto the single interior neighbour
        upper[0] = (c[0] + c[1]) / (h * V[0])
        lower[-1] = (c[-2] + c[-1]) / (h * V[-1])
        off = np.sqrt(upper * lower)
        return float(eigvalsh_tridiagonal(diag, off, select="i", select_range=(N - 1, N - 1))[0])

    def interior(self) -> slice:
        return slice(1, self.points - 1)


def extend(u: Array) -> Array:
    """Append mirror ghost nodes on both sides."""
    ue = np.empty(len(u) + 2)
    ue[1:-1] = u
    ue[0] = u[1]
    ue[-1] = u[-2]
    return ue


def d1(ue: Array, h: float) -> Array:
    return (ue[2:] - ue[:-2]) / (2.0 * h)


def d2(ue: Array, h: float) -> Array:
    return (ue[2:] - 2.0 * ue[1:-1] + ue[:-2]) / (h * h)


# ---------------------------------------------------------------------------
# state


@dataclass(frozen=True, eq=False)
class GraphState:
    t: float
    grid: Grid
    u: Array
    profile: WarpProfile

    @property
    def leaf(self) -> LeafGeometry:
        return self.grid.leaf

    @cached_property
    def ue(self) -> Array:
        return extend(self.u)

    @cached_property
    def sample(self) -> GeometrySample:
        return geometry(self)


@dataclass(frozen=True, eq=False)
class GeometrySample:
    u_r: Array
    u_rr: Array
    rho: Array
    rho_p: Array
    rho_pp: Array
    W: Array
    Theta: Array
    theta: Array
    alpha: Array
    grad_s2: Array
    kappa_r: Array
    kappa_t: Array
    H: Array
    H_div: Array
    A2: Array
    ric_nu: Array
    ncc_gap: Array
    div_flux: Array = field(repr=False)

    @property
    def u_t(self) -> Array:
        """Graph velocity (W/rho) H using the divergence-form H (what the solver advances)."""
        return self.W / self.rho * self.H_div


# ---------------------------------------------------------------------------
# pointwise formulas (exact-derivative entry points)


def tilt_values(rho, du):
    """(W, Theta, theta, alpha) from rho(u) and |Du|."""
    rho = np.asarray(rho, dtype=float)
    du = np.abs(np.asarray(du, dtype=float))
    W2 = rho * rho - du * du
    if np.any(W2 <= 0.0):
        i = int(np.argmax(np.atleast_1d(W2 <= 0.0)))
        raise NotSpacelike(i, float("nan"), float(np.atleast_1d(du)[i]), float(np.atleast_1d(rho)[i]))
    W = np.sqrt(W2)
    return W, rho * rho / W, rho / W, np.arcsinh(du / W)


def principal_values(n: int, rho, rho_p, u_r, u_rr, tangential_hess):
    """Principal curvatures (kappa_r, kappa_t) of a radial graph.

    ``tangential_hess`` is the sigma-Hessian of u on a unit tangential vector,
    (chi'/chi) u_r in a ball (u_rr at the centre), 0 on a slab.
    """
    W = np.sqrt(rho * rho - u_r * u_r)
    kr = (rho * rho * u_rr - 2.0 * rho * rho_p * u_r * u_r + rho**3 * rho_p) / (rho * W**3)
    kt = (tangential_hess + rho * rho_p) / (rho * W) if n >= 2 else np.zeros_like(kr)
    return kr, kt


def ricci_nu_values(n: int, K_M: float, rho, rho_pp, ratio_p, sinh2_alpha):
    """Ric(nu, nu) for a constant-curvature leaf and its NCC gap Ric(nu,nu) + n rho''/rho."""
    gap = (n - 1) * (K_M / (rho * rho) - ratio_p) * sinh2_alpha
    return -n * rho_pp / rho + gap, gap


# ---------------------------------------------------------------------------
# grid evaluation


def flux_divergence(grid: Grid, profile: WarpProfile, ue: Array, t: float | None = None) -> Array:
    """Conservative div(Du/(rho W)) over the control volumes."""
    h = grid.h
    p = (ue[1:] - ue[:-1]) / h
    rf = profile.rho(0.5 * (ue[1:] + ue[:-1]))
    Wf2 = rf * rf - p * p
    if np.any(Wf2 <= 0.0):
        j = int(np.argmax(Wf2 <= 0.0))
        raise NotSpacelike(j, float(grid.x_face[j]), abs(float(p[j])), float(rf[j]), t, where="face")
    F = grid.c_face * p / (rf * np.sqrt(Wf2))
    return (F[1:] - F[:-1]) / grid.vol


def tangential_hessian(grid: Grid, u_r: Array, u_rr: Array) -> Array:
    if not grid.singular_centre:
        return np.zeros_like(u_r)
    m = grid.chi_ratio * u_r
    m[0] = u_rr[0]
    return m


def geometry(state: GraphState) -> GeometrySample:
    grid, prof, n = state.grid, state.profile, state.grid.n
    ue, h = state.ue, grid.h
    u = state.u
    ur = d1(ue, h)
    urr = d2(ue, h)
    rho = prof.rho(u)
    rp = prof.rho_prime(u)
    rpp = prof.rho_second(u)
    W2 = rho * rho - ur * ur
    if np.any(W2 <= 0.0):
        i = int(np.argmax(W2 <= 0.0))
        raise NotSpacelike(i, float(grid.x[i]), abs(float(ur[i])), float(rho[i]), state.t)
    W = np.sqrt(W2)
    grad_s2 = ur * ur / W2
    kr, kt = principal_values(n, rho, rp, ur, urr, tangential_hessian(grid, ur, urr))
    div = flux_divergence(grid, prof, ue, state.t)
    ric, gap = ricci_nu_values(n, grid.leaf.K_M, rho, rpp, prof.ratio_prime(u), grad_s2)
    return GeometrySample(
        u_r=ur,
        u_rr=urr,
        rho=rho,
        rho_p=rp,
        rho_pp=rpp,
        W=W,
        Theta=rho * rho / W,
        theta=rho / W,
        alpha=np.arcsinh(np.abs(ur) / W),
        grad_s2=grad_s2,
        kappa_r=kr,
        kappa_t=kt,
        H=kr + (n - 1) * kt,
        H_div=div + rp / (rho * rho) * ur * ur / W + n * rp / W,
        A2=kr * kr + (n - 1) * kt * kt,
        ric_nu=ric,
        ncc_gap=gap,
        div_flux=div,
    )


def laplace_beltrami(state: GraphState, f: Array) -> Array:
    """Delta_g f = J^{-1} (J f_r / W^2)_r with J = W (rho chi)^{n-1}; interior nodes only.

    Returns an array of grid length with NaN at the two end nodes.
    """
    grid, prof, n, h = state.grid, state.profile, state.grid.n, state.grid.h
    ue = state.ue
    p = (ue[1:] - ue[:-1]) / h
    rf = prof.rho(0.5 * (ue[1:] + ue[:-1]))
    Wf2 = rf * rf - p * p
    Jf = np.sqrt(Wf2) * (rf * grid.chi_face) ** (n - 1)
    fe = extend(np.asarray(f, dtype=float))
    G = Jf * (fe[1:] - fe[:-1]) / h / Wf2
    s = state.sample
    Jn = s.W * (s.rho * grid.chi_node) ** (n - 1)
    out = np.full(grid.points, np.nan)
    i = grid.interior()
    out[i] = (G[2:-1] - G[1:-2]) / (h * Jn[i])
    return out


# ---------------------------------------------------------------------------
# single-node accessors


def _pick(a: Array, node):
    return a if node is None else a[node]


def tilt(state: GraphState, node=None):
    s = state.sample
    return _pick(s.W, node), _pick(s.Theta, node), _pick(s.theta, node), _pick(s.alpha, node)


def second_fundamental(state: GraphState, node=None):
    s = state.sample
    if state.grid.n == 1:
        return (_pick(s.kappa_r, node),)
    return _pick(s.kappa_r, node), _pick(s.kappa_t, node)


def mean_curvature_trace(state: GraphState, node=None):
    return _pick(state.sample.H, node)


def mean_curvature_divergence(state: GraphState, node=None):
    return _pick(state.sample.H_div, node)


def norm_A_squared(state: GraphState, node=None):
    return _pick(state.sample.A2, node)


def ambient_ricci_nu(state: GraphState, node=None):
    s = state.sample
    return _pick(s.ric_nu, node), _pick(s.ncc_gap, node)


def spacelike_margin(state: GraphState) -> Array:
    """(rho - |Du|)/rho per node, central differences with ghosts."""
    ur = d1(state.ue, state.grid.h)
    rho = state.profile.rho(state.u)
    return (rho - np.abs(ur)) / rho
