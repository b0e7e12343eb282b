"""Warping functions of GRW spacetimes ``-I x_rho M`` and their scalar primitives.

A :class:`WarpProfile` bundles the warping function ``rho`` with its first two
derivatives, the open interval ``I = (s_minus, s_plus)`` and a base point used by
the integral primitives

    varsigma(s) = int_{s_base}^s dr / rho(r)        (conformal parameter)
    phi(s)      = int_{s_base}^s rho(r) dr
    kappa(s)    = C0 int_{s_base}^s rho(r) / rho'(r) dr

Catalog entries carry closed forms wherever they exist; everything else goes
through a cached composite Gauss-Legendre table (see :class:`_Cumulative`).
All evaluators are vectorised over numpy arrays.
"""

from __future__ import annotations

import dataclasses
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

Array = np.ndarray
Fn = Callable[[Array], Array]

CATALOG = (
    "minkowski_product",
    "minkowski_hyperbolic",
    "de_sitter",
    "steady_state",
    "einstein_de_sitter",
    "reference",
)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


class ProfileError(ValueError):
    """Invalid warping-function data or evaluation outside its domain."""


def _gl_panel(g: Fn, a, b) -> Array:
    """Elementwise 12-point Gauss-Legendre approximation of int_a^b g."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    nodes = mid[..., None] + half[..., None] * _GL_X
    return half * (g(nodes) @ _GL_W)


class _Cumulative:
    """Vectorised antiderivative of a smooth integrand.

    Anchors sit either on a uniform lattice around ``s_ref`` that grows on
    demand (closed-form integrands on possibly unbounded intervals), or on a
    fixed refinement of ``breakpoints`` (spline tables, so that no panel ever
    straddles a knot). Values are exact to roundoff for panel widths <= 1/64.
    """

    def __init__(self, g: Fn, s_ref: float = 0.0, step: float = 1.0 / 64,
                 breakpoints: Array | None = None):
        self._g = g
        self._lock = threading.Lock()
        self._step = step
        if breakpoints is not None:
            pts = [breakpoints[0]]
            for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
                m = max(1, int(math.ceil((hi - lo) / step)))
                pts.extend(lo + (hi - lo) * np.arange(1, m + 1) / m)
            self._s = np.asarray(pts)
            self._F = np.concatenate([[0.0], np.cumsum(_gl_panel(g, self._s[:-1], self._s[1:]))])
            self._uniform = False
        else:
            self._s0 = float(s_ref)
            self._kmin = 0
            self._F = np.zeros(1)
            self._uniform = True

    def _extend(self, kmin: int, kmax: int) -> None:
        with self._lock:
            k_lo, k_hi = self._kmin, self._kmin + len(self._F) - 1
            F = self._F
            if kmax > k_hi:
                s = self._s0 + self._step * np.arange(k_hi, kmax + 1)
                F = np.concatenate([F, F[-1] + np.cumsum(_gl_panel(self._g, s[:-1], s[1:]))])
            if kmin < k_lo:
                s = self._s0 + self._step * np.arange(kmin, k_lo + 1)
                left = _gl_panel(self._g, s[:-1], s[1:])
                F = np.concatenate([F[0] - np.cumsum(left[::-1])[::-1], F])
                self._kmin = kmin
            self._F = F

    def __call__(self, s) -> Array:
        s = np.asarray(s, dtype=float)
        if self._uniform:
            k = np.floor((s - self._s0) / self._step).astype(np.int64)
            kmin, kmax = int(k.min(initial=0)), int(k.max(initial=0)) + 1
            if kmin < self._kmin or kmax > self._kmin + len(self._F) - 1:
                self._extend(min(kmin, self._kmin), max(kmax, self._kmin + len(self._F) - 1))
            F, k0 = self._F, self._kmin
            anchor = self._s0 + self._step * k
            return F[k - k0] + _gl_panel(self._g, anchor, s)
        k = np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._s) - 2)
        return self._F[k] + _gl_panel(self._g, self._s[k], s)

    def table(self) -> tuple[Array, Array]:
        if self._uniform:
            s = self._s0 + self._step * np.arange(self._kmin, self._kmin + len(self._F))
            return s, self._F
        return self._s, self._F


@dataclass(frozen=True)
class WarpProfile:
    """Warping function ``rho`` on ``I = (s_minus, s_plus)``.

    Immutable; the lazily grown quadrature tables are guarded by a lock so a
    profile may be shared across threads.
    """

    name: str
    s_minus: float
    s_plus: float
    rho: Fn
    rho_prime: Fn
    rho_second: Fn
    s_base: float
    ratio_fn: Fn = field(repr=False)
    ratio_prime_fn: Fn = field(repr=False)
    # closed-form antiderivatives (None -> quadrature table)
    inv_rho_prim: Fn | None = field(default=None, repr=False)
    inv_rho_prim_inv: Fn | None = field(default=None, repr=False)
    rho_prim: Fn | None = field(default=None, repr=False)
    kappa_prim: Fn | None = field(default=None, repr=False)
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    # -- pointwise --------------------------------------------------------
    def ratio(self, s) -> Array:
        """rho'/rho."""
        return self.ratio_fn(np.asarray(s, dtype=float))

    def ratio_prime(self, s) -> Array:
        """(rho'/rho)'."""
        return self.ratio_prime_fn(np.asarray(s, dtype=float))

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=float)
        return bool(np.all((s > self.s_minus) & (s < self.s_plus)))

    def require(self, s, what: str = "s") -> None:
        if not self.contains(s):
            s = np.atleast_1d(np.asarray(s, dtype=float))
            bad = s[~((s > self.s_minus) & (s < self.s_plus))]
            raise ProfileError(
                f"{what}={bad[0]!r} outside I=({self.s_minus}, {self.s_plus}) of profile {self.name}"
            )

    def with_base(self, s_base: float) -> WarpProfile:
        self.require(s_base, "s_base")
        return dataclasses.replace(self, s_base=float(s_base), _tables=self._tables)

    # -- primitives (relative to an arbitrary reference; differences only) --
    def _cumulative(self, key: str, g: Fn) -> _Cumulative:
        tab = self._tables.get(key)
        if tab is None:
            knots = self._tables.get("knots")
            if knots is not None:
                tab = _Cumulative(g, breakpoints=knots)
            else:
                tab = _Cumulative(g, s_ref=self.s_base)
            self._tables[key] = tab
        return tab

    def _inv_rho_antider(self, s) -> Array:
        if self.inv_rho_prim is not None:
            return self.inv_rho_prim(s)
        return self._cumulative("inv_rho", lambda r: 1.0 / self.rho(r))(s)

    def _rho_antider(self, s) -> Array:
        if self.rho_prim is not None:
            return self.rho_prim(s)
        return self._cumulative("rho", self.rho)(s)

    def _kappa_antider(self, s) -> Array:
        if self.kappa_prim is not None:
            return self.kappa_prim(s)
        return self._cumulative("kappa", lambda r: 1.0 / self.ratio(r))(s)

    def varsigma(self, s) -> Array:
        s = np.asarray(s, dtype=float)
        return self._inv_rho_antider(s) - self._inv_rho_antider(self.s_base)

    def varsigma_inv(self, z) -> Array:
        z = np.asarray(z, dtype=float)
        if self.inv_rho_prim_inv is not None:
            return self.inv_rho_prim_inv(z + self._inv_rho_antider(self.s_base))
        # Newton on varsigma(s) = z, varsigma' = 1/rho, seeded from the anchor table
        self.varsigma(self.s_base)
        tab = self._tables["inv_rho"]
        s_tab, F_tab = tab.table()
        target = z + self._inv_rho_antider(self.s_base)
        s = np.interp(target, F_tab, s_tab)
        for _ in range(50):
            step = (self._inv_rho_antider(s) - target) * self.rho(s)
            s = np.clip(s - step, s_tab[0], s_tab[-1])
            if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(s))):
                break
        return s

    def phi(self, s) -> Array:
        s = np.asarray(s, dtype=float)
        return self._rho_antider(s) - self._rho_antider(self.s_base)

    def kappa_values(self, s, C0: float = 1.0) -> Array:
        """kappa on an array; rejects paths through rho' <= 0."""
        s = np.asarray(s, dtype=float)
        lo = min(float(np.min(s)), self.s_base)
        hi = max(float(np.max(s)), self.s_base)
        path = np.linspace(lo, hi, 257)
        knots = self._tables.get("knots")
        if knots is not None:
            path = np.union1d(path, knots[(knots >= lo) & (knots <= hi)])
        if np.any(self.rho_prime(path) <= 0.0):
            raise ProfileError(f"rho' vanishes on [{lo}, {hi}]: kappa undefined for {self.name}")
        return C0 * (self._kappa_antider(s) - self._kappa_antider(self.s_base))


# ---------------------------------------------------------------------------
# catalog


def _c(v: float) -> Fn:
    return lambda s: np.full(np.shape(s), v)


def _gd(s):
    return np.arctan(np.sinh(s))


def _catalog_entry(name: str) -> dict:
    inf = math.inf
    if name == "minkowski_product":
        return dict(I=(-inf, inf), base=0.0, rho=_c(1.0), d1=_c(0.0), d2=_c(0.0),
                    ratio=_c(0.0), ratio_p=_c(0.0),
                    G=lambda s: s, Ginv=lambda y: y, Phi=lambda s: s, K=None)
    if name == "minkowski_hyperbolic":
        return dict(I=(0.0, inf), base=1.0, rho=lambda s: s, d1=_c(1.0), d2=_c(0.0),
                    ratio=lambda s: 1.0 / s, ratio_p=lambda s: -1.0 / s**2,
                    G=np.log, Ginv=np.exp, Phi=lambda s: 0.5 * s**2, K=lambda s: 0.5 * s**2)
    if name == "de_sitter":
        return dict(I=(-inf, inf), base=0.0, rho=np.cosh, d1=np.sinh, d2=np.cosh,
                    ratio=np.tanh, ratio_p=lambda s: 1.0 / np.cosh(s) ** 2,
                    G=_gd, Ginv=lambda y: np.arcsinh(np.tan(y)), Phi=np.sinh,
                    K=lambda s: np.log(np.sinh(s)))
    if name == "steady_state":
        return dict(I=(-inf, inf), base=0.0, rho=np.exp, d1=np.exp, d2=np.exp,
                    ratio=_c(1.0), ratio_p=_c(0.0),
                    G=lambda s: -np.exp(-s), Ginv=lambda y: -np.log(-y), Phi=np.exp,
                    K=lambda s: s)
    if name == "einstein_de_sitter":
        return dict(I=(0.0, inf), base=1.0,
                    rho=lambda s: np.cbrt(s) ** 2,
                    d1=lambda s: (2.0 / 3.0) / np.cbrt(s),
                    d2=lambda s: (-2.0 / 9.0) / np.cbrt(s) ** 4,
                    ratio=lambda s: (2.0 / 3.0) / s, ratio_p=lambda s: (-2.0 / 3.0) / s**2,
                    G=lambda s: 3.0 * np.cbrt(s), Ginv=lambda y: (y / 3.0) ** 3,
                    Phi=lambda s: 0.6 * np.cbrt(s) ** 5, K=lambda s: 0.75 * s**2)
    if name == "reference":
        # rho = exp(s - e^{-s}); rho'/rho = 1 + e^{-s}
        def rho(s):
            return np.exp(s - np.exp(-s))

        def d2(s):
            e = np.exp(-s)
            return rho(s) * ((1.0 + e) ** 2 - e)

        return dict(I=(0.0, inf), base=1.0, rho=rho,
                    d1=lambda s: rho(s) * (1.0 + np.exp(-s)), d2=d2,
                    ratio=lambda s: 1.0 + np.exp(-s), ratio_p=lambda s: -np.exp(-s),
                    G=lambda s: -np.exp(np.exp(-s)), Ginv=lambda y: -np.log(np.log(-y)),
                    Phi=None, K=lambda s: np.logaddexp(0.0, s))
    raise ProfileError(f"unknown catalog id {name!r}; expected one of {', '.join(CATALOG)}")


def load_table(path: str | Path) -> Array:
    """Two-column ``s rho`` text file, whitespace separated, ``#`` comments."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ProfileError(f"{path}: expected two columns (s, rho), got {data.shape[1]}")
    return data


def _table_profile(table, s_base: float | None) -> WarpProfile:
    data = np.asarray(table, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ProfileError("table must be an (m, 2) array of (s, rho) samples")
    s, r = data[:, 0], data[:, 1]
    if len(s) < 4:
        raise ProfileError(f"table needs at least 4 points, got {len(s)}")
    if np.any(r <= 0.0):
        i = int(np.argmax(r <= 0.0))
        raise ProfileError(f"non-positive rho={r[i]} at s={s[i]}")
    if np.any(np.diff(s) <= 0.0):
        raise ProfileError("table abscissae must be strictly increasing")
    # C^2 spline of log rho keeps rho positive; rho'/rho is the spline slope
    S = CubicSpline(s, np.log(r), bc_type="not-a-knot")
    S1, S2, S3 = S.derivative(1), S.derivative(2), S.derivative(3)

    def rho(x):
        return np.exp(S(x))

    prof = WarpProfile(
        name="table",
        s_minus=float(s[0]),
        s_plus=float(s[-1]),
        rho=rho,
        rho_prime=lambda x: rho(x) * S1(x),
        rho_second=lambda x: rho(x) * (S2(x) + S1(x) ** 2),
        s_base=float(s_base) if s_base is not None else float(0.5 * (s[0] + s[-1])),
        ratio_fn=lambda x: S1(x),
        ratio_prime_fn=lambda x: S2(x),
    )
    prof._tables["knots"] = s.copy()
    prof._tables["spline3"] = S3
    prof.require(prof.s_base, "s_base")
    return prof


def make_profile(name: str | None = None, table=None, s_base: float | None = None) -> WarpProfile:
    """Build a catalog profile by id, or a spline profile from ``(s, rho)`` samples.

    ``table`` may be an array or a path to a two-column text file.
    """
    if (name is None) == (table is None):
        raise ProfileError("give exactly one of a catalog name or a table")
    if table is not None:
        if isinstance(table, (str, Path)):
            table = load_table(table)
        return _table_profile(table, s_base)
    e = _catalog_entry(name)
    prof = WarpProfile(
        name=name,
        s_minus=e["I"][0],
        s_plus=e["I"][1],
        rho=e["rho"],
        rho_prime=e["d1"],
        rho_second=e["d2"],
        s_base=e["base"] if s_base is None else float(s_base),
        ratio_fn=e["ratio"],
        ratio_prime_fn=e["ratio_p"],
        inv_rho_prim=e["G"],
        inv_rho_prim_inv=e["Ginv"],
        rho_prim=e["Phi"],
        kappa_prim=e["K"],
    )
    prof.require(prof.s_base, "s_base")
    return prof


# ---------------------------------------------------------------------------
# hypothesis checker


@dataclass(frozen=True)
class HypothesisReport:
    rho_prime_nonneg: bool
    ratio_nonincreasing: bool
    strict_somewhere: bool
    C_minus_eff: float
    C_plus_eff: float
    lambda_eff: float
    ncc_gap_min: float
    range: tuple[float, float]
    tol: float

    @property
    def ncc_holds(self) -> bool:
        return self.ncc_gap_min >= -self.tol

    @property
    def monotone(self) -> bool:
        """The non-strict part of the warping hypotheses (rho' >= 0, rho'/rho non-increasing)."""
        return self.rho_prime_nonneg and self.ratio_nonincreasing

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["range"] = list(self.range)
        d["ncc_holds"] = self.ncc_holds
        return d


def hypothesis_check(p: WarpProfile, range: tuple[float, float], tol: float = 1e-10,
                     n: int = 1, K_M: float = 0.0, samples: int = 2001) -> HypothesisReport:
    """Evaluate the warping hypotheses and effective constants on ``[a, b]``.

    Effective constants are the sup/inf of rho'/rho over the range (for a
    non-increasing ratio these are its values at ``a`` and ``b``). The NCC gap
    is ``(n-1)(K_M - rho^2 (rho'/rho)')`` for a constant-curvature leaf.
    """
    a, b = float(range[0]), float(range[1])
    if not a < b:
        raise ProfileError(f"empty range [{a}, {b}]")
    p.require(np.array([a, b]), "range endpoint")
    s = np.linspace(a, b, samples)
    knots = p._tables.get("knots")
    if knots is not None:
        s = np.union1d(s, knots[(knots >= a) & (knots <= b)])
    rp = p.rho_prime(s)
    rho = p.rho(s)
    ratio = p.ratio(s)
    dratio = p.ratio_prime(s)
    return HypothesisReport(
        rho_prime_nonneg=bool(np.all(rp >= -tol)),
        ratio_nonincreasing=bool(np.all(dratio <= tol)),
        strict_somewhere=bool(np.any(dratio < -tol)),
        C_minus_eff=float(np.max(ratio)),
        C_plus_eff=float(np.min(ratio)),
        lambda_eff=float(np.max(-p.rho_second(s) / rho)),
        ncc_gap_min=float(np.min((n - 1) * (K_M - rho**2 * dratio))),
        range=(a, b),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# scalar primitives


def conformal_parameter(p: WarpProfile, s) -> Array:
    """varsigma(s) = int_{s_base}^s dr/rho."""
    p.require(s)
    return p.varsigma(s)


def conformal_parameter_inverse(p: WarpProfile, z) -> Array:
    s = p.varsigma_inv(z)
    if not np.all(np.isfinite(s)):
        raise ProfileError(f"varsigma^-1 undefined for z={z!r} on profile {p.name}")
    p.require(s, "varsigma^-1(z)")
    return s


def primitive_phi(p: WarpProfile, s) -> Array:
    """phi(s) = int_{s_base}^s rho."""
    p.require(s)
    return p.phi(s)


def kappa(p: WarpProfile, s, C0: float = 1.0) -> Array:
    """kappa(s) = C0 int_{s_base}^s rho/rho'."""
    if C0 <= 0.0:
        raise ProfileError("C0 must be positive")
    p.require(s)
    return p.kappa_values(s, C0)
