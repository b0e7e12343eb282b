"""Constant-curvature leaf geometry in radial (or slab) symmetry.

The leaf ``(M^n, sigma)`` has constant sectional curvature ``K_M``. Radial runs
live on a geodesic ball ``B_R`` with ``sigma = dr^2 + chi(r)^2 g_{S^{n-1}}``;
interval runs are one-dimensional in ``x`` and, for ``n >= 2``, translation
invariant in the remaining flat directions (a slab).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class LeafError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass(frozen=True)
class Ball:
    R: float


Domain = Union[Interval, Ball]


def _jacobi(K: float, r):
    r = np.asarray(r, dtype=float)
    if K == 0.0:
        return r, np.ones_like(r), np.zeros_like(r)
    k = math.sqrt(abs(K))
    if K > 0.0:
        s = np.sin(k * r)
        return s / k, np.cos(k * r), -k * s
    s = np.sinh(k * r)
    return s / k, np.cosh(k * r), k * s


@dataclass(frozen=True)
class LeafGeometry:
    n: int
    K_M: float
    domain: Domain

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise LeafError(f"leaf dimension must be a positive integer, got {self.n}")
        if isinstance(self.domain, Interval):
            if not self.domain.a < self.domain.b:
                raise LeafError(f"empty interval [{self.domain.a}, {self.domain.b}]")
            if self.n >= 2 and self.K_M != 0.0:
                raise LeafError("slab (interval domain with n >= 2) requires a flat leaf, K_M = 0")
        elif isinstance(self.domain, Ball):
            R = self.domain.R
            if R <= 0.0:
                raise LeafError(f"ball radius must be positive, got {R}")
            if self.K_M > 0.0 and R >= math.pi / (2.0 * math.sqrt(self.K_M)):
                raise LeafError(
                    f"ball of radius {R} is not convex for K_M={self.K_M}: need R < pi/(2 sqrt K_M)"
                )
        else:
            raise LeafError(f"unsupported domain {self.domain!r}")

    @property
    def radial(self) -> bool:
        return isinstance(self.domain, Ball)

    def chi(self, r):
        return _jacobi(self.K_M, r)[0]

    def measure(self, r):
        """Density of the leaf volume along the grid coordinate (chi^{n-1}, or 1 on a slab)."""
        r = np.asarray(r, dtype=float)
        if not self.radial or self.n == 1:
            return np.ones_like(r)
        return self.chi(r) ** (self.n - 1)


def jacobi(leaf: LeafGeometry, r):
    """(chi, chi', chi'') with chi'' + K_M chi = 0, chi(0) = 0, chi'(0) = 1."""
    if np.any(np.asarray(r) < 0.0):
        raise LeafError("jacobi field evaluated at negative r")
    return _jacobi(leaf.K_M, r)


def radial_laplacian_coeff(leaf: LeafGeometry, r):
    """First-order coefficient of the radial Laplacian, (n-1) chi'/chi."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise LeafError("radial Laplacian coefficient is singular at r = 0")
    if leaf.n == 1:
        return np.zeros_like(r)
    c, c1, _ = _jacobi(leaf.K_M, r)
    return (leaf.n - 1) * c1 / c


def default_cutoff_scale(leaf: LeafGeometry, R: float) -> float:
    return 2.0 * float(leaf.chi(R))


def cutoff(leaf: LeafGeometry, R: float, C_R: float, r):
    """Radial cutoff xi = ((C_R - chi)_+)^3 with its first two r-derivatives."""
    chiR = float(leaf.chi(R))
    if C_R < 2.0 * chiR * (1.0 - 1e-14):
        raise LeafError(f"C_R={C_R} below the admissible minimum 2 chi(R)={2 * chiR}")
    c, c1, c2 = jacobi(leaf, r)
    vr = np.maximum(C_R - c, 0.0)
    xi = vr**3
    dxi = -3.0 * vr**2 * c1
    d2xi = 6.0 * vr * c1**2 - 3.0 * vr**2 * c2
    return xi, dxi, d2xi


def hessian_comparison_gap(leaf: LeafGeometry, r):
    """Tangential eigenvalue chi'/chi of DDr (exact for constant curvature)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise LeafError("Hessian of the distance function is singular at r = 0")
    c, c1, _ = _jacobi(leaf.K_M, r)
    return c1 / c


def comparison_violations(leaf: LeafGeometry, R: float, samples: int = 1000) -> np.ndarray:
    """Radii in (0, R] where the curvature hypothesis K_M >= -chi(r) fails."""
    r = np.linspace(R / samples, R, samples)
    return r[leaf.K_M < -leaf.chi(r)]
