import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grwflow.flow import FlowConfig, InitialData
from grwflow.geom import (
    GraphState,
    Grid,
    NotSpacelike,
    ambient_ricci_nu,
    laplace_beltrami,
    mean_curvature_divergence,
    mean_curvature_trace,
    norm_A_squared,
    principal_values,
    ricci_nu_values,
    second_fundamental,
    spacelike_margin,
    tilt,
    tilt_values,
)
from grwflow.leaf import Ball, Interval, LeafGeometry
from grwflow.warp import make_profile


def state(profile, u, n=1, K=0.0, domain=None, points=None):
    domain = domain or Interval(0.0, 1.0)
    u = np.asarray(u, dtype=float)
    grid = Grid(LeafGeometry(n, K, domain), points or len(u))
    return GraphState(0.0, grid, u, make_profile(profile) if isinstance(profile, str) else profile)


def const(profile, c, n=1, K=0.0, domain=None, points=41):
    return state(profile, np.full(points, c), n, K, domain)


def bump_state(points, profile="reference", n=2, c=1.0, A=0.1):
    cfg = FlowConfig(profile=profile, n=n, domain="ball", R=1.0, points=points,
                     initial=InitialData("bump", c, A))
    return cfg.setup()


class TestTilt:
    def test_vertical(self):
        assert tuple(map(float, tilt_values(2.0, 0.0))) == (2.0, 2.0, 1.0, 0.0)

    def test_tilted(self):
        W, Th, th, _ = tilt_values(2.0, 1.0)
        assert W == pytest.approx(math.sqrt(3), rel=1e-15)
        assert Th == pytest.approx(4 / math.sqrt(3), rel=1e-15)
        assert Th == pytest.approx(2.309401, abs=1e-6)
        assert th == pytest.approx(2 / math.sqrt(3), rel=1e-15)

    def test_null(self):
        with pytest.raises(NotSpacelike):
            tilt_values(2.0, 2.0)

    def test_on_grid(self):
        W, Th, th, a = tilt(const("steady_state", 1.0), 3)
        assert (W, th, a) == (pytest.approx(math.e), 1.0, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.1, 10.0), st.floats(0.0, 0.999))
    def test_identities(self, rho, frac):
        du = frac * rho
        W, Th, th, a = tilt_values(rho, du)
        assert abs(W * W + du * du - rho * rho) <= 1e-12 * rho * rho
        grad_s2 = du * du / (W * W)
        assert abs(th * th - 1 - grad_s2) <= 1e-10 * max(1.0, th * th)
        assert Th >= rho * (1 - 1e-15)
        assert math.cosh(a) == pytest.approx(th, rel=1e-9)

    def test_grid_identities(self):
        s = bump_state(80).sample
        assert np.max(np.abs(s.W**2 + s.u_r**2 - s.rho**2)) <= 1e-12
        assert np.max(np.abs(s.theta**2 - 1 - s.grad_s2)) <= 1e-10
        assert np.all(s.Theta >= s.rho)
        flat = np.abs(s.u_r) == 0.0
        assert np.allclose(s.Theta[flat], s.rho[flat], rtol=1e-15, atol=0)

    def test_not_spacelike_names_node(self):
        u = np.zeros(11)
        u[6] = 1.0
        with pytest.raises(NotSpacelike) as e:
            state("minkowski_product", u).sample
        assert e.value.node in (5, 7)


class TestCurvature:
    def test_flat_parabola(self):
        kr, _ = principal_values(1, 1.0, 0.0, 0.0, 0.2, 0.0)
        assert kr == pytest.approx(0.2)
        assert kr**2 == pytest.approx(0.04)

    def test_flat_parabola_on_grid(self):
        x = np.linspace(-1, 1, 21)
        st_ = state("minkowski_product", 0.1 * x**2, domain=Interval(-1.0, 1.0))
        assert second_fundamental(st_, 10)[0] == pytest.approx(0.2, rel=1e-12)
        assert norm_A_squared(st_, 10) == pytest.approx(0.04, rel=1e-12)

    def test_zero_everything(self):
        assert principal_values(2, 1.0, 0.0, 0.0, 0.0, 0.0) == (0.0, 0.0)

    @pytest.mark.parametrize("profile,c,n", [("steady_state", 1.0, 2), ("reference", 0.7, 3),
                                             ("minkowski_product", 0.3, 2), ("de_sitter", 0.5, 1)])
    def test_slices(self, profile, c, n):
        p = make_profile(profile)
        k = float(p.ratio(c))
        for dom in (Interval(0.0, 1.0), Ball(1.0)):
            st_ = const(p, c, n, 0.0, dom)
            comps = second_fundamental(st_)
            for a in comps:
                assert np.allclose(a, k, atol=1e-14)
            assert np.allclose(mean_curvature_trace(st_), n * k, atol=1e-13)
            assert np.allclose(mean_curvature_divergence(st_), n * k, atol=1e-13)
            A2 = norm_A_squared(st_)
            assert np.allclose(A2, n * k * k, atol=1e-13)
            assert np.max(A2 - mean_curvature_trace(st_) ** 2 / n) <= 1e-10

    def test_named_slice_values(self):
        assert np.allclose(mean_curvature_trace(const("steady_state", 1.0, 2)), 2.0)
        assert np.allclose(mean_curvature_divergence(const("steady_state", 1.0, 2)), 2.0)
        assert np.all(mean_curvature_trace(const("minkowski_product", 5.0, 3)) == 0.0)

    def test_n1_A2_is_H2(self):
        s = state("reference", 1.0 + 0.05 * np.cos(np.pi * np.linspace(0, 1, 60))).sample
        assert np.array_equal(s.A2, s.H**2)

    def test_two_formulas_second_order(self):
        errs = []
        for N in (100, 200, 400):
            s = bump_state(N).sample
            errs.append(np.max(np.abs(s.H - s.H_div)))
        r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
        assert 3.0 <= r1 <= 5.0 and 3.0 <= r2 <= 5.0
        assert errs[2] <= 1e-4

    def test_against_exact_derivatives(self):
        # u = c + A cos(pi r) on the unit ball: grid H converges to the closed-form value
        p = make_profile("reference")
        errs = []
        for N in (100, 200):
            st_ = bump_state(N)
            r = st_.grid.x
            u = 1.0 + 0.1 * np.cos(np.pi * r)
            ur = -0.1 * np.pi * np.sin(np.pi * r)
            urr = -0.1 * np.pi**2 * np.cos(np.pi * r)
            m = np.where(r > 0, ur / np.where(r > 0, r, 1.0), urr)
            kr, kt = principal_values(2, p.rho(u), p.rho_prime(u), ur, urr, m)
            errs.append(np.max(np.abs(st_.sample.H - (kr + kt))))
        assert 3.5 <= errs[0] / errs[1] <= 4.5


class TestRicci:
    def test_de_sitter_round(self):
        for n in (1, 2, 3):
            st_ = bump_state(60, "de_sitter", n, 0.3, 0.1)
            if n >= 2:
                st_ = state("de_sitter", st_.u, n, 1.0, Ball(1.0))
            ric, _ = ambient_ricci_nu(st_)
            if n >= 2:
                assert np.allclose(ric, -n, atol=1e-12)

    def test_flat(self):
        st_ = state("minkowski_product", 0.1 * np.cos(np.pi * np.linspace(0, 1, 30)), 1)
        ric, gap = ambient_ricci_nu(st_)
        assert np.all(ric == 0.0) and np.all(gap == 0.0)

    def test_vertical_normal(self):
        p = make_profile("reference")
        ric, gap = ricci_nu_values(3, -1.0, p.rho(1.0), p.rho_second(1.0), p.ratio_prime(1.0), 0.0)
        assert gap == 0.0 and ric == pytest.approx(-3 * p.rho_second(1.0) / p.rho(1.0))

    @pytest.mark.parametrize("name,n,K,s,ur", [
        ("reference", 2, 0.0, 0.8, 0.3),
        ("de_sitter", 2, -1.0, 0.4, 0.5),
        ("einstein_de_sitter", 3, 1.0, 1.3, 0.6),
        ("steady_state", 3, -1.0, 0.2, 0.9),
    ])
    def test_christoffel_oracle(self, name, n, K, s, ur):
        """Ric(nu,nu) from numerically differentiated Christoffel symbols of the warped metric."""
        mp.mp.dps = 30
        rho = {"reference": lambda x: mp.exp(x - mp.exp(-x)), "de_sitter": mp.cosh,
               "einstein_de_sitter": lambda x: mp.cbrt(x) ** 2, "steady_state": mp.exp}[name]
        chi = {0.0: lambda r: r, -1.0: mp.sinh, 1.0: mp.sin}[K]
        dim = n + 1

        def metric(q):
            s_, r = q[0], q[1]
            g = [mp.mpf(-1), rho(s_) ** 2]
            w = rho(s_) ** 2 * chi(r) ** 2
            for k in range(n - 1):
                g.append(w)
                w = w * mp.sin(q[2 + k]) ** 2
            return g  # diagonal

        def dmetric(q, c, a):
            return mp.diff(lambda v: metric(q[:c] + [v] + q[c + 1:])[a], q[c])

        def gamma(q):
            g = metric(q)
            dg = [[dmetric(q, c, a) for a in range(dim)] for c in range(dim)]  # dg[c][a] = d_c g_aa
            G = [[[mp.mpf(0)] * dim for _ in range(dim)] for _ in range(dim)]
            for a in range(dim):
                for b in range(dim):
                    for c in range(dim):
                        v = 0
                        if a == b:
                            v += dg[c][a]
                        if a == c:
                            v += dg[b][a]
                        if b == c:
                            v -= dg[a][b]
                        G[a][b][c] = v / (2 * g[a])
            return G

        q0 = [mp.mpf(s), mp.mpf("0.6")] + [mp.mpf("1.1")] * (n - 1)
        G0 = gamma(q0)
        # d_c Gamma^a_bd via central differences on the mpmath Christoffels
        eps = mp.mpf("1e-10")
        dG = []
        for c in range(dim):
            qp = list(q0)
            qm = list(q0)
            qp[c] += eps
            qm[c] -= eps
            Gp, Gm = gamma(qp), gamma(qm)
            dG.append([[[(Gp[a][b][d] - Gm[a][b][d]) / (2 * eps) for d in range(dim)]
                        for b in range(dim)] for a in range(dim)])
        Ric = [[mp.mpf(0)] * dim for _ in range(dim)]
        for b in range(dim):
            for d in range(dim):
                v = 0
                for a in range(dim):
                    v += dG[a][a][b][d] - dG[d][a][b][a]
                    for e in range(dim):
                        v += G0[a][a][e] * G0[e][b][d] - G0[a][d][e] * G0[e][b][a]
                Ric[b][d] = v
        r_s = rho(q0[0])
        W = mp.sqrt(r_s**2 - ur**2)
        nu = [r_s / W, r_s / W * ur / r_s**2] + [0] * (n - 1)
        oracle = sum(Ric[b][d] * nu[b] * nu[d] for b in range(dim) for d in range(dim))

        p = make_profile(name)
        ric, _ = ricci_nu_values(n, K, p.rho(s), p.rho_second(s), p.ratio_prime(s),
                                 ur * ur / (float(W) ** 2))
        assert float(ric) == pytest.approx(float(oracle), rel=1e-7, abs=1e-7)


class TestGrid:
    def test_lam_max_interval(self):
        g = Grid(LeafGeometry(1, 0.0, Interval(0.0, 1.0)), 101)
        assert g.lam_max == pytest.approx(4 / g.h**2, rel=1e-12)

    @pytest.mark.parametrize("n,K", [(2, 0.0), (3, -1.0), (2, 1.0)])
    def test_volumes_sum(self, n, K):
        lf = LeafGeometry(n, K, Ball(1.0))
        g = Grid(lf, 50)
        total = float(mp.quad(lambda r: lf.chi(float(r)) ** (n - 1), [0, 1 + g.h / 2]))
        assert g.vol.sum() == pytest.approx(total, rel=1e-12)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            Grid(LeafGeometry(1, 0.0, Interval(0.0, 1.0)), 4)

    def test_neumann_ghosts(self):
        st_ = bump_state(64)
        s = st_.sample
        assert s.u_r[0] == 0.0 and s.u_r[-1] == 0.0

    def test_spacelike_margin(self):
        m = spacelike_margin(const("reference", 1.0))
        assert np.all(m == 1.0)


class TestLaplaceBeltrami:
    def test_constant_function(self):
        st_ = bump_state(50)
        L = laplace_beltrami(st_, np.ones(50))
        assert np.all(np.isnan(L[[0, -1]])) and np.all(L[1:-1] == 0.0)

    def test_flat_metric_reduces_to_laplacian(self):
        # u constant on a flat product: g = rho^2 sigma with rho = 1, Delta_g f = f'' + f'/r in 2D
        lf = LeafGeometry(2, 0.0, Ball(1.0))
        errs = []
        for N in (100, 200):
            g = Grid(lf, N)
            st_ = GraphState(0.0, g, np.zeros(N), make_profile("minkowski_product"))
            r = g.x
            f = np.cos(np.pi * r)
            exact = -np.pi**2 * np.cos(np.pi * r) - np.pi * np.sin(np.pi * r) / np.where(r > 0, r, 1)
            L = laplace_beltrami(st_, f)
            errs.append(np.max(np.abs(L - exact)[2:-2]))
        assert 3.5 <= errs[0] / errs[1] <= 4.5
