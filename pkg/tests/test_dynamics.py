import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from pksns.decomposition import to_vorticity
from pksns.dynamics import (
    Params,
    adapt_dt,
    divergence_residual,
    make_state,
    quantize_dt,
    rhs_density,
    rhs_vorticity_system,
    rhs_zero_mode_velocity,
    scales,
    step,
)
from pksns.errors import DtUnderflowError
from pksns.field import Grid, random_smooth_field


def _only(**on):
    base = dict(shear=False, diffusion=False, chemotaxis=False, fluid=False)
    base.update(on)
    return base


class TestParams:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(A=-1.0),
            dict(mu=math.nan),
            dict(eps1=0.6),
            dict(cfl=0.0),
            dict(dt_min=1.0, dt_init=0.1),
            dict(dt_init=1.0, dt_max=0.5),
            dict(t_end=-1.0),
            dict(tol_div=0.0),
            dict(dt_levels=0),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            Params(**kw)

    def test_eps_rule(self):
        assert Params(eps1=0.7).eps == 0.7
        assert Params(eps1=2.0).eps == 0.8

    def test_scales(self):
        assert scales(Params(A=50.0)) == (1.0, 0.02, 0.02, 1.0)
        assert scales(Params(A=0.0)) == (0.0, 1.0, 1.0, 0.0)
        assert scales(Params(A=50.0, shear=False, diffusion=False)) == (0.0, 0.0, 0.02, 1.0)


class TestStepSize:
    def test_quantize_on_ladder(self):
        p = Params(dt_max=0.5, dt_init=0.1, dt_levels=4)
        assert quantize_dt(1.0, p) == 0.5
        assert quantize_dt(0.5, p) == 0.5
        q = quantize_dt(0.3, p)
        assert q <= 0.3
        j = -4 * math.log2(q / 0.5)
        assert j == pytest.approx(round(j)) and quantize_dt(q * 2 ** (1 / 4) * 1.0001, p) > q

    @given(st.floats(1e-6, 10.0))
    def test_quantize_property(self, dt):
        p = Params(dt_max=0.5, dt_init=0.1, dt_min=1e-8)
        q = quantize_dt(dt, p)
        assert q <= min(dt, 0.5) * (1 + 1e-12)
        assert q > min(dt, 0.5) * 2 ** (-1 / 4) * (1 - 1e-12)

    def test_cfl_shear_only(self, small_grid):
        p = Params(A=10.0, **_only(shear=True), cfl=0.5, dt_max=10.0, dt_init=0.1)
        s = make_state(small_grid, np.zeros(small_grid.shape))
        assert adapt_dt(s, p) == pytest.approx(0.5 * (2 * math.pi / 8))

    def test_growth_limited(self, small_grid):
        p = Params(A=10.0, **_only(), dt_max=1.0, dt_init=0.01)
        s = make_state(small_grid, np.zeros(small_grid.shape))
        s1 = step(s, p, dt=0.01)
        assert adapt_dt(s1, p) == pytest.approx(0.02)

    def test_underflow(self, small_grid):
        X, Y, Z = small_grid.mesh()
        n = 1e6 * (1 - Y**2) * (1 + np.cos(X))
        p = Params(A=0.0, dt_min=1e-3, dt_init=1e-3, dt_max=1e-2, fluid=False)
        s = make_state(small_grid, n)
        with pytest.raises(DtUnderflowError):
            step(s, p)

    def test_rejects_nonpositive_dt(self, small_grid):
        s = make_state(small_grid, np.zeros(small_grid.shape))
        with pytest.raises(ValueError):
            step(s, Params(), dt=0.0)


class TestLinearOracles:
    def test_heat_mode_exact(self, grid):
        X, Y, Z = grid.mesh()
        prof = np.cos(np.pi * Y / 2) * np.cos(X) * np.sin(2 * Z)
        A = 10.0
        p = Params(A=A, **_only(diffusion=True))
        s = make_state(grid, prof)
        for _ in range(10):
            s = step(s, p, dt=0.1)
        rate = (1 + 4 + np.pi**2 / 4) / A
        assert np.max(np.abs(s.n.values - math.exp(-rate * s.t) * prof)) < 1e-8

    def test_couette_phase(self, grid):
        X, Y, Z = grid.mesh()
        p = Params(A=10.0, **_only(shear=True))
        s = make_state(grid, (1 - Y**2) * np.cos(X))
        for _ in range(5):
            s = step(s, p, dt=0.2)
        assert np.max(np.abs(s.n.values - (1 - Y**2) * np.cos(X - Y * s.t))) < 1e-10

    def test_zero_is_fixed_point(self, small_grid):
        s = make_state(small_grid, np.zeros(small_grid.shape))
        p = Params(A=20.0, mu=1.0)
        for _ in range(3):
            s = step(s, p, dt=0.1)
        for name in s.FIELDS:
            assert np.max(np.abs(getattr(s, name).values)) == 0

    def test_unrescaled_heat(self, grid):
        X, Y, Z = grid.mesh()
        prof = np.cos(np.pi * Y / 2) * np.cos(Z)
        p = Params(A=0.0, **_only(diffusion=True), dt_init=1e-3, dt_max=1e-2)
        s = make_state(grid, prof)
        for _ in range(20):
            s = step(s, p, dt=0.01)
        assert np.max(np.abs(s.n.values - math.exp(-(1 + np.pi**2 / 4) * s.t) * prof)) < 1e-8


def _sympy_fields(grid, exprs):
    x, y, z = sp.symbols("x y z")
    X, Y, Z = grid.mesh()
    return [sp.lambdify((x, y, z), e, "numpy")(X, Y, Z) * np.ones(grid.shape) for e in exprs]


class TestRightSides:
    def test_density_shear_and_logistic(self, grid):
        x, y, z = sp.symbols("x y z")
        A, mu = 8.0, 2.0
        n = (1 - y**2) * sp.cos(x) + (1 - y**2) ** 2
        rhs = -y * sp.diff(n, x) - mu / A * n**2
        nv, ev = _sympy_fields(grid, [n, rhs])
        p = Params(A=A, mu=mu, chemotaxis=False, fluid=False)
        got = rhs_density(make_state(grid, nv), p).values
        assert np.max(np.abs(got - ev)) < 1e-11

    def test_density_chemotaxis(self, grid):
        x, y, z = sp.symbols("x y z")
        A = 4.0
        c = (1 - y**2) ** 3 * sp.cos(x) * sp.sin(2 * z)  # n = -Delta c + c vanishes at the walls
        n = -sp.diff(c, x, 2) - sp.diff(c, y, 2) - sp.diff(c, z, 2) + c
        flux = [n * sp.diff(c, v) for v in (x, y, z)]
        rhs = -sum(sp.diff(f, v) for f, v in zip(flux, (x, y, z))) / A
        nv, ev = _sympy_fields(grid, [n, rhs])
        p = Params(A=A, shear=False, fluid=False)
        got = rhs_density(make_state(grid, nv), p).values
        assert np.max(np.abs(got - ev)) < 1e-10

    def test_density_transport(self, grid):
        X, Y, Z = grid.mesh()
        # u = (u1(y, z), 0, 0) is admissible; n = cos(x) (1 - y^2)
        u1 = (1 - Y**2) * np.cos(Z)
        nv = (1 - Y**2) * np.cos(X)
        A = 5.0
        p = Params(A=A, shear=False, chemotaxis=False)
        s = make_state(grid, nv, u=(u1, 0 * u1, 0 * u1))
        got = rhs_density(s, p).values
        assert np.max(np.abs(got - u1 * (1 - Y**2) * np.sin(X) / A)) < 1e-12

    def test_zero_A_needs_flag(self, small_grid):
        s = make_state(small_grid, np.zeros(small_grid.shape))
        with pytest.raises(ValueError):
            rhs_density(s, Params(A=0.0, dt_init=1e-3, dt_max=1e-2))
        rhs_density(s, Params(A=0.0, dt_init=1e-3, dt_max=1e-2), unrescaled=True)

    @pytest.mark.parametrize("name,wall", [("omega2", 1), ("delta_u2", 2)])
    def test_step_consistent_with_vorticity_rhs(self, rng, name, wall):
        g = Grid(8, 17, 8)
        p = Params(A=50.0, mu=0.5, tol_div=1e-6)
        n = random_smooth_field(g, rng, kmax=2, ydeg=4).values ** 2
        u = [0.1 * random_smooth_field(g, rng, kmax=2, ydeg=4).values for _ in range(3)]
        s0 = make_state(g, n, u=u)
        rhs = dict(zip(("omega2", "delta_u2"), rhs_vorticity_system(s0, p, include_linear=True)))[name]
        v0 = getattr(to_vorticity(s0.u), name).coeffs
        errs = []
        for dt in (2e-4, 1e-4):
            v1 = getattr(to_vorticity(step(s0, p, dt=dt).u), name).coeffs
            # rows next to the walls carry the boundary conditions, not the evolution equation
            inner = slice(wall, -wall)
            errs.append(np.max(np.abs((v1 - v0)[1:, inner] / dt - rhs.coeffs[1:, inner])))
        assert errs[1] < 1e-2 * np.max(np.abs(rhs.coeffs[1:]))
        # first-order difference quotient: error halves with dt
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)

    def test_zero_mode_split_consistent(self, rng):
        g = Grid(8, 17, 8)
        p = Params(A=30.0)
        n = np.abs(random_smooth_field(g, rng, kmax=2, ydeg=4).values)
        u = [0.1 * random_smooth_field(g, rng, kmax=2, ydeg=4).values for _ in range(3)]
        s0 = make_state(g, n, u=u)
        rh, rt, r2, r3 = rhs_zero_mode_velocity(s0, p)
        for f in (rh, rt, r2, r3):
            assert np.allclose(f.values, f.values[:1])
        dt = 1e-4
        s1 = step(s0, p, dt=dt)
        # the two parts of u_{1,0} evolve to the x-average of u1
        du10 = (s1.u10_hat.values + s1.u10_tilde.values - s0.u10_hat.values - s0.u10_tilde.values) / dt
        d_avg = (s1.u1.values.mean(axis=0) - s0.u1.values.mean(axis=0)) / dt
        assert np.max(np.abs(du10[0] - d_avg)) < 1e-6 * (1 + np.abs(d_avg).max())

    def test_disabled_fluid_has_no_velocity_rhs(self, small_grid):
        s = make_state(small_grid, np.ones(small_grid.shape))
        for f in rhs_zero_mode_velocity(s, Params(A=10.0, fluid=False)):
            assert np.max(np.abs(f.values)) == 0


class TestStepProperties:
    @given(st.integers(0, 2**31 - 1))
    def test_divergence_free_after_steps(self, seed):
        g = Grid(8, 17, 8)
        rng = np.random.default_rng(seed)
        n = np.abs(random_smooth_field(g, rng, kmax=2, ydeg=4).values)
        u = [0.2 * random_smooth_field(g, rng, kmax=2, ydeg=4).values for _ in range(3)]
        p = Params(A=20.0, mu=0.2)
        s = make_state(g, n, u=u)
        for _ in range(3):
            s = step(s, p, dt=0.05)
        assert divergence_residual(s) < p.tol_div
        assert np.max(np.abs(s.u2.values[:, [0, -1], :])) == 0
        assert np.allclose(s.u1.values.mean(axis=0), (s.u10_hat.values + s.u10_tilde.values)[0], atol=1e-10)

    def test_deterministic(self, small_grid, rng):
        n = np.abs(random_smooth_field(small_grid, rng).values)
        p = Params(A=20.0, mu=0.2)
        a = step(make_state(small_grid, n), p, dt=0.05)
        b = step(make_state(small_grid, n), p, dt=0.05)
        for name in a.FIELDS:
            assert np.array_equal(getattr(a, name).values, getattr(b, name).values)

    def test_second_order_in_time(self, small_grid):
        X, Y, Z = small_grid.mesh()
        n0 = (1 - Y**2) * (1.5 + np.cos(X)) * (1 + 0.3 * np.sin(Z))
        p = Params(A=4.0, mu=1.0, fluid=False)

        def run(dt, T=0.8):
            s = make_state(small_grid, n0)
            for _ in range(int(round(T / dt))):
                s = step(s, p, dt=dt)
            return s.n.values

        ref = run(0.0125)
        e1 = np.max(np.abs(run(0.1) - ref))
        e2 = np.max(np.abs(run(0.05) - ref))
        assert math.log2(e1 / e2) > 1.8

    def test_clipping_accumulates_mass(self, small_grid):
        X, Y, Z = small_grid.mesh()
        n = (1 - Y**2) * np.cos(X)  # sign changing
        p = Params(A=10.0, clip_negative_n=True, fluid=False, chemotaxis=False)
        s = step(make_state(small_grid, n), p, dt=0.1)
        assert s.n.values.min() >= 0
        assert s.clipped_mass > 0
