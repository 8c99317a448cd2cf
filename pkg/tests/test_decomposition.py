import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pksns.decomposition import (
    VorticityState,
    clamped_basis,
    divergence_coeffs,
    from_vorticity,
    project_solenoidal,
    recovery_ratios,
    solve_clamped,
    to_vorticity,
)
from pksns.errors import PreconditionError
from pksns.field import (
    Grid,
    PhysicalField,
    SpectralField,
    bwd,
    cheb_diff_matrix,
    cheb_nodes,
    diff_coeffs,
    fwd,
    l2sq,
    random_smooth_field,
)


def _stream_velocity(grid):
    X, Y, Z = grid.mesh()
    u1 = -4 * Y * (1 - Y**2) * np.sin(X)
    u2 = -((1 - Y**2) ** 2) * np.cos(X)
    u3 = (1 - Y**2) * (0.5 + np.cos(X))  # z-independent, so divergence free
    return tuple(PhysicalField(grid, v) for v in (u1, u2, u3))


def _random_velocity(grid, rng):
    return project_solenoidal([random_smooth_field(grid, rng, kmax=2, ydeg=5) for _ in range(3)])


class TestClamped:
    def test_basis_constraints(self):
        ny = 17
        B, rows = clamped_basis(ny)
        D = cheb_diff_matrix(cheb_nodes(ny))
        assert B.shape == (ny, ny - 4)
        assert np.max(np.abs(B[0])) < 1e-14 and np.max(np.abs(B[-1])) < 1e-14
        assert np.max(np.abs(D[0] @ B)) < 1e-12 and np.max(np.abs(D[-1] @ B)) < 1e-12
        assert np.allclose(B.T @ B, np.eye(ny - 4))
        assert len(rows) == ny - 4

    def test_polynomial_recovered_exactly(self, grid):
        X, Y, Z = grid.mesh()
        u2 = (1 - Y**2) ** 2 * np.cos(X + Z)
        q = (12 * Y**2 - 4 - 2 * (1 - Y**2) ** 2) * np.cos(X + Z)
        got = bwd(solve_clamped(grid, fwd(q)))
        assert np.max(np.abs(got - u2)) < 1e-12


class TestVorticity:
    def test_stream_function_round_trip(self, grid):
        u = _stream_velocity(grid)
        v = to_vorticity(u)
        back = from_vorticity(v)
        for a, b in zip(u, back):
            assert np.max(np.abs(a.values - b.values)) < 1e-12
        X, Y, Z = grid.mesh()
        assert np.max(np.abs(bwd(v.omega2.coeffs) - (1 - Y**2) * np.sin(X))) < 1e-12

    @given(st.integers(0, 2**31 - 1))
    def test_round_trip_random(self, seed):
        g = Grid(8, 17, 8)
        u = _random_velocity(g, np.random.default_rng(seed))
        back = from_vorticity(to_vorticity(u))
        scale = max(np.abs(c.values).max() for c in u)
        for a, b in zip(u, back):
            assert np.max(np.abs(a.values - b.values)) < 1e-10 * scale

    def test_missing_zero_mode(self, small_grid):
        z = SpectralField.zeros(small_grid)
        with pytest.raises(PreconditionError):
            from_vorticity(VorticityState(z, z))


class TestProjection:
    @given(st.integers(0, 2**31 - 1))
    def test_admissible_and_idempotent(self, seed):
        g = Grid(8, 17, 8)
        u = _random_velocity(g, np.random.default_rng(seed))
        uc = [fwd(c.values) for c in u]
        div = l2sq(g, bwd(divergence_coeffs(g, *uc)))
        grad = sum(l2sq(g, bwd(diff_coeffs(g, c, a, 1))) for c in uc for a in range(3))
        assert div <= 1e-20 * max(grad, 1.0)
        for c in u:
            assert np.max(np.abs(c.values[:, [0, -1], :])) < 1e-12
        du2 = bwd(diff_coeffs(g, uc[1], 1, 1))
        assert np.max(np.abs(du2[:, [0, -1], :])) < 1e-10
        again = project_solenoidal(u)
        for a, b in zip(u, again):
            assert np.max(np.abs(a.values - b.values)) < 1e-10


class TestRecovery:
    def test_ratios_finite_and_homogeneous(self, grid, rng):
        u = _random_velocity(grid, rng)
        r1 = recovery_ratios(u)
        r2 = recovery_ratios(tuple(PhysicalField(grid, 3 * c.values) for c in u))
        assert set(r1) == {"hz_u", "hz_dx_u", "hz_dy_u", "hz_dx_grad_u", "hz_dz_grad_u", "hz2_u3"}
        for k in r1:
            assert 0 < r1[k] < np.inf
            assert r1[k] == pytest.approx(r2[k], rel=1e-12)
