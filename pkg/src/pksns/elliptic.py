"""Per-mode Helmholtz and Poisson solvers in the wall-normal direction."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import IncompatibleNeumannError, NonFiniteFieldError, SolverError
from .field import (
    Grid,
    PhysicalField,
    SpectralField,
    bwd,
    dealias,
    diff_coeffs,
    fwd,
    l2sq,
)


@dataclass(frozen=True)
class HelmholtzOperator:
    """The operator d^2/dy^2 - eta2 - sigma with boundary rows.

    ``bc`` is ``"dirichlet"`` (values at y = +-1) or ``"neumann"``
    (y-derivative at y = +-1).  When eta2 + sigma = 0 with Neumann rows the
    operator is singular; the solve then uses a bordered system with a
    zero-mean constraint and a Lagrange multiplier.
    """

    grid: Grid
    eta2: float
    sigma: float = 0.0
    bc: str = "dirichlet"

    def __post_init__(self):
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def shift(self):
        return float(self.eta2) + float(self.sigma)

    @property
    def singular(self):
        return self.bc == "neumann" and self.shift == 0.0

    def matrix(self):
        """Full (Ny, Ny) matrix with boundary rows replaced."""
        g = self.grid
        L = g.D2 - self.shift * np.eye(g.Ny)
        if self.bc == "dirichlet":
            L[0] = 0.0
            L[-1] = 0.0
            L[0, 0] = 1.0
            L[-1, -1] = 1.0
        else:
            L[0] = g.D1[0]
            L[-1] = g.D1[-1]
        return L

    def apply(self, u):
        """Interior rows of (D2 - shift) u together with the boundary rows."""
        return self.matrix() @ u

    def solve_matrix(self):
        """Dense inverse of the bordered or plain boundary-row system."""
        return _solve_matrix(self.grid.Ny, self.shift, self.bc)

    def solve(self, rhs, bc_values=(0.0, 0.0)):
        """Solve for one or many right sides along the last axis."""
        rhs = np.asarray(rhs)
        b = np.array(rhs, dtype=np.result_type(rhs, complex), copy=True)
        b[..., 0] = bc_values[0]
        b[..., -1] = bc_values[1]
        S = self.solve_matrix()
        if self.singular:
            b = np.concatenate([b, np.zeros(b.shape[:-1] + (1,), dtype=b.dtype)], axis=-1)
            return (b @ S.T)[..., :-1]
        return b @ S.T


@lru_cache(maxsize=4096)
def _solve_matrix(ny, shift, bc):
    from .field import cheb_diff_matrix, cheb_nodes, clenshaw_curtis_weights

    y = cheb_nodes(ny)
    D1 = cheb_diff_matrix(y)
    L = D1 @ D1 - shift * np.eye(ny)
    if bc == "dirichlet":
        L[0] = 0.0
        L[-1] = 0.0
        L[0, 0] = 1.0
        L[-1, -1] = 1.0
    else:
        L[0] = D1[0]
        L[-1] = D1[-1]
    if bc == "neumann" and shift == 0.0:
        w = clenshaw_curtis_weights(ny)
        e = np.ones(ny)
        e[0] = e[-1] = 0.0
        B = np.zeros((ny + 1, ny + 1))
        B[:ny, :ny] = L
        B[:ny, ny] = e
        B[ny, :ny] = w
        L = B
    try:
        lu = scipy.linalg.lu_factor(L, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
        raise SolverError(f"factorisation failed for shift={shift}, bc={bc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise SolverError(f"singular operator for shift={shift}, bc={bc}")
    S = scipy.linalg.lu_solve(lu, np.eye(L.shape[0]))
    S.setflags(write=False)
    return S


def _as_coeffs(f):
    if isinstance(f, SpectralField):
        return f.grid, f.coeffs
    if isinstance(f, PhysicalField):
        return f.grid, fwd(f.values)
    raise TypeError(f"expected a field, got {type(f).__name__}")


def helmholtz_dirichlet(grid, rhs_coeffs, sigma):
    """Solve (D2 - eta2 - sigma) c = rhs per mode with c(+-1) = 0."""
    out = np.zeros_like(rhs_coeffs, dtype=complex)
    eta2 = grid.eta2
    for val in np.unique(eta2):
        ii, jj = np.nonzero(eta2 == val)
        S = _solve_matrix(grid.Ny, float(val) + sigma, "dirichlet")
        b = rhs_coeffs[ii, :, jj].copy()
        b[:, 0] = 0.0
        b[:, -1] = 0.0
        out[ii, :, jj] = b @ S.T
    return out


def solve_chemoattractant(n) -> SpectralField:
    """Chemoattractant c from -Delta c + c = n with c = 0 at the walls."""
    grid, nc = _as_coeffs(n)
    if not np.all(np.isfinite(nc)):
        raise NonFiniteFieldError("density contains NaN or Inf")
    return SpectralField(grid, helmholtz_dirichlet(grid, -nc, 1.0))


def check_compatibility(grid, rhs00, g=(0.0, 0.0), piece="P", tol=1e-8):
    """Solvability of the (0,0) Neumann problem: int rhs dy = g(1) - g(-1)."""
    integral = np.sum(grid.wy * rhs00)
    defect = abs(integral - (g[1] - g[0]))
    scale = max(1.0, float(np.sum(grid.wy * np.abs(rhs00))))
    if defect > tol * scale:
        raise IncompatibleNeumannError(piece, float(defect))
    return float(defect)


def poisson_neumann(grid, rhs_coeffs, piece="P", g=(0.0, 0.0)):
    """Solve (D2 - eta2) P = rhs per mode with dP/dy(+-1) = g for (0,0), 0 else.

    The (0,0) mode is fixed to zero mean.
    """
    out = np.zeros_like(rhs_coeffs, dtype=complex)
    eta2 = grid.eta2
    check_compatibility(grid, rhs_coeffs[0, :, 0], g=g, piece=piece)
    for val in np.unique(eta2):
        ii, jj = np.nonzero(eta2 == val)
        op = HelmholtzOperator(grid, float(val), 0.0, "neumann")
        b = rhs_coeffs[ii, :, jj]
        if val == 0.0:
            out[ii, :, jj] = op.solve(b, bc_values=g)
        else:
            out[ii, :, jj] = op.solve(b)
    return out


def _velocity_coeffs(u):
    out = []
    grid = None
    for comp in u:
        grid, c = _as_coeffs(comp)
        out.append(c)
    return grid, out


def advection_coeffs(grid, uc, targets):
    """Dealiased coefficients of (u . grad) f for each f in ``targets``."""
    up = [bwd(c) for c in uc]
    res = []
    for fc in targets:
        acc = np.zeros(grid.shape)
        for ax in range(3):
            acc += up[ax] * bwd(diff_coeffs(grid, fc, ax, 1))
        res.append(dealias(fwd(acc), grid))
    return res


def solve_pressure(u, n, A: float):
    """The three pressure pieces, each with homogeneous Neumann walls.

    Returns ``(P_N1, P_N2, P_N3)`` solving

    * Delta P_N1 = -2 A d_x u2
    * Delta P_N2 = d_x n
    * Delta P_N3 = -div(u . grad u)
    """
    grid, uc = _velocity_coeffs(u)
    _, nc = _as_coeffs(n)
    rhs1 = -2.0 * A * diff_coeffs(grid, uc[1], 0, 1)
    rhs2 = diff_coeffs(grid, nc, 0, 1)
    adv = advection_coeffs(grid, uc, uc)
    rhs3 = -sum(diff_coeffs(grid, adv[j], j, 1) for j in range(3))
    return (
        SpectralField(grid, poisson_neumann(grid, rhs1, piece="P_N1")),
        SpectralField(grid, poisson_neumann(grid, rhs2, piece="P_N2")),
        SpectralField(grid, poisson_neumann(grid, rhs3, piece="P_N3")),
    )


def _identity_terms(grid, cc):
    lap = sum(diff_coeffs(grid, cc, ax, 2) for ax in range(3))
    grad = sum(l2sq(grid, bwd(diff_coeffs(grid, cc, ax, 1))) for ax in range(3))
    return l2sq(grid, bwd(lap)) + 2.0 * grad + l2sq(grid, bwd(cc))


def energy_identity_residual(n0, c0) -> float:
    """Relative defect in ||Delta c||^2 + 2||grad c||^2 + ||c||^2 = ||n||^2."""
    grid, nc = _as_coeffs(n0)
    _, cc = _as_coeffs(c0)
    rhs = l2sq(grid, bwd(nc))
    lhs = _identity_terms(grid, cc)
    return abs(lhs - rhs) / max(rhs, 1e-30)


def split_identity_residuals(n0, c0):
    """The same identity on the (0,0) and (0,nonzero) parts separately."""
    grid, nc = _as_coeffs(n0)
    _, cc = _as_coeffs(c0)
    out = []
    for keep00 in (True, False):
        mask = np.zeros((grid.Nx, grid.Nz), dtype=bool)
        mask[0, 0] = True
        if not keep00:
            mask = ~mask
            mask[1:, :] = False
        m = mask[:, None, :]
        out.append(energy_identity_residual(SpectralField(grid, nc * m), SpectralField(grid, cc * m)))
    return tuple(out)


def elliptic_ratio(n, i=0, j=0) -> float:
    """(||dx^j dz^i Delta c|| + ||dx^j dz^i grad c||) / ||dx^j dz^i n|| for c from n."""
    grid, nc = _as_coeffs(n)
    cc = solve_chemoattractant(SpectralField(grid, nc)).coeffs

    def d(c):
        for _ in range(j):
            c = diff_coeffs(grid, c, 0, 1)
        for _ in range(i):
            c = diff_coeffs(grid, c, 2, 1)
        return c

    dc = d(cc)
    lap = sum(diff_coeffs(grid, dc, ax, 2) for ax in range(3))
    grad = np.sqrt(sum(l2sq(grid, bwd(diff_coeffs(grid, dc, ax, 1))) for ax in range(3)))
    denom = np.sqrt(l2sq(grid, bwd(d(nc))))
    if denom == 0:
        return 0.0
    return float((np.sqrt(l2sq(grid, bwd(lap))) + grad) / denom)
