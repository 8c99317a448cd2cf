"""Velocity <-> {omega2, Delta u2} transformations.

For every Fourier mode other than (0, 0) the wall-normal velocity is
recovered from Delta u2 by a clamped fourth-order solve: u2 is expanded in
a basis of polynomials with u2 = d_y u2 = 0 at both walls, and the
collocation equations at the two nodes next to each wall are dropped.
The horizontal components then follow from omega2 and incompressibility.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import PreconditionError
from .field import (
    Grid,
    PhysicalField,
    SpectralField,
    bwd,
    cheb_diff_matrix,
    cheb_nodes,
    diff_coeffs,
    fwd,
    l2sq_coeffs,
)


@lru_cache(maxsize=64)
def clamped_basis(ny):
    """Orthonormal basis of grid functions vanishing with their derivative at +-1.

    Returns ``(B, rows)`` where ``B`` has shape (ny, ny - 4) and ``rows`` are
    the collocation rows used by the clamped operators.
    """
    D1 = cheb_diff_matrix(cheb_nodes(ny))
    C = np.zeros((4, ny))
    C[0, 0] = 1.0
    C[1, -1] = 1.0
    C[2] = D1[0]
    C[3] = D1[-1]
    B = scipy.linalg.null_space(C)
    B.setflags(write=False)
    rows = np.arange(2, ny - 2)
    return B, rows


@lru_cache(maxsize=4096)
def clamped_solver(ny, eta2):
    """Matrix S with u2 = S @ q[rows] solving (D2 - eta2) u2 = q, u2 clamped."""
    D1 = cheb_diff_matrix(cheb_nodes(ny))
    B, rows = clamped_basis(ny)
    lap = D1 @ D1 - eta2 * np.eye(ny)
    M = (lap @ B)[rows]
    S = B @ np.linalg.inv(M)
    S.setflags(write=False)
    return S


def solve_clamped(grid, q):
    """u2 from Delta u2 per mode; the (0,0) mode is returned as zero."""
    out = np.zeros_like(q, dtype=complex)
    _, rows = clamped_basis(grid.Ny)
    eta2 = grid.eta2
    for val in np.unique(eta2):
        if val == 0.0:
            continue
        ii, jj = np.nonzero(eta2 == val)
        S = clamped_solver(grid.Ny, float(val))
        out[ii, :, jj] = q[ii, :, jj][:, rows] @ S.T
    return out


@dataclass(frozen=True, eq=False)
class VorticityState:
    """omega2 = dz u1 - dx u3 and Delta u2, plus the (0,0) velocity profiles.

    ``u1_00`` and ``u3_00`` are the y-profiles of the x,z-averaged
    horizontal velocity.  They cannot be recovered from the vorticity
    variables and must be supplied separately.
    """

    omega2: SpectralField
    delta_u2: SpectralField
    u1_00: np.ndarray | None = None
    u3_00: np.ndarray | None = None

    @property
    def grid(self):
        return self.omega2.grid


def _coeffs(f):
    if isinstance(f, SpectralField):
        return f.grid, f.coeffs
    if isinstance(f, PhysicalField):
        return f.grid, fwd(f.values)
    raise TypeError(f"expected a field, got {type(f).__name__}")


def vorticity_coeffs(grid, u1, u2, u3):
    w = diff_coeffs(grid, u1, 2, 1) - diff_coeffs(grid, u3, 0, 1)
    q = diff_coeffs(grid, u2, 1, 2) - grid.eta2[:, None, :] * u2
    return w, q


def velocity_coeffs(grid, w, q, u1_00, u3_00):
    """Velocity coefficients from omega2, Delta u2 and the (0,0) profiles."""
    u2 = solve_clamped(grid, q)
    d = diff_coeffs(grid, u2, 1, 1)
    k1 = grid.kx[:, None, None]
    k3 = grid.kz[None, None, :]
    eta2 = grid.eta2[:, None, :].copy()
    eta2[0, :, 0] = 1.0
    u1 = (1j * k1 * d - 1j * k3 * w) / eta2
    u3 = (1j * k3 * d + 1j * k1 * w) / eta2
    u1[0, :, 0] = u1_00
    u3[0, :, 0] = u3_00
    keep = ~grid.nyquist_mask[:, None, :]
    return u1 * keep, u2 * keep, u3 * keep


def to_vorticity(u) -> VorticityState:
    """omega2, Delta u2 and the (0,0) profiles of a velocity triple."""
    grid, u1 = _coeffs(u[0])
    _, u2 = _coeffs(u[1])
    _, u3 = _coeffs(u[2])
    w, q = vorticity_coeffs(grid, u1, u2, u3)
    return VorticityState(
        SpectralField(grid, w),
        SpectralField(grid, q),
        u1[0, :, 0].real.copy(),
        u3[0, :, 0].real.copy(),
    )


def from_vorticity(v: VorticityState):
    """Velocity triple (PhysicalField) from a :class:`VorticityState`.

    Raises
    ------
    PreconditionError
        If the (0,0) velocity profiles are missing; that mode is not
        determined by the vorticity variables.
    """
    if v.u1_00 is None or v.u3_00 is None:
        raise PreconditionError(
            "the (0,0) velocity mode is not determined by omega2 and Delta u2; "
            "supply u1_00 and u3_00"
        )
    grid = v.grid
    u1, u2, u3 = velocity_coeffs(grid, v.omega2.coeffs, v.delta_u2.coeffs, v.u1_00, v.u3_00)
    return tuple(PhysicalField(grid, bwd(c)) for c in (u1, u2, u3))


def project_solenoidal(u):
    """Admissible velocity closest in the vorticity variables to ``u``.

    The result satisfies the wall conditions and is divergence-free for
    every mode; the (0,0) wall-normal component is zero.
    """
    v = to_vorticity(u)
    grid = v.grid
    w = v.omega2.coeffs.copy()
    w[:, 0, :] = 0.0
    w[:, -1, :] = 0.0
    u1_00 = v.u1_00.copy()
    u3_00 = v.u3_00.copy()
    for prof in (u1_00, u3_00):
        prof[0] = prof[-1] = 0.0
    return from_vorticity(VorticityState(SpectralField(grid, w), v.delta_u2, u1_00, u3_00))


def divergence_coeffs(grid, u1, u2, u3):
    return (
        diff_coeffs(grid, u1, 0, 1)
        + diff_coeffs(grid, u2, 1, 1)
        + diff_coeffs(grid, u3, 2, 1)
    )


# recovery inequalities


def _nonzero(grid, c):
    out = c.copy()
    out[0] = 0.0
    return out


def _norm(grid, *cs):
    return float(np.sqrt(sum(l2sq_coeffs(grid, c) for c in cs)))


def recovery_ratios(u) -> dict:
    """LHS / RHS of the five velocity recovery estimates on the k1 != 0 part.

    The fourth estimate is evaluated for both d_x and d_z.  Used to fit the
    constants as a resolution-stable property.
    """
    grid, u1 = _coeffs(u[0])
    _, u2 = _coeffs(u[1])
    _, u3 = _coeffs(u[2])
    uc = [_nonzero(grid, c) for c in (u1, u2, u3)]
    w, q = vorticity_coeffs(grid, *uc)

    def d(c, *axes):
        for a in axes:
            c = diff_coeffs(grid, c, a, 1)
        return c

    def hz(*axes):
        # ||(dx, dz) d^axes u|| summed over components
        return _norm(grid, *[d(c, 0, *axes) for c in uc], *[d(c, 2, *axes) for c in uc])

    def grad(c, *axes):
        return [d(c, *axes, a) for a in range(3)]

    out = {}
    out["hz_u"] = hz() / (_norm(grid, w) + _norm(grid, *grad(uc[1])))
    out["hz_dx_u"] = hz(0) / (_norm(grid, d(w, 0)) + _norm(grid, *grad(uc[1], 0)))
    out["hz_dy_u"] = hz(1) / (_norm(grid, d(w, 1)) + _norm(grid, q))
    for j, name in ((0, "x"), (2, "z")):
        lhs = _norm(grid, *[d(c, a, j, b) for c in uc for a in (0, 2) for b in range(3)])
        rhs = _norm(grid, *grad(w, j)) + _norm(grid, d(q, j))
        out[f"hz_d{name}_grad_u"] = lhs / rhs
    lhs = _norm(grid, d(uc[2], 0, 0), d(uc[2], 2, 2))
    out["hz2_u3"] = lhs / (_norm(grid, d(w, 0)) + _norm(grid, *grad(uc[1], 2)))
    return out
