"""Right-hand sides and time stepping for the chemotaxis-fluid system.

The rescaled system (time t -> t/A) is, with f = (n, u) and Couette shear y,

    d_t n + y d_x n + A^-1 u.grad n - A^-1 Delta n = -A^-1 div(n grad c) - A^-1 mu n^2
    d_t u + y d_x u + u2 e1 + A^-1 (u.grad u + grad P) - A^-1 Delta u = A^-1 n e1
    -Delta c + c = n,   div u = 0,

with n = c = u = 0 and d_y u2 = 0 at y = +-1.  Velocity is evolved through
omega2 = d_z u1 - d_x u3 and Delta u2 for Fourier modes with k1 != 0, and
through u_{1,0} = u_hat + u_tilde, u_{2,0}, u_{3,0} for the x-average.

For A = 0 the stepper switches to the unrescaled system, where the shear
and lift-up terms carry the factor A (and so vanish) and every other
coefficient is one.

Time integration is an exponential Runge-Kutta scheme of order two
(ETD2RK): for each Fourier mode the linear part

    L = -i k1 s_shear Y + s_diff (D2 - eta^2)

(with Dirichlet or clamped wall conditions) is integrated exactly, which
covers the Couette phase rotation and the implicit diffusion, and all other
terms are explicit.  With L = 0 the scheme reduces to Heun's method.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
import scipy.fft
import scipy.linalg

from .decomposition import clamped_basis, divergence_coeffs, project_solenoidal
from .elliptic import helmholtz_dirichlet, poisson_neumann
from .errors import DivergenceError, DtUnderflowError, NonFiniteFieldError
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
class Params:
    """Physical and numerical parameters.

    Parameters
    ----------
    A : float
        Couette amplitude.  ``A = 0`` selects the unrescaled system.
    mu : float
        Logistic coefficient.
    a : float
        Rate in the weight exp(a A^{-1/3} t) of the X_a and Y_a norms.
    eps1 : float
        Initial-velocity smallness exponent, > 2/3.
    dt_init, dt_min, dt_max, cfl : float
        Time-step controls.  Adaptive steps lie on the ladder
        ``dt_max * 2**(-j / dt_levels)``.
    t_end : float
        Final time (rescaled unless A = 0).
    tol_div : float
        Tolerance on ||div u|| / ||grad u|| after a step.
    clip_negative_n : bool
        Clip n to [0, inf) after each step and accumulate the removed mass.
    shear, diffusion, chemotaxis, fluid : bool
        Switches for the Couette term, diffusion, the chemotactic flux and
        the velocity field.  All on by default.
    """

    A: float = 100.0
    mu: float = 0.0
    a: float = 0.5
    eps1: float = 0.75
    dt_init: float = 0.05
    dt_min: float = 1e-8
    dt_max: float = 0.5
    cfl: float = 0.5
    t_end: float = 1.0
    tol_div: float = 1e-8
    clip_negative_n: bool = False
    shear: bool = True
    diffusion: bool = True
    chemotaxis: bool = True
    fluid: bool = True
    dt_levels: int = 4

    def __post_init__(self):
        for name in ("A", "mu", "a"):
            if not (getattr(self, name) >= 0 and math.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite and nonnegative")
        if not self.eps1 > 2.0 / 3.0:
            raise ValueError("eps1 must exceed 2/3")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if not self.tol_div > 0:
            raise ValueError("tol_div must be positive")
        if int(self.dt_levels) < 1:
            raise ValueError("dt_levels must be >= 1")

    @property
    def eps(self):
        return self.eps1 if self.eps1 <= 0.8 else 0.8

    @property
    def rescaled(self):
        return self.A > 0

    def to_dict(self):
        from dataclasses import asdict

        return asdict(self)


class Scales(NamedTuple):
    shear: float
    diff: float
    nl: float
    lift: float


def scales(p: Params) -> Scales:
    """Coefficients of (shear, diffusion, transport, lift-up)."""
    if p.A > 0:
        sh, d, nl, lift = 1.0, 1.0 / p.A, 1.0 / p.A, 1.0
    else:
        sh, d, nl, lift = p.A, 1.0, 1.0, p.A
    return Scales(sh if p.shear else 0.0, d if p.diffusion else 0.0, nl, lift)


@dataclass(frozen=True, eq=False)
class State:
    """Full unknown set at one time.

    ``dt`` is the last accepted step (None before the first step) and
    ``clipped_mass`` the total mass removed by clipping so far.
    """

    t: float
    n: PhysicalField
    c: PhysicalField
    u1: PhysicalField
    u2: PhysicalField
    u3: PhysicalField
    u10_hat: PhysicalField
    u10_tilde: PhysicalField
    dt: float | None = None
    clipped_mass: float = 0.0
    steps: int = 0

    FIELDS = ("n", "c", "u1", "u2", "u3", "u10_hat", "u10_tilde")

    @property
    def grid(self) -> Grid:
        return self.n.grid

    @property
    def u(self):
        return (self.u1, self.u2, self.u3)


def make_state(grid: Grid, n, u=None, t: float = 0.0) -> State:
    """Initial state from a density and optional velocity.

    The velocity is projected onto fields satisfying the wall conditions
    and incompressibility.  The split of u_{1,0} starts as u_hat = 0 and
    u_tilde = P0 u1.
    """
    nv = n.values if isinstance(n, PhysicalField) else np.asarray(n, dtype=float)
    nv = nv.copy()
    nv[:, 0, :] = 0.0
    nv[:, -1, :] = 0.0
    nf = PhysicalField(grid, nv)
    c = PhysicalField(grid, bwd(helmholtz_dirichlet(grid, -fwd(nv), 1.0)))
    if u is None:
        zero = PhysicalField.zeros(grid)
        u1 = u2 = u3 = zero
    else:
        comps = [PhysicalField(grid, np.asarray(getattr(v, "values", v), dtype=float)) for v in u]
        u1, u2, u3 = project_solenoidal(comps)
    u10 = u1.values.mean(axis=0, keepdims=True)
    return State(
        t=float(t),
        n=nf,
        c=c,
        u1=u1,
        u2=u2,
        u3=u3,
        u10_hat=PhysicalField.zeros(grid),
        u10_tilde=PhysicalField(grid, np.broadcast_to(u10, grid.shape).copy()),
    )


# spectral representation used inside a step


def _state_coeffs(s: State):
    """Dealiased coefficient arrays of the evolved quantities."""
    grid = s.grid
    out = {}
    for name in ("n", "u1", "u2", "u3", "u10_hat", "u10_tilde"):
        out[name] = dealias(fwd(getattr(s, name).values), grid)
    for name in ("u10_hat", "u10_tilde"):
        out[name][1:] = 0.0
    return out


def _zfft(a):
    return scipy.fft.fft(a, axis=-1) / a.shape[-1]


def _izfft(a):
    return scipy.fft.ifft(a, axis=-1).real * a.shape[-1]


class _Terms(NamedTuple):
    n: np.ndarray
    w: np.ndarray | None
    q: np.ndarray | None
    uh: np.ndarray | None
    ut: np.ndarray | None
    u3_00: np.ndarray | None
    N: tuple | None


def _forcing_coeffs(grid, forcing, t):
    if forcing is None:
        return {}
    f = forcing(t)
    return {k: dealias(fwd(np.asarray(v, dtype=float)), grid) for k, v in f.items()}


def _explicit_terms(grid, F, p: Params, sc: Scales, fc=None, nonlinear=True):
    """Explicit right sides in coefficient space.

    ``F`` maps n, u1, u2, u3, u10_hat, u10_tilde to dealiased coefficients.
    The velocity coefficients must be consistent (u1's x-average equal to
    u10_hat + u10_tilde).
    """
    fc = fc or {}
    n = F["n"]
    nl = sc.nl
    zeros = np.zeros_like(n)
    rn = zeros.copy()
    fluid = p.fluid
    dn = [diff_coeffs(grid, n, ax, 1) for ax in range(3)]
    if nonlinear:
        nphys = bwd(n)
        if fluid:
            up = [bwd(F[k]) for k in ("u1", "u2", "u3")]
            adv = sum(up[j] * bwd(dn[j]) for j in range(3))
            rn -= nl * dealias(fwd(adv), grid)
        if p.chemotaxis:
            cc = helmholtz_dirichlet(grid, -n, 1.0)
            for j in range(3):
                flux = nphys * bwd(diff_coeffs(grid, cc, j, 1))
                rn -= nl * diff_coeffs(grid, dealias(fwd(flux), grid), j, 1)
        if p.mu:
            rn -= nl * p.mu * dealias(fwd(nphys * nphys), grid)
    if "n" in fc:
        rn += fc["n"]
    if not fluid:
        return _Terms(rn, None, None, None, None, None, None)

    uc = [F["u1"], F["u2"], F["u3"]]
    if nonlinear:
        up = [bwd(c) for c in uc]
        N = []
        for c in uc:
            acc = sum(up[j] * bwd(diff_coeffs(grid, c, j, 1)) for j in range(3))
            N.append(dealias(fwd(acc), grid))
    else:
        N = [zeros, zeros, zeros]
    f1 = fc.get("u1", zeros)
    f2 = fc.get("u2", zeros)
    f3 = fc.get("u3", zeros)
    eta2 = grid.eta2[:, None, :]
    dz = lambda c: diff_coeffs(grid, c, 2, 1)  # noqa: E731
    dx = lambda c: diff_coeffs(grid, c, 0, 1)  # noqa: E731
    dy = lambda c: diff_coeffs(grid, c, 1, 1)  # noqa: E731

    w = -sc.lift * dz(uc[1]) + nl * dz(n) - nl * (dz(N[0]) - dx(N[2])) + (dz(f1) - dx(f3))
    q = (
        -nl * dy(dx(n))
        + nl * eta2 * N[1]
        + nl * dy(dx(N[0]) + dz(N[2]))
        - eta2 * f2
        - dy(dx(f1) + dz(f3))
    )

    # x-averaged velocity, handled on (Ny, Nz) arrays
    kz = grid.kz
    keepz = np.abs(kz) <= grid.kmax_z
    u20 = _izfft(uc[1][0])
    u30 = _izfft(uc[2][0])

    def adv0(f):
        fy = _izfft(grid.D1 @ f)
        fz = _izfft(1j * kz * np.where(np.abs(kz) == grid.Nz // 2, 0, 1) * f)
        return _zfft(u20 * fy + u30 * fz) * keepz

    uh = F["u10_hat"][0]
    ut = F["u10_tilde"][0]
    a_h = adv0(uh)
    a_t = adv0(ut)
    r_uh = -nl * a_h - sc.lift * uc[1][0]
    r_ut = -nl * a_t - nl * (N[0][0] - a_h - a_t) + nl * n[0] + f1[0]
    r_u3 = -nl * N[2][0, :, 0] + f3[0, :, 0]
    return _Terms(rn, w, q, r_uh, r_ut, r_u3, tuple(N))


def _require_rescaled(p, unrescaled):
    if p.A == 0 and not unrescaled:
        raise ValueError(
            "A = 0 has no rescaled form; pass unrescaled=True or use step(), "
            "which runs the unrescaled system for A = 0"
        )


def rhs_density(s: State, p: Params, unrescaled: bool = False, nonlinear: bool = True) -> PhysicalField:
    """Density right side without diffusion.

    Returns -y d_x n - A^-1 u.grad n - A^-1 div(n grad c) - A^-1 mu n^2 for
    A > 0.  With ``unrescaled=True`` the coefficients of the A = 0 system
    are used.
    """
    _require_rescaled(p, unrescaled)
    grid = s.grid
    sc = scales(p)
    F = _state_coeffs(s)
    t = _explicit_terms(grid, F, p, sc, nonlinear=nonlinear)
    shear = sc.shear * grid.y[None, :, None] * diff_coeffs(grid, F["n"], 0, 1)
    return PhysicalField(grid, bwd(t.n - shear))


def rhs_vorticity_system(s: State, p: Params, include_linear: bool = False, nonlinear: bool = True):
    """Explicit right sides of the omega2 and Delta u2 equations.

    Returns SpectralFields for every mode.  The omega2 right side is only
    meaningful for k1 != 0 and the Delta u2 one for (k1, k3) != (0, 0).
    With ``include_linear`` the shear and diffusion terms are added, giving
    the full time derivative.
    """
    _require_rescaled(p, p.A == 0)
    grid = s.grid
    sc = scales(p)
    F = _state_coeffs(s)
    t = _explicit_terms(grid, F, p, sc, nonlinear=nonlinear)
    w, q = t.w, t.q
    if include_linear:
        from .decomposition import vorticity_coeffs

        w0, q0 = vorticity_coeffs(grid, F["u1"], F["u2"], F["u3"])
        y = grid.y[None, :, None]
        eta2 = grid.eta2[:, None, :]

        def lin(c):
            lap = diff_coeffs(grid, c, 1, 2) - eta2 * c
            return -sc.shear * y * diff_coeffs(grid, c, 0, 1) + sc.diff * lap

        w = w + lin(w0)
        q = q + lin(q0)
    return SpectralField(grid, w), SpectralField(grid, q)


def rhs_zero_mode_velocity(s: State, p: Params, nonlinear: bool = True):
    """Explicit right sides of the x-averaged velocity equations.

    Returns ``(rhs_u10_hat, rhs_u10_tilde, rhs_u20, rhs_u30)`` as
    x-independent PhysicalFields.  The u_{2,0} and u_{3,0} sides include the
    x-averaged pressure gradient; diffusion is excluded throughout.
    """
    _require_rescaled(p, p.A == 0)
    grid = s.grid
    sc = scales(p)
    F = _state_coeffs(s)
    t = _explicit_terms(grid, F, p, sc, nonlinear=nonlinear)

    def field0(c0):
        full = np.zeros(grid.shape, dtype=complex)
        full[0] = c0
        return PhysicalField(grid, bwd(full))

    if t.w is None:
        zero = PhysicalField.zeros(grid)
        return zero, zero, zero, zero
    N = t.N
    rhs = -sum(diff_coeffs(grid, N[j], j, 1) for j in range(3))
    P = poisson_neumann(grid, rhs, piece="P_N3")
    r20 = -sc.nl * (diff_coeffs(grid, P, 1, 1)[0] + N[1][0])
    r30 = -sc.nl * (diff_coeffs(grid, P, 2, 1)[0] + N[2][0])
    return field0(t.uh), field0(t.ut), field0(r20), field0(r30)


# exponential integrator


class _Layout:
    """Mode bookkeeping for the evolved variables.

    Only modes with k1 >= 0 are evolved; the others follow by Hermitian
    symmetry.  Modes are grouped by key (k1, kappa) with kappa = |k3| and
    stored as (nkeys, m, 2) arrays whose last axis holds k3 = +kappa and
    k3 = -kappa.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        K1, K3 = grid.kmax_x, grid.kmax_z
        k1, kap = np.meshgrid(np.arange(K1 + 1), np.arange(K3 + 1), indexing="ij")
        self.k1 = k1.ravel()
        self.kap = kap.ravel()
        self.nk = self.k1.size
        self.nk0 = K3 + 1
        self.ix = self.k1 % grid.Nx
        self.izp = self.kap % grid.Nz
        self.izm = (-self.kap) % grid.Nz
        self.ixn = (-self.k1) % grid.Nx
        self.eta2 = (self.k1**2 + self.kap**2).astype(float)
        self.interior = np.arange(1, grid.Ny - 1)
        B, rows = clamped_basis(grid.Ny)
        self.B = B
        self.rows = rows

    def gather(self, C, rows, sl=slice(None)):
        ix, izp, izm = self.ix[sl], self.izp[sl], self.izm[sl]
        a = C[ix, :, izp][:, rows]
        b = C[ix, :, izm][:, rows]
        return np.stack([a, b], axis=-1)

    def scatter(self, V, rows, sl=slice(None), out=None):
        grid = self.grid
        if out is None:
            out = np.zeros(grid.shape, dtype=complex)
        ix, izp, izm, ixn = self.ix[sl], self.izp[sl], self.izm[sl], self.ixn[sl]
        k1, kap = self.k1[sl], self.kap[sl]
        r = rows[None, :]
        pos = k1 > 0
        zero = ~pos
        v0, v1 = V[..., 0], V[..., 1]
        if pos.any():
            out[ix[pos, None], r, izp[pos, None]] = v0[pos]
            out[ix[pos, None], r, izm[pos, None]] = v1[pos]
            out[ixn[pos, None], r, izm[pos, None]] = v0[pos].conj()
            out[ixn[pos, None], r, izp[pos, None]] = v1[pos].conj()
        if zero.any():
            z0 = zero & (kap == 0)
            zk = zero & (kap > 0)
            out[ix[z0, None], r, izp[z0, None]] = v0[z0].real
            out[ix[zk, None], r, izp[zk, None]] = v0[zk]
            out[ix[zk, None], r, izm[zk, None]] = v0[zk].conj()
        return out


@lru_cache(maxsize=16)
def _layout(grid):
    return _Layout(grid)


def _phi_block(hL):
    """exp(hL), phi1(hL), phi2(hL) for a stack of square matrices."""
    m = hL.shape[-1]
    nb = hL.shape[0]
    big = np.zeros((nb, 3 * m, 3 * m), dtype=complex)
    eye = np.eye(m)
    big[:, :m, :m] = hL
    big[:, :m, m : 2 * m] = eye
    big[:, m : 2 * m, 2 * m :] = eye
    ex = scipy.linalg.expm(big)
    return ex[:, :m, :m], ex[:, :m, m : 2 * m], ex[:, :m, 2 * m :]


@lru_cache(maxsize=16)
def _clamped_parts(grid, shear, diff):
    """Collocated mass matrices M and linear operators K per key."""
    lay = _layout(grid)
    B, rows = lay.B, lay.rows
    D2 = grid.D2
    Y = np.diag(grid.y)
    Ms, Ks = [], []
    for k1, e2 in zip(lay.k1[1:], lay.eta2[1:]):
        lap = D2 - e2 * np.eye(grid.Ny)
        M = (lap @ B)[rows]
        K = ((-1j * k1 * shear * Y @ lap + diff * lap @ lap) @ B)[rows]
        Ms.append(M)
        Ks.append(K)
    Minv = np.linalg.inv(np.array(Ms))
    return Minv, np.array(Ks)


def _dirichlet_ops(grid, shear, diff):
    lay = _layout(grid)
    ii = lay.interior
    D2 = grid.D2[np.ix_(ii, ii)]
    Y = np.diag(grid.y[ii])
    m = ii.size
    L = np.empty((lay.nk, m, m), dtype=complex)
    for k, (k1, e2) in enumerate(zip(lay.k1, lay.eta2)):
        L[k] = -1j * k1 * shear * Y + diff * (D2 - e2 * np.eye(m))
    return L


class _Ops(NamedTuple):
    EP: tuple  # Dirichlet (E, P1, P2) for every key
    CP: tuple | None  # clamped (E, P1, P2) for keys[1:]
    Minv: np.ndarray | None


_OPS_CACHE: OrderedDict = OrderedDict()
_OPS_CACHE_SIZE = 3


def _operators(grid, dt, sc: Scales, fluid: bool):
    key = (grid, float(dt), sc.shear, sc.diff, fluid)
    hit = _OPS_CACHE.get(key)
    if hit is not None:
        _OPS_CACHE.move_to_end(key)
        return hit
    EP = _phi_block(dt * _dirichlet_ops(grid, sc.shear, sc.diff))
    CP = Minv = None
    if fluid:
        Minv, K = _clamped_parts(grid, sc.shear, sc.diff)
        CP = _phi_block(dt * (Minv @ K))
    ops = _Ops(EP, CP, Minv)
    _OPS_CACHE[key] = ops
    while len(_OPS_CACHE) > _OPS_CACHE_SIZE:
        _OPS_CACHE.popitem(last=False)
    return ops


def _to_vars(grid, F, fluid):
    """Evolved variables from full coefficient arrays."""
    lay = _layout(grid)
    ii = lay.interior
    V = {"n": lay.gather(F["n"], ii)}
    if fluid:
        w = diff_coeffs(grid, F["u1"], 2, 1) - diff_coeffs(grid, F["u3"], 0, 1)
        V["w"] = lay.gather(w, ii, slice(lay.nk0, None))
        u2 = lay.gather(F["u2"], np.arange(grid.Ny), slice(1, None))
        V["phi"] = np.matmul(lay.B.T, u2)
        k0 = slice(0, lay.nk0)
        V["uh"] = lay.gather(F["u10_hat"], ii, k0)
        V["ut"] = lay.gather(F["u10_tilde"], ii, k0)
        V["u3"] = lay.gather(F["u3"], ii, slice(0, 1))
    return V


def _from_vars(grid, V, fluid):
    """Full coefficient arrays of n, u (and the split) from evolved variables."""
    lay = _layout(grid)
    ii = lay.interior
    allr = np.arange(grid.Ny)
    F = {"n": lay.scatter(V["n"], ii)}
    if not fluid:
        z = np.zeros(grid.shape, dtype=complex)
        F.update(u1=z, u2=z, u3=z, u10_hat=z, u10_tilde=z)
        return F
    u2 = lay.scatter(np.matmul(lay.B, V["phi"]), allr, slice(1, None))
    w = lay.scatter(V["w"], ii, slice(lay.nk0, None))
    d = diff_coeffs(grid, u2, 1, 1)
    k1 = grid.kx[:, None, None]
    k3 = grid.kz[None, None, :]
    eta2 = grid.eta2[:, None, :].copy()
    eta2[0, :, 0] = 1.0
    u1 = (1j * k1 * d - 1j * k3 * w) / eta2
    u3 = (1j * k3 * d + 1j * k1 * w) / eta2
    k0 = slice(0, lay.nk0)
    uh = lay.scatter(V["uh"], ii, k0)
    ut = lay.scatter(V["ut"], ii, k0)
    u1[0] = uh[0] + ut[0]
    u3[0, :, 0] = lay.scatter(V["u3"], ii, slice(0, 1))[0, :, 0]
    F.update(u1=u1, u2=u2, u3=u3, u10_hat=uh, u10_tilde=ut)
    return F


def _terms_to_vars(grid, T: _Terms, Minv):
    lay = _layout(grid)
    ii = lay.interior
    V = {"n": lay.gather(T.n, ii)}
    if T.w is not None:
        V["w"] = lay.gather(T.w, ii, slice(lay.nk0, None))
        qr = lay.gather(T.q, lay.rows, slice(1, None))
        V["phi"] = np.matmul(Minv, qr)
        k0 = slice(0, lay.nk0)
        full = np.zeros(grid.shape, dtype=complex)
        full[0] = T.uh
        V["uh"] = lay.gather(full, ii, k0)
        full[0] = T.ut
        V["ut"] = lay.gather(full, ii, k0)
        full[:] = 0.0
        full[0, :, 0] = T.u3_00
        V["u3"] = lay.gather(full, ii, slice(0, 1))
    return V


def _op_for(ops: _Ops, name, lay):
    if name == "phi":
        return ops.CP
    if name == "w":
        return tuple(o[lay.nk0 :] for o in ops.EP)
    if name in ("uh", "ut"):
        return tuple(o[: lay.nk0] for o in ops.EP)
    if name == "u3":
        return tuple(o[:1] for o in ops.EP)
    return ops.EP


def quantize_dt(dt, p: Params):
    """Largest step on the ladder dt_max * 2**(-j/levels) not above ``dt``."""
    q = int(p.dt_levels)
    if dt >= p.dt_max:
        return float(p.dt_max)
    j = math.ceil(-q * math.log2(dt / p.dt_max) - 1e-9)
    return float(p.dt_max * 2.0 ** (-j / q))


def adapt_dt(s: State, p: Params) -> float:
    """CFL step for the current state.

    The rate combines the shear speed (|y| <= 1, scaled), the velocity and
    the chemotactic drift grad c, each measured against the local grid
    spacing.  The result is clamped to dt_max and to twice the previous
    step.

    Raises
    ------
    DtUnderflowError
        If the CFL step is below dt_min.
    """
    grid = s.grid
    sc = scales(p)
    dx = 2 * math.pi / grid.Nx
    dz = 2 * math.pi / grid.Nz
    y = grid.y
    gaps = np.diff(y)
    dy_loc = np.minimum(np.r_[gaps[0], gaps], np.r_[gaps, gaps[-1]])[None, :, None]
    speed_x = np.zeros(grid.shape)
    speed_y = np.zeros(grid.shape)
    speed_z = np.zeros(grid.shape)
    if p.fluid:
        speed_x += np.abs(s.u1.values)
        speed_y += np.abs(s.u2.values)
        speed_z += np.abs(s.u3.values)
    if p.chemotaxis:
        cc = fwd(s.c.values)
        speed_x += np.abs(bwd(diff_coeffs(grid, cc, 0, 1)))
        speed_y += np.abs(bwd(diff_coeffs(grid, cc, 1, 1)))
        speed_z += np.abs(bwd(diff_coeffs(grid, cc, 2, 1)))
    rate = (
        sc.shear / dx
        + sc.nl * float(speed_x.max()) / dx
        + sc.nl * float((speed_y / dy_loc).max())
        + sc.nl * float(speed_z.max()) / dz
    )
    dt = p.cfl / rate if rate > 0 else p.dt_max
    dt = min(dt, p.dt_max)
    if s.dt is not None:
        dt = min(dt, 2.0 * s.dt)
    if dt < p.dt_min:
        raise DtUnderflowError(dt, p.dt_min)
    return float(dt)


def divergence_residual(s: State) -> float:
    """||div u|| / ||grad u||, zero for a vanishing velocity."""
    grid = s.grid
    uc = [fwd(f.values) for f in s.u]
    div = l2sq(grid, bwd(divergence_coeffs(grid, *uc)))
    grad = sum(l2sq(grid, bwd(diff_coeffs(grid, c, ax, 1))) for c in uc for ax in range(3))
    if grad == 0.0:
        return 0.0 if div == 0.0 else math.inf
    return math.sqrt(div / grad)


def _assemble(grid, F, t, p: Params, prev: State, dt):
    n = bwd(F["n"])
    clipped = prev.clipped_mass
    if p.clip_negative_n:
        neg = np.minimum(n, 0.0)
        clipped += float(-np.sum(grid.weights * neg))
        n = n - neg
    n[:, 0, :] = 0.0
    n[:, -1, :] = 0.0
    for name in ("u1", "u2", "u3", "u10_hat", "u10_tilde"):
        if not np.all(np.isfinite(F[name])):
            raise NonFiniteFieldError(f"{name} became non-finite at t={t}")
    if not np.all(np.isfinite(n)):
        raise NonFiniteFieldError(f"n became non-finite at t={t}")
    c = bwd(helmholtz_dirichlet(grid, -fwd(n), 1.0))
    vals = {name: bwd(F[name]) for name in ("u1", "u2", "u3", "u10_hat", "u10_tilde")}
    for v in vals.values():
        v[:, 0, :] = 0.0
        v[:, -1, :] = 0.0
    new = State(
        t=t,
        n=PhysicalField(grid, n),
        c=PhysicalField(grid, c),
        **{k: PhysicalField(grid, v) for k, v in vals.items()},
        dt=float(dt),
        clipped_mass=clipped,
        steps=prev.steps + 1,
    )
    if p.fluid:
        r = divergence_residual(new)
        if r > p.tol_div:
            raise DivergenceError(f"divergence residual {r:.3e} exceeds {p.tol_div:.1e}")
    return new


def step(s: State, p: Params, dt: float | None = None, forcing: Callable | None = None) -> State:
    """Advance the state by one ETD2RK step.

    Parameters
    ----------
    s : State
    p : Params
    dt : float, optional
        Step size.  When omitted the CFL step from :func:`adapt_dt` is
        rounded down onto the step ladder so that the cached propagators
        can be reused.
    forcing : callable, optional
        ``forcing(t)`` returning a dict with any of the keys ``n``, ``u1``,
        ``u2``, ``u3`` (grid arrays) added to the right sides.  The gradient
        part of a velocity forcing is removed by the vorticity formulation.
    """
    grid = s.grid
    if dt is None:
        dt = quantize_dt(adapt_dt(s, p), p)
    elif not dt > 0:
        raise ValueError("dt must be positive")
    sc = scales(p)
    ops = _operators(grid, dt, sc, p.fluid)
    lay = _layout(grid)

    def explicit(V, t):
        F = _from_vars(grid, V, p.fluid)
        T = _explicit_terms(grid, F, p, sc, _forcing_coeffs(grid, forcing, t))
        return _terms_to_vars(grid, T, ops.Minv)

    V0 = _to_vars(grid, _state_coeffs(s), p.fluid)
    N0 = explicit(V0, s.t)
    Va = {}
    for k, v in V0.items():
        E, P1, _ = _op_for(ops, k, lay)
        Va[k] = np.matmul(E, v) + dt * np.matmul(P1, N0[k])
    Na = explicit(Va, s.t + dt)
    V1 = {}
    for k, v in Va.items():
        P2 = _op_for(ops, k, lay)[2]
        V1[k] = v + dt * np.matmul(P2, Na[k] - N0[k])
    F1 = _from_vars(grid, V1, p.fluid)
    return _assemble(grid, F1, s.t + dt, p, s, dt)
