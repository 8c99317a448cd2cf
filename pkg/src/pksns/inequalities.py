"""Variational lower bounds for the Gagliardo-Nirenberg constant on I x T.

The ratio

    R(f) = ||f||_{L^3} / (||f||_{L^1}^{1/3} ||grad f||_{L^2}^{2/3})

is maximised over functions with f(+-1, z) = 0 and zero mean in z.  Any
trial value is a lower bound for the sharp constant C_*.  Trial functions
are finite sums of sin(m pi (y+1)/2) times cos(kz) or sin(kz), k >= 1, so
both constraints hold exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

SMOOTHING = 1e-8


@dataclass(frozen=True, eq=False)
class TrialFunction:
    """Coefficients ``coeffs[m-1, k-1, s]`` of sin(m pi (y+1)/2) * (cos kz, sin kz)[s]."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[2] != 2:
            raise ValueError("coeffs must have shape (My, Kz, 2)")
        object.__setattr__(self, "coeffs", c)

    @property
    def My(self):
        return self.coeffs.shape[0]

    @property
    def Kz(self):
        return self.coeffs.shape[1]

    @classmethod
    def single(cls, m=1, k=1, My=None, Kz=None, phase=0):
        c = np.zeros((My or m, Kz or k, 2))
        c[m - 1, k - 1, phase] = 1.0
        return cls(c)

    def __mul__(self, lam):
        return TrialFunction(self.coeffs * lam)

    __rmul__ = __mul__

    def y_basis(self, y):
        m = np.arange(1, self.My + 1)
        return np.sin(np.outer(y + 1.0, m) * np.pi / 2)

    def z_basis(self, z):
        k = np.arange(1, self.Kz + 1)
        kz = np.outer(z, k)
        return np.stack([np.cos(kz), np.sin(kz)], axis=-1)

    def evaluate(self, y, z):
        """Values on the tensor grid y x z, shape (len(y), len(z))."""
        Y = self.y_basis(np.atleast_1d(y))
        Zb = self.z_basis(np.atleast_1d(z))
        return np.einsum("im,mks,jks->ij", Y, self.coeffs, Zb)

    def z_coeffs(self, y):
        """Trigonometric coefficients in z at each y: (len(y), Kz, 2)."""
        return np.einsum("im,mks->iks", self.y_basis(np.atleast_1d(y)), self.coeffs)

    def grad_sq(self):
        """||grad f||^2_{L^2(I x T)}, exact."""
        m = np.arange(1, self.My + 1)[:, None, None]
        k = np.arange(1, self.Kz + 1)[None, :, None]
        return float(np.pi * np.sum(self.coeffs**2 * ((m * np.pi / 2) ** 2 + k**2)))


def _trig_roots(ck, nsample):
    """Roots in [0, 2pi) of sum_k a_k cos kz + b_k sin kz."""
    k = np.arange(1, ck.shape[0] + 1)

    def f(z):
        return float(np.sum(ck[:, 0] * np.cos(k * z) + ck[:, 1] * np.sin(k * z)))

    zs = np.linspace(0.0, 2 * np.pi, nsample + 1)
    vals = np.cos(np.outer(zs, k)) @ ck[:, 0] + np.sin(np.outer(zs, k)) @ ck[:, 1]
    roots = []
    for i in range(nsample):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots.append(zs[i])
        elif a * b < 0:
            roots.append(brentq(f, zs[i], zs[i + 1], xtol=1e-14, rtol=1e-14))
    return roots


def _abs_moments_z(ck, nz, nsample):
    """(int |g| dz, int |g|^3 dz) over [0, 2pi) for one trigonometric polynomial."""
    k = np.arange(1, ck.shape[0] + 1)
    roots = _trig_roots(ck, nsample)
    edges = np.unique(np.r_[0.0, roots, 2 * np.pi])
    xg, wg = np.polynomial.legendre.leggauss(nz)
    i1 = i3 = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 0:
            continue
        z = 0.5 * (b - a) * xg + 0.5 * (a + b)
        g = np.abs(np.cos(np.outer(z, k)) @ ck[:, 0] + np.sin(np.outer(z, k)) @ ck[:, 1])
        w = 0.5 * (b - a) * wg
        i1 += float(w @ g)
        i3 += float(w @ g**3)
    return i1, i3


def gn_ratio(f: TrialFunction, quad=(65, 64)) -> float:
    """R(f) by Gauss-Legendre quadrature in y and sign-aware Gauss quadrature in z.

    ``quad = (ny, nz)``: Gauss points in y and per z-interval between
    consecutive zeros of f(y, .).
    """
    ny, nz = quad
    G = f.grad_sq()
    if G == 0.0:
        raise ValueError("trial function is identically zero")
    yg, wy = np.polynomial.legendre.leggauss(ny)
    cz = f.z_coeffs(yg)
    nsample = max(64, 16 * f.Kz)
    I1 = I3 = 0.0
    for j in range(ny):
        a, b = _abs_moments_z(cz[j], nz, nsample)
        I1 += wy[j] * a
        I3 += wy[j] * b
    if I1 == 0.0:
        raise ValueError("trial function is identically zero")
    return float((I3 / (I1 * G)) ** (1.0 / 3.0))


def critical_mass(C_star_estimate: float) -> float:
    """2 pi / C_*^3."""
    if not C_star_estimate > 0:
        raise ValueError("estimate must be positive")
    return 2.0 * math.pi / C_star_estimate**3


class _Objective:
    """Smoothed log R^3 on a fixed tensor grid, with its gradient."""

    def __init__(self, My, Kz, qy, qz, delta=SMOOTHING):
        yg, wy = np.polynomial.legendre.leggauss(qy)
        z = 2 * np.pi * np.arange(qz) / qz
        self.w = wy[:, None] * (2 * np.pi / qz)
        proto = TrialFunction(np.zeros((My, Kz, 2)))
        self.Yb = proto.y_basis(yg)
        self.Zf = proto.z_basis(z).reshape(qz, -1)
        m = np.arange(1, My + 1)[:, None, None]
        k = np.arange(1, Kz + 1)[None, :, None]
        self.gw = np.pi * ((m * np.pi / 2) ** 2 + k**2) * np.ones((1, 1, 2))
        self.delta = delta

    def __call__(self, c, grad=True):
        shape = c.shape
        cf = c.reshape(shape[0], -1)
        f = self.Yb @ cf @ self.Zf.T
        s = np.sqrt(f * f + self.delta**2)
        I1 = float(np.sum(self.w * s))
        I3 = float(np.sum(self.w * s**3))
        G = float(np.sum(self.gw * c * c))
        J = math.log(I3) - math.log(I1) - math.log(G)
        if not grad:
            return J
        kern = self.w * (3 * s * f / I3 - f / (s * I1))
        dJ = (self.Yb.T @ kern @ self.Zf).reshape(shape)
        return J, dJ - 2 * self.gw * c / G


def _ascend(obj: _Objective, c, max_iter, tol=1e-10):
    c = c / np.linalg.norm(c)
    J, g = obj(c)
    eta = 1.0
    for _ in range(max_iter):
        g = g - np.sum(g * c) * c  # tangent to the unit sphere
        gn2 = float(np.sum(g * g))
        if gn2 < tol**2:
            break
        improved = False
        while eta > 1e-14:
            cn = c + eta * g
            cn /= np.linalg.norm(cn)
            Jn = obj(cn, grad=False)
            if Jn >= J + 1e-4 * eta * gn2:
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
        gain = Jn - J
        c = cn
        J, g = obj(c)
        eta *= 2.0
        if gain < 1e-13 * max(1.0, abs(J)):
            break
    return c, J


def _restart(child, My, Kz, max_iter, grid, quad):
    """One ascent from the start drawn from ``child``; returns (ratio, coeffs) or None."""
    rng = np.random.default_rng(child)
    m = np.arange(1, My + 1)[:, None, None]
    k = np.arange(1, Kz + 1)[None, :, None]
    decay = rng.uniform(0.0, 1.5)
    c0 = rng.standard_normal((My, Kz, 2)) / (m + k) ** decay
    c, _ = _ascend(_Objective(My, Kz, *grid), c0, max_iter)
    if not np.all(np.isfinite(c)):
        return None
    try:
        return gn_ratio(TrialFunction(c), quad), c
    except ValueError:
        return None


def estimate_C_star(
    search_budget: int = 32,
    seed: int = 0,
    My: int = 12,
    Kz: int = 12,
    max_iter: int = 400,
    grid=(64, 96),
    quad=(65, 32),
    workers: int = 1,
):
    """Multistart projected gradient ascent on the smoothed ratio.

    Restart ``i`` draws its initial coefficients from child ``i`` of
    ``numpy.random.SeedSequence(seed)``, so a larger budget only adds
    restarts and the estimate is nondecreasing in the budget.  The final
    value of each restart is re-evaluated without smoothing by
    :func:`gn_ratio`.  With ``workers > 1`` restarts run in separate
    processes; the result does not depend on ``workers``.

    Returns
    -------
    (estimate, best_trial)
    """
    if search_budget < 1:
        raise ValueError("search_budget must be >= 1")
    children = np.random.SeedSequence(seed).spawn(search_budget)
    args = (My, Kz, max_iter, grid, quad)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_restart, children, *[[a] * search_budget for a in args]))
    else:
        results = [_restart(ch, *args) for ch in children]
    best, best_c = -math.inf, None
    for res in results:
        if res is not None and res[0] > best:
            best, best_c = res
    if best_c is None:
        raise RuntimeError("every restart degenerated")
    return best, TrialFunction(best_c)


def field_gn_ratio(f0) -> float:
    """R of the (0, nonzero) part of an x-independent grid field.

    Uses the grid quadrature (Clenshaw-Curtis in y, trapezoid in z) and a
    spectral z-derivative; a consistency check against trial values.
    """
    from .field import bwd, diff_coeffs, fwd

    grid = f0.grid
    c = fwd(f0.values)
    c[1:] = 0.0
    c[0, :, 0] = 0.0
    c *= (~grid.nyquist_mask)[:, None, :]
    v = bwd(c)[0]
    gy = bwd(diff_coeffs(grid, c, 1, 1))[0]
    gz = bwd(diff_coeffs(grid, c, 2, 1))[0]
    w = grid.weights_yz
    I1 = float(np.sum(w * np.abs(v)))
    I3 = float(np.sum(w * np.abs(v) ** 3))
    G = float(np.sum(w * (gy**2 + gz**2)))
    if I1 == 0 or G == 0:
        raise ValueError("field has no (0, nonzero) component")
    return (I3 / (I1 * G)) ** (1.0 / 3.0)
