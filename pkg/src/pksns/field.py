"""Grids, field containers, transforms, projectors and norms.

The domain is T x I x T with x, z periodic on [0, 2pi) and y in [-1, 1].
Arrays are laid out as (Nx, Ny, Nz).  The y direction uses Chebyshev-Gauss-
Lobatto collocation, x and z use Fourier modes with coefficients

    f^{k1,k3}(y) = (2pi)^-2 int f(x, y, z) exp(-i(k1 x + k3 z)) dx dz

stored in numpy FFT order along axes 0 and 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement
from math import factorial

import numpy as np
import scipy.fft

from .errors import (
    AccumulatorTimeError,
    NonFiniteFieldError,
    PreconditionError,
    SymmetryError,
)

TWO_PI = 2.0 * np.pi
AXES = {"x": 0, "y": 1, "z": 2}


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def cheb_nodes(ny):
    """Chebyshev-Gauss-Lobatto nodes on [-1, 1], increasing."""
    n = ny - 1
    y = -np.cos(np.pi * np.arange(ny) / n)
    y[0], y[-1] = -1.0, 1.0
    if n % 2 == 0:
        y[n // 2] = 0.0
    return y


def cheb_diff_matrix(y):
    """First-derivative collocation matrix on Gauss-Lobatto nodes."""
    ny = y.size
    c = np.ones(ny)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(ny)
    dy = y[:, None] - y[None, :]
    d = np.outer(c, 1.0 / c) / (dy + np.eye(ny))
    d -= np.diag(d.sum(axis=1))
    return d


def clenshaw_curtis_weights(ny):
    """Clenshaw-Curtis weights for the nodes returned by ``cheb_nodes``."""
    n = ny - 1
    theta = np.pi * np.arange(ny) / n
    w = np.zeros(ny)
    v = np.ones(n - 1)
    interior = slice(1, n)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n**2 - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k**2 - 1)
        v -= np.cos(n * theta[interior]) / (n**2 - 1)
    else:
        w[0] = w[n] = 1.0 / n**2
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k**2 - 1)
    w[interior] = 2.0 * v / n
    return w


@dataclass(frozen=True)
class Grid:
    """Tensor grid on T x I x T.

    Parameters
    ----------
    Nx, Nz : int
        Number of periodic points, powers of two and at least 8.
    Ny : int
        Number of Chebyshev-Gauss-Lobatto points, at least 9.
    """

    Nx: int
    Ny: int
    Nz: int

    def __post_init__(self):
        for name in ("Nx", "Nz"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 8 or not _is_pow2(int(n)):
                raise ValueError(f"{name} must be a power of two >= 8, got {n!r}")
        if not isinstance(self.Ny, (int, np.integer)) or self.Ny < 9:
            raise ValueError(f"Ny must be an integer >= 9, got {self.Ny!r}")

    @property
    def shape(self):
        return (self.Nx, self.Ny, self.Nz)

    @cached_property
    def x(self):
        return TWO_PI * np.arange(self.Nx) / self.Nx

    @cached_property
    def z(self):
        return TWO_PI * np.arange(self.Nz) / self.Nz

    @cached_property
    def y_nodes(self):
        return cheb_nodes(self.Ny)

    @property
    def y(self):
        return self.y_nodes

    @cached_property
    def quadrature_weights_y(self):
        return clenshaw_curtis_weights(self.Ny)

    @property
    def wy(self):
        return self.quadrature_weights_y

    @cached_property
    def D1(self):
        return cheb_diff_matrix(self.y_nodes)

    @cached_property
    def D2(self):
        return self.D1 @ self.D1

    @cached_property
    def D3(self):
        return self.D2 @ self.D1

    @cached_property
    def kx(self):
        return np.fft.fftfreq(self.Nx, 1.0 / self.Nx)

    @cached_property
    def kz(self):
        return np.fft.fftfreq(self.Nz, 1.0 / self.Nz)

    @cached_property
    def eta2(self):
        """k1^2 + k3^2 on the (Nx, Nz) mode lattice."""
        return self.kx[:, None] ** 2 + self.kz[None, :] ** 2

    @property
    def kmax_x(self):
        return self.Nx // 3

    @property
    def kmax_z(self):
        return self.Nz // 3

    @cached_property
    def dealias_mask(self):
        """Boolean (Nx, Nz) mask of modes kept by the 2/3 rule."""
        return (np.abs(self.kx)[:, None] <= self.kmax_x) & (
            np.abs(self.kz)[None, :] <= self.kmax_z
        )

    @cached_property
    def nyquist_mask(self):
        """Modes whose k1 or k3 is the Nyquist index."""
        return (np.abs(self.kx)[:, None] == self.Nx // 2) | (
            np.abs(self.kz)[None, :] == self.Nz // 2
        )

    @cached_property
    def weights(self):
        """Quadrature weights on the full grid, shape (1, Ny, 1)."""
        dxdz = (TWO_PI / self.Nx) * (TWO_PI / self.Nz)
        return (dxdz * self.quadrature_weights_y)[None, :, None]

    @cached_property
    def weights_yz(self):
        """Quadrature weights on I x T, shape (Ny, 1)."""
        return ((TWO_PI / self.Nz) * self.quadrature_weights_y)[:, None]

    @property
    def volume(self):
        return 2.0 * TWO_PI * TWO_PI

    def mesh(self):
        return np.meshgrid(self.x, self.y_nodes, self.z, indexing="ij")

    def mode_index(self, k1, k3):
        """Array indices (i, j) of the mode (k1, k3) in FFT order."""
        if abs(k1) > self.Nx // 2 or abs(k3) > self.Nz // 2:
            raise IndexError(f"mode ({k1}, {k3}) outside the grid")
        return int(k1) % self.Nx, int(k3) % self.Nz

    def to_dict(self):
        return {"Nx": int(self.Nx), "Ny": int(self.Ny), "Nz": int(self.Nz)}


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise NonFiniteFieldError(f"{what} contains NaN or Inf")


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Real scalar field sampled on the grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        _check_finite(v, "PhysicalField")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid, func):
        X, Y, Z = grid.mesh()
        return cls(grid, np.broadcast_to(func(X, Y, Z), grid.shape).astype(float))

    def __add__(self, other):
        return PhysicalField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return PhysicalField(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return PhysicalField(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return PhysicalField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients in (x, z), collocation values in y."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coeffs shape {c.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    def mode(self, k1, k3):
        i, j = self.grid.mode_index(k1, k3)
        return self.coeffs[i, :, j]

    @property
    def eta(self):
        return np.sqrt(self.grid.eta2)

    def __add__(self, other):
        return SpectralField(self.grid, self.coeffs + _coeffs(other))

    def __sub__(self, other):
        return SpectralField(self.grid, self.coeffs - _coeffs(other))

    def __mul__(self, other):
        return SpectralField(self.grid, self.coeffs * _coeffs(other))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)


def _vals(f):
    return f.values if isinstance(f, PhysicalField) else f


def _coeffs(f):
    return f.coeffs if isinstance(f, SpectralField) else f


# raw array transforms, used throughout the solver


def fwd(values):
    nx, _, nz = values.shape
    return scipy.fft.fft2(values, axes=(0, 2)) / (nx * nz)


def bwd(coeffs):
    """Inverse of ``fwd`` for Hermitian coefficients."""
    nx, _, nz = coeffs.shape
    half = coeffs[:, :, : nz // 2 + 1]
    return scipy.fft.irfft2(half, s=(nx, nz), axes=(0, 2)) * (nx * nz)


def hermitian_defect(coeffs):
    """Max-abs deviation from coeffs(-k1, ., -k3) = conj(coeffs(k1, ., k3))."""
    flipped = np.roll(coeffs[::-1, :, ::-1], shift=(1, 1), axis=(0, 2))
    return float(np.max(np.abs(coeffs - flipped.conj()), initial=0.0))


def forward_transform(f: PhysicalField) -> SpectralField:
    """Fourier transform in x and z with the 1/|T|^2 normalisation."""
    _check_finite(f.values, "forward_transform input")
    return SpectralField(f.grid, fwd(f.values))


def backward_transform(F: SpectralField, tol: float = 1e-10) -> PhysicalField:
    """Inverse of :func:`forward_transform`.

    Raises
    ------
    SymmetryError
        If the coefficients are not Hermitian to within ``tol`` (scaled by
        the coefficient magnitude).
    """
    c = F.coeffs
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    if hermitian_defect(c) > tol * scale:
        raise SymmetryError("coefficients are not the transform of a real field")
    return PhysicalField(F.grid, bwd(c))


def project_zero_mode(f: PhysicalField) -> PhysicalField:
    """x-average P0 f, broadcast back to the grid."""
    avg = f.values.mean(axis=0, keepdims=True)
    return PhysicalField(f.grid, np.broadcast_to(avg, f.grid.shape).copy())


def project_nonzero_mode(f: PhysicalField) -> PhysicalField:
    return PhysicalField(f.grid, f.values - f.values.mean(axis=0, keepdims=True))


def project_z_modes(f0: PhysicalField, tol: float = 1e-12):
    """Split an x-independent field into its (0,0) and (0,nonzero) parts."""
    v = f0.values
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
    if np.max(np.abs(v - v.mean(axis=0, keepdims=True)), initial=0.0) > tol * scale:
        raise PreconditionError("project_z_modes requires an x-independent field")
    f00 = np.broadcast_to(v.mean(axis=(0, 2), keepdims=True), v.shape).copy()
    return PhysicalField(f0.grid, f00), PhysicalField(f0.grid, v - f00)


def apply_y(M, arr):
    """Apply a matrix along the y axis of an (Nx, Ny, Nz) array."""
    nx, ny, nz = arr.shape
    flat = np.ascontiguousarray(arr.transpose(1, 0, 2)).reshape(ny, nx * nz)
    if np.iscomplexobj(flat) and not np.iscomplexobj(M):
        # a real matrix acts on interleaved real and imaginary parts alike
        out = (M @ flat.view(float)).view(complex)
    else:
        out = M @ flat
    return out.reshape(M.shape[0], nx, nz).transpose(1, 0, 2)


def diff_coeffs(grid, coeffs, axis, order=1):
    """Derivative of raw coefficients along ``axis`` ('x', 'y', 'z' or 0–2)."""
    ax = AXES.get(axis, axis)
    if ax not in (0, 1, 2):
        raise ValueError(f"unsupported axis {axis!r}")
    if ax == 1:
        D = {1: grid.D1, 2: grid.D2, 3: grid.D3}.get(order)
        if D is None:
            raise ValueError(f"unsupported order {order!r}")
        return apply_y(D, coeffs)
    k = grid.kx if ax == 0 else grid.kz
    n = grid.Nx if ax == 0 else grid.Nz
    ik = 1j * k
    if order % 2 == 1:
        ik = np.where(np.abs(k) == n // 2, 0.0, ik)
    mult = ik**order
    shape = (-1, 1, 1) if ax == 0 else (1, 1, -1)
    return coeffs * mult.reshape(shape)


def derivative(f: SpectralField, axis: str, order: int = 1) -> SpectralField:
    """Spectral derivative along x or z, collocation derivative along y."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order!r}")
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    return SpectralField(f.grid, diff_coeffs(f.grid, f.coeffs, axis, order))


def dealias(coeffs, grid):
    """Zero the modes removed by the 2/3 rule (in place on a copy)."""
    return coeffs * grid.dealias_mask[:, None, :]


def lp_norm(f: PhysicalField, p=2.0) -> float:
    """L^p(T x I x T) norm; p = inf gives the grid max-abs."""
    v = f.values if isinstance(f, PhysicalField) else np.asarray(f)
    if p == np.inf:
        return float(np.max(np.abs(v), initial=0.0))
    if p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p!r}")
    grid = f.grid
    a = np.abs(v)
    if p == 1:
        return float(np.sum(grid.weights * a))
    m = a.max(initial=0.0)
    if m == 0.0:
        return 0.0
    # scale to avoid overflow at large p
    return float(m * np.sum(grid.weights * (a / m) ** p) ** (1.0 / p))


def l2sq(grid, values):
    """Squared L^2(T x I x T) norm of a raw array."""
    return float(np.sum(grid.weights * values**2))


def l2sq_coeffs(grid, coeffs):
    """Squared L^2 norm from the spectral side (Parseval)."""
    return float(TWO_PI**2 * np.sum(grid.wy[None, :, None] * np.abs(coeffs) ** 2))


def mode_l2sq(grid, coeffs):
    """Per-mode int_I |f^{k1,k3}|^2 dy, shape (Nx, Nz)."""
    return np.einsum("j,kjl->kl", grid.wy, np.abs(coeffs) ** 2)


def _multi_indices(order):
    """Multi-indices of length ``order`` over 3 axes with their multiplicity."""
    out = []
    for combo in combinations_with_replacement(range(3), order):
        counts = [combo.count(a) for a in range(3)]
        mult = factorial(order)
        for c in counts:
            mult //= factorial(c)
        out.append((combo, mult))
    return out


def grad_power_sq(grid, coeffs, order):
    """||nabla^order f||^2 as the sum over all partial derivatives of that order.

    x and z derivatives act diagonally, so only the y derivatives are
    applied; each x or z factor removes the Nyquist mode as in
    :func:`diff_coeffs`.
    """
    if order == 0:
        return l2sq_coeffs(grid, coeffs)
    kx2 = np.where(np.abs(grid.kx) == grid.Nx // 2, 0.0, grid.kx.astype(float) ** 2)
    kz2 = np.where(np.abs(grid.kz) == grid.Nz // 2, 0.0, grid.kz.astype(float) ** 2)
    m = [mode_l2sq(grid, coeffs)]
    c = coeffs
    for _ in range(order):
        c = apply_y(grid.D1, c)
        m.append(mode_l2sq(grid, c))
    total = 0.0
    for combo, mult in _multi_indices(order):
        a, b, cz = (combo.count(ax) for ax in range(3))
        total += mult * float(np.sum(np.outer(kx2**a, kz2**cz) * m[b]))
    return TWO_PI**2 * total


def refine(f: PhysicalField, grid: Grid) -> PhysicalField:
    """Spectral interpolation of ``f`` onto a finer grid.

    Zero-padding in x and z and Chebyshev interpolation in y.  Nyquist
    modes of the source grid are dropped.
    """
    src = f.grid
    if grid.Nx < src.Nx or grid.Nz < src.Nz:
        raise ValueError("refine only goes to finer periodic grids")
    c = fwd(f.values)
    c = c * (~src.nyquist_mask)[:, None, :]
    out = np.zeros((grid.Nx, src.Ny, grid.Nz), dtype=complex)
    kx = src.kx.astype(int)
    kz = src.kz.astype(int)
    out[np.ix_(kx % grid.Nx, np.arange(src.Ny), kz % grid.Nz)] = c
    # Chebyshev interpolation in y through the polynomial coefficients
    P = cheb_interp_matrix(src.y_nodes, grid.y_nodes)
    out = apply_y(P, out)
    return PhysicalField(grid, bwd(out))


def cheb_interp_matrix(src_nodes, dst_points):
    """Barycentric interpolation matrix from Gauss-Lobatto nodes to points."""
    n = src_nodes.size
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = dst_points[:, None] - src_nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    M = w[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = np.where(exact.any(axis=1))[0]
    for r in rows:
        M[r] = exact[r].astype(float)
    return M


# time-accumulated norms


@dataclass
class _Series:
    """Running quantities for one named field."""

    last_t: float | None = None
    last_vals: dict | None = None
    integrals: dict = field(default_factory=dict)
    sups: dict = field(default_factory=dict)


class NormAccumulator:
    """Running space-time norms for named fields.

    Each call to :meth:`add` contributes a snapshot at time ``t``.  For each
    field the accumulator keeps trapezoid integrals and running suprema of

    * ``||nabla^j f||^2`` for j = 0..3 over T x I x T (unweighted), and
    * the per-mode quantities entering the X_a and Y_a norms, weighted by
      ``exp(2 a A^{-1/3} t)`` and restricted to k1 != 0.

    Parameters
    ----------
    grid : Grid
    A : float
        Couette amplitude.  ``A = 0`` disables the A-weighted queries.
    a : float
        Weight exponent, nonnegative.
    """

    _GLOBAL = ("g0", "g1", "g2", "g3")
    _MODE = ("m0", "m1", "m2", "m3", "xg")

    def __init__(self, grid: Grid, A: float, a: float = 0.0):
        if a < 0:
            raise ValueError("weight exponent a must be nonnegative")
        self.grid = grid
        self.A = float(A)
        self.a = float(a)
        self.t = None
        self._series: dict[str, _Series] = {}
        self._scalar_max: dict[str, float] = {}

    def weight(self, t):
        if self.A <= 0 or self.a == 0:
            return 1.0
        return float(np.exp(2.0 * self.a * self.A ** (-1.0 / 3.0) * t))

    @property
    def names(self):
        return tuple(self._series)

    def _snapshot(self, f, want_modes):
        grid = self.grid
        if isinstance(f, PhysicalField):
            c = fwd(f.values)
        elif isinstance(f, SpectralField):
            c = f.coeffs
        else:
            c = fwd(np.asarray(f, dtype=float))
        vals = {f"g{j}": grad_power_sq(grid, c, j) for j in range(4)}
        if want_modes:
            nz1 = (grid.kx != 0)[:, None]
            eta2 = grid.eta2
            dy = diff_coeffs(grid, c, 1, 1)
            lap = diff_coeffs(grid, c, 1, 2) - eta2[:, None, :] * c
            dlap = diff_coeffs(grid, lap, 1, 1)
            m0 = mode_l2sq(grid, c) * nz1
            m1 = mode_l2sq(grid, dy) * nz1
            vals["m0"] = m0
            vals["m1"] = m1
            vals["m2"] = mode_l2sq(grid, lap) * nz1
            vals["m3"] = mode_l2sq(grid, dlap) * nz1
            vals["xg"] = m1 + eta2 * m0
        return vals

    def add(self, t: float, snapshots: dict, modes=None, scalars=None):
        """Contribute the fields in ``snapshots`` (name -> field) at time t.

        ``modes`` optionally restricts the per-mode X_a/Y_a bookkeeping to
        the listed names.  ``scalars`` maps names to instantaneous values
        whose running maximum is kept.
        """
        t = float(t)
        if self.t is not None and t < self.t:
            raise AccumulatorTimeError(f"time went backwards: {t} < {self.t}")
        w = self.weight(t) if self.A > 0 else 1.0
        for name, value in (scalars or {}).items():
            prev = self._scalar_max.get(name)
            self._scalar_max[name] = float(value) if prev is None else max(prev, float(value))
        for name, f in snapshots.items():
            ser = self._series.setdefault(name, _Series())
            want = self.A > 0 and (modes is None or name in modes)
            vals = self._snapshot(f, want)
            for key, v in vals.items():
                wv = v * w if key in self._MODE else v
                if ser.last_vals is not None and key in ser.last_vals:
                    dt = t - ser.last_t
                    ser.integrals[key] = ser.integrals.get(key, 0.0) + 0.5 * dt * (
                        ser.last_vals[key] + wv
                    )
                else:
                    ser.integrals.setdefault(key, 0.0 * wv)
                prev = ser.sups.get(key)
                ser.sups[key] = wv if prev is None else np.maximum(prev, wv)
            # suprema of H^k sums
            hk = 0.0
            for j in range(4):
                hk = hk + vals[f"g{j}"]
                key = f"h{j}"
                prev = ser.sups.get(key)
                ser.sups[key] = hk if prev is None else max(prev, hk)
            ser.last_t = t
            ser.last_vals = {k: (v * w if k in self._MODE else v) for k, v in vals.items()}
        self.t = t
        return self

    def _get(self, name):
        if name not in self._series:
            raise KeyError(f"no snapshots recorded for {name!r}")
        return self._series[name]

    def scalar_max(self, name):
        return self._scalar_max[name]

    def integral(self, name, key):
        return self._get(name).integrals[key]

    def sup(self, name, key):
        return self._get(name).sups[key]

    def linf_l2(self, name, order=0):
        """sup_t ||nabla^order f||_{L^2}."""
        return float(np.sqrt(self.sup(name, f"g{order}")))

    def l2_l2(self, name, order=0):
        """(int_0^t ||nabla^order f||^2)^{1/2}."""
        return float(np.sqrt(self.integral(name, f"g{order}")))

    def linf_hk(self, name, k):
        """sup_t ||f||_{H^k}."""
        return float(np.sqrt(self.sup(name, f"h{k}")))

    def y0(self, name, order=0):
        """Y_0 norm of nabla^order f: sup ||.||^2 + A^{-1} int ||nabla .||^2."""
        ser = self._get(name)
        val = ser.sups[f"g{order}"]
        if self.A > 0:
            val = val + ser.integrals[f"g{order + 1}"] / self.A
        return float(np.sqrt(val))

    def _require_A(self):
        if self.A <= 0:
            raise ValueError("X_a and Y_a norms need A > 0")

    def y_a(self, name):
        """Y_a norm summed over modes with k1 != 0."""
        self._require_A()
        ser = self._get(name)
        grid = self.grid
        A = self.A
        k1sq = (grid.kx**2)[:, None]
        coef = (k1sq / A) ** (1.0 / 3.0) + grid.eta2 / A
        val = ser.sups["m0"] + ser.integrals["m1"] / A + coef * ser.integrals["m0"]
        return float(np.sqrt(np.sum(val)))

    def x_a(self, name):
        """X_a norm summed over modes with k1 != 0."""
        self._require_A()
        ser = self._get(name)
        grid = self.grid
        A = self.A
        eta2 = grid.eta2
        eta = np.sqrt(eta2)
        k1 = np.abs(grid.kx)[:, None]
        val = (
            eta * k1 * ser.integrals["xg"]
            + eta2 * ser.integrals["m2"] / A
            + ser.integrals["m3"] / A**1.5
            + eta2 * ser.sups["xg"]
            + ser.sups["m2"] / np.sqrt(A)
        )
        return float(np.sqrt(np.sum(val)))


def accumulate_norms(acc: NormAccumulator, snapshots: dict, t: float, dt: float | None = None):
    """Functional form of :meth:`NormAccumulator.add`.

    ``dt`` is the step since the previous snapshot and must be positive when
    given; it is checked against the recorded time.
    """
    if dt is not None:
        if dt <= 0:
            raise AccumulatorTimeError("dt must be positive")
        if acc.t is not None and abs((acc.t + dt) - t) > 1e-9 * max(1.0, abs(t)):
            raise AccumulatorTimeError("snapshot time does not match previous time + dt")
    return acc.add(t, snapshots)


def random_smooth_field(grid: Grid, rng, kmax=3, ydeg=6, walls=True, decay=1.0) -> PhysicalField:
    """Band-limited random field, optionally vanishing at y = +-1.

    Fourier modes up to ``kmax`` in x and z times Chebyshev polynomials of
    degree below ``ydeg``, with amplitudes decaying like exp(-decay*|k|).
    """
    X, Y, Z = grid.mesh()
    out = np.zeros(grid.shape)
    for k1 in range(0, kmax + 1):
        for k3 in range(-kmax, kmax + 1):
            if k1 == 0 and k3 < 0:
                continue
            amp = np.exp(-decay * (abs(k1) + abs(k3)))
            coef = rng.standard_normal(ydeg) * amp
            prof = np.polynomial.chebyshev.chebval(Y, coef)
            phase = rng.uniform(0, 2 * np.pi)
            out += prof * np.cos(k1 * X + k3 * Z + phase)
    if walls:
        out *= 1.0 - Y**2
    return PhysicalField(grid, out)
