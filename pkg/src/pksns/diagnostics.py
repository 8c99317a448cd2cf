"""Observables, bound checks, decay fits and run classification."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .decomposition import vorticity_coeffs
from .dynamics import Params, State, divergence_residual
from .errors import AccumulatorTimeError
from .field import (
    TWO_PI,
    Grid,
    NormAccumulator,
    PhysicalField,
    bwd,
    diff_coeffs,
    fwd,
    l2sq,
    lp_norm,
    refine,
)

CSV_COLUMNS_V1 = (
    "t",
    "M_total",
    "M_zero",
    "min_n",
    "div_residual",
    "E11",
    "E12",
    "E13",
    "E21",
    "E22",
    "E3",
    "linf_n",
    "l2_n_neq",
    "clipped_mass",
    "dt",
)


@dataclass
class DiagnosticsRecord:
    """Scalar observables at one sample time.

    ``n0_sq`` is ||n_0||^2 over I x T, kept for the time-integrated mass
    bound; it is not part of the CSV schema.
    """

    t: float
    M_total: float
    M_zero: float
    E11: float
    E12: float
    E13: float
    E21: float
    E22: float
    E3: float
    div_residual: float
    min_n: float
    clipped_mass: float
    linf_n: float
    l2_n_neq: float
    dt: float
    n0_sq: float = 0.0
    lp_ladder: list = field(default_factory=list)
    decay_fit_rate: float = math.nan

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS_V1]

    def to_dict(self):
        return asdict(self)


def new_accumulator(grid: Grid, p: Params) -> NormAccumulator:
    """Accumulator with the weight rate and amplitude of ``p``."""
    return NormAccumulator(grid, p.A, p.a)


_MODE_FIELDS = ("dx_n_neq", "u2_neq", "dx_w2_neq")


def _snapshots(s: State):
    grid = s.grid
    nc = fwd(s.n.values)
    n_neq = nc.copy()
    n_neq[0] = 0.0
    u1c, u2c, u3c = (fwd(f.values) for f in s.u)
    w, _ = vorticity_coeffs(grid, u1c, u2c, u3c)
    w[0] = 0.0
    u2_neq = u2c.copy()
    u2_neq[0] = 0.0

    def zero(c):
        out = np.zeros_like(c)
        out[0] = c[0]
        return out

    u20 = zero(u2c)
    lap20 = diff_coeffs(grid, u20, 1, 2) - grid.eta2[:, None, :] * u20
    return {
        "n0": zero(nc),
        "u10_tilde": fwd(s.u10_tilde.values),
        "u10_hat": fwd(s.u10_hat.values),
        "u20": u20,
        "u30": zero(u3c),
        "lap_u20": lap20,
        "dx_n_neq": diff_coeffs(grid, n_neq, 0, 1),
        "u2_neq": u2_neq,
        "dx_w2_neq": diff_coeffs(grid, w, 0, 1),
    }


def _wrap(grid, snaps):
    from .field import SpectralField

    return {k: SpectralField(grid, v) for k, v in snaps.items()}


def compute_energies(s: State, acc: NormAccumulator, p: Params, ladder: int = 0) -> DiagnosticsRecord:
    """Evaluate every observable and energy functional at the state's time.

    The state is contributed to ``acc`` unless the accumulator already sits
    at ``s.t`` (in which case it is assumed to hold this snapshot).

    Raises
    ------
    AccumulatorTimeError
        If the accumulator is ahead of the state.
    """
    grid = s.grid
    if acc.t is not None and s.t < acc.t:
        raise AccumulatorTimeError(f"accumulator at t={acc.t} is ahead of state t={s.t}")
    nv = s.n.values
    linf = float(np.max(np.abs(nv)))
    if acc.t is None or s.t > acc.t:
        acc.add(s.t, _wrap(grid, _snapshots(s)), modes=_MODE_FIELDS, scalars={"linf_n": linf})
    n0 = nv.mean(axis=0)
    wyz = grid.weights_yz
    M_zero = float(np.sum(wyz * np.abs(n0)))
    n0_sq = float(np.sum(wyz * n0**2))
    n_neq = nv - n0[None]
    A = p.A
    eps = p.eps
    E11 = acc.linf_l2("n0")
    E12 = acc.linf_hk("u10_tilde", 1)
    if A > 0:
        gh = sum(acc.integral("u10_hat", f"g{j}") for j in (1, 2, 3))
        E13 = A**eps * (
            acc.linf_hk("u10_hat", 2) / A
            + math.sqrt(gh) / A**1.5
            + acc.y0("u20")
            + acc.y0("u30")
        ) + A ** (eps / 4) * (acc.y0("u20", 1) + acc.y0("u30", 1) + acc.y0("lap_u20"))
        E21 = acc.y_a("dx_n_neq")
        E22 = A ** (5 * eps / 12) * (acc.x_a("u2_neq") + acc.y_a("dx_w2_neq"))
    else:
        E13 = E21 = E22 = math.nan
    return DiagnosticsRecord(
        t=float(s.t),
        M_total=lp_norm(s.n, 1),
        M_zero=M_zero,
        E11=E11,
        E12=E12,
        E13=E13,
        E21=E21,
        E22=E22,
        E3=acc.scalar_max("linf_n"),
        div_residual=divergence_residual(s) if p.fluid else 0.0,
        min_n=float(nv.min()),
        clipped_mass=float(s.clipped_mass),
        linf_n=linf,
        l2_n_neq=math.sqrt(l2sq(grid, n_neq)),
        dt=float(s.dt) if s.dt is not None else math.nan,
        n0_sq=n0_sq,
        lp_ladder=lp_ladder(s, ladder) if ladder else [],
    )


# mass decay


def mass_bound(t, M0, mu, A):
    """(mu t / (4 pi A) + 1/M0)^-1; with A = 0 the unrescaled form mu t / (4 pi)."""
    rate = mu / (4 * math.pi * A) if A > 0 else mu / (4 * math.pi)
    if M0 == 0:
        return 0.0
    return 1.0 / (rate * t + 1.0 / M0)


@dataclass
class MassDecayReport:
    skipped: bool
    notice: str = ""
    passed: bool = True
    pointwise_ok: bool = True
    integral_ok: bool = True
    violations: list = field(default_factory=list)
    max_ratio: float = 0.0
    integral_lhs: float = 0.0
    integral_rhs: float = 0.0

    def to_dict(self):
        return asdict(self)


def mass_decay_check(history: Sequence, p: Params, delta: float = 0.02) -> MassDecayReport:
    """Check M_zero(t) <= bound(t) (1 + delta) and the time-integrated bound.

    ``history`` is a sequence of DiagnosticsRecord (or objects with ``t``,
    ``M_zero`` and ``n0_sq``), first entry at the initial time.
    """
    if p.mu <= 0:
        return MassDecayReport(skipped=True, notice="mu = 0: mass-decay bound not applicable")
    if len(history) == 0:
        raise ValueError("empty history")
    t0 = history[0].t
    M0 = history[0].M_zero
    rep = MassDecayReport(skipped=False)
    for rec in history:
        b = mass_bound(rec.t - t0, M0, p.mu, p.A)
        ratio = rec.M_zero / b if b > 0 else (math.inf if rec.M_zero > 0 else 0.0)
        rep.max_ratio = max(rep.max_ratio, ratio)
        if rec.M_zero > b * (1 + delta):
            rep.violations.append((rec.t, rec.M_zero, b))
    rep.pointwise_ok = not rep.violations
    ts = np.array([r.t for r in history])
    sq = np.array([getattr(r, "n0_sq", 0.0) for r in history])
    integral = float(trapezoid(sq, ts)) if len(ts) > 1 else 0.0
    scale = 1.0 / p.A if p.A > 0 else 1.0
    rep.integral_lhs = scale * integral
    rep.integral_rhs = M0 / p.mu
    rep.integral_ok = rep.integral_lhs <= rep.integral_rhs * (1 + delta)
    rep.passed = rep.pointwise_ok and rep.integral_ok
    return rep


# decay fit


@dataclass
class DecayFit:
    rate: float
    r2: float
    n_used: int
    intercept: float


def fit_nonzero_decay(times, values, window=None, floor=None, min_samples=10) -> DecayFit:
    """Least-squares fit of log(values) = b - rate * t.

    Samples outside ``window = (t0, t1)``, non-positive samples and samples
    not exceeding 100 times ``floor`` are dropped.  ``floor`` defaults to
    1e-14 times the largest sample, the roundoff level of the norm.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values differ in length")
    keep = np.isfinite(v) & (v > 0)
    if window is not None:
        keep &= (t >= window[0]) & (t <= window[1])
    if not keep.any():
        raise ValueError("no positive samples in the fit window")
    if floor is None:
        floor = 1e-14 * float(np.max(v[keep]))
    keep &= v > 100.0 * floor
    if keep.sum() < min_samples:
        raise ValueError(f"need at least {min_samples} samples, have {int(keep.sum())}")
    tt, lv = t[keep], np.log(v[keep])
    slope, intercept = np.polyfit(tt, lv, 1)
    pred = intercept + slope * tt
    ss_res = float(np.sum((lv - pred) ** 2))
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(rate=float(-slope), r2=r2, n_used=int(keep.sum()), intercept=float(intercept))


def lp_ladder(s, J: int):
    """[||n||_{L^{2^j}} for j = 0..J]."""
    if J > 7:
        raise ValueError("J must be <= 7 (p <= 128)")
    if J < 0:
        raise ValueError("J must be nonnegative")
    n = s.n if isinstance(s, State) else s
    return [lp_norm(n, 2.0**j) for j in range(J + 1)]


# run classification


BOUNDED = "bounded"
SUSPECTED_BLOWUP = "suspected_blowup"
INCONCLUSIVE = "inconclusive"


def classify_run(history: Sequence, p: Params, dt_floor_hit: bool | None = None, reached_end: bool | None = None) -> str:
    """Classify a trajectory from its L^inf history and step sizes.

    ``bounded``: max ||n||_inf < 10x the initial value, the run reached
    t_end and dt never hit dt_min.  ``suspected_blowup``: ||n||_inf grew by
    more than 10^3 and dt hit dt_min.  Anything else is ``inconclusive``.
    """
    if not history:
        return INCONCLUSIVE
    n_init = history[0].linf_n
    peak = max(r.linf_n for r in history)
    if dt_floor_hit is None:
        dts = [r.dt for r in history if r.dt == r.dt]
        dt_floor_hit = any(d <= p.dt_min * (1 + 1e-12) for d in dts)
    if reached_end is None:
        reached_end = history[-1].t >= p.t_end * (1 - 1e-12)
    growth = peak / n_init if n_init > 0 else (0.0 if peak == 0 else math.inf)
    if growth > 1e3 and dt_floor_hit:
        return SUSPECTED_BLOWUP
    if growth < 10 and not dt_floor_hit and reached_end:
        return BOUNDED
    return INCONCLUSIVE


# inequality catalog


def _mixed_norm(grid, v, sup_axes):
    """L^inf over ``sup_axes`` of the L^2 norm over the remaining axes."""
    w = [np.full(grid.Nx, TWO_PI / grid.Nx), grid.wy, np.full(grid.Nz, TWO_PI / grid.Nz)]
    sq = v**2
    for ax in (0, 1, 2):
        if ax not in sup_axes:
            shape = [1, 1, 1]
            shape[ax] = -1
            sq = np.sum(sq * w[ax].reshape(shape), axis=ax, keepdims=True)
    return float(np.sqrt(np.max(sq)))


class _Probe:
    """Derivatives and norms of one field, computed lazily."""

    def __init__(self, grid, coeffs):
        self.grid = grid
        self.c = coeffs
        self._cache = {}

    def d(self, *axes):
        key = tuple(sorted(axes))
        if key not in self._cache:
            c = self.c
            for a in key:
                c = diff_coeffs(self.grid, c, a, 1)
            self._cache[key] = bwd(c)
        return self._cache[key]

    def l2(self, *axes):
        return math.sqrt(l2sq(self.grid, self.d(*axes)))

    def grad(self, *axes):
        return math.sqrt(sum(l2sq(self.grid, self.d(*axes, a)) for a in range(3)))

    def linf(self):
        return float(np.max(np.abs(self.d())))

    def mixed(self, sup_axes, *axes):
        return _mixed_norm(self.grid, self.d(*axes), sup_axes)


X, Y, Z = 0, 1, 2


def _exact_pairs(P: _Probe):
    """(lhs, rhs) pairs of the constant-free Fourier inequalities."""
    out = []
    for j in (1, 2, 3):
        out.append((f"sob_neq_dx{j}", P.l2() ** 2, P.l2(*([X] * j)) ** 2))
        out.append((f"sob_dx_dx{j}", P.l2(X) ** 2, P.l2(*([X] * j)) ** 2))
        out.append((f"sob_dz_dz{j}", P.l2(Z) ** 2, P.l2(*([Z] * j)) ** 2))
    return out


def _g_neq_terms(P: _Probe, al):
    """Sup-norm embeddings for g = g_neq with g = 0 at the walls."""
    g = P.l2()
    out = {}
    out["sob_g_neq_1"] = (
        P.linf(),
        P.l2(Z, Y) ** 0.5 * P.l2(X, Z) ** (al - 0.5) * P.l2(X, X) ** (al - 0.5) * P.l2(X) ** (1.5 - 2 * al)
        + P.l2(X, Y) ** 0.5 * P.l2(X) ** (al - 0.5) * g ** (1 - al),
    )
    out["sob_g_neq_2"] = (
        P.mixed((Y, Z)),
        P.l2(Y) ** 0.5 * g**0.5 + P.l2(Z) ** 0.5 * P.l2(Z, Y) ** (al - 0.5) * P.l2(Y) ** (1 - al),
    )
    out["sob_g_neq_3"] = (
        P.mixed((X, Y)),
        P.l2(X) ** 0.5 * P.l2(X, Y) ** (al - 0.5) * P.l2(Y) ** (1 - al),
    )
    out["sob_g_neq_4"] = (P.mixed((Y,)), P.l2(Y) ** 0.5 * g**0.5)
    out["sob_neq_4"] = (P.mixed((X, Z)), P.l2(X) ** al * g ** (1 - al) + P.l2(X, Z) ** al * g ** (1 - al))
    out["sob_neq_5"] = (P.mixed((X,)), P.l2(X) ** al * g ** (1 - al))
    out["sob_neq_6"] = (P.mixed((Z,)), g + P.l2(Z) ** al * g ** (1 - al))
    return out


def _f0_terms(P: _Probe, al, tau):
    """Embeddings for x-independent fields (norms on I x T up to a constant factor)."""
    f = P.l2()
    out = {}
    out["sob_f0_1"] = (
        P.linf(),
        P.l2(Y) ** 0.5 * f**0.5 + P.l2(Z, Y) ** 0.5 * P.l2(Z) ** (al - 0.5) * f ** (1 - al),
    )
    out["sob_f0_2"] = (
        P.linf(),
        P.l2(Y) ** 0.5 * f**0.5 + P.l2(Z, Y) ** (al - 0.5) * P.l2(Z) ** 0.5 * P.l2(Y) ** (1 - al),
    )
    out["sob_f0_3"] = (P.mixed((Y,)), P.l2(Y) ** 0.5 * f**0.5)
    out["transform_p"] = (P.l2(Y, Y) + P.l2(Z, Z), P.l2(Z, Y) + math.sqrt(l2sq(P.grid, P.d(Y, Y) + P.d(Z, Z))))
    return out


def _f0neq_terms(P: _Probe, tau):
    return {"linf_0neq": (P.linf(), P.grad() ** (1 - tau) * P.grad(Z) ** tau)}


def _pair_terms(grid, fc, gc):
    f = bwd(fc)
    g = bwd(gc)
    prod = (f * g).mean(axis=(0, 2), keepdims=True)
    lhs = math.sqrt(l2sq(grid, np.broadcast_to(prod, grid.shape)))
    gy = bwd(diff_coeffs(grid, gc, 1, 1))
    rhs = math.sqrt(l2sq(grid, f)) * l2sq(grid, g) ** 0.25 * l2sq(grid, gy) ** 0.25
    return {"prod_00": (lhs, rhs)}


def _split(grid, f: PhysicalField):
    c = fwd(f.values) * (~grid.nyquist_mask)[:, None, :]
    neq = c.copy()
    neq[0] = 0.0
    zero = np.zeros_like(c)
    zero[0] = c[0]
    zneq = zero.copy()
    zneq[0, :, 0] = 0.0
    return c, neq, zero, zneq


def _walls_zero(v, tol=1e-10):
    scale = max(float(np.max(np.abs(v))), 1e-300)
    return max(np.max(np.abs(v[:, 0, :])), np.max(np.abs(v[:, -1, :]))) <= tol * scale


@dataclass
class InequalityResult:
    name: str
    kind: str
    passed: bool
    n_used: int
    n_excluded: int = 0
    max_ratio: float = 0.0
    max_ratio_fine: float = math.nan
    drift: float = math.nan


@dataclass
class InequalityReport:
    results: list
    notices: list

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def by_name(self):
        return {r.name: r for r in self.results}


def _fitted_ratios(grid, fields, alpha, tau):
    """name -> list of ratios (None for excluded fields)."""
    ratios: dict[str, list] = {}
    excluded: dict[str, int] = {}
    walls = []
    parts = []
    for f in fields:
        c, neq, zero, zneq = _split(grid, f)
        walls.append(_walls_zero(f.values))
        parts.append((c, neq, zero, zneq))

    def put(name, lhs, rhs):
        if rhs > 0:
            ratios.setdefault(name, []).append(lhs / rhs)
        elif lhs > 0:
            ratios.setdefault(name, []).append(math.inf)

    for i, (c, neq, zero, zneq) in enumerate(parts):
        if np.any(neq):
            P = _Probe(grid, neq)
            if walls[i]:
                for name, (lhs, rhs) in _g_neq_terms(P, alpha).items():
                    put(name, lhs, rhs)
            else:
                excluded["sob_g_neq"] = excluded.get("sob_g_neq", 0) + 1
        if np.any(zero):
            P0 = _Probe(grid, zero)
            if walls[i]:
                for name, (lhs, rhs) in _f0_terms(P0, alpha, tau).items():
                    put(name, lhs, rhs)
            else:
                excluded["sob_f0"] = excluded.get("sob_f0", 0) + 1
        if np.any(zneq):
            for name, (lhs, rhs) in _f0neq_terms(_Probe(grid, zneq), tau).items():
                put(name, lhs, rhs)
    for i in range(len(parts) - 1):
        j = i + 1
        if walls[j]:
            for name, (lhs, rhs) in _pair_terms(grid, parts[i][0], parts[j][0]).items():
                put(name, lhs, rhs)
    return ratios, excluded


def check_inequality_catalog(
    fields: Sequence[PhysicalField],
    fine_fields: Sequence[PhysicalField] | None = None,
    alpha: float = 0.75,
    tau: float = 1.0 / 6.0,
    drift_tol: float = 0.2,
) -> InequalityReport:
    """Evaluate the embedding and Fourier inequalities on a field corpus.

    Constant-free inequalities are asserted directly on every field.  For
    inequalities with an unknown constant the largest LHS/RHS ratio over the
    corpus is compared with the same quantity on ``fine_fields`` (by
    default the corpus spectrally interpolated to a grid twice as fine);
    the check passes when the two differ by at most ``drift_tol``.

    Nyquist modes are removed and the relevant projection applied before
    testing.  Fields violating a boundary hypothesis are excluded from that
    inequality with a notice.
    """
    if not fields:
        raise ValueError("empty corpus")
    if not 0.5 < alpha <= 0.75:
        raise ValueError("alpha must lie in (1/2, 3/4]")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    grid = fields[0].grid
    notices = []
    results = []

    exact: dict[str, list] = {}
    for f in fields:
        _, neq, _, _ = _split(grid, f)
        for name, lhs, rhs in _exact_pairs(_Probe(grid, neq)):
            exact.setdefault(name, []).append((lhs, rhs))
    for name, vals in exact.items():
        ok = all(l <= r * (1 + 1e-12) + 1e-300 for l, r in vals)
        mr = max((l / r if r > 0 else 0.0) for l, r in vals)
        results.append(InequalityResult(name, "exact", ok, len(vals), 0, mr))

    if fine_fields is None:
        fine = Grid(2 * grid.Nx, 2 * grid.Ny - 1, 2 * grid.Nz)
        fine_fields = [refine(f, fine) for f in fields]
    fgrid = fine_fields[0].grid
    coarse, exc = _fitted_ratios(grid, fields, alpha, tau)
    finer, _ = _fitted_ratios(fgrid, fine_fields, alpha, tau)
    for key, count in exc.items():
        notices.append(f"{key}: {count} field(s) excluded (nonzero wall values)")
    for name, vals in coarse.items():
        c0 = max(vals)
        c1 = max(finer.get(name, [math.nan]))
        drift = abs(c1 - c0) / c0 if c0 > 0 else 0.0
        ok = bool(np.isfinite(c0) and np.isfinite(c1) and drift <= drift_tol)
        results.append(InequalityResult(name, "fitted", ok, len(vals), 0, c0, c1, drift))
    return InequalityReport(results, notices)
