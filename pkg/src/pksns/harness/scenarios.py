"""Initial-data presets and analytic initial conditions."""
from __future__ import annotations

import inspect
import math

import numpy as np

from ..decomposition import project_solenoidal
from ..dynamics import Params, State, make_state
from ..errors import CheckpointError, ConfigError
from ..field import Grid, PhysicalField, fwd, grad_power_sq, lp_norm, random_smooth_field

CRITICAL_MASS = 8.0 * math.pi / 9.0


def h2_norm(u) -> float:
    """||u||_{H^2} of a velocity triple."""
    total = 0.0
    for comp in u:
        c = fwd(comp.values)
        total += sum(grad_power_sq(comp.grid, c, k) for k in range(3))
    return math.sqrt(total)


def small_velocity(grid: Grid, rng, size: float):
    """Random admissible velocity scaled to ||u||_{H^2} = size."""
    if size == 0:
        return None
    raw = [random_smooth_field(grid, rng, kmax=2, ydeg=5) for _ in range(3)]
    u = project_solenoidal(raw)
    norm = h2_norm(u)
    return tuple(PhysicalField(grid, comp.values * (size / norm)) for comp in u)


def _bump(grid: Grid, rng, perturbation: float, kx: int):
    X, Y, Z = grid.mesh()
    base = (1.0 - Y**2) * (1.0 + 0.5 * np.cos(Z))
    ph = rng.uniform(0, 2 * np.pi, size=2)
    wiggle = np.cos(kx * X + ph[0]) * (0.6 + 0.4 * np.sin(Z + ph[1]))
    return base * (1.0 + perturbation * wiggle)


def _scale_mass(grid, n, mass):
    m = lp_norm(PhysicalField(grid, n), 1)
    return n * (mass / m)


def zero(grid: Grid, params: Params, rng):
    """n = 0, u = 0."""
    return np.zeros(grid.shape), None


def case1(grid: Grid, params: Params, rng, mass=100.0, C0=0.5, perturbation=0.3, kx=1):
    """Logistic case: a large-mass positive density and a small velocity.

    ``mass`` is ||n_in||_{L^1}; the velocity has ||u_in||_{H^2} = C0 A^{-eps1}.
    """
    n = _scale_mass(grid, _bump(grid, rng, perturbation, kx), mass)
    return n, small_velocity(grid, rng, C0 * params.A ** (-params.eps1))


def case2(grid: Grid, params: Params, rng, mass=2.0, C0=0.5, perturbation=0.3, kx=1):
    """No logistic source: mass below 8 pi / 9 and a small velocity."""
    n = _scale_mass(grid, _bump(grid, rng, perturbation, kx), mass)
    return n, small_velocity(grid, rng, C0 * params.A ** (-params.eps1))


def linear_decay(grid: Grid, params: Params, rng, amplitude=1e-3, kx=1):
    """Small density amplitude (1 + cos(kx x)) cos(pi y / 2), no velocity."""
    X, Y, Z = grid.mesh()
    return amplitude * (1.0 + np.cos(kx * X)) * np.cos(np.pi * Y / 2), None


def ks2d_blowup(grid: Grid, params: Params, rng, mass=40.0, width=0.3):
    """x-independent Gaussian concentrated at (y, z) = (0, pi).

    ``mass`` is the L^1 norm of the x-average over I x T (2 pi times
    smaller than the three-dimensional mass).
    """
    X, Y, Z = grid.mesh()
    n = np.exp(-(Y**2 + (Z - np.pi) ** 2) / (2 * width**2)) * (1.0 - Y**2)
    m = float(np.sum(grid.weights_yz * n[0]))
    return n * (mass / m), None


def _check_case1(cfg, opts):
    if not cfg.params.mu > 0:
        raise ConfigError("preset case1 needs mu > 0")
    if not cfg.params.A > 0:
        raise ConfigError("preset case1 needs A > 0")


def _check_case2(cfg, opts):
    if cfg.params.mu != 0:
        raise ConfigError("preset case2 needs mu = 0")
    if not cfg.params.A > 0:
        raise ConfigError("preset case2 needs A > 0")
    if not opts.get("mass", 2.0) < CRITICAL_MASS:
        raise ConfigError(f"preset case2 needs mass < 8 pi / 9 = {CRITICAL_MASS:.6f}")


def _check_linear(cfg, opts):
    if not cfg.params.A > 0:
        raise ConfigError("preset linear_decay needs A > 0")


def _check_ks2d(cfg, opts):
    if cfg.params.A != 0:
        raise ConfigError("preset ks2d_blowup runs the unrescaled system and needs A = 0")
    w = opts.get("width", 0.3)
    if not 0 < w < 1:
        raise ConfigError("width must lie in (0, 1)")


PRESETS = {
    "zero": (zero, None),
    "case1": (case1, _check_case1),
    "case2": (case2, _check_case2),
    "linear_decay": (linear_decay, _check_linear),
    "ks2d_blowup": (ks2d_blowup, _check_ks2d),
}

_ANALYTIC_KEYS = ("n", "u1", "u2", "u3")


def _parse_analytic(spec):
    import sympy

    x, y, z = sympy.symbols("x y z", real=True)
    out = {}
    for key, text in spec.items():
        if key not in _ANALYTIC_KEYS:
            raise ConfigError(f"analytic initial data: unknown field {key!r}")
        try:
            expr = sympy.sympify(str(text), locals={"x": x, "y": y, "z": z, "pi": sympy.pi})
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ConfigError(f"analytic initial data: cannot parse {key} = {text!r}") from exc
        bad = expr.free_symbols - {x, y, z}
        if bad:
            raise ConfigError(f"analytic initial data: {key} uses unknown symbols {sorted(map(str, bad))}")
        out[key] = sympy.lambdify((x, y, z), expr, "numpy")
    if "n" not in out:
        raise ConfigError("analytic initial data needs n")
    return out


def analytic_fields(grid: Grid, spec):
    funcs = _parse_analytic(spec)
    X, Y, Z = grid.mesh()

    def ev(f):
        v = np.asarray(f(X, Y, Z), dtype=float)
        return np.broadcast_to(v, grid.shape).copy()

    n = ev(funcs["n"])
    if any(k in funcs for k in ("u1", "u2", "u3")):
        zero_f = lambda X, Y, Z: 0.0 * X  # noqa: E731
        u = tuple(PhysicalField(grid, ev(funcs.get(k, zero_f))) for k in ("u1", "u2", "u3"))
    else:
        u = None
    return n, u


def validate_initial(cfg):
    """Check the initial-data section of a config without allocating fields."""
    init = cfg.initial
    if init.kind == "preset":
        if init.source not in PRESETS:
            raise ConfigError(f"unknown preset {init.source!r}; choose from {sorted(PRESETS)}")
        func, check = PRESETS[init.source]
        sig = inspect.signature(func)
        allowed = list(sig.parameters)[3:]
        extra = set(init.options) - set(allowed)
        if extra:
            raise ConfigError(f"preset {init.source} does not accept {sorted(extra)}")
        for k, v in init.options.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"preset option {k} must be a finite number")
        if check is not None:
            check(cfg, init.options)
    elif init.kind == "checkpoint":
        from .checkpoint import read_header

        try:
            with open(init.source, "rb") as fh:
                header, _ = read_header(fh.read())
        except FileNotFoundError as exc:
            raise ConfigError(f"checkpoint not found: {init.source}") from exc
        except CheckpointError as exc:
            raise ConfigError(f"unusable checkpoint {init.source}: {exc}") from exc
        g = header.get("grid", {})
        if (g.get("Nx"), g.get("Ny"), g.get("Nz")) != tuple(cfg.grid):
            raise ConfigError(f"checkpoint grid {g} does not match the configured grid {cfg.grid}")
    elif init.kind == "analytic":
        _parse_analytic(init.source)
    else:
        raise ConfigError(f"unknown initial-data kind {init.kind!r}")


def initial_state(cfg) -> State:
    """Build the initial State for a validated config."""
    grid = cfg.make_grid()
    init = cfg.initial
    if init.kind == "checkpoint":
        from .checkpoint import load_checkpoint

        state, _ = load_checkpoint(init.source)
        return state
    if init.kind == "analytic":
        n, u = analytic_fields(grid, init.source)
    else:
        rng = np.random.default_rng(cfg.seed)
        func, _ = PRESETS[init.source]
        n, u = func(grid, cfg.params, rng, **init.options)
    return make_state(grid, n, u)
