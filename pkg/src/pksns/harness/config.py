"""Scenario configuration: TOML files with command-line overrides."""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..dynamics import Params
from ..errors import ConfigError
from ..field import Grid

OUTPUT_ROOT_ENV = "PKSNS_OUTPUT_ROOT"

_PARAM_NAMES = {f.name for f in dataclasses.fields(Params)}
_TOP_KEYS = {"name", "seed", "grid", "params", "initial", "output"}
_OUTPUT_KEYS = {"dir", "sample_every", "ladder", "fit_window", "max_steps", "max_wall_seconds"}


@dataclass(frozen=True)
class InitialData:
    """Initial condition source.

    ``kind`` is ``"preset"`` (``source`` names a scenario preset),
    ``"checkpoint"`` (``source`` is a path) or ``"analytic"`` (``source``
    maps field names to sympy expressions in x, y, z).  ``options`` are
    keyword arguments for the preset.
    """

    kind: str
    source: object
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully validated scenario.

    ``sample_every`` is the CSV cadence in steps; norms are accumulated at
    every step regardless.  ``fit_window`` gives the decay-fit window as
    fractions of ``t_end``.
    """

    name: str
    grid: tuple
    params: Params
    initial: InitialData
    output_dir: Path
    sample_every: int = 1
    seed: int = 0
    ladder: int = 0
    fit_window: tuple = (0.3, 1.0)
    max_steps: int | None = None
    max_wall_seconds: float | None = None

    def make_grid(self) -> Grid:
        return Grid(*self.grid)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_param(self, name, value) -> "ScenarioConfig":
        """Copy with one Params field changed (validated)."""
        if name not in _PARAM_NAMES:
            raise ConfigError(f"unknown parameter {name!r}")
        try:
            params = dataclasses.replace(self.params, **{name: value})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {name}: {exc}") from exc
        cfg = dataclasses.replace(self, params=params)
        cfg.validate()
        return cfg

    def validate(self):
        """Full validation; called by every constructor, cheap, allocates no fields."""
        validate_grid(self.grid)
        if not isinstance(self.params, Params):
            raise ConfigError("params must be a Params instance")
        if int(self.sample_every) < 1:
            raise ConfigError("output.sample_every must be >= 1")
        if not 0 <= int(self.ladder) <= 7:
            raise ConfigError("output.ladder must lie in 0..7")
        lo, hi = self.fit_window
        if not 0 <= lo < hi <= 1:
            raise ConfigError("output.fit_window must satisfy 0 <= lo < hi <= 1")
        if self.max_steps is not None and int(self.max_steps) < 1:
            raise ConfigError("output.max_steps must be >= 1")
        from .scenarios import validate_initial

        validate_initial(self)
        return self

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "grid": dict(zip(("Nx", "Ny", "Nz"), self.grid)),
            "params": self.params.to_dict(),
            "initial": {"kind": self.initial.kind, "source": _jsonable(self.initial.source), "options": self.initial.options},
            "output": {
                "dir": str(self.output_dir),
                "sample_every": self.sample_every,
                "ladder": self.ladder,
                "fit_window": list(self.fit_window),
                "max_steps": self.max_steps,
                "max_wall_seconds": self.max_wall_seconds,
            },
        }


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    return v


def validate_grid(shape):
    try:
        Nx, Ny, Nz = (int(v) for v in shape)
    except (TypeError, ValueError) as exc:
        raise ConfigError("grid must be three integers Nx, Ny, Nz") from exc
    try:
        Grid(Nx, Ny, Nz)
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc
    return Nx, Ny, Nz


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def parse_override(text: str):
    """``section.key=value`` with a TOML literal value (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def apply_overrides(data: dict, overrides) -> dict:
    """Overrides as ``{"params.A": 512}`` or a list of ``"params.A=512"`` strings."""
    if overrides is None:
        return data
    if not isinstance(overrides, dict):
        overrides = dict(parse_override(o) for o in overrides)
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for key, value in overrides.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key!r}: {p!r} is not a table")
        node[parts[-1]] = value
    return out


def config_from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from parsed TOML."""
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    name = str(data.get("name", "scenario"))
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    init = dict(data.get("initial", {"preset": "zero"}))
    g = data.get("grid")
    if g is None and "checkpoint" in init:
        g = _checkpoint_grid(init["checkpoint"], base_dir)
    g = g or {}
    extra = set(g) - {"Nx", "Ny", "Nz"}
    if extra:
        raise ConfigError(f"unknown grid keys: {sorted(extra)}")
    shape = validate_grid((g.get("Nx", 16), g.get("Ny", 33), g.get("Nz", 16)))

    pdata = dict(data.get("params", {}))
    extra = set(pdata) - _PARAM_NAMES
    if extra:
        raise ConfigError(f"unknown params: {sorted(extra)}")
    try:
        params = Params(**pdata)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params: {exc}") from exc

    sources = [k for k in ("preset", "checkpoint", "analytic") if k in init]
    if len(sources) != 1:
        raise ConfigError("initial needs exactly one of preset, checkpoint, analytic")
    kind = sources[0]
    source = init.pop(kind)
    if kind == "checkpoint":
        source = Path(source)
        if base_dir is not None and not source.is_absolute():
            source = base_dir / source
    if kind == "analytic" and not isinstance(source, dict):
        raise ConfigError("initial.analytic must be a table of expressions")
    if kind != "preset" and init:
        raise ConfigError(f"options {sorted(init)} only apply to presets")
    initial = InitialData(kind, source, init)

    out = dict(data.get("output", {}))
    extra = set(out) - _OUTPUT_KEYS
    if extra:
        raise ConfigError(f"unknown output keys: {sorted(extra)}")
    odir = Path(out.get("dir", name))
    if not odir.is_absolute():
        odir = output_root() / odir
    fw = out.get("fit_window", (0.3, 1.0))
    if len(fw) != 2:
        raise ConfigError("output.fit_window must have two entries")
    cfg = ScenarioConfig(
        name=name,
        grid=shape,
        params=params,
        initial=initial,
        output_dir=odir,
        sample_every=int(out.get("sample_every", 1)),
        seed=seed,
        ladder=int(out.get("ladder", 0)),
        fit_window=(float(fw[0]), float(fw[1])),
        max_steps=out.get("max_steps"),
        max_wall_seconds=out.get("max_wall_seconds"),
    )
    return cfg.validate()


def _checkpoint_grid(path, base_dir):
    from .checkpoint import read_header
    from ..errors import CheckpointError

    path = Path(path)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    try:
        header, _ = read_header(path.read_bytes())
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {path}") from exc
    except CheckpointError as exc:
        raise ConfigError(f"unusable checkpoint {path}: {exc}") from exc
    return header.get("grid", {})


def load_config(path, overrides=None) -> ScenarioConfig:
    """Read a TOML scenario file, apply overrides (which win) and validate."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return config_from_dict(apply_overrides(data, overrides), base_dir=path.parent)


def loads_config(text: str, overrides=None) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return config_from_dict(apply_overrides(data, overrides))
