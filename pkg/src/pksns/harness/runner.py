"""Experiment drivers: single runs, parameter sweeps and resumption."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..diagnostics import (
    CSV_COLUMNS_V1,
    classify_run,
    compute_energies,
    fit_nonzero_decay,
    mass_decay_check,
    new_accumulator,
)
from ..dynamics import State, adapt_dt, quantize_dt, step
from ..errors import ConfigError, DivergenceError, DtUnderflowError, NonFiniteFieldError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import InitialData, ScenarioConfig
from .scenarios import initial_state

log = logging.getLogger("pksns")

CSV_NAME = "diagnostics.csv"
CHECKPOINT_NAME = "final.ckpt"
SUMMARY_NAME = "summary.json"
MASS_TOL = 1e-6


def fmt(v) -> str:
    """17 significant digits, lossless for float64."""
    return format(float(v), ".17g")


def _clean(obj):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


@dataclass
class RunReport:
    name: str
    output_dir: Path
    classification: str
    termination: str
    t_final: float
    steps: int
    history: list = field(repr=False)
    summary: dict = field(repr=False)
    final_state: State = field(repr=False)
    csv_path: Path | None = None
    checkpoint_path: Path | None = None
    summary_path: Path | None = None


def _decay_summary(history, cfg: ScenarioConfig):
    t_end = cfg.params.t_end
    window = (cfg.fit_window[0] * t_end, cfg.fit_window[1] * t_end)
    try:
        fit = fit_nonzero_decay([r.t for r in history], [r.l2_n_neq for r in history], window=window)
    except ValueError as exc:
        return None, str(exc)
    return {"rate": fit.rate, "r2": fit.r2, "n_used": fit.n_used, "window": list(window)}, None


def _summarise(cfg, history, classification, termination, state, wall):
    m0 = history[0].M_total
    mass_ratio = max(r.M_total for r in history) / m0 if m0 > 0 else 1.0
    decay, decay_notice = _decay_summary(history, cfg)
    mass = mass_decay_check(history, cfg.params)
    final = history[-1].to_dict()
    final.pop("lp_ladder", None)
    return _clean(
        {
            "name": cfg.name,
            "classification": classification,
            "termination": termination,
            "t_final": state.t,
            "steps": state.steps,
            "wall_seconds": wall,
            "final_energies": final,
            "decay_fit": decay,
            "decay_fit_notice": decay_notice,
            "mass_decay_check": mass.to_dict(),
            "mass_monotone": {"max_ratio": mass_ratio, "passed": mass_ratio <= 1 + MASS_TOL},
            "peak_linf_n": max(r.linf_n for r in history),
            "clipped_mass": state.clipped_mass,
            "config": cfg.to_dict(),
        }
    )


def integrate(cfg: ScenarioConfig, state: State, on_record=None):
    """Step ``state`` to ``t_end``; returns (history, final state, termination, dt_floor_hit).

    Blow-up indicators (dt underflow, non-finite fields, divergence
    failure) end the run normally with the corresponding termination tag.
    """
    p = cfg.params
    acc = new_accumulator(state.grid, p)
    rec = compute_energies(state, acc, p, ladder=cfg.ladder)
    history = [rec]
    if on_record:
        on_record(rec, state)
    termination = "t_end"
    dt_floor_hit = False
    t_stop = p.t_end * (1 - 1e-12)
    start = time.perf_counter()
    while state.t < t_stop:
        if cfg.max_steps is not None and state.steps >= cfg.max_steps:
            termination = "max_steps"
            break
        if cfg.max_wall_seconds is not None and time.perf_counter() - start > cfg.max_wall_seconds:
            termination = "wall_time"
            break
        try:
            dt = quantize_dt(adapt_dt(state, p), p)
            remaining = p.t_end - state.t
            if dt > remaining:
                dt = remaining
            state = step(state, p, dt=dt)
        except DtUnderflowError as exc:
            log.info("dt underflow at t=%g: %s", state.t, exc)
            termination = "dt_underflow"
            dt_floor_hit = True
            break
        except NonFiniteFieldError as exc:
            log.info("non-finite field at t=%g: %s", state.t, exc)
            termination = "non_finite"
            break
        except DivergenceError as exc:
            log.info("divergence check failed at t=%g: %s", state.t, exc)
            termination = "divergence"
            break
        rec = compute_energies(state, acc, p, ladder=cfg.ladder)
        history.append(rec)
        if on_record:
            on_record(rec, state)
    if history:
        fit, _ = _decay_summary(history, cfg)
        if fit is not None:
            history[-1].decay_fit_rate = fit["rate"]
    return history, state, termination, dt_floor_hit


def run_scenario(cfg: ScenarioConfig, write: bool = True, state: State | None = None) -> RunReport:
    """Run a validated scenario.

    Writes ``diagnostics.csv`` (one row every ``sample_every`` steps plus
    the final state), ``final.ckpt`` and ``summary.json`` into
    ``cfg.output_dir`` unless ``write`` is false.
    """
    cfg.validate()
    if state is None:
        state = initial_state(cfg)
    out = Path(cfg.output_dir)
    csv_path = out / CSV_NAME
    rows = []
    last_written = [-1]

    def on_record(rec, s):
        if s.steps % cfg.sample_every == 0:
            rows.append(rec)
            last_written[0] = s.steps

    t0 = time.perf_counter()
    history, final, termination, floor = integrate(cfg, state, on_record)
    wall = time.perf_counter() - t0
    if last_written[0] != final.steps:
        rows.append(history[-1])
    reached = termination == "t_end"
    classification = classify_run(history, cfg.params, dt_floor_hit=floor, reached_end=reached)
    summary = _summarise(cfg, history, classification, termination, final, wall)
    report = RunReport(cfg.name, out, classification, termination, final.t, final.steps, history, summary, final)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS_V1)
            for rec in rows:
                w.writerow([fmt(v) for v in rec.row()])
        report.csv_path = csv_path
        report.checkpoint_path = save_checkpoint(out / CHECKPOINT_NAME, final, cfg.params)
        report.summary_path = out / SUMMARY_NAME
        report.summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("%s: %s after %d steps (t=%g)", cfg.name, classification, final.steps, final.t)
    return report


def read_csv(path):
    """Rows of a diagnostics CSV as dicts of floats."""
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# sweeps


@dataclass
class SweepReport:
    parameter: str
    values: list
    rows: list
    runs: list = field(repr=False)
    csv_path: Path | None = None

    def rates(self):
        return [r["rate"] for r in self.rows]


def _param_name(parameter: str) -> str:
    return parameter.split(".", 1)[1] if parameter.startswith("params.") else parameter


def _sweep_label(name, value):
    return f"{name}={value:g}" if isinstance(value, (int, float)) else f"{name}={value}"


def sweep(base_cfg: ScenarioConfig, parameter: str, values, workers: int = 1, write: bool = True) -> SweepReport:
    """Run ``base_cfg`` once per value of a Params field.

    Every sub-configuration is validated before anything runs; a single
    invalid value rejects the whole sweep.  Writes ``sweep.csv`` with
    columns (value, rate, r2, classification).
    """
    values = list(values)
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    name = _param_name(parameter)
    cfgs = []
    for v in values:
        label = _sweep_label(name, v)
        sub = base_cfg.with_param(name, v)
        cfgs.append(sub.replace(name=f"{base_cfg.name}[{label}]", output_dir=Path(base_cfg.output_dir) / label))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(run_scenario, cfgs, [write] * len(cfgs)))
    else:
        runs = [run_scenario(c, write=write) for c in cfgs]
    rows = []
    for v, r in zip(values, runs):
        fit = r.summary.get("decay_fit") or {}
        rate, r2 = fit.get("rate"), fit.get("r2")
        rows.append(
            {
                "value": v,
                "rate": math.nan if rate is None else rate,
                "r2": math.nan if r2 is None else r2,
                "classification": r.classification,
            }
        )
    report = SweepReport(parameter, values, rows, runs)
    if write:
        out = Path(base_cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.csv_path = out / "sweep.csv"
        with open(report.csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "rate", "r2", "classification"])
            for row in rows:
                w.writerow([fmt(row["value"]), fmt(row["rate"]), fmt(row["r2"]), row["classification"]])
    return report


# resumption


def resume_config(checkpoint, t_end=None, output_dir=None, name=None, **output) -> ScenarioConfig:
    """Config that continues the run stored in ``checkpoint``."""
    checkpoint = Path(checkpoint)
    state, params = load_checkpoint(checkpoint)
    if t_end is not None:
        try:
            params = dataclasses.replace(params, t_end=float(t_end))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    g = state.grid
    cfg = ScenarioConfig(
        name=name or f"resume:{checkpoint.parent.name or checkpoint.stem}",
        grid=(g.Nx, g.Ny, g.Nz),
        params=params,
        initial=InitialData("checkpoint", checkpoint),
        output_dir=Path(output_dir) if output_dir else checkpoint.parent / "resumed",
        **output,
    )
    return cfg.validate()


def resume(checkpoint, t_end=None, output_dir=None, write=True, **output) -> RunReport:
    """Continue a checkpointed run; the norm accumulators restart at the checkpoint time."""
    cfg = resume_config(checkpoint, t_end=t_end, output_dir=output_dir, **output)
    return run_scenario(cfg, write=write)
