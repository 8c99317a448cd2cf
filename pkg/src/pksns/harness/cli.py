"""Command-line interface: ``pksns run|sweep|cstar|check-inequalities|resume``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ConfigError
from .config import OUTPUT_ROOT_ENV, load_config

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _emit(obj, out=None):
    from .runner import _clean

    text = json.dumps(_clean(obj), indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)


def _overrides(args):
    ov = list(args.set or [])
    if getattr(args, "out", None):
        ov.append(f"output.dir={json.dumps(str(Path(args.out).resolve()))}")
    return ov


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse values {text!r}") from exc


def cmd_run(args):
    from .runner import run_scenario

    cfg = load_config(args.config, _overrides(args))
    rep = run_scenario(cfg)
    _emit({"classification": rep.classification, "termination": rep.termination, "t_final": rep.t_final,
           "steps": rep.steps, "output_dir": str(rep.output_dir)})
    return EXIT_OK


def cmd_sweep(args):
    from .runner import sweep

    cfg = load_config(args.config, _overrides(args))
    rep = sweep(cfg, args.param, _float_list(args.values), workers=args.workers)
    out = {"parameter": rep.parameter, "rows": rep.rows, "csv": str(rep.csv_path)}
    rates = rep.rates()
    if len(rates) == 2 and rates[1] not in (0.0,) and np.isfinite(rates).all():
        out["rate_ratio"] = rates[0] / rates[1]
    _emit(out)
    return EXIT_OK


def cstar_report(restarts, seed=0, **kw):
    from ..inequalities import critical_mass, estimate_C_star

    est, best = estimate_C_star(restarts, seed=seed, **kw)
    spec = np.sum(best.coeffs**2, axis=2)
    spec = spec / spec.sum()
    return {
        "estimate": est,
        "estimate_cubed": est**3,
        "critical_mass": critical_mass(est),
        "restarts": restarts,
        "seed": seed,
        "best_trial_spectrum": spec.tolist(),
    }


def cmd_cstar(args):
    rep = cstar_report(args.restarts, seed=args.seed, My=args.modes[0], Kz=args.modes[1], workers=args.workers)
    _emit(rep, args.output)
    return EXIT_OK


def inequality_report(checkpoint):
    from ..diagnostics import check_inequality_catalog
    from ..inequalities import field_gn_ratio
    from .checkpoint import load_checkpoint

    state, _ = load_checkpoint(checkpoint)
    fields = [state.n, state.c, state.u1, state.u2, state.u3]
    rep = check_inequality_catalog(fields)
    n0 = state.n.values.mean(axis=0, keepdims=True)
    try:
        from ..field import PhysicalField

        gn = field_gn_ratio(PhysicalField(state.grid, np.broadcast_to(n0, state.grid.shape).copy()))
    except ValueError:
        gn = None
    return {
        "checkpoint": str(checkpoint),
        "t": state.t,
        "passed": rep.passed,
        "results": [r.__dict__ for r in rep.results],
        "notices": rep.notices,
        "gn_ratio_n_0neq": gn,
    }


def cmd_check(args):
    out = inequality_report(args.checkpoint)
    _emit(out, args.output)
    return EXIT_OK if out["passed"] else EXIT_FAILED


def cmd_resume(args):
    from .runner import resume

    rep = resume(args.checkpoint, t_end=args.t_end, output_dir=args.out)
    _emit({"classification": rep.classification, "termination": rep.termination, "t_final": rep.t_final,
           "steps": rep.steps, "output_dir": str(rep.output_dir)})
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="pksns",
        description=f"Chemotaxis-Navier-Stokes channel simulations. Output root: ${OUTPUT_ROOT_ENV} (default ./runs).",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry, e.g. params.A=512")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("config")
    overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario over several parameter values")
    p.add_argument("config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int, default=1)
    overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cstar", help="lower bound for the Gagliardo-Nirenberg constant")
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", type=int, nargs=2, default=(12, 12), metavar=("MY", "KZ"))
    p.add_argument("--workers", type=int, default=1, help="parallel restart processes")
    p.add_argument("--output", help="also write the JSON report here")
    p.set_defaults(func=cmd_cstar)

    p = sub.add_parser("check-inequalities", help="evaluate the inequality catalog on a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--output")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("resume", help="continue a checkpointed run")
    p.add_argument("checkpoint")
    p.add_argument("--t-end", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_resume)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
