"""Command-line entry point.

Exit codes: 0 success, 1 invariant-audit failure, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Tuple

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .entropy import InversionError
from .experiments import (FitWindowError, PreconditionError, compute_series, decay_fit,
                          lattice_experiment, positivity_probe, steady_state,
                          uniqueness_experiment)
from .lattice import LatticeInstability
from .models import HypothesisError, compute_constants, get_model, validate_hypotheses
from .output import emit_outputs
from .stepper import InnerSolveError, StepFailure, run_simulation

logger = logging.getLogger("crossdiff")

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
MASS_REL_TOL = 1e-12
LATTICE_MASS_TOL = 1e-10

Outcome = Tuple[dict, Dict[str, bool]]


def _nonincreasing(values, tol) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= tol * (1.0 + np.abs(v[:-1]))))


def _base_summary(cfg: RunConfig, kind: str) -> dict:
    model = cfg.model()
    return {"experiment": kind, "model": model.name, "config": cfg.echo(),
            "constants": compute_constants(model).as_dict()}


def _simulate(cfg: RunConfig):
    model = cfg.model()
    u0 = cfg.initial_field()
    traj = run_simulation(model, cfg.grid, u0, cfg.final_time, cfg.scheme,
                          output_stride=cfg.output.stride)
    uinf = steady_state(u0)
    return model, traj, uinf, compute_series(traj, model, uinf)


def _trajectory_audits(cfg: RunConfig, model, traj, series) -> Dict[str, bool]:
    audits = {}
    mins = [min(float(np.min(f)), float(np.min(1.0 - f.sum(axis=0)))) for f in traj.fields]
    audits["inside_domain"] = bool(min(mins) > 0.0)
    audits["dissipation_nonnegative"] = bool(np.all(series["dissipation_1"] >= 0)
                                            and np.all(series["dissipation_2"] >= 0))
    if model.reaction is None:
        tol = cfg.scheme.entropy_tol
        audits["entropy_nonincreasing"] = _nonincreasing(series["entropy"], tol)
        audits["rel_entropy_nonincreasing"] = _nonincreasing(series["rel_entropy"], tol)
        if not cfg.scheme.reg_enabled:
            masses = np.vstack([series[f"mass_{i + 1}"] for i in range(model.n)])
            drift = np.abs(masses - masses[:, :1])
            audits["mass_conserved"] = bool(np.all(drift <= MASS_REL_TOL * (1.0 + np.abs(masses[:, :1]))))
    return audits


def _run_stats(traj) -> dict:
    reps = traj.reports
    return {"steps": len(reps), "final_time": traj.times[-1],
            "retries": int(sum(r.retries for r in reps)),
            "newton_steps": int(sum(r.newton_used for r in reps)),
            "max_final_residual": max((r.final_residual for r in reps), default=0.0),
            "min_u_last": traj.min_u_last}


def do_run(cfg: RunConfig, figures: bool) -> Outcome:
    model, traj, uinf, series = _simulate(cfg)
    audits = _trajectory_audits(cfg, model, traj, series)
    summary = _base_summary(cfg, "run")
    summary.update(steady_state=uinf.full, run=_run_stats(traj), audits=audits)
    out = cfg.output
    emit_outputs(out.directory, out.prefix, model.n, trajectory=traj, series=series,
                 summary=summary)
    if figures:
        from . import plotting
        plotting.plot_profiles(traj, out.directory / f"{out.prefix}_profiles.png")
        plotting.plot_series(series, out.directory / f"{out.prefix}_series.png")
    return summary, audits


def do_decay(cfg: RunConfig, figures: bool) -> Outcome:
    model, traj, uinf, series = _simulate(cfg)
    ex = cfg.experiment
    fit = decay_fit(traj, uinf, which=ex.component, model=model, window_start=ex.window_start,
                    c_s=ex.c_s, c_l=ex.c_l)
    audits = _trajectory_audits(cfg, model, traj, series)
    audits["lambda_positive"] = fit.lambda_hat > 0
    if fit.envelope_ok is not None:
        audits["envelope"] = fit.envelope_ok
    summary = _base_summary(cfg, "decay")
    summary.update(steady_state=uinf.full, run=_run_stats(traj), fit=fit.as_dict(), audits=audits)
    out = cfg.output
    emit_outputs(out.directory, out.prefix, model.n, trajectory=traj, series=series,
                 summary=summary)
    if figures:
        from . import plotting
        plotting.plot_series(series, out.directory / f"{out.prefix}_series.png")
        plotting.plot_decay(series["t"], series[f"dist_l2_{fit.component}"], fit.lambda_hat,
                            fit.c_hat, out.directory / f"{out.prefix}_decay.png", fit.C1)
    return summary, audits


def do_unique(cfg: RunConfig, figures: bool) -> Outcome:
    ex = cfg.experiment
    rep = uniqueness_experiment(cfg.model(), cfg.grid, cfg.initial_field(), cfg.final_time,
                                cfg.scheme, tol_a=ex.tol_a, tol_b=ex.tol_b, jitter=ex.jitter,
                                seed=ex.seed, eps=ex.eps, eps_sweep=ex.eps_sweep,
                                output_stride=cfg.output.stride)
    audits = {"gajewski_nonincreasing": rep.gajewski_monotone,
              "hminus1_nonincreasing": rep.hminus1_monotone,
              "final_gap": rep.final_l2_gap <= 1e-6}
    summary = _base_summary(cfg, "unique")
    summary.update(uniqueness=rep.summary(), audits=audits)
    rows = zip(rep.times, rep.gajewski, rep.hminus1)
    out = cfg.output
    emit_outputs(out.directory, out.prefix, cfg.n,
                 tables={"uniqueness": (["t", "gajewski", "hminus1"], rows)}, summary=summary)
    if figures:
        from . import plotting
        plotting.plot_uniqueness(rep.times, rep.gajewski, rep.hminus1,
                                 out.directory / f"{out.prefix}_uniqueness.png")
    return summary, audits


def do_lattice(cfg: RunConfig, figures: bool) -> Outcome:
    if abs(cfg.grid.length - 1.0) > 1e-12:
        raise ConfigError("the lattice study is posed on the unit interval; set [grid] length = 1")
    ex = cfg.experiment
    rows = lattice_experiment(cfg.model(), cfg.final_time, ex.h_list,
                              lambda x: cfg.initial.sample(x, 1.0),
                              ref_cells=ex.ref_cells, ref_tau=ex.ref_tau)
    errs = [r.err_max for r in rows]
    orders = [r.order_estimate for r in rows[1:]]
    audits = {"errors_decrease": all(b < a for a, b in zip(errs, errs[1:])),
              "order_at_least_one": bool(orders) and min(orders) >= 1.0,
              "mass_conserved": max(r.mass_drift for r in rows) <= LATTICE_MASS_TOL}
    summary = _base_summary(cfg, "lattice")
    summary.update(rows=[r.__dict__ for r in rows], audits=audits)
    out = cfg.output
    table = [(r.h, r.err_max, r.err_l2, r.order_estimate) for r in rows]
    emit_outputs(out.directory, out.prefix, cfg.n,
                 tables={"lattice": (["h", "err_max", "err_l2", "order_estimate"], table)},
                 summary=summary)
    if figures:
        from . import plotting
        plotting.plot_convergence([r.h for r in rows], errs, [r.err_l2 for r in rows],
                                  out.directory / f"{out.prefix}_lattice.png")
    return summary, audits


def do_positivity(cfg: RunConfig, figures: bool) -> Outcome:
    key, _, arg = cfg.model_name.partition(":")
    if key != "vanishing-q":
        raise ConfigError("the positivity probe needs a vanishing-q:<alpha> model")
    ex = cfg.experiment
    rows = positivity_probe(cfg.grid, cfg.final_time, cfg.scheme, n=cfg.n, alpha=float(arg),
                            probe_min=ex.probe_min, alpha_sweep=ex.alpha_list)
    audits = {"min_vacancy_positive": rows[0].min_u_last > 0.0}
    summary = _base_summary(cfg, "positivity")
    summary.update(rows=[r.__dict__ for r in rows], audits=audits)
    out = cfg.output
    emit_outputs(out.directory, out.prefix, cfg.n,
                 tables={"positivity": (["model", "min_u_last", "completed"],
                                        [(r.model, r.min_u_last, r.completed) for r in rows])},
                 summary=summary)
    return summary, audits


EXPERIMENTS: Dict[str, Callable[[RunConfig, bool], Outcome]] = {
    "run": do_run, "decay": do_decay, "unique": do_unique, "lattice": do_lattice,
    "positivity": do_positivity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossdiff",
        description="Entropy-stable solver and diagnostics for volume-filling cross-diffusion.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("validate", "check the structural hypotheses of a catalog model"),
                       ("constants", "print the derived model constants as JSON")):
        p = sub.add_parser(name, help=text)
        p.add_argument("model", help="catalog name, e.g. ion-transport or power-q:2")
        p.add_argument("--n", type=int, default=2, help="number of species (default 2)")
        p.add_argument("--samples", type=int, default=10_000, help="sample points")
    for name, text in (("run", "run the experiment named in the config (default: simulate)"),
                       ("decay", "simulate and fit the decay rate"),
                       ("unique", "two perturbed runs and their distance series"),
                       ("lattice", "lattice diffusion-limit study"),
                       ("positivity", "vacancy positivity probe")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--out", help="override [output] directory")
        p.add_argument("--figures", action="store_true", help="also write PNG figures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=max(logging.DEBUG, logging.WARNING - 10 * args.verbose),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            report = validate_hypotheses(get_model(args.model, n=args.n), samples=args.samples)
            for line in report.lines():
                print(line)
            return EXIT_OK if report.passed else EXIT_AUDIT
        if args.command == "constants":
            const = compute_constants(get_model(args.model, n=args.n), samples=args.samples)
            print(json.dumps(const.as_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        cfg = load_config(args.config)
        if args.out:
            cfg.output.directory = Path(args.out)
        kind = cfg.experiment.kind if args.command == "run" else args.command
        summary, audits = EXPERIMENTS[kind](cfg, args.figures or cfg.output.figures)
    except (ConfigError, HypothesisError, PreconditionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, InnerSolveError, InversionError, LatticeInstability,
            FitWindowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name, ok in sorted(audits.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"outputs in {cfg.output.directory}")
    return EXIT_OK if all(audits.values()) else EXIT_AUDIT
