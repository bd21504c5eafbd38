"""``mrisk`` command-line interface.

Every subcommand reads a :class:`~mrisk.config.RunConfig` built from an
optional YAML file (``--config``), ``--set key=value`` overrides with dotted
keys, shorthand flags such as ``--loss`` and ``--noise``, and ``--seed``.
Scalar reports are printed as JSON and grids are written as CSV; both are
byte-identical across reruns with the same inputs.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys

import numpy as np
import yaml

from . import experiments
from .config import ConfigError, RunConfig
from .conic_geometry import statdim_fraction
from .finite_sample import NoConvergence as EstimatorNoConvergence
from .finite_sample import run_replicate
from .marginals import MarginalLaw, UnboundedFunctional
from .scalar_convex import NotMinimizedAtZero, abs_loss
from .system_solver import InvalidAssumption, NoConvergence, risk_curve, solve_reg, solve_unreg
from .threshold import DegenerateNoise, delta_perfect_reg, delta_perfect_unreg, expected_dist_sq

log = logging.getLogger("mrisk")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

FIGURES = ("risk-compare", "perfect-recovery", "reg-phase-transition", "reg-threshold")


class NumericalFailure(RuntimeError):
    """Raised by a command after it has written partial output."""


# --- formatting ----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    if isinstance(v, np.integer):
        return int(v)
    return v


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2) + "\n"


def to_csv(rows, columns=None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# --- subcommands -----------------------------------------------------------------

def cmd_threshold(cfg: RunConfig, args):
    loss, noise, eng = cfg.loss_fn(), cfg.noise_law(), cfg.engine_obj()
    reg = cfg.reg_fn()
    if reg is not None:
        signal = cfg.signal_law(required=True)
        rep = delta_perfect_reg(loss, reg, noise, signal, eng)
    else:
        rep = delta_perfect_unreg(loss, noise, eng)
    j_csv = args.j_csv or cfg.output.get("j_csv")
    if j_csv:
        ts = np.logspace(-3, 3, 61)
        rows = [{"t": float(t), "j_loss": expected_dist_sq(t, loss, noise, eng)} for t in ts]
        _emit(to_csv(rows), j_csv)
    _emit(to_json(rep.to_dict()), cfg.output.get("json"))


def cmd_solve(cfg: RunConfig, args):
    loss, noise, eng = cfg.loss_fn(), cfg.noise_law(), cfg.engine_obj()
    reg = cfg.reg_fn()
    if cfg.delta is None:
        raise ConfigError("missing 'delta'")
    try:
        if reg is None:
            if cfg.delta <= 1:
                raise ConfigError("without a penalty the sampling ratio delta must exceed 1")
            sol = solve_unreg(loss, noise, cfg.delta, cfg.tol, eng)
        else:
            sol = solve_reg(loss, reg, noise, cfg.signal_law(required=True), cfg.delta, cfg.tol, eng)
    except NoConvergence as exc:
        if exc.solution is not None:
            _emit(to_json(exc.solution.to_dict()), cfg.output.get("json"))
        raise
    _emit(to_json(sol.to_dict()), cfg.output.get("json"))


def cmd_risk_curve(cfg: RunConfig, args):
    loss, noise, eng = cfg.loss_fn(), cfg.noise_law(), cfg.engine_obj()
    reg = cfg.reg_fn(required=True)
    signal = cfg.signal_law(required=True)
    if cfg.delta is None:
        raise ConfigError("missing 'delta'")
    pts = risk_curve(loss, reg, noise, signal, cfg.delta, cfg.lambda_list(), cfg.tol, eng)
    rows = [{"lambda": p.lam, "alpha": p.alpha, "status": p.status, "residual_max": p.residual_max} for p in pts]
    _emit(to_csv(rows, ["lambda", "alpha", "status", "residual_max"]), args.out or cfg.output.get("csv"))


def cmd_phase_diagram(cfg: RunConfig, args):
    loss = cfg.loss_fn(required=False) or abs_loss()
    if not cfg.s_grid:
        raise ConfigError("phase diagram needs a nonempty 's_grid'")
    if cfg.family not in ("gaussian", "cauchy"):
        raise ConfigError("family must be 'gaussian' or 'cauchy'")
    ex = cfg.experiment
    rows = experiments.phase_diagram(loss, cfg.s_grid, cfg.delta_list(), n=int(ex["n"] or 100),
                                     replicates=int(ex["replicates"]), family=cfg.family,
                                     master_seed=cfg.engine["master_seed"], engine=cfg.engine_obj(),
                                     relative=bool(cfg.delta_relative), workers=int(ex["workers"]))
    _emit(to_csv(rows), args.out or cfg.output.get("csv"))
    if any(math.isnan(r["empirical_recovery_freq"]) for r in rows):
        raise NumericalFailure("some phase-diagram cells failed")


SIM_COLUMNS = ["replicate", "n", "p", "delta", "lambda", "empirical_risk", "recovered",
               "kkt_certificate_norm", "iters"]


def _np_for(delta, ex):
    if ex["p"]:
        p = int(ex["p"])
        return int(round(delta * p)), p
    if ex["n"]:
        n = int(ex["n"])
        return n, max(1, int(round(n / delta)))
    raise ConfigError("experiment needs 'n' or 'p'")


def cmd_simulate(cfg: RunConfig, args):
    loss, noise = cfg.loss_fn(), cfg.noise_law()
    reg, signal = cfg.reg_fn(), cfg.signal_law()
    if reg is not None and signal is None:
        raise ConfigError("missing 'signal' law (a penalized problem needs the signal law X)")
    ex = cfg.experiment
    lams = list(cfg.lambda_list()) if reg is not None else [None]
    seed, reps, workers = cfg.engine["master_seed"], int(ex["replicates"]), int(ex["workers"])
    rows = []
    for i, delta in enumerate(cfg.delta_list()):
        n, p = _np_for(delta, ex)
        if reg is None and n < p:
            raise ConfigError("without a penalty every sampling ratio must be at least 1")
        for lam in lams:
            args_ = [(r, n, p, loss, reg, noise, signal, (seed, i), lam) for r in range(reps)]
            recs = sorted(experiments._map(run_replicate, args_, workers), key=lambda r: r.replicate)
            for rec in recs:
                rows.append({"replicate": rec.replicate, "n": rec.n, "p": rec.p, "delta": rec.delta,
                             "lambda": rec.lam, "empirical_risk": rec.empirical_risk, "recovered": rec.recovered,
                             "kkt_certificate_norm": rec.kkt_certificate_norm, "iters": rec.solver_iters})
    _emit(to_csv(rows, SIM_COLUMNS), args.out or cfg.output.get("csv"))


def cmd_statdim(cfg: RunConfig, args):
    h = cfg.loss_fn()
    law = cfg.point_law()
    m = int(args.m if args.m is not None else cfg.statdim["m"])
    k = int(args.samples if args.samples is not None else cfg.statdim["samples"])
    if m < 1 or k < 1:
        raise ConfigError("m and samples must be positive")
    est = statdim_fraction(h, law, m, k, seed=cfg.engine["master_seed"])
    _emit(to_json(est.to_dict()), cfg.output.get("json"))


def _figure_rows(name, cfg: RunConfig):
    eng, ex = cfg.engine_obj(), cfg.experiment
    seed, workers = cfg.engine["master_seed"], int(ex["workers"])
    reps = int(ex["replicates"]) if ex["p"] or ex["n"] else 0
    p = int(ex["p"]) if ex["p"] else None
    if name == "risk-compare":
        noise = cfg.noise_law(required=False) or MarginalLaw.sparse(0.1)
        deltas = cfg.delta_list() if (cfg.deltas or cfg.delta) else list(np.round(np.arange(1.25, 3.01, 0.25), 2))
        losses = None
        if cfg.loss is not None:
            losses = {str(cfg.loss_fn()): cfg.loss_fn()}
        return experiments.risk_compare(noise, deltas, losses, eng, cfg.tol, p, reps, seed, workers)
    if name == "perfect-recovery":
        loss = cfg.loss_fn(required=False) or abs_loss()
        s_grid = cfg.s_grid or [0.1, 0.2, 0.3, 0.4, 0.5]
        deltas = cfg.delta_list() if (cfg.deltas or cfg.delta) else [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0]
        return experiments.phase_diagram(loss, s_grid, deltas, int(ex["n"] or 100), int(ex["replicates"]),
                                         cfg.family, seed, eng, bool(cfg.delta_relative), workers)
    if name == "reg-phase-transition":
        loss = cfg.loss_fn(required=False) or abs_loss()
        reg = cfg.reg_fn() or abs_loss()
        noise = cfg.noise_law(required=False) or MarginalLaw.sparse(0.3)
        signal = cfg.signal_law() or MarginalLaw.sparse(0.1)
        deltas = cfg.delta_list() if (cfg.deltas or cfg.delta) else [0.7, 1.0, 1.3]
        relative = bool(cfg.delta_relative) or not (cfg.deltas or cfg.delta)
        if relative:
            dp = delta_perfect_reg(loss, reg, noise, signal, eng).delta_perfect
            deltas = [d * dp for d in deltas]
        return experiments.reg_phase_transition(loss, reg, noise, signal, deltas, cfg.lambda_list(), eng,
                                                cfg.tol, p, reps, seed, workers)
    if name == "reg-threshold":
        t_grid = cfg.t_grid or [0.2, 0.3, 0.5, 0.7, 1.0]
        s_grid = cfg.s_grid or list(np.round(np.arange(0.05, 0.96, 0.05), 2))
        return experiments.reg_threshold(t_grid, s_grid, cfg.loss_fn(required=False), cfg.reg_fn(), eng)
    raise ConfigError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")


def _plot(name, rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "mrisk"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    key = {"risk-compare": ("loss", "delta", "alpha_sq_theory"),
           "perfect-recovery": ("s", "delta", "empirical_recovery_freq"),
           "reg-phase-transition": ("delta", "lambda", "alpha_sq_theory"),
           "reg-threshold": ("t", "s", "inv_delta_perfect")}[name]
    group, x, y = key
    for g in dict.fromkeys(r[group] for r in rows):
        sub = [r for r in rows if r[group] == g]
        ax.plot([r[x] for r in sub], [r[y] for r in sub], marker="o", ms=3, label=f"{group}={_fmt(g)}")
    if name == "reg-phase-transition":
        ax.set_xscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_figures(cfg: RunConfig, args):
    name = args.figure or cfg.figure
    if not name:
        raise ConfigError(f"choose a figure: {', '.join(FIGURES)}")
    rows = _figure_rows(name, cfg)
    _emit(to_csv(rows), args.out or cfg.output.get("csv"))
    svg = args.svg or cfg.output.get("svg")
    if svg:
        _plot(name, rows, svg)


COMMANDS = {
    "threshold": cmd_threshold,
    "solve": cmd_solve,
    "risk-curve": cmd_risk_curve,
    "phase-diagram": cmd_phase_diagram,
    "simulate": cmd_simulate,
    "statdim": cmd_statdim,
    "figures": cmd_figures,
}


# --- argument parsing --------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (dotted, value parsed as YAML)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--loss", help="loss descriptor, e.g. abs or '{kind: huber, bend: 1}'")
    common.add_argument("--reg", help="penalty descriptor (includes its level as 'scale')")
    common.add_argument("--noise", help="noise law, e.g. sparse:0.1 or a YAML mapping")
    common.add_argument("--signal", help="signal law")
    common.add_argument("--delta", help="sampling ratio n/p (or a YAML list)")
    common.add_argument("--out", help="output file for CSV results (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mrisk", description="Exact asymptotics of convex M-estimators.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("threshold", parents=[common], help="perfect-recovery threshold (JSON)")
    p.add_argument("--j-csv", help="also write J(t) samples to this CSV")
    sub.add_parser("solve", parents=[common], help="solve the fixed-point system (JSON)")
    sub.add_parser("risk-curve", parents=[common], help="alpha along a penalty grid (CSV)")
    sub.add_parser("phase-diagram", parents=[common], help="recovery frequency on an (s, delta) grid (CSV)")
    sub.add_parser("simulate", parents=[common], help="finite-sample battery (CSV)")
    p = sub.add_parser("statdim", parents=[common], help="Monte Carlo statistical dimension (JSON)")
    p.add_argument("-m", type=int, help="ambient dimension")
    p.add_argument("--samples", type=int, help="number of Monte Carlo draws")
    p = sub.add_parser("figures", parents=[common], help="figure data (CSV, optional SVG)")
    p.add_argument("figure", nargs="?", choices=FIGURES)
    p.add_argument("--svg", help="also draw the figure to this SVG file (needs matplotlib)")
    return parser


def _flag_overrides(args):
    out = list(args.overrides)
    for key in ("loss", "reg", "noise", "signal"):
        v = getattr(args, key)
        if v is not None:
            out.append(f"{key}={v}")
    if args.delta is not None:
        parsed = yaml.safe_load(args.delta)
        out.append(f"{'deltas' if isinstance(parsed, list) else 'delta'}={args.delta}")
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config, _flag_overrides(args), args.seed)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidAssumption, DegenerateNoise, NotMinimizedAtZero, UnboundedFunctional,
            yaml.YAMLError, OSError) as exc:
        print(f"mrisk: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoConvergence, EstimatorNoConvergence, NumericalFailure, ArithmeticError) as exc:
        print(f"mrisk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"mrisk: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
