"""Grid sweeps behind the command-line figures.

Each sweep returns a list of flat row dicts in grid order, so the CSV
writer in :mod:`mrisk.cli` can emit them deterministically. Replicates
are seeded by ``(master_seed, cell, replicate)`` and can run in a process
pool; results are sorted by replicate index before any reduction.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .finite_sample import certify_perfect_recovery_unreg, generate, run_replicate
from .marginals import MarginalLaw
from .scalar_convex import ScalarConvexFunction, abs_loss, huber
from .system_solver import NoConvergence, risk_curve, solve_unreg
from .threshold import delta_perfect_reg, delta_perfect_unreg

log = logging.getLogger(__name__)


def _map(fn, args, workers):
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


def _recovered_unreg(n, p, loss, law, seed):
    inst = generate(n, p, law, seed=seed)
    return bool(certify_perfect_recovery_unreg(inst, loss)[0])


def phase_diagram(loss: ScalarConvexFunction, s_grid, delta_grid, n=100, replicates=50, family="cauchy",
                  master_seed=0, engine=None, relative=False, workers=1):
    """Empirical exact-recovery frequency on an ``(s, delta)`` grid.

    Noise is ``(1 - s) delta_0 + s * family(0, 1)``; ``n`` is fixed and
    ``p = round(n / delta)``. With ``relative`` the delta grid is read as
    multiples of the predicted threshold at each ``s``. Recovery is decided
    by the exact optimality certificate. A failing cell is logged and
    reported with a missing frequency.
    """
    if not len(s_grid) or not len(delta_grid):
        raise ValueError("grids must be nonempty")
    rows = []
    for i, s in enumerate(s_grid):
        law = MarginalLaw.sparse(s, family)
        dp = delta_perfect_unreg(loss, law, engine).delta_perfect
        for j, d in enumerate(delta_grid):
            delta = d * dp if relative else d
            row = {"s": s, "delta": delta, "predicted_boundary": dp, "empirical_recovery_freq": math.nan}
            try:
                if not math.isfinite(delta):
                    raise ValueError("sampling ratio is not finite")
                p = max(1, int(round(n / delta)))
                args = [(n, p, loss, law, (master_seed, i, j, r)) for r in range(replicates)]
                hits = _map(_recovered_unreg, args, workers)
                row["empirical_recovery_freq"] = float(np.mean(hits))
            except (ValueError, ArithmeticError, NoConvergence) as exc:
                log.warning("cell s=%g delta=%g failed: %s", s, delta, exc)
            rows.append(row)
    return rows


def risk_compare(noise: MarginalLaw, deltas, losses=None, engine=None, tol=1e-6, p=None, replicates=0,
                 master_seed=0, workers=1):
    """Limiting ``alpha*^2`` against ``delta`` for several losses.

    ``losses`` maps a label to a loss; the default pair is L1 and Huber.
    When ``p`` and ``replicates`` are given, the mean empirical risk over
    that many instances with ``n = round(delta p)`` is added.
    """
    losses = {"L1": abs_loss(), "Huber": huber()} if losses is None else losses
    rows = []
    for k, (name, loss) in enumerate(losses.items()):
        for j, delta in enumerate(deltas):
            row = {"loss": name, "delta": delta, "alpha_sq_theory": math.nan, "status": "Failed",
                   "empirical_mean": math.nan, "empirical_se": math.nan}
            try:
                sol = solve_unreg(loss, noise, delta, tol, engine)
                row["alpha_sq_theory"], row["status"] = sol.alpha ** 2, sol.status
            except (NoConvergence, ValueError) as exc:
                log.warning("solve failed for %s at delta=%g: %s", name, delta, exc)
            if p and replicates:
                n = int(round(delta * p))
                args = [(r, n, p, loss, None, noise, None, (master_seed, k, j)) for r in range(replicates)]
                recs = sorted(_map(run_replicate, args, workers), key=lambda r: r.replicate)
                row["empirical_mean"], row["empirical_se"] = _mean_se([r.empirical_risk for r in recs])
            rows.append(row)
    return rows


def reg_phase_transition(loss, reg, noise, signal, deltas, lam_grid, engine=None, tol=1e-6, p=None,
                         replicates=0, master_seed=0, workers=1):
    """Limiting ``alpha*(lam)^2`` along a penalty grid, for each ``delta``."""
    rows = []
    for j, delta in enumerate(deltas):
        pts = risk_curve(loss, reg, noise, signal, delta, lam_grid, tol, engine)
        for k, pt in enumerate(pts):
            row = {"delta": delta, "lambda": pt.lam, "alpha_sq_theory": pt.alpha ** 2, "status": pt.status,
                   "empirical_mean": math.nan, "empirical_se": math.nan}
            if p and replicates:
                n = int(round(delta * p))
                args = [(r, n, p, loss, reg, noise, signal, (master_seed, j), pt.lam) for r in range(replicates)]
                recs = sorted(_map(run_replicate, args, workers), key=lambda r: r.replicate)
                row["empirical_mean"], row["empirical_se"] = _mean_se([r.empirical_risk for r in recs])
            rows.append(row)
    return rows


def reg_threshold(t_grid, s_grid, loss=None, reg=None, engine=None):
    """``1 / delta_perfect`` for sparse Gaussian noise (level ``t``) and signal (level ``s``)."""
    loss = abs_loss() if loss is None else loss
    reg = abs_loss() if reg is None else reg
    rows = []
    for t in t_grid:
        noise = MarginalLaw.sparse(t)
        for s in s_grid:
            rep = delta_perfect_reg(loss, reg, noise, MarginalLaw.sparse(s), engine)
            dp = rep.delta_perfect
            rows.append({"t": t, "s": s, "delta_perfect": dp, "inv_delta_perfect": 1.0 / dp if dp > 0 else math.inf})
    return rows
