"""Distances to subdifferential cones and Monte Carlo statistical dimensions.

For a separable ``h`` the cone generated by ``subdiff h(w)`` is
``{t * s : t >= 0, s_i in [lo_i, hi_i]}`` and

    dist(g, cone)^2 = min_{t >= 0} sum_i (g_i - t hi_i)_+^2 + (t lo_i - g_i)_+^2,

a convex piecewise-quadratic function of ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._optimize import golden_section
from .marginals import MarginalLaw, sample
from .scalar_convex import ScalarConvexFunction


def _dist_sq_at(t, g, lo, hi):
    return float(np.sum(np.maximum(g - t * hi, 0.0) ** 2 + np.maximum(t * lo - g, 0.0) ** 2))


def dist_to_cone_sq(g, w, h: ScalarConvexFunction, rtol=1e-12) -> float:
    """Squared distance from ``g`` to the cone generated by ``subdiff h(w)``."""
    g = np.asarray(g, dtype=float)
    sd = h.subdiff(np.asarray(w, dtype=float))
    lo = np.broadcast_to(sd.lo, g.shape).astype(float)
    hi = np.broadcast_to(sd.hi, g.shape).astype(float)

    def f(t):
        return _dist_sq_at(t, g, lo, hi)

    f0 = float(g @ g)
    # every coordinate is inside its box once t exceeds the largest ratio
    ratios = np.concatenate([g[hi > 0] / hi[hi > 0], g[lo < 0] / lo[lo < 0]])
    T = max(1.0, float(np.max(np.abs(ratios))) if ratios.size else 1.0)
    while f(2 * T) < f(T) and T < 1e12:
        T *= 2.0
    t, v, _ = golden_section(f, 0.0, 2.0 * T, rtol=rtol, atol=1e-15)
    return min(v, f0, f(2.0 * T))


def dist_to_cone_sq_exact(g, w, h: ScalarConvexFunction) -> float:
    """Same quantity by exact minimization of the piecewise quadratic.

    Between consecutive breakpoints ``g_i/hi_i`` and ``g_i/lo_i`` the
    objective is a quadratic in ``t``; each piece is minimized in closed
    form. Used as an independent check on :func:`dist_to_cone_sq`.
    """
    g = np.asarray(g, dtype=float)
    sd = h.subdiff(np.asarray(w, dtype=float))
    lo = np.broadcast_to(sd.lo, g.shape).astype(float)
    hi = np.broadcast_to(sd.hi, g.shape).astype(float)
    bp = []
    for a, b in ((g, hi), (g, lo)):
        nz = b != 0
        r = a[nz] / b[nz]
        bp.append(r[r > 0])
    knots = np.unique(np.concatenate([[0.0]] + bp))
    knots = np.append(knots, knots[-1] * 2 + 1.0)
    best = float(g @ g)
    for a, b in zip(knots[:-1], knots[1:]):
        m = 0.5 * (a + b)
        # active sets are constant on (a, b); collect the quadratic
        up = g - m * hi > 0
        dn = m * lo - g > 0
        A2 = np.sum(hi[up] ** 2) + np.sum(lo[dn] ** 2)
        A1 = -2 * (np.sum(g[up] * hi[up]) + np.sum(g[dn] * lo[dn]))
        cands = [a, b]
        if A2 > 0:
            cands.append(min(max(-A1 / (2 * A2), a), b))
        best = min(best, *(_dist_sq_at(t, g, lo, hi) for t in cands))
    return best


@dataclass
class StatDimEstimate:
    m: int
    mean_dist_sq: float
    statdim_fraction: float
    std_error: float
    samples: int

    def to_dict(self):
        return {"m": self.m, "samples": self.samples, "mean_dist_sq": self.mean_dist_sq,
                "statdim_fraction": self.statdim_fraction, "std_error": self.std_error}


def statdim_fraction(h: ScalarConvexFunction, law: MarginalLaw, m: int, n_mc: int, seed=0) -> StatDimEstimate:
    """Monte Carlo estimate of ``statdim(cone(subdiff h(w))) / m``.

    Each draw takes fresh ``(g, w)`` with ``g ~ N(0, I_m)`` and ``w`` iid
    from ``law``. The standard error is that of the fraction.
    """
    if m < 1 or n_mc < 1:
        raise ValueError("m and n_mc must be positive")
    base = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    vals = np.empty(n_mc)
    for k in range(n_mc):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(base + [k, 0])))
        g = rng.standard_normal(m)
        w = sample(law, m, base + [k, 1])
        vals[k] = dist_to_cone_sq(g, w, h) / m
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return StatDimEstimate(m, mean * m, 1.0 - mean, se, n_mc)
