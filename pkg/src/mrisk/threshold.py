"""Perfect-recovery thresholds and explicit bounds on the limiting error.

The central object is ``J_f(t) = E[dist(G, t * subdiff f(W))^2]``. For an
interval ``[a, b]`` the Gaussian part is explicit:

    E[(G - b)_+^2] = (1 + b^2) Phi(-b) - b phi(b)
    E[(a - G)_+^2] = (1 + a^2) Phi(a) + a phi(a)

and the outer expectation over ``W`` runs through the expectation engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from ._optimize import bracket_convex_min, golden_section
from .marginals import ExpectationEngine, MarginalLaw
from .scalar_convex import ScalarConvexFunction

T_CAP = 1e8
BORDER = 1e-12
_DEFAULT_ENGINE = ExpectationEngine()


class DegenerateNoise(ValueError):
    """The noise law puts all its mass at zero."""


def _excess_sq(c):
    # E[(G - c)_+^2], written to stay accurate in both tails
    c = np.asarray(c, dtype=float)
    out = (1.0 + c * c) * norm.sf(c) - c * norm.pdf(c)
    return np.maximum(out, 0.0)


def interval_dist_sq(a, b):
    """E[dist(G, [a, b])^2] for G ~ N(0, 1)."""
    return _excess_sq(b) + _excess_sq(-np.asarray(a, dtype=float))


def _engine(engine):
    return _DEFAULT_ENGINE if engine is None else engine


def expected_dist_sq(t, f: ScalarConvexFunction, law: MarginalLaw, engine=None) -> float:
    """J_f(t) = E[dist(G, t * subdiff f(W))^2]."""
    t = float(t)
    if t < 0:
        raise ValueError("t must be nonnegative")

    def psi(w):
        sd = f.subdiff(w)
        return interval_dist_sq(t * sd.lo, t * sd.hi)

    bounded = bool(np.isfinite(f.lipschitz))
    return _engine(engine).expect_w(law, psi, kinks=f.breakpoints, bounded=bounded, with_error=False)


def _initial_slope(f: ScalarConvexFunction, law: MarginalLaw) -> float:
    # right derivative of J at 0: only atoms sitting on a kink contribute
    slope = 0.0
    for a, w in law.atoms:
        sd = f.subdiff(a)
        slope -= w * float(sd.hi - sd.lo) * math.sqrt(2.0 / math.pi)
    return slope


def minimize_j(f: ScalarConvexFunction, law: MarginalLaw, engine=None, rtol=1e-8):
    """Minimize the convex map ``t -> J_f(t)`` over ``t > 0``.

    Returns ``(t_star, j_min)``. When ``J`` is non-decreasing from the origin
    the infimum is the limit ``J(0+) = 1`` and ``t_star = 0``; when it keeps
    decreasing up to ``t = 1e8`` the report is ``t_star = inf`` with the value
    at the cap.
    """
    if _initial_slope(f, law) >= 0.0:
        return 0.0, 1.0

    def J(t):
        return expected_dist_sq(t, f, law, engine)

    hi, capped = bracket_convex_min(J, 1.0)
    if capped:
        return math.inf, J(T_CAP)
    t, j, _ = golden_section(J, 0.0, hi, rtol=rtol, atol=1e-14)
    return t, j


def _to_json_number(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class ThresholdReport:
    delta_perfect: float
    t_star: float
    j_loss_min: float
    j_reg_min: float | None = None
    s_star: float | None = None
    borderline: bool = False

    def to_dict(self):
        return {
            "delta_perfect": _to_json_number(self.delta_perfect),
            "t_star": _to_json_number(self.t_star),
            "j_loss_min": _to_json_number(self.j_loss_min),
            "j_reg_min": _to_json_number(self.j_reg_min),
            "s_star": _to_json_number(self.s_star),
            "borderline": self.borderline,
        }


def _loss_part(loss, noise_law, engine):
    if noise_law.prob_nonzero() == 0:
        raise DegenerateNoise("noise law has P(Z != 0) = 0; the threshold is undefined")
    t, j = minimize_j(loss, noise_law, engine)
    gap = 1.0 - j
    borderline = 0.0 < t and gap <= BORDER
    return t, j, gap, borderline


def delta_perfect_unreg(loss: ScalarConvexFunction, noise_law: MarginalLaw, engine=None) -> ThresholdReport:
    """Sampling ratio above which the unpenalized estimator recovers x0 exactly."""
    t, j, gap, borderline = _loss_part(loss, noise_law, engine)
    dp = math.inf if gap <= BORDER else 1.0 / gap
    return ThresholdReport(dp, t, j, borderline=borderline)


def delta_perfect_reg(loss, reg, noise_law, signal_law, engine=None) -> ThresholdReport:
    """Threshold ratio ``inf_s J_reg(s) / (1 - inf_t J_loss(t))_+``.

    It does not depend on a positive multiplier of ``reg``.
    """
    t, j, gap, borderline = _loss_part(loss, noise_law, engine)
    s, jr = minimize_j(reg, signal_law, engine)
    dp = math.inf if gap <= BORDER else jr / gap
    return ThresholdReport(dp, t, j, jr, s, borderline)


# --- recovery at a fixed penalty level ---------------------------------------

def _clip_moments(lo, hi):
    # e = E[G clip(G, lo, hi)] and q = E[clip(G, lo, hi)^2]
    Pl, Ph = norm.cdf(lo), norm.cdf(hi)
    pl, ph = norm.pdf(lo), norm.pdf(hi)
    e = Ph - Pl
    q = e - hi * ph + lo * pl + hi * hi * norm.sf(hi) + lo * lo * Pl
    return e, q


def projection_moments(t, loss, noise_law, engine=None):
    """Moments of the projection P of G onto t * subdiff loss(Z).

    Returns ``(E[G P], E[P^2])``. The ratio ``E[G P]^2 / E[P^2]`` is maximal
    at the minimizer of ``J_loss`` where it equals ``1 - inf J_loss``.
    """
    eng = _engine(engine)
    bounded = bool(np.isfinite(loss.lipschitz))

    def part(k):
        def psi(w):
            sd = loss.subdiff(w)
            return _clip_moments(t * sd.lo, t * sd.hi)[k]
        return eng.expect_w(noise_law, psi, kinks=loss.breakpoints, bounded=bounded, with_error=False)

    return part(0), part(1)


def recovery_margin(loss, reg, noise_law, signal_law, delta, engine=None, t_grid=None):
    """Largest value over t of ``delta e(t)^2/q(t) - J_reg(t / sqrt(delta q(t)))``.

    ``reg`` already includes its penalty level. A positive margin means the
    limiting error is exactly zero at this penalty level; a negative one
    means it is positive. Returns ``(margin, t_at_max)``.
    """
    if t_grid is None:
        t_grid = np.logspace(-3, 3, 61)

    def F(logt):
        t = math.exp(logt)
        e, q = projection_moments(t, loss, noise_law, engine)
        if q <= 0:
            return -math.inf
        s = t / math.sqrt(delta * q)
        return delta * e * e / q - expected_dist_sq(s, reg, signal_law, engine)

    logs = np.log(np.asarray(t_grid, dtype=float))
    vals = np.array([F(x) for x in logs])
    i = int(np.argmax(vals))
    a = logs[max(i - 1, 0)]
    b = logs[min(i + 1, len(logs) - 1)]
    x, negv, _ = golden_section(lambda z: -F(z), a, b, rtol=0.0, atol=1e-6)
    best, tbest = (-negv, math.exp(x)) if -negv > vals[i] else (vals[i], math.exp(logs[i]))
    return float(best), float(tbest)


# --- explicit upper bounds ---------------------------------------------------

def _gauss_tail_sq(m):
    # E[G^2 1{|G| > m}]^{1/2}
    return math.sqrt(2.0 * (m * norm.pdf(m) + norm.sf(m)))


def _tail_level(target):
    """Smallest m >= 0 with E[G^2 1{|G|>m}]^{1/2} <= target."""
    if target >= 1.0:
        return 0.0
    return brentq(lambda m: _gauss_tail_sq(m) - target, 0.0, 40.0, xtol=1e-14)


def coercive_constant_unreg(delta):
    """Constant used by the unpenalized bound; see :func:`alpha_upper_bound_unreg`."""
    if delta <= 1:
        raise ValueError("the unpenalized bound needs delta > 1")
    s = math.sqrt(1.0 - 1.0 / delta)
    C = norm.isf((1.0 - 1.0 / delta) / 8.0)  # P(|G| > C) = (1 - 1/delta) / 4
    Ct = 2.0 * C / s
    Cd = min(1.0, 1.0 / (2.0 * Ct), 3.0 / (4.0 * Ct * Ct))
    return Cd ** 4 * s / 32.0


def alpha_upper_bound_unreg(loss, noise_law, delta) -> float:
    """Explicit upper bound on the limiting error of the unpenalized estimator.

    ``(L / (a c)) q(c a^2 / L^2) + b / (a c)`` with ``L`` the Lipschitz
    constant, ``(a, b)`` the coercivity pair, ``q`` the tail quantile of
    ``|Z|`` and ``c`` an explicit (loose) function of ``delta``.
    """
    L = loss.lipschitz
    if not np.isfinite(L):
        return math.inf
    a, b = loss.coercivity
    c = coercive_constant_unreg(delta)
    return L / (a * c) * noise_law.quantile_abs(c * a * a / (L * L)) + b / (a * c)


def coercive_constant_reg(delta):
    """Constant used by the penalized bound; see :func:`alpha_upper_bound_reg`."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = math.sqrt(1.0 + 1.0 / delta)
    K1 = 4.0 * r * _tail_level(0.5 / r)
    m = _tail_level(0.25)
    mp = _tail_level(min(1.0, math.sqrt(delta) / 4.0)) / math.sqrt(delta)
    K2 = 8.0 * max(m, mp * mp)
    K = max(K1, K2)
    C = min(1.0, 1.0 / (2.0 * K), 1.0 / (8.0 * K * K))
    lo, hi = min(delta, 1.0), max(delta, 1.0)
    return min(lo * lo * C ** 4 / (36.0 * hi * hi), lo * C * C / (4.0 * hi))


def alpha_upper_bound_reg(loss, reg, noise_law, signal_law, delta) -> float:
    """Explicit upper bound on the limiting error of the penalized estimator.

    ``(b_l + b_r) / (c a) + (L_l + L_r) / (c a) * q(c a^2 / (L_l + L_r)^2)``
    with ``a = min(a_l, a_r)`` and ``q`` the sum of the tail quantiles of
    ``|Z|`` and ``|X|``.
    """
    Ll, Lr = loss.lipschitz, reg.lipschitz
    if not (np.isfinite(Ll) and np.isfinite(Lr)):
        return math.inf
    al, bl = loss.coercivity
    ar, br = reg.coercivity
    a = min(al, ar)
    Lam = Ll + Lr
    c = coercive_constant_reg(delta)
    x = c * a * a / (Lam * Lam)
    q = noise_law.quantile_abs(x) + signal_law.quantile_abs(x)
    return (bl + br) / (c * a) + Lam / (c * a) * q
