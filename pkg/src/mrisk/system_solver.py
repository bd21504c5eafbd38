"""Solvers for the low-dimensional fixed-point systems.

Unpenalized problem, unknowns ``(alpha, kappa)`` with ``u = alpha*G + Z`` and
``r = u - prox[kappa*loss](u)``::

    alpha^2 = delta * E[r^2]
    alpha   = delta * E[r G]

Penalized problem, unknowns ``(alpha, beta, kappa, nu)`` with
``w = prox[reg/nu](beta*H/nu + X) - X``::

    alpha^2             = E[w^2]
    beta^2 kappa^2/delta = E[r^2]
    nu alpha kappa/delta = E[G r]
    kappa beta          = E[H w]

The unpenalized solve goes through the convex potential
``M(alpha) = sup_b L(alpha, alpha/b) - alpha*b/(2 delta)`` with
``L(c, tau) = E[env(cG + Z; tau) - loss(Z)]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, root

from ._optimize import golden_section
from .marginals import ExpectationEngine, MarginalLaw, UnboundedFunctional
from .scalar_convex import ScalarConvexFunction
from .threshold import delta_perfect_unreg, recovery_margin

DEFAULT_TOL = 1e-6


class NoConvergence(RuntimeError):
    """The solver stopped without certifying its residuals."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class InvalidAssumption(ValueError):
    """The inputs violate a standing assumption of the characterization."""


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


@dataclass
class SystemSolution:
    alpha: float
    kappa: float | None
    beta: float | None = None
    nu: float | None = None
    residuals: list = field(default_factory=list)
    iterations: int = 0
    status: str = "Converged"
    residual_error: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def residual_max(self):
        return max((abs(r) for r in self.residuals), default=0.0)

    def to_dict(self):
        return {
            "status": self.status,
            "alpha": _num(self.alpha),
            "kappa": _num(self.kappa),
            "beta": _num(self.beta),
            "nu": _num(self.nu),
            "residuals": [_num(r) for r in self.residuals],
            "residual_max": _num(self.residual_max),
            "residual_error": _num(self.residual_error),
            "iterations": int(self.iterations),
            "diagnostics": {k: _num(v) if isinstance(v, float) else v for k, v in self.diagnostics.items()},
        }


def _engine(engine):
    return ExpectationEngine() if engine is None else engine


def _bounded(f):
    return bool(np.isfinite(f.lipschitz))


# --- noise-side moments -------------------------------------------------------

def noise_moments(loss, noise_law, alpha, kappa, engine, with_error=False):
    """(E[r^2], E[G r]) for ``r = u - prox[kappa loss](u)``, ``u = alpha G + Z``."""
    kinks = loss.prox_kinks(kappa)

    def r(g, w):
        u = alpha * g + w
        return u - loss.prox(u, kappa)

    def phi(g, w):
        v = r(g, w)
        return v * v, g * v

    try:
        m2, mg = engine.expect_gw(noise_law, phi, alpha=alpha, kinks=kinks,
                                  bounded=_bounded(loss), with_error=with_error)
    except UnboundedFunctional as exc:
        raise InvalidAssumption(f"{loss} is not Lipschitz, so heavy-tailed noise gives an unbounded risk") from exc
    return m2, mg


def signal_moments(reg, signal_law, alpha_s, nu, engine, with_error=False):
    """(E[w^2], E[H w]) for ``w = prox[reg/nu](alpha_s H + X) - X``."""
    tau = 1.0 / nu
    kinks = reg.prox_kinks(tau)

    def phi(h, x):
        p = reg.prox(alpha_s * h + x, tau)
        v = p - x
        # E[H X] = 0, so E[H w] = E[H prox]; avoids cancellation when prox ~ 0
        return v * v, h * p

    try:
        m2, mh = engine.expect_gw(signal_law, phi, alpha=alpha_s, kinks=kinks,
                                  bounded=_bounded(reg), with_error=with_error)
    except UnboundedFunctional as exc:
        raise InvalidAssumption(f"{reg} is not Lipschitz, so a heavy-tailed signal is not supported") from exc
    return m2, mh


def envelope_gap(f, law, c, tau, engine):
    """E[env_f(cG + W; tau) - f(W)]."""
    return engine.expect_gw(
        law, lambda g, w: f.moreau_env(c * g + w, tau), alpha=c, kinks=f.prox_kinks(tau),
        bounded=_bounded(f), center=f.value, center_kinks=f.breakpoints, with_error=False)


# --- unpenalized potential ----------------------------------------------------

def _inner_b(alpha, loss, noise_law, delta, engine):
    """Maximizer b of the inner concave problem, found as the root of its slope.

    The slope in b is ``E[r^2]/(2 alpha) - alpha/(2 delta)`` with
    ``kappa = alpha/b``; it decreases in b from a positive to a negative value.
    """
    target = alpha * alpha / delta

    def s(logb):
        m2, _ = noise_moments(loss, noise_law, alpha, alpha / math.exp(logb), engine)
        return m2 - target

    lo, hi = -1.0, 1.0
    slo, shi = s(lo), s(hi)
    n = 0
    while slo <= 0 and n < 80:
        hi, shi = lo, slo
        lo -= 2.0
        slo = s(lo)
        n += 1
    while shi >= 0 and n < 160:
        lo, slo = hi, shi
        hi += 2.0
        shi = s(hi)
        n += 1
    if not (slo > 0 > shi):
        raise NoConvergence(f"could not bracket the inner maximizer at alpha={alpha}")
    lb = brentq(s, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
    return math.exp(lb)


def potential_unreg(alpha, loss, noise_law, delta, engine=None, return_b=False):
    """Convex potential whose minimizer is the limiting error; ``M(0) = 0``."""
    if delta <= 1:
        raise ValueError("the unpenalized potential needs delta > 1")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        return (0.0, math.inf) if return_b else 0.0
    eng = _engine(engine)
    b = _inner_b(alpha, loss, noise_law, delta, eng)
    val = envelope_gap(loss, noise_law, alpha, alpha / b, eng) - alpha * b / (2.0 * delta)
    return (val, b) if return_b else val


def potential_slope(alpha, loss, noise_law, delta, engine=None):
    """Sign-carrying part ``E[r G] - alpha/delta`` of the potential's derivative.

    The derivative itself is ``(b/alpha)`` times this quantity, evaluated at
    the inner maximizer ``b``.
    """
    eng = _engine(engine)
    b = _inner_b(alpha, loss, noise_law, delta, eng)
    _, mg = noise_moments(loss, noise_law, alpha, alpha / b, eng)
    return mg - alpha / delta


def residuals_unreg(alpha, kappa, loss, noise_law, delta, engine):
    """Relative residuals of both equations and the attached quadrature/MC error."""
    (m2, e2), (mg, eg) = noise_moments(loss, noise_law, alpha, kappa, engine, with_error=True)
    res = [(delta * m2 - alpha * alpha) / (alpha * alpha), (delta * mg - alpha) / alpha]
    err = max(delta * e2 / (alpha * alpha), delta * eg / alpha)
    return res, err


def _certify(res, err, tol, heavy):
    # Monte Carlo error can only be reduced by sampling more, so it widens
    # the acceptance band on the Monte Carlo path; quadrature error never does
    return max(abs(r) for r in res) <= (max(tol, err) if heavy else tol)


def solve_unreg(loss: ScalarConvexFunction, noise_law: MarginalLaw, delta: float,
                tol: float = DEFAULT_TOL, engine=None) -> SystemSolution:
    """Limiting error of the unpenalized M-estimator at sampling ratio ``delta``."""
    if delta <= 1:
        raise ValueError("delta must exceed 1 without a penalty")
    eng = _engine(engine)
    report = delta_perfect_unreg(loss, noise_law, eng)
    if delta >= report.delta_perfect:
        eps = 1e-6
        slope0 = potential_slope(eps, loss, noise_law, delta, eng)
        return SystemSolution(0.0, None, residuals=[0.0, 0.0], status="AtZero",
                              diagnostics={"delta_perfect": report.delta_perfect,
                                           "slope_near_zero": slope0,
                                           "slope_confirms": bool(slope0 >= -1e-9)})

    def D(a):
        return potential_slope(a, loss, noise_law, delta, eng)

    # bracket the sign change of the potential's derivative
    lo, hi = 1.0, 1.0
    dlo = D(lo)
    if dlo < 0:
        dhi = dlo
        while dhi < 0:
            lo, hi = hi, 2.0 * hi
            dhi = D(hi)
            if hi > 1e12:
                raise NoConvergence("potential keeps decreasing; alpha appears unbounded")
    else:
        while dlo >= 0:
            hi, lo = lo, 0.5 * lo
            dlo = D(lo)
            if lo < 1e-12:
                raise NoConvergence("no positive minimizer found below the threshold")

    def M(a):
        return potential_unreg(a, loss, noise_law, delta, eng)

    a0, _, evals = golden_section(M, lo, hi, rtol=1e-3)
    b0 = _inner_b(a0, loss, noise_law, delta, eng)

    def F(x):
        a, k = math.exp(x[0]), math.exp(x[1])
        m2, mg = noise_moments(loss, noise_law, a, k, eng)
        return [(delta * m2 - a * a) / (a * a), (delta * mg - a) / a]

    sol = root(F, [math.log(a0), math.log(a0 / b0)], method="hybr", options={"xtol": 1e-13})
    iters = evals + int(sol.nfev)
    if sol.success and max(abs(v) for v in sol.fun) < tol * 1e-2:
        alpha, kappa = math.exp(sol.x[0]), math.exp(sol.x[1])
    else:
        alpha = brentq(D, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        kappa = alpha / _inner_b(alpha, loss, noise_law, delta, eng)
        iters += 60
    res, err = residuals_unreg(alpha, kappa, loss, noise_law, delta, eng.with_seed(eng.master_seed + 1))
    heavy = noise_law.heavy_tailed and eng.cauchy_method == "mc"
    status = "Converged" if _certify(res, err, tol, heavy) else "MaxIter"
    out = SystemSolution(alpha, kappa, residuals=res, iterations=iters, status=status,
                         residual_error=err, diagnostics={"delta_perfect": report.delta_perfect})
    if status != "Converged":
        raise NoConvergence(f"residuals {res} exceed tolerance {tol}", out)
    return out


# --- penalized system ----------------------------------------------------------

def _reduced(alpha, kappa, loss, reg, noise_law, signal_law, delta, engine, with_error=False):
    """Given (alpha, kappa), solve equations 2 and 3 for (beta, nu) and evaluate 1 and 4."""
    m2, mg = noise_moments(loss, noise_law, alpha, kappa, engine, with_error)
    v2, vg = (m2.value, mg.value) if with_error else (m2, mg)
    beta = math.sqrt(max(delta * v2, 0.0)) / kappa
    nu = delta * vg / (alpha * kappa) if alpha * kappa > 0 else math.inf
    if not (0 < beta < np.inf and 0 < nu < np.inf):
        raise NoConvergence(f"degenerate iterate alpha={alpha}, kappa={kappa}")
    w2, wh = signal_moments(reg, signal_law, beta / nu, nu, engine, with_error)
    return beta, nu, (m2, mg, w2, wh)


def residuals_reg(alpha, beta, kappa, nu, loss, reg, noise_law, signal_law, delta, engine):
    """Relative residuals of the four equations, plus the attached error."""
    (m2, e2), (mg, eg) = noise_moments(loss, noise_law, alpha, kappa, engine, with_error=True)
    (w2, f2), (wh, fh) = signal_moments(reg, signal_law, beta / nu, nu, engine, with_error=True)
    lhs = [alpha * alpha, beta * beta * kappa * kappa / delta, nu * alpha * kappa / delta, kappa * beta]
    rhs = [w2, m2, mg, wh]
    errs = [f2, e2, eg, fh]
    res = [(r - l) / l for l, r in zip(lhs, rhs)]
    err = max(e / l for e, l in zip(errs, lhs))
    return res, err


def potential_reg_value(sol: SystemSolution, loss, reg, noise_law, signal_law, delta, engine=None):
    """Saddle objective evaluated at a solved point (diagnostic only)."""
    eng = _engine(engine)
    a, b, k, n = sol.alpha, sol.beta, sol.kappa, sol.nu
    tg, th = k * b, n * a
    Lv = envelope_gap(loss, noise_law, a, tg / b, eng)
    Rv = envelope_gap(reg, signal_law, a * b / th, a / th, eng)
    return b * tg / 2 + delta * Lv - a * th / 2 - a * b * b / (2 * th) + Rv


def check_reg_assumptions(loss, reg, noise_law, signal_law):
    if noise_law.prob_nonzero() == 0:
        raise InvalidAssumption("penalized characterization needs P(Z != 0) > 0")
    if not reg.differentiable:
        if not signal_law.has_continuous:
            raise InvalidAssumption(
                "a penalty with kinks needs an unbounded signal law (a continuous component)")


def solve_reg(loss, reg, noise_law, signal_law, delta, tol=DEFAULT_TOL, engine=None,
              init=None, max_iter=200, recovery=None) -> SystemSolution:
    """Limiting error of the penalized M-estimator; ``reg`` includes its level.

    Parameters
    ----------
    init : tuple, optional
        Starting ``(alpha, kappa)``. Tried first, followed by
        ``(sqrt(E[X^2]), 1)`` and two starts scaled by the penalty level.
    recovery : tuple, optional
        Precomputed ``recovery_margin`` output, to skip the exact-recovery test.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    check_reg_assumptions(loss, reg, noise_law, signal_law)
    eng = _engine(engine)
    margin, tm = recovery if recovery is not None else recovery_margin(
        loss, reg, noise_law, signal_law, delta, eng)
    if margin > 0:
        return SystemSolution(0.0, None, None, None, residuals=[0.0] * 4, status="AtZero",
                              diagnostics={"recovery_margin": margin, "t_at_margin": tm})

    m = signal_law.second_moment()
    a0 = math.sqrt(m) if 0 < m < np.inf else 1.0
    lam = reg.scale
    starts = [] if init is None else [tuple(init)]
    starts += [(a0, 1.0), (a0, 1.0 / lam), (a0, lam)]
    best = None
    for start in starts:
        try:
            out = _solve_reg_from(start, loss, reg, noise_law, signal_law, delta, tol, eng, max_iter)
        except (NoConvergence, ValueError, OverflowError, ZeroDivisionError) as exc:
            cand = getattr(exc, "solution", None)
            if cand is not None and (best is None or cand.residual_max < best.residual_max):
                best = cand
            continue
        out.diagnostics["recovery_margin"] = margin
        out.diagnostics["start"] = list(start)
        return out
    raise NoConvergence(f"no start reached tolerance {tol}", best)


def _solve_reg_from(init, loss, reg, noise_law, signal_law, delta, tol, eng, max_iter):
    x = np.log(np.asarray(init, dtype=float))

    def F(xx):
        a, k = math.exp(xx[0]), math.exp(xx[1])
        beta, nu, (_, _, w2, wh) = _reduced(a, k, loss, reg, noise_law, signal_law, delta, eng)
        return np.array([(w2 - a * a) / (a * a), (wh - k * beta) / (k * beta)]), (beta, w2, wh)

    def fp(xx):
        res, (beta, w2, wh) = F(xx)
        return np.array([0.5 * math.log(w2), math.log(wh / beta)]), res

    # damped fixed point with backtracking, then a Newton-type polish
    theta, iters = 1.0, 0
    target, res = fp(x)
    norm_res = np.max(np.abs(res))
    while iters < max_iter and norm_res > 1e-3:
        cand = (1 - theta) * x + theta * target
        try:
            tc, rc = fp(cand)
            nc = np.max(np.abs(rc))
        except (NoConvergence, ValueError, OverflowError, ZeroDivisionError):
            nc = np.inf
        iters += 1
        if nc < norm_res:
            x, target, res, norm_res = cand, tc, rc, nc
            theta = min(1.0, 2.0 * theta)
        else:
            theta *= 0.5
            if theta < 1.0 / 64:
                break

    def G(xx):
        try:
            return F(xx)[0]
        except (NoConvergence, ValueError, OverflowError, ZeroDivisionError):
            return np.array([1e6, 1e6])

    sol = root(G, x, method="hybr", options={"xtol": 1e-13})
    iters += int(sol.nfev)
    if np.max(np.abs(sol.fun)) < norm_res:
        x = sol.x
    alpha, kappa = math.exp(x[0]), math.exp(x[1])
    beta, nu, _ = _reduced(alpha, kappa, loss, reg, noise_law, signal_law, delta, eng)
    res4, err = residuals_reg(alpha, beta, kappa, nu, loss, reg, noise_law, signal_law, delta,
                              eng.with_seed(eng.master_seed + 1))
    heavy = (noise_law.heavy_tailed or signal_law.heavy_tailed) and eng.cauchy_method == "mc"
    status = "Converged" if _certify(res4, err, tol, heavy) else "MaxIter"
    out = SystemSolution(alpha, kappa, beta, nu, residuals=[float(r) for r in res4], iterations=iters,
                         status=status, residual_error=float(err))
    if status != "Converged":
        raise NoConvergence(f"residuals {res4} exceed tolerance {tol}", out)
    return out


@dataclass
class RiskPoint:
    lam: float
    alpha: float
    status: str
    residual_max: float
    solution: SystemSolution | None = None
    error: str | None = None


def risk_curve(loss, reg, noise_law, signal_law, delta, lam_grid, tol=DEFAULT_TOL, engine=None):
    """Solve the penalized system along a sorted grid of penalty levels.

    ``reg`` is the unit-level penalty; each point uses ``reg.scaled(lam)``.
    Solver failures are recorded per point without stopping the sweep.
    """
    lam_grid = np.asarray(lam_grid, dtype=float)
    if np.any(lam_grid <= 0) or np.any(np.diff(lam_grid) < 0):
        raise ValueError("penalty grid must be positive and sorted")
    eng = _engine(engine)
    out, warm = [], None
    for lam in lam_grid:
        try:
            s = solve_reg(loss, reg.scaled(lam), noise_law, signal_law, delta, tol, eng, init=warm)
            if s.status == "Converged":
                warm = (s.alpha, s.kappa)
            out.append(RiskPoint(float(lam), s.alpha, s.status, s.residual_max, s))
        except NoConvergence as exc:
            s = exc.solution
            out.append(RiskPoint(float(lam), s.alpha if s else math.nan, "MaxIter",
                                 s.residual_max if s else math.nan, s, str(exc)))
        except (InvalidAssumption, ValueError) as exc:
            out.append(RiskPoint(float(lam), math.nan, "Failed", math.nan, None, str(exc)))
    return out
