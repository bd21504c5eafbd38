"""Finite-sample experiments: instances, estimators, risk and exact-recovery checks.

The design has iid ``N(0, 1/p)`` entries and ``y = A x0 + z``. Estimators
minimize ``sum_i loss(y_i - a_i.x) + sum_j reg(x_j)``:

* when both terms are polyhedral (absolute value, quantile, or absent) the
  problem is a linear program, solved exactly with HiGHS;
* otherwise graph-projection ADMM is used, with both blocks handled by their
  closed-form prox and a cached factorization for the projection.

Exact recovery of ``x0`` is certified from the optimality conditions
``0 in A^T subdiff loss(z)`` (no penalty) or
``A^T subdiff loss(z) meets lam * subdiff reg(x0)`` (penalty), which are
bound-constrained least-squares problems.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog, lsq_linear

from .marginals import MarginalLaw, sample
from .scalar_convex import ScalarConvexFunction

Z_CAP = 1e12


class NoConvergence(RuntimeError):
    """The estimator solver stopped before reaching its tolerance."""


@dataclass
class ProblemInstance:
    A: np.ndarray
    x0: np.ndarray
    z: np.ndarray
    y: np.ndarray
    seed: object
    capped: bool = False

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.A.shape[1]

    @property
    def delta(self):
        return self.n / self.p


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _seed_list(seed):
    return list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]


def generate(n, p, noise_law: MarginalLaw, signal_law: MarginalLaw | None = None, seed=0) -> ProblemInstance:
    """Draw ``(A, x0, z)`` deterministically from ``seed``.

    ``signal_law`` defaults to ``N(0, 1)``; without a penalty the error of
    the estimator does not depend on ``x0``.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    base = _seed_list(seed)
    A = _rng(base + [0]).standard_normal((n, p)) / math.sqrt(p)
    signal_law = MarginalLaw.normal() if signal_law is None else signal_law
    x0 = sample(signal_law, p, base + [1])
    z = sample(noise_law, n, base + [2])
    capped = bool(np.any(np.abs(z) > Z_CAP))
    z = np.clip(z, -Z_CAP, Z_CAP)
    return ProblemInstance(A, x0, z, A @ x0 + z, seed, capped)


def empirical_risk(inst: ProblemInstance, x_hat) -> float:
    d = np.asarray(x_hat) - inst.x0
    return float(d @ d / inst.p)


@dataclass
class Fit:
    x: np.ndarray
    method: str
    iterations: int
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    history: list = field(default_factory=list, repr=False)


def _lp_weights(f):
    # f(t) = wp * t_+ + wm * t_- for the polyhedral builtins
    if f.kind == "abs":
        return f.scale, f.scale
    return f.scale * f.q, f.scale * (1.0 - f.q)


def _solve_lp(inst, loss, reg):
    n, p = inst.A.shape
    lp, lm = _lp_weights(loss)
    # variables: x+ , x- (or free x), r+, r-
    if reg is None:
        c = np.concatenate([np.zeros(p), np.full(n, lp), np.full(n, lm)])
        Aeq = sparse.hstack([sparse.csr_matrix(inst.A), sparse.identity(n), -sparse.identity(n)])
        bounds = [(None, None)] * p + [(0, None)] * (2 * n)
    else:
        rp, rm = _lp_weights(reg)
        c = np.concatenate([np.full(p, rp), np.full(p, rm), np.full(n, lp), np.full(n, lm)])
        As = sparse.csr_matrix(inst.A)
        Aeq = sparse.hstack([As, -As, sparse.identity(n), -sparse.identity(n)])
        bounds = [(0, None)] * (2 * p + 2 * n)
    Aeq = Aeq.tocsc()
    opts = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    res = linprog(c, A_eq=Aeq, b_eq=inst.y, bounds=bounds, method="highs", options=opts)
    if res.status == 4:
        # the simplex path occasionally stalls at these tolerances; the interior-point path does not
        res = linprog(c, A_eq=Aeq, b_eq=inst.y, bounds=bounds, method="highs-ipm", options=opts)
    if res.status != 0:
        raise NoConvergence(f"linear program failed: {res.message}")
    x = res.x[:p] if reg is None else res.x[:p] - res.x[p:2 * p]
    return Fit(x, "lp", int(getattr(res, "nit", 0)))


class _GraphProjector:
    """Projection onto {(x, v): v = A x} with one cached factorization."""

    def __init__(self, A):
        self.A = A
        n, p = A.shape
        self.wide = n < p
        M = A @ A.T if self.wide else A.T @ A
        M[np.diag_indices_from(M)] += 1.0
        self.chol = cho_factor(M)

    def __call__(self, c, d):
        A = self.A
        rhs = c + A.T @ d
        if self.wide:
            # (I + A^T A)^{-1} = I - A^T (I + A A^T)^{-1} A
            x = rhs - A.T @ cho_solve(self.chol, A @ rhs)
        else:
            x = cho_solve(self.chol, rhs)
        return x, A @ x


def _solve_admm(inst, loss, reg, tol, max_iter, rho, adaptive, keep_history):
    A, y = inst.A, inst.y
    n, p = A.shape
    proj = _GraphProjector(A)
    x = np.zeros(p)
    v = np.zeros(n)  # v = A x
    ux = np.zeros(p)
    uv = np.zeros(n)
    hist = []
    for k in range(1, max_iter + 1):
        # prox steps; v-block is loss(y - v), whose prox is y - prox_loss(y - .)
        a = x - ux
        xh = a if reg is None else reg.prox(a, 1.0 / rho)
        b = v - uv
        vh = y - loss.prox(y - b, 1.0 / rho)
        x_old, v_old = x, v
        x, v = proj(xh + ux, vh + uv)
        ux = ux + xh - x
        uv = uv + vh - v
        r = math.sqrt(np.sum((xh - x) ** 2) + np.sum((vh - v) ** 2))
        s = rho * math.sqrt(np.sum((x - x_old) ** 2) + np.sum((v - v_old) ** 2))
        if keep_history:
            hist.append((x.copy(), v.copy(), ux.copy(), uv.copy(), rho))
        scale = math.sqrt(p + n)
        eps_p = tol * (scale + max(np.linalg.norm(x), np.linalg.norm(v)))
        eps_d = tol * (scale + rho * math.sqrt(ux @ ux + uv @ uv))
        if r <= eps_p and s <= eps_d:
            return Fit(x, "admm", k, r, s, hist)
        # rebalance on a geometric schedule (k = 10, 20, 40, ...) so rho is eventually fixed
        if adaptive and k % 10 == 0 and (k // 10) & (k // 10 - 1) == 0:
            if r > 10.0 * s:
                rho *= 2.0
                ux, uv = ux / 2.0, uv / 2.0
            elif s > 10.0 * r:
                rho /= 2.0
                ux, uv = ux * 2.0, uv * 2.0
    raise NoConvergence(f"ADMM stopped after {max_iter} iterations (primal {r:.3g}, dual {s:.3g})")


def solve_mestimator(inst: ProblemInstance, loss: ScalarConvexFunction, reg: ScalarConvexFunction | None = None,
                     tol=1e-8, method="auto", max_iter=20000, rho=1.0, adaptive_rho=True,
                     keep_history=False, candidate=None) -> Fit:
    """Minimize ``sum loss(y - A x) + sum reg(x)``.

    ``method`` is ``"lp"``, ``"admm"`` or ``"auto"`` (LP when both terms are
    polyhedral). If ``candidate`` is given and the optimality conditions at
    it hold (a bound-constrained least-squares certificate), it is returned
    directly with method ``"certified"``; only candidates with
    ``y - A x = z`` are supported, which is the case for ``x0``.
    """
    if reg is None and inst.n < inst.p:
        raise ValueError("without a penalty the problem needs n >= p to be coercive")
    if candidate is not None:
        if not np.allclose(inst.y - inst.A @ candidate, inst.z, rtol=0, atol=1e-9 * (1 + np.abs(inst.z).max())):
            raise ValueError("candidate must reproduce the noise vector")
        if reg is None:
            ok, _ = certify_perfect_recovery_unreg(inst, loss)
        else:
            ok = kkt_reg_norm(inst, loss, reg, 1.0) <= kkt_tolerance(inst)
        if ok:
            return Fit(np.array(candidate, dtype=float), "certified", 0)
    polyhedral = loss.polyhedral and (reg is None or reg.polyhedral)
    if method == "auto":
        method = "lp" if polyhedral else "admm"
    if method == "lp":
        if not polyhedral:
            raise ValueError("the LP route needs absolute-value or quantile terms")
        return _solve_lp(inst, loss, reg)
    if method != "admm":
        raise ValueError(f"unknown method {method!r}")
    return _solve_admm(inst, loss, reg, tol, max_iter, rho, adaptive_rho, keep_history)


def recovery_tolerance(inst):
    return 1e-6 * (1.0 + float(np.max(np.abs(inst.x0))))


def is_recovered(inst, x_hat, tol=None):
    tol = recovery_tolerance(inst) if tol is None else tol
    return bool(np.max(np.abs(np.asarray(x_hat) - inst.x0)) <= tol)


def _box_min_norm(M, lo, hi):
    """min ||M s|| over the box lo <= s <= hi (degenerate coordinates allowed)."""
    free = hi > lo
    fixed = ~free
    rhs = -(M[:, fixed] @ lo[fixed]) if np.any(fixed) else np.zeros(M.shape[0])
    if not np.any(free):
        return float(np.linalg.norm(rhs)), lo.copy()
    res = lsq_linear(M[:, free], rhs, bounds=(lo[free], hi[free]), method="bvls", tol=1e-14)
    s = lo.copy()
    s[free] = res.x
    return float(np.linalg.norm(M @ s)), s


def kkt_tolerance(inst, tol=1e-8):
    return tol * float(np.linalg.norm(inst.A))


def certify_perfect_recovery_unreg(inst, loss, tol=1e-8):
    """Check ``0 in A^T subdiff loss(z)``.

    Returns ``(recovered, certificate_norm)`` where the norm is
    ``min ||A^T s||`` over ``s_i in subdiff loss(z_i)``.
    """
    sd = loss.subdiff(inst.z)
    norm_, _ = _box_min_norm(inst.A.T, np.asarray(sd.lo, float), np.asarray(sd.hi, float))
    return norm_ <= kkt_tolerance(inst, tol), norm_


def kkt_reg_norm(inst, loss, reg, lam):
    """min ||A^T s - lam v|| with s in subdiff loss(z) and v in subdiff reg(x0)."""
    sl, sr = loss.subdiff(inst.z), reg.subdiff(inst.x0)
    M = np.hstack([inst.A.T, -lam * np.eye(inst.p)])
    lo = np.concatenate([np.asarray(sl.lo, float), np.asarray(sr.lo, float)])
    hi = np.concatenate([np.asarray(sl.hi, float), np.asarray(sr.hi, float)])
    return _box_min_norm(M, lo, hi)[0]


def recovery_interval(inst, loss, reg):
    """Penalty levels at which ``x0`` satisfies the optimality conditions.

    The set of ``c >= 0`` with ``A^T s = c v`` for some ``s``, ``v`` in the
    subdifferential boxes is convex, so it is an interval ``[lo, hi]``
    (``hi`` may be infinite). Written with ``mu = c v`` the constraints are
    linear, ``A^T s = mu`` and ``c lo_j <= mu_j <= c hi_j``, and the
    endpoints are two linear programs. Returns ``None`` when no positive
    level works.
    """
    n, p = inst.A.shape
    sl, sr = loss.subdiff(inst.z), reg.subdiff(inst.x0)
    slo, shi = np.asarray(sl.lo, float), np.asarray(sl.hi, float)
    rlo, rhi = np.asarray(sr.lo, float), np.asarray(sr.hi, float)
    # variables (s, mu, c)
    Aeq = np.hstack([inst.A.T, -np.eye(p), np.zeros((p, 1))])
    Aub = np.vstack([
        np.hstack([np.zeros((p, n)), np.eye(p), -rhi[:, None]]),
        np.hstack([np.zeros((p, n)), -np.eye(p), rlo[:, None]]),
    ])
    bounds = list(zip(slo, shi)) + [(None, None)] * p + [(0, None)]
    ends = []
    for sign in (1.0, -1.0):
        cost = np.zeros(n + p + 1)
        cost[-1] = sign
        res = linprog(cost, A_ub=Aub, b_ub=np.zeros(2 * p), A_eq=Aeq, b_eq=np.zeros(p), bounds=bounds,
                      method="highs")
        if res.status == 2:
            return None
        if res.status == 3:
            ends.append(math.inf)
        elif res.status == 0:
            ends.append(float(res.x[-1]))
        else:
            raise NoConvergence(f"recovery interval LP failed: {res.message}")
    lo, hi = ends
    return None if hi <= 0 else (lo, hi)


def conic_kkt_feasible(inst, loss, reg):
    """Is ``A^T s = c v`` solvable with s, v in the subdifferential boxes and c > 0?"""
    return recovery_interval(inst, loss, reg) is not None


@dataclass
class RecoveryCertificate:
    recovered: bool
    lambda_witness: float | None
    kkt_lambda_witness: float | None
    conic_feasible: bool
    certificate_norm: float
    lambda_interval: tuple | None = None


def certify_perfect_recovery_reg(inst, loss, reg, lam_grid, tol=None, exhaustive=False, with_norm=True):
    """Search a penalty grid for a level at which the estimator equals ``x0``.

    The exact recovery interval of penalty levels is computed first; grid
    levels inside it are KKT witnesses, and a direct solve at the first one
    confirms recovery. With ``exhaustive`` the estimator is solved at every
    grid level instead. A nonempty interval that contains no grid level is
    reported through ``conic_feasible`` since a finite grid can miss it.
    The certificate norm is the bounded least-squares residual at the KKT
    witness, or at the grid level closest to the interval (or to 1); it is
    NaN when ``with_norm`` is false.
    """
    lam_grid = np.asarray(lam_grid, dtype=float)
    interval = recovery_interval(inst, loss, reg)
    if interval is not None:
        lo, hi = interval
        inside = lam_grid[(lam_grid >= lo) & (lam_grid <= hi)]
        centre = math.sqrt(max(lo, 1e-300) * hi) if math.isfinite(hi) else max(2.0 * lo, 1.0)
    else:
        inside = lam_grid[:0]
        centre = 1.0
    kkt_w = float(inside[0]) if inside.size else None
    probe = kkt_w if kkt_w is not None else float(lam_grid[np.argmin(np.abs(np.log(lam_grid / centre)))])
    norm_ = kkt_reg_norm(inst, loss, reg, probe) if with_norm else math.nan
    witness = None
    for lam in (lam_grid if exhaustive else inside):
        fit = solve_mestimator(inst, loss, reg.scaled(lam))
        if is_recovered(inst, fit.x, tol):
            witness = float(lam)
            break
    return RecoveryCertificate(witness is not None, witness, kkt_w, interval is not None, float(norm_), interval)


@dataclass
class ExperimentRecord:
    replicate: int
    n: int
    p: int
    delta: float
    seed: object
    lam: float | None
    empirical_risk: float
    recovered: bool
    solver_iters: int
    kkt_certificate_norm: float
    capped: bool = False

    def to_row(self):
        d = asdict(self)
        d["seed"] = str(self.seed)
        return d


def run_replicate(index, n, p, loss, reg, noise_law, signal_law, master_seed=0, lam=None, certificate=True):
    """One replicate with seed ``(master_seed, index)``.

    Without a penalty the truth is offered as a certified candidate, which
    skips the solver whenever the estimator recovers ``x0`` exactly. With
    ``certificate=False`` the certificate norm is not computed (NaN).
    """
    inst = generate(n, p, noise_law, signal_law, seed=(master_seed, index))
    lam = 1.0 if lam is None and reg is not None else lam
    if reg is None:
        fit = solve_mestimator(inst, loss, None, candidate=inst.x0)
        cert = certify_perfect_recovery_unreg(inst, loss)[1] if certificate else math.nan
    else:
        fit = solve_mestimator(inst, loss, reg.scaled(lam))
        cert = kkt_reg_norm(inst, loss, reg, lam) if certificate else math.nan
    return ExperimentRecord(index, n, p, n / p, (master_seed, index), lam, empirical_risk(inst, fit.x),
                            is_recovered(inst, fit.x), fit.iterations, cert, inst.capped)
