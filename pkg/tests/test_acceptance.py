"""Acceptance suite: one test per criterion, each with pinned tolerances and runtime limits.

Every test records a single PASS/FAIL line (collected by ``conftest.py`` and
printed in the terminal summary) before asserting.
"""
import math
import time

import numpy as np
import pytest

from mrisk.cli import main
from mrisk.finite_sample import certify_perfect_recovery_unreg, generate, run_replicate
from mrisk.marginals import ExpectationEngine, MarginalLaw
from mrisk.scalar_convex import abs_loss, huber, pseudo_huber, quantile, square
from mrisk.system_solver import (potential_unreg, residuals_reg, residuals_unreg, risk_curve, solve_reg,
                                 solve_unreg)
from mrisk.threshold import (alpha_upper_bound_reg, alpha_upper_bound_unreg, delta_perfect_reg,
                             delta_perfect_unreg, expected_dist_sq)
from mrisk.conic_geometry import statdim_fraction

MIX = MarginalLaw.sparse(0.1)
NOISE3 = MarginalLaw.sparse(0.3)
NORMAL = MarginalLaw.normal()

RESULTS = []


def record(k, ok, detail):
    line = f"acceptance {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_1_square_loss_closed_form():
    t0 = time.perf_counter()
    sol = solve_unreg(square(), NORMAL, 2.0)
    dt = time.perf_counter() - t0
    ok = abs(sol.alpha - 1) <= 1e-5 and abs(sol.kappa - 1) <= 1e-5 and dt < 1.0
    record(1, ok, f"alpha={sol.alpha:.8f} kappa={sol.kappa:.8f} (tol 1e-5) time={dt:.2f}s (< 1s)")
    assert ok


def test_2_differentiable_loss_threshold():
    t0 = time.perf_counter()
    rep = delta_perfect_unreg(huber(), MIX)
    dt = time.perf_counter() - t0
    ok = rep.delta_perfect == math.inf and abs(rep.j_loss_min - 1) <= 1e-6 and dt < 1.0
    record(2, ok, f"delta_perfect={rep.delta_perfect} j_loss_min={rep.j_loss_min!r} (1 +- 1e-6) time={dt:.2f}s")
    assert ok


UNREG_BATTERY = [
    (abs_loss(), MIX, 1.3),
    (abs_loss(), NOISE3, 2.0),
    (abs_loss(), MarginalLaw.sparse(0.3, "cauchy"), 2.0),
    (huber(), MIX, 2.0),
    (huber(), NORMAL, 1.5),
    (huber(), MarginalLaw.sparse(0.2, "cauchy"), 2.0),
    (quantile(0.3), NOISE3, 1.5),
    (pseudo_huber(), MIX, 3.0),
    (square(), NORMAL, 2.0),
]
REG_BATTERY = [
    (abs_loss(), abs_loss(0.5), NOISE3, MIX, 0.8),
    (huber(), abs_loss(0.3), MIX, NORMAL, 1.5),
    (abs_loss(), square(1.0), NOISE3, MIX, 0.6),
]


def test_3_residual_certification():
    t0 = time.perf_counter()
    fresh = ExpectationEngine(master_seed=20261019)
    worst, n_cfg, below = 0.0, 0, True
    for loss, law, delta in UNREG_BATTERY:
        below &= delta < delta_perfect_unreg(loss, law).delta_perfect
        sol = solve_unreg(loss, law, delta)
        res, _ = residuals_unreg(sol.alpha, sol.kappa, loss, law, delta, fresh)
        worst = max(worst, max(abs(r) for r in res))
        n_cfg += 1
    for loss, reg, noise, signal, delta in REG_BATTERY:
        below &= delta < delta_perfect_reg(loss, reg, noise, signal).delta_perfect
        sol = solve_reg(loss, reg, noise, signal, delta)
        res, _ = residuals_reg(sol.alpha, sol.beta, sol.kappa, sol.nu, loss, reg, noise, signal, delta, fresh)
        worst = max(worst, max(abs(r) for r in res))
        n_cfg += 1
    dt = time.perf_counter() - t0
    ok = n_cfg == 12 and below and worst <= 1e-5 and dt < 300
    record(3, ok, f"{n_cfg} configs, max relative residual={worst:.2e} (<= 1e-5) time={dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_4_risk_convergence():
    t0 = time.perf_counter()
    p, reps = 500, 20
    ok, parts = True, []
    for i, delta in enumerate((1.5, 2.0, 3.0)):
        a2 = solve_unreg(abs_loss(), MIX, delta).alpha ** 2
        n = int(round(delta * p))
        risks = [run_replicate(r, n, p, abs_loss(), None, MIX, None, (4, i)).empirical_risk for r in range(reps)]
        mean, se = float(np.mean(risks)), float(np.std(risks, ddof=1) / math.sqrt(reps))
        tol = 3 * se + 0.05 * max(a2, 0.01)
        ok &= abs(mean - a2) <= tol
        parts.append(f"delta={delta}: mean={mean:.4f} theory={a2:.4f} tol={tol:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    record(4, ok, "; ".join(parts) + f" time={dt:.1f}s")
    assert ok


def test_5_unreg_phase_transition():
    t0 = time.perf_counter()
    n, reps = 100, 50
    ok, parts = True, []
    for i, s in enumerate((0.1, 0.2, 0.3)):
        law = MarginalLaw.sparse(s, "cauchy")
        dp = delta_perfect_unreg(abs_loss(), law).delta_perfect
        freq = {}
        for mult in (1.3, 0.7):
            p = int(round(n / (mult * dp)))
            hits = [certify_perfect_recovery_unreg(generate(n, p, law, seed=(5, i, int(mult * 10), r)),
                                                   abs_loss())[0] for r in range(reps)]
            freq[mult] = float(np.mean(hits))
        ok &= freq[1.3] >= 0.9 and freq[0.7] <= 0.1
        parts.append(f"s={s}: {freq[1.3]:.2f} at 1.3x (>= 0.9), {freq[0.7]:.2f} at 0.7x (<= 0.1)")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    record(5, ok, "; ".join(parts) + f" time={dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_6_reg_lambda_sweep():
    t0 = time.perf_counter()
    p, reps = 400, 30
    dp = delta_perfect_reg(abs_loss(), abs_loss(), NOISE3, MIX).delta_perfect
    lams = np.logspace(-1, 1, 9)
    min_risk = {}
    for i, mult in enumerate((1.3, 0.7)):
        n = int(round(mult * dp * p))
        risks = np.array([[run_replicate(r, n, p, abs_loss(), abs_loss(), NOISE3, MIX, (6, i), lam,
                                         certificate=False).empirical_risk for lam in lams] for r in range(reps)])
        min_risk[mult] = float(risks.mean(axis=0).min())
    # theoretical side: alpha*(lam) = 0 on a nonempty interval iff delta > delta_perfect
    zero_set = {}
    for mult in (1.3, 1.05, 0.95, 0.7):
        pts = risk_curve(abs_loss(), abs_loss(), NOISE3, MIX, mult * dp, lams)
        zero_set[mult] = any(pt.status == "AtZero" for pt in pts)
    theory_ok = zero_set[1.3] and zero_set[1.05] and not zero_set[0.95] and not zero_set[0.7]
    dt = time.perf_counter() - t0
    ok = min_risk[1.3] <= 0.02 and min_risk[0.7] >= 0.1 and theory_ok and dt < 1200
    record(6, ok, f"min risk {min_risk[1.3]:.4f} at 1.3x (<= 0.02), {min_risk[0.7]:.4f} at 0.7x (>= 0.1); "
                  f"zero interval by ratio {zero_set} time={dt:.1f}s")
    assert ok


def test_7_statdim_consistency():
    t0 = time.perf_counter()
    m = 400
    est = statdim_fraction(abs_loss(), MIX, m, 200, seed=7)
    j = delta_perfect_unreg(abs_loss(), MIX).j_loss_min
    tol = 3 * est.std_error + 2 / math.sqrt(m)
    dt = time.perf_counter() - t0
    ok = abs(est.statdim_fraction - (1 - j)) <= tol and dt < 120
    record(7, ok, f"statdim={est.statdim_fraction:.4f} 1-j={1 - j:.4f} tol={tol:.4f} time={dt:.1f}s")
    assert ok


def test_8_bound_validity():
    t0 = time.perf_counter()
    ok, parts = True, []
    for q in (0.3, 0.5, 0.7):
        for delta in (1.2, 1.4):
            a = solve_unreg(quantile(q), MIX, delta).alpha
            b = alpha_upper_bound_unreg(quantile(q), MIX, delta)
            ok &= a <= b
            parts.append(f"q={q} d={delta}: {a:.3g}<={b:.3g}")
    for lam in (0.1, 1.0, 10.0):
        a = solve_reg(abs_loss(), abs_loss(lam), NOISE3, MIX, 0.8).alpha
        b = alpha_upper_bound_reg(abs_loss(), abs_loss(lam), NOISE3, MIX, 0.8)
        ok &= a <= b
        parts.append(f"lam={lam}: {a:.3g}<={b:.3g}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    record(8, ok, ", ".join(parts) + f" time={dt:.1f}s")
    assert ok


def test_9_property_suites(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    checks = {}
    funcs = [abs_loss(), huber(), pseudo_huber(), quantile(0.3), square()]
    # firm non-expansiveness on 10^4 random triples (x, y, tau)
    x, y = rng.normal(scale=10, size=(2, 10_000))
    tau = np.exp(rng.uniform(-4, 3, size=10_000))
    checks["firm_nonexpansive"] = all(
        np.all((f.prox(x, tau) - f.prox(y, tau)) * (x - y) >= (f.prox(x, tau) - f.prox(y, tau)) ** 2
               - 1e-9 * (1 + np.abs(x - y)) ** 2) for f in funcs)
    # envelope derivative against central differences
    xs, ts, h = rng.normal(scale=5, size=500), np.exp(rng.uniform(-2, 2, size=500)), 1e-6
    checks["envelope_derivative"] = all(
        np.all(np.abs(f.env_deriv(xs, ts) - (f.moreau_env(xs + h, ts) - f.moreau_env(xs - h, ts)) / (2 * h))
               <= 1e-6 * (1 + np.abs(xs))) for f in funcs)
    # midpoint convexity of M(alpha) and J(t)
    ok_m = ok_j = True
    for _ in range(10):
        a1, a2 = rng.uniform(0.01, 3.0, size=2)
        mid = potential_unreg(0.5 * (a1 + a2), abs_loss(), MIX, 1.3)
        ok_m &= mid <= 0.5 * (potential_unreg(a1, abs_loss(), MIX, 1.3) + potential_unreg(a2, abs_loss(), MIX, 1.3)) \
            + 1e-9
        t1, t2 = rng.uniform(1e-3, 10, size=2)
        mid = expected_dist_sq(0.5 * (t1 + t2), quantile(0.3), NOISE3)
        ok_j &= mid <= 0.5 * (expected_dist_sq(t1, quantile(0.3), NOISE3)
                              + expected_dist_sq(t2, quantile(0.3), NOISE3)) + 1e-10
    checks["convex_M"], checks["convex_J"] = bool(ok_m), bool(ok_j)
    # small penalties reproduce the unpenalized solution
    unreg = solve_unreg(huber(), MIX, 2.0)
    reg = solve_reg(huber(), abs_loss(1e-6), MIX, NORMAL, 2.0)
    checks["lambda_to_zero"] = abs(reg.alpha - unreg.alpha) <= 1e-5 and abs(reg.kappa - unreg.kappa) <= 1e-5
    # multi-start uniqueness
    ref = solve_reg(abs_loss(), abs_loss(0.5), NOISE3, MIX, 0.8)
    ok_u = True
    for _ in range(5):
        init = (math.exp(rng.uniform(-3, 1)), math.exp(rng.uniform(-3, 3)))
        sol = solve_reg(abs_loss(), abs_loss(0.5), NOISE3, MIX, 0.8, init=init)
        ok_u &= all(abs(u - v) <= 1e-4 * (1 + abs(v)) for u, v in
                    [(sol.alpha, ref.alpha), (sol.beta, ref.beta), (sol.kappa, ref.kappa), (sol.nu, ref.nu)])
    checks["uniqueness"] = bool(ok_u)
    # byte-identical CLI reruns
    outs = []
    for k in range(2):
        path = tmp_path / f"sim{k}.csv"
        code = main(["simulate", "--loss", "huber", "--noise", "sparse:0.2:cauchy", "--delta", "[1.5, 2.0]",
                     "--set", "experiment.p=40", "--set", "experiment.replicates=3", "--seed", "3",
                     "--out", str(path)])
        outs.append(path.read_bytes() if code == 0 else b"")
    checks["cli_rerun"] = bool(outs[0]) and outs[0] == outs[1]
    dt = time.perf_counter() - t0
    ok = all(checks.values()) and dt < 300
    record(9, ok, " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()) + f" time={dt:.1f}s")
    assert ok
