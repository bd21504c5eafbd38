"""Small scalar search helpers shared by the solvers."""
from __future__ import annotations

import math

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, a, b, rtol=1e-8, atol=0.0, maxiter=500):
    """Minimize a unimodal ``f`` on ``[a, b]``.

    Returns ``(x, f(x), evaluations)``. The interval is shrunk until its
    width is below ``rtol * |x| + atol``.
    """
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while n < maxiter and (b - a) > rtol * abs(c + d) * 0.5 + atol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        n += 1
    if fc <= fd:
        return c, fc, n
    return d, fd, n


def bracket_convex_min(f, f0, t0=1.0, tmax=1e8):
    """Grow ``T`` from ``t0`` until ``f(2T) >= f(T)`` for a convex ``f`` on [0, inf).

    ``f0`` is ``f(0)``. Returns ``(hi, hit_cap)``: the minimizer lies in
    ``[0, hi]`` unless ``hit_cap`` is true, in which case ``f`` kept
    decreasing up to ``tmax``.
    """
    t, ft = t0, f(t0)
    if ft >= f0:
        return t, False
    while t < tmax:
        f2 = f(2.0 * t)
        if f2 >= ft:
            return 2.0 * t, False
        t, ft = 2.0 * t, f2
    return t, True
