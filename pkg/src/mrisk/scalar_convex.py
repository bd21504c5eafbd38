"""Scalar convex losses and penalties.

Every function here is minimized only at the origin and carries a closed
form (or safeguarded Newton) proximal map, so that downstream expectations
can be computed without generic inner solvers.

All array operations broadcast; scalar inputs give 0-d arrays back, which
callers can turn into floats with ``float()``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

KINDS = ("abs", "huber", "pseudohuber", "quantile", "square")


class NotMinimizedAtZero(ValueError):
    """Raised when a function has a minimizer other than the origin."""


class LipschitzWarning(UserWarning):
    """Issued for losses or penalties that are not globally Lipschitz."""


@dataclass(frozen=True)
class SubdiffInterval:
    """Closed interval [lo, hi] of subgradients (entries may be arrays)."""

    lo: np.ndarray
    hi: np.ndarray

    def contains(self, v, atol=0.0):
        return (self.lo - atol <= v) & (v <= self.hi + atol)


@dataclass(frozen=True)
class ScalarConvexFunction:
    """Separable convex function ``scale * base(x)``.

    Parameters
    ----------
    kind : str
        One of ``abs``, ``huber``, ``pseudohuber``, ``quantile``, ``square``.
    bend : float
        Huber transition point; the function is quadratic on ``|x| <= bend``.
    q : float
        Quantile level in (0, 1).
    scale : float
        Positive multiplier; ``Scaled(f, lam)`` is ``f`` with ``scale = lam``.
    """

    kind: str
    bend: float = 1.0
    q: float = 0.5
    scale: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}; expected one of {KINDS}")
        if not self.scale > 0 or not np.isfinite(self.scale):
            raise ValueError("scale must be positive and finite")
        if kind == "huber" and not self.bend > 0:
            raise ValueError("huber bend must be positive")
        if kind == "quantile" and not 0.0 < self.q < 1.0:
            raise ValueError("quantile level must lie in (0, 1)")

    # constructors -----------------------------------------------------------

    def scaled(self, lam: float) -> "ScalarConvexFunction":
        """Return ``lam * self``."""
        return ScalarConvexFunction(self.kind, self.bend, self.q, self.scale * float(lam))

    @classmethod
    def from_config(cls, cfg) -> "ScalarConvexFunction":
        if isinstance(cfg, str):
            return cls(cfg)
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind is None:
            raise ValueError("function descriptor needs a 'kind'")
        allowed = {"bend", "q", "scale"}
        extra = set(cfg) - allowed
        if extra:
            raise ValueError(f"unknown keys in function descriptor: {sorted(extra)}")
        return cls(kind, **{k: float(v) for k, v in cfg.items()})

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "huber":
            out["bend"] = self.bend
        if self.kind == "quantile":
            out["q"] = self.q
        if self.scale != 1.0:
            out["scale"] = self.scale
        return out

    def __str__(self):
        body = {"huber": f"huber({self.bend:g})", "quantile": f"quantile({self.q:g})"}.get(self.kind, self.kind)
        return body if self.scale == 1.0 else f"{self.scale:g}*{body}"

    # basic quantities -------------------------------------------------------

    @property
    def lipschitz(self) -> float:
        base = {"abs": 1.0, "huber": self.bend, "pseudohuber": 1.0,
                "quantile": max(self.q, 1.0 - self.q), "square": np.inf}[self.kind]
        return self.scale * base

    @property
    def differentiable(self) -> bool:
        return self.kind in ("huber", "pseudohuber", "square")

    @property
    def polyhedral(self) -> bool:
        return self.kind in ("abs", "quantile")

    @property
    def breakpoints(self) -> np.ndarray:
        """Points where the value or its derivative is not smooth."""
        if self.kind in ("abs", "quantile"):
            return np.array([0.0])
        if self.kind == "huber":
            return np.array([-self.bend, self.bend])
        return np.array([])

    @property
    def coercivity(self) -> tuple[float, float]:
        """Pair (a, b) with f(x) - f(0) >= a|x| - b.

        Built from supporting lines at +1 and -1: convexity gives
        f(x) >= d(1) x - (d(1) - f(1)) for x >= 0 and the mirror bound for
        x <= 0, with d a subgradient.
        """
        dp = float(self.subdiff(1.0).hi)
        dm = float(self.subdiff(-1.0).lo)
        fp = float(self(1.0))
        fm = float(self(-1.0))
        a = min(dp, -dm)
        b = max(dp - fp, -dm - fm, 0.0)
        return a, b

    # evaluation -------------------------------------------------------------

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "abs":
            v = np.abs(x)
        elif k == "square":
            v = 0.5 * x * x
        elif k == "huber":
            c = self.bend
            ax = np.abs(x)
            v = np.where(ax <= c, 0.5 * x * x, c * ax - 0.5 * c * c)
        elif k == "pseudohuber":
            v = np.sqrt(1.0 + x * x) - 1.0
        else:
            v = np.where(x >= 0, self.q * x, (self.q - 1.0) * x)
        return self.scale * v

    def derivative(self, x):
        """A subgradient; the right derivative at kinks."""
        return self.subdiff(x).hi

    def subdiff(self, x) -> SubdiffInterval:
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "abs":
            lo = np.where(x > 0, 1.0, -1.0)
            hi = np.where(x < 0, -1.0, 1.0)
        elif k == "quantile":
            lo = np.where(x > 0, self.q, self.q - 1.0)
            hi = np.where(x < 0, self.q - 1.0, self.q)
        else:
            if k == "square":
                d = x
            elif k == "huber":
                d = np.clip(x, -self.bend, self.bend)
            else:
                d = x / np.sqrt(1.0 + x * x)
            lo = hi = d
        return SubdiffInterval(self.scale * lo, self.scale * hi)

    # proximal calculus ------------------------------------------------------

    def prox(self, x, tau):
        """argmin_v tau*f(v) + (x - v)^2 / 2."""
        x = np.asarray(x, dtype=float)
        t = self.scale * np.asarray(tau, dtype=float)
        k = self.kind
        if k == "abs":
            return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
        if k == "square":
            return x / (1.0 + t)
        if k == "huber":
            c = self.bend
            inner = np.abs(x) <= c * (1.0 + t)
            return np.where(inner, x / (1.0 + t), x - t * c * np.sign(x))
        if k == "quantile":
            q = self.q
            return np.where(x > t * q, x - t * q, np.where(x < -t * (1.0 - q), x + t * (1.0 - q), 0.0))
        return _prox_pseudohuber(x, t)

    def prox_kinks(self, tau) -> np.ndarray:
        """Points u where u -> prox(u, tau) is not smooth."""
        t = self.scale * float(tau)
        if self.kind == "abs":
            return np.array([-t, t])
        if self.kind == "quantile":
            return np.array([-t * (1.0 - self.q), t * self.q])
        if self.kind == "huber":
            c = self.bend * (1.0 + t)
            return np.array([-c, c])
        return np.array([])

    def moreau_env(self, x, tau):
        """min_u (x - u)^2 / (2 tau) + f(u)."""
        x = np.asarray(x, dtype=float)
        p = self.prox(x, tau)
        return (x - p) ** 2 / (2.0 * tau) + self.value(p)

    def env_deriv(self, x, tau):
        """Derivative of the envelope in x, equal to (x - prox) / tau."""
        x = np.asarray(x, dtype=float)
        return (x - self.prox(x, tau)) / tau


def _prox_pseudohuber(x, t, tol=1e-12, maxiter=100):
    # solve v + t v / sqrt(1 + v^2) = x; the root lies between 0 and x
    x, t = np.broadcast_arrays(x, t)
    x = x.astype(float)
    t = t.astype(float)
    lo = np.minimum(x, 0.0)
    hi = np.maximum(x, 0.0)
    v = x / (1.0 + t)
    for _ in range(maxiter):
        s = np.sqrt(1.0 + v * v)
        g = v + t * v / s - x
        lo = np.where(g < 0, v, lo)
        hi = np.where(g > 0, v, hi)
        dg = 1.0 + t / s ** 3
        step = v - g / dg
        bad = (step <= lo) | (step >= hi)
        v_new = np.where(bad, 0.5 * (lo + hi), step)
        if np.all(np.abs(v_new - v) <= tol * (1.0 + np.abs(v))):
            v = v_new
            break
        v = v_new
    return v


def abs_loss(scale=1.0):
    return ScalarConvexFunction("abs", scale=scale)


def huber(bend=1.0, scale=1.0):
    return ScalarConvexFunction("huber", bend=bend, scale=scale)


def pseudo_huber(scale=1.0):
    return ScalarConvexFunction("pseudohuber", scale=scale)


def quantile(q, scale=1.0):
    return ScalarConvexFunction("quantile", q=q, scale=scale)


def square(scale=1.0):
    return ScalarConvexFunction("square", scale=scale)


@dataclass
class ValidationReport:
    function: str
    role: str
    lipschitz: float
    warnings: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.warnings


def validate_assumptions(f: ScalarConvexFunction, role: str = "loss") -> ValidationReport:
    """Check the standing assumptions on a loss or penalty.

    A non-Lipschitz function triggers a warning, since for such losses there
    are noise laws with unbounded limiting error. A minimizer other than 0
    is an error.
    """
    if role not in ("loss", "reg"):
        raise ValueError("role must be 'loss' or 'reg'")
    grid = np.concatenate([-np.logspace(-8, 6, 200), np.logspace(-8, 6, 200)])
    if not np.all(f(grid) > f(0.0)):
        raise NotMinimizedAtZero(f"{f} is not uniquely minimized at 0")
    report = ValidationReport(str(f), role, f.lipschitz)
    if not np.isfinite(f.lipschitz):
        msg = (f"{role} {f} is not Lipschitz: some noise laws give an infinite "
               "limiting error, so results rely on the noise having enough moments")
        report.warnings.append(msg)
        warnings.warn(msg, LipschitzWarning, stacklevel=2)
    return report
