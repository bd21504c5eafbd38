"""Scalar laws for noise and signal, plus a deterministic expectation engine.

A :class:`MarginalLaw` is a finite mixture of point masses, Gaussians and
Cauchy components. :class:`ExpectationEngine` computes ``E[phi(G, W)]`` with
``G ~ N(0, 1)`` independent of ``W``:

* atoms are summed exactly, with a Gaussian quadrature over ``g``;
* Gaussian components are integrated in the variable ``u = alpha*g + w``,
  which is where prox-based integrands have their kinks, and the remaining
  conditional law of ``g`` given ``u`` is handled by Gauss-Hermite;
* Cauchy components are integrated by nested quadrature: an outer rule in
  ``w`` after the angle substitution below, and for each outer node an inner
  Gaussian rule in ``u = alpha*g + w`` split at the kinks. Bounded integrands
  make this accurate to quadrature precision. With ``cauchy_method="mc"``
  they use Monte Carlo instead, from a counter-based generator keyed by
  ``(master_seed, stream_id, block_id)`` and reduced block by block in a
  fixed order, so results do not depend on the number of workers.

Integrals of bounded functions of ``w`` alone (:meth:`ExpectationEngine.expect_w`)
treat Cauchy components by deterministic quadrature after the angle
substitution ``w = loc + scale * tan(pi * (theta - 1/2))``.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss as _hermegauss
from numpy.polynomial.legendre import leggauss as _leggauss
from scipy.stats import cauchy, norm

WEIGHT_TOL = 1e-12
TRUNC = 12.0  # half-width of the Gaussian window, in standard deviations


@lru_cache(maxsize=None)
def _rule(kind, n):
    x, w = _hermegauss(n) if kind == "hermite" else _leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def hermegauss(n):
    """Probabilists' Gauss-Hermite rule (cached)."""
    return _rule("hermite", n)


def leggauss(n):
    """Gauss-Legendre rule on [-1, 1] (cached)."""
    return _rule("legendre", n)


class UnboundedFunctional(ValueError):
    """A heavy-tailed component met an integrand not declared bounded in w."""


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("Gaussian sd must be positive (use an atom for sd = 0)")


@dataclass(frozen=True)
class Cauchy:
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Cauchy scale must be positive")


@dataclass(frozen=True)
class MarginalLaw:
    """Mixture ``sum_i w_i delta_{a_i} + sum_j v_j C_j``.

    ``atoms`` holds ``(location, weight)`` pairs and ``continuous`` holds
    ``(component, weight)`` pairs; zero weights are dropped.
    """

    atoms: tuple = ()
    continuous: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(a), float(w)) for a, w in self.atoms if w != 0)
        cont = tuple((c, float(w)) for c, w in self.continuous if w != 0)
        for _, w in atoms + tuple((0.0, w) for _, w in cont):
            if w < 0 or not np.isfinite(w):
                raise ValueError("mixture weights must be nonnegative")
        for c, _ in cont:
            if not isinstance(c, (Gaussian, Cauchy)):
                raise TypeError(f"unsupported component {c!r}")
        total = sum(w for _, w in atoms) + sum(w for _, w in cont)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"mixture weights sum to {total!r}, not 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "continuous", cont)

    # shorthand constructors -------------------------------------------------

    @classmethod
    def point_mass(cls, at=0.0):
        return cls(atoms=((at, 1.0),))

    @classmethod
    def normal(cls, mean=0.0, sd=1.0):
        return cls(continuous=((Gaussian(mean, sd), 1.0),))

    @classmethod
    def sparse(cls, s, family="gaussian", scale=1.0):
        """``(1 - s) delta_0 + s * family(0, scale)``."""
        if family not in ("gaussian", "cauchy"):
            raise ValueError("family must be 'gaussian' or 'cauchy'")
        comp = Gaussian(0.0, scale) if family == "gaussian" else Cauchy(0.0, scale)
        return cls(atoms=((0.0, 1.0 - s),), continuous=((comp, s),))

    def scaled(self, c):
        """Law of ``c * W``."""
        c = float(c)
        cont = []
        for comp, w in self.continuous:
            if isinstance(comp, Gaussian):
                cont.append((Gaussian(c * comp.mean, abs(c) * comp.sd), w))
            else:
                cont.append((Cauchy(c * comp.loc, abs(c) * comp.scale), w))
        return MarginalLaw(tuple((c * a, w) for a, w in self.atoms), tuple(cont))

    # config round trip --------------------------------------------------------

    @classmethod
    def from_config(cls, cfg):
        """Build a law from a mapping or a shorthand string.

        Shorthands: ``normal``, ``normal:SD``, ``point:AT``,
        ``sparse:S`` and ``sparse:S:cauchy`` (``(1-S) delta_0 + S * N(0,1)``
        or with a Cauchy component).
        """
        if isinstance(cfg, str):
            return cls._from_shorthand(cfg)
        if not isinstance(cfg, dict):
            raise ValueError("law descriptor must be a mapping or shorthand string")
        extra = set(cfg) - {"atoms", "continuous"}
        if extra:
            raise ValueError(f"unknown keys in law descriptor: {sorted(extra)}")
        atoms = [(float(a["at"]), float(a["w"])) for a in cfg.get("atoms", []) or []]
        cont = []
        for item in cfg.get("continuous", []) or []:
            item = dict(item)
            w = float(item.pop("w"))
            if set(item) == {"gaussian"}:
                p = item["gaussian"] or {}
                cont.append((Gaussian(float(p.get("mean", 0.0)), float(p.get("sd", 1.0))), w))
            elif set(item) == {"cauchy"}:
                p = item["cauchy"] or {}
                cont.append((Cauchy(float(p.get("loc", 0.0)), float(p.get("scale", 1.0))), w))
            else:
                raise ValueError(f"continuous component needs exactly one of gaussian/cauchy, got {sorted(item)}")
        return cls(tuple(atoms), tuple(cont))

    @classmethod
    def _from_shorthand(cls, text):
        name, *args = [a.strip() for a in text.split(":")]
        try:
            if name == "normal" and len(args) <= 1:
                return cls.normal(0.0, float(args[0]) if args else 1.0)
            if name == "point" and len(args) <= 1:
                return cls.point_mass(float(args[0]) if args else 0.0)
            if name == "sparse" and len(args) in (1, 2):
                return cls.sparse(float(args[0]), args[1] if len(args) == 2 else "gaussian")
        except ValueError as exc:
            raise ValueError(f"bad law shorthand {text!r}: {exc}") from exc
        raise ValueError(f"unknown law shorthand {text!r}")

    def to_config(self):
        out = {}
        if self.atoms:
            out["atoms"] = [{"at": a, "w": w} for a, w in self.atoms]
        if self.continuous:
            items = []
            for c, w in self.continuous:
                if isinstance(c, Gaussian):
                    items.append({"gaussian": {"mean": c.mean, "sd": c.sd}, "w": w})
                else:
                    items.append({"cauchy": {"loc": c.loc, "scale": c.scale}, "w": w})
            out["continuous"] = items
        return out

    # exact quantities -------------------------------------------------------

    @property
    def heavy_tailed(self) -> bool:
        return any(isinstance(c, Cauchy) for c, _ in self.continuous)

    @property
    def has_continuous(self) -> bool:
        return bool(self.continuous)

    def prob_nonzero(self) -> float:
        return sum(w for a, w in self.atoms if a != 0) + sum(w for _, w in self.continuous)

    def second_moment(self) -> float:
        if self.heavy_tailed:
            return np.inf
        m = sum(w * a * a for a, w in self.atoms)
        return m + sum(w * (c.mean ** 2 + c.sd ** 2) for c, w in self.continuous)

    def tail_abs(self, q):
        """P(|W| > q) for q >= 0."""
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        for a, w in self.atoms:
            out = out + w * (abs(a) > q)
        for c, w in self.continuous:
            if isinstance(c, Gaussian):
                out = out + w * (norm.sf((q - c.mean) / c.sd) + norm.cdf((-q - c.mean) / c.sd))
            else:
                out = out + w * (cauchy.sf((q - c.loc) / c.scale) + cauchy.cdf((-q - c.loc) / c.scale))
        return out

    def quantile_abs(self, x, tol=1e-10) -> float:
        """inf{q > 0 : P(|W| > q) <= x}, by bisection on the exact tail."""
        if x <= 0:
            return np.inf
        if float(self.tail_abs(0.0)) <= x:
            return 0.0
        hi = 1.0
        while float(self.tail_abs(hi)) > x:
            hi *= 2.0
            if hi > 1e300:
                return np.inf
        lo = 0.0
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if float(self.tail_abs(mid)) <= x:
                hi = mid
            else:
                lo = mid
        return hi


def sample(law: MarginalLaw, n: int, seed) -> np.ndarray:
    """Draw ``n`` iid values from ``law``; deterministic given ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    parts = list(law.atoms) + list(law.continuous)
    probs = np.array([w for _, w in parts])
    label = rng.choice(len(parts), size=n, p=probs / probs.sum())
    out = np.empty(n)
    for i, (what, _) in enumerate(parts):
        idx = np.flatnonzero(label == i)
        if isinstance(what, Gaussian):
            out[idx] = what.mean + what.sd * rng.standard_normal(idx.size)
        elif isinstance(what, Cauchy):
            out[idx] = what.loc + what.scale * rng.standard_cauchy(idx.size)
        else:
            out[idx] = what
    return out


def prob_nonzero(law: MarginalLaw) -> float:
    return law.prob_nonzero()


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float

    def __iter__(self):
        yield self.value
        yield self.error


def _arr(v):
    # integrands may return a tuple of arrays for several functionals at once
    return np.stack(np.broadcast_arrays(*v)) if isinstance(v, tuple) else np.asarray(v, dtype=float)


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def _cauchy_rule(loc, scale, breaks, n):
    """Nodes and weights for E[f(X)], X ~ Cauchy(loc, scale), for bounded f.

    Uses the angle substitution ``x = loc + scale * tan(pi * (theta - 1/2))``
    with ``theta`` uniform on (0, 1), split at the images of ``breaks``.
    """
    b = np.asarray(breaks, dtype=float).ravel()
    th = np.unique(0.5 + np.arctan((b - loc) / scale) / np.pi)
    th = th[(th > 0) & (th < 1)]
    edges = np.concatenate([[0.0], th, [1.0]])
    t, tw = leggauss(n)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    theta = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w = (half[:, None] * tw[None, :]).ravel()
    return loc + scale * np.tan(np.pi * (theta - 0.5)), w


def _normal_rule(mean, sd, breaks, n):
    """Nodes and weights for E[f(X)], X ~ N(mean, sd^2), split at ``breaks``."""
    lo, hi = mean - TRUNC * sd, mean + TRUNC * sd
    b = np.asarray(breaks, dtype=float).ravel()
    b = np.unique(b[(b > lo) & (b < hi)])
    if b.size == 0:
        x, w = hermegauss(n)
        return mean + sd * x, w / np.sqrt(2.0 * np.pi)
    edges = np.concatenate([[lo], b, [hi]])
    t, tw = leggauss(n)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    z = (x - mean) / sd
    w = (half[:, None] * tw[None, :]).ravel() * np.exp(-0.5 * z * z) / (sd * np.sqrt(2.0 * np.pi))
    return x, w


@dataclass
class ExpectationEngine:
    """Deterministic evaluator of ``E[phi(G, W)]``.

    Parameters
    ----------
    gh_nodes : int
        Quadrature nodes per smooth piece and per Gaussian coordinate.
    mc_samples : int
        Monte Carlo sample count for each Cauchy component (``"mc"`` only).
    cauchy_method : str
        ``"quadrature"`` (default) or ``"mc"`` for Cauchy components of
        ``expect_gw``.
    master_seed : int
        Seed for the counter-based generator used by the Monte Carlo branch.
    workers : int
        Threads used to evaluate Monte Carlo blocks; never changes results.
    """

    gh_nodes: int = 61
    mc_samples: int = 2_000_000
    master_seed: int = 0
    workers: int = 1
    block_size: int = 1 << 16
    cauchy_method: str = "quadrature"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.gh_nodes < 2 or self.mc_samples < 1:
            raise ValueError("gh_nodes must be >= 2 and mc_samples >= 1")
        if self.cauchy_method not in ("quadrature", "mc"):
            raise ValueError("cauchy_method must be 'quadrature' or 'mc'")

    def with_seed(self, seed):
        return ExpectationEngine(self.gh_nodes, self.mc_samples, seed, self.workers, self.block_size,
                                 self.cauchy_method)

    # Monte Carlo ------------------------------------------------------------

    def _blocks(self, comp: Cauchy):
        key = (comp.loc, comp.scale)
        if key not in self._cache:
            stream = zlib.crc32(f"cauchy:{comp.loc!r}:{comp.scale!r}".encode())
            nblocks = -(-self.mc_samples // self.block_size)
            blocks = []
            for b in range(nblocks):
                size = min(self.block_size, self.mc_samples - b * self.block_size)
                ss = np.random.SeedSequence([self.master_seed, stream, b])
                rng = np.random.Generator(np.random.Philox(ss))
                g = rng.standard_normal(size)
                w = comp.loc + comp.scale * rng.standard_cauchy(size)
                blocks.append((g, w))
            self._cache[key] = blocks
        return self._cache[key]

    def _mc(self, comp, fn):
        blocks = self._blocks(comp)

        def part(block):
            v = _arr(fn(*block))
            return np.sum(v, axis=-1), np.sum(v * v, axis=-1)

        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                sums = list(pool.map(part, blocks))
        else:
            sums = [part(b) for b in blocks]
        s1 = s2 = 0.0
        for a, b in sums:  # fixed reduction order
            s1 += a
            s2 += b
        n = self.mc_samples
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
        return mean, np.sqrt(var / n)

    # quadrature -------------------------------------------------------------

    def _quad_gw(self, law, phi, alpha, kinks, n):
        total = 0.0
        gx, gw = hermegauss(n)
        gw = gw / np.sqrt(2.0 * np.pi)
        kinks = np.asarray(kinks, dtype=float).ravel()
        for a, wt in law.atoms:
            if alpha > 0 and kinks.size:
                x, w = _normal_rule(0.0, 1.0, (kinks - a) / alpha, n)
            else:
                x, w = gx, gw
            total = total + wt * (_arr(phi(x, np.full_like(x, a))) @ w)
        for comp, wt in law.continuous:
            if not isinstance(comp, Gaussian):
                continue
            m, s = comp.mean, comp.sd
            su2 = alpha * alpha + s * s
            u, uw = _normal_rule(m, np.sqrt(su2), kinks, n)
            mu = alpha * (u - m) / su2
            g = mu[:, None] + (s / np.sqrt(su2)) * gx[None, :]
            w = u[:, None] - alpha * g
            total = total + wt * ((_arr(phi(g, w)) @ gw) @ uw)
        return total

    def _quad_cauchy(self, comp, phi, center, center_kinks, alpha, kinks, n):
        """E[phi(G, W) - center(W)] for one Cauchy component, by nested quadrature."""
        kinks = np.asarray(kinks, dtype=float).ravel()
        ck = np.asarray(center_kinks if center is not None else (), dtype=float).ravel()
        # outer breaks at the kinks and a few smoothing widths around them
        if alpha > 0 and kinks.size:
            offs = alpha * np.array([-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0])
            wb = (kinks[:, None] + offs[None, :]).ravel()
        else:
            wb = kinks
        x, xw = _cauchy_rule(comp.loc, comp.scale, np.concatenate([wb, ck]), 4 * n)
        if alpha > 0 and kinks.size:
            # inner rule in u ~ N(w, alpha^2), split at the kinks; empty pieces get zero weight
            lo, hi = x - TRUNC * alpha, x + TRUNC * alpha
            cuts = np.clip(np.sort(kinks)[None, :], lo[:, None], hi[:, None])
            edges = np.concatenate([lo[:, None], cuts, hi[:, None]], axis=1)
            t, tw = leggauss(n)
            half = 0.5 * np.diff(edges, axis=1)
            mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
            u = (mid[:, :, None] + half[:, :, None] * t[None, None, :]).reshape(x.size, -1)
            g = (u - x[:, None]) / alpha
            gw = (half[:, :, None] * tw[None, None, :]).reshape(x.size, -1) * norm.pdf(g) / alpha
        else:
            gx, gwt = hermegauss(n)
            g = np.broadcast_to(gx, (x.size, n))
            gw = np.broadcast_to(gwt / np.sqrt(2.0 * np.pi), (x.size, n))
        inner = np.sum(_arr(phi(g, np.broadcast_to(x[:, None], g.shape))) * gw, axis=-1)
        if center is not None:
            inner = inner - center(x)
        return inner @ xw

    def _quad_w(self, law, psi, kinks, n, skip_cauchy=False):
        # atoms exact, Gaussian and Cauchy components by piecewise quadrature
        total = 0.0
        for a, wt in law.atoms:
            total = total + wt * _arr(psi(np.array([a])))[..., 0]
        for comp, wt in law.continuous:
            if isinstance(comp, Gaussian):
                x, w = _normal_rule(comp.mean, comp.sd, kinks, n)
            elif skip_cauchy:
                continue
            else:
                # bounded integrands only; callers check before getting here
                x, w = _cauchy_rule(comp.loc, comp.scale, kinks, 4 * n)
            total = total + wt * (_arr(psi(x)) @ w)
        return total

    def _coarse(self):
        return max(8, (2 * self.gh_nodes) // 3)

    # public API -------------------------------------------------------------

    def expect_gw(self, law: MarginalLaw, phi, alpha=0.0, kinks=(), bounded=False,
                  center=None, center_kinks=(), with_error=True):
        """E[phi(G, W) - center(W)].

        Parameters
        ----------
        phi : callable
            Vectorized ``phi(g, w)``; smooth except where ``alpha*g + w`` hits
            one of ``kinks``. It may return a tuple of arrays, in which case
            one estimate per entry is returned.
        center : callable, optional
            Function of ``w`` alone with kinks at ``center_kinks``. It is
            integrated separately on quadrature branches and jointly with
            ``phi`` on Monte Carlo branches, so that differences such as
            ``env(alpha G + W) - loss(W)`` stay finite for heavy tails.
        bounded : bool
            Caller's promise that the integrand is bounded in ``w`` (or grows
            at most like ``|g|`` times a constant), which is required before
            Cauchy components are sampled.
        """
        alpha = float(alpha)
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if law.heavy_tailed and not bounded:
            raise UnboundedFunctional("Cauchy component needs an integrand flagged bounded in w")

        use_mc = self.cauchy_method == "mc"

        def quad(n):
            v = self._quad_gw(law, phi, alpha, kinks, n)
            if center is not None:
                # Cauchy parts of the center are paired with phi below, never integrated alone
                v = v - self._quad_w(law, center, center_kinks, n, skip_cauchy=True)
            if not use_mc:
                for comp, wt in law.continuous:
                    if isinstance(comp, Cauchy):
                        v = v + wt * self._quad_cauchy(comp, phi, center, center_kinks, alpha, kinks, n)
            return v

        value = quad(self.gh_nodes)
        err = 0.0
        if with_error:
            coarse = quad(self._coarse())
            err = np.abs(value - coarse) + 1e-14 * (1.0 + np.abs(value))
        for comp, wt in law.continuous:
            if use_mc and isinstance(comp, Cauchy):
                if center is None:
                    fn = phi
                else:
                    def fn(g, w):
                        return _arr(phi(g, w)) - center(w)
                m, se = self._mc(comp, fn)
                value = value + wt * m
                err = err + 3.0 * wt * se
        if not with_error:
            return _out(value)
        value, err = _out(value), _out(err)
        if isinstance(value, float):
            return Estimate(value, err)
        return [Estimate(float(v), float(e)) for v, e in zip(value, err)]

    def expect_w(self, law: MarginalLaw, psi, kinks=(), bounded=False, with_error=True):
        """E[psi(W)] for a function of ``w`` alone with the given kinks.

        Cauchy components are integrated deterministically here (angle
        substitution), which is exact for the bounded integrands allowed.
        """
        if law.heavy_tailed and not bounded:
            raise UnboundedFunctional("Cauchy component needs an integrand flagged bounded in w")
        value = self._quad_w(law, psi, kinks, self.gh_nodes)
        if not with_error:
            return _out(value)
        err = np.abs(value - self._quad_w(law, psi, kinks, self._coarse())) + 1e-14 * (1.0 + np.abs(value))
        value, err = _out(value), _out(err)
        if isinstance(value, float):
            return Estimate(value, err)
        return [Estimate(float(v), float(e)) for v, e in zip(value, err)]


def expect_gw(engine: ExpectationEngine, law: MarginalLaw, phi, **kwargs) -> Estimate:
    """Functional form of :meth:`ExpectationEngine.expect_gw`."""
    return engine.expect_gw(law, phi, **kwargs)
