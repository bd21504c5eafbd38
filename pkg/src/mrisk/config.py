"""Run configuration shared by the command-line tools.

All defaults live in :data:`DEFAULTS`:

=====================  ==========================================
key                    default
=====================  ==========================================
engine.gh_nodes        61 quadrature nodes per piece
engine.mc_samples      2,000,000 Monte Carlo draws per Cauchy part
engine.cauchy_method   quadrature (or mc)
engine.master_seed     0
engine.workers         1
tol                    1e-6 relative residual
lambda_grid            60 log-spaced points on [1e-3, 1e3]
experiment.replicates  20
experiment.n / p       unset (commands choose)
statdim.m / samples    400 / 200
family                 cauchy (noise family of phase diagrams)
delta_relative         false (grids are absolute ratios n/p)
=====================  ==========================================
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .marginals import ExpectationEngine, MarginalLaw
from .scalar_convex import ScalarConvexFunction

DEFAULTS = {
    "engine": {"gh_nodes": 61, "mc_samples": 2_000_000, "master_seed": 0, "workers": 1,
               "cauchy_method": "quadrature"},
    "tol": 1e-6,
    "lambda_grid": {"start": 1e-3, "stop": 1e3, "num": 60},
    "experiment": {"n": None, "p": None, "replicates": 20, "workers": 1},
    "statdim": {"m": 400, "samples": 200},
    "family": "cauchy",
}


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


def _d(key):
    return field(default_factory=lambda: copy.deepcopy(DEFAULTS[key]))


@dataclass
class RunConfig:
    loss: dict | None = None
    reg: dict | None = None
    noise: dict | None = None
    signal: dict | None = None
    delta: float | None = None
    deltas: list | None = None
    delta_relative: bool = False
    lambdas: list | None = None
    lambda_grid: dict = _d("lambda_grid")
    s_grid: list | None = None
    t_grid: list | None = None
    family: str = DEFAULTS["family"]
    tol: float = DEFAULTS["tol"]
    engine: dict = _d("engine")
    experiment: dict = _d("experiment")
    statdim: dict = _d("statdim")
    figure: str | None = None
    output: dict = field(default_factory=dict)

    # construction -------------------------------------------------------------

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        names = {f.name for f in fields(cls)}
        extra = set(data) - names
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        cfg = cls()
        for k, v in data.items():
            default = getattr(cfg, k)
            if isinstance(default, dict) and k in DEFAULTS:
                if not isinstance(v, dict):
                    raise ConfigError(f"'{k}' must be a mapping")
                unknown = set(v) - set(default)
                if unknown:
                    raise ConfigError(f"unknown keys under '{k}': {sorted(unknown)}")
                default.update(v)
            else:
                setattr(cfg, k, v)
        cfg._check_types()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=(), seed=None):
        data = {}
        if path:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise ConfigError("configuration file must hold a mapping")
        for item in overrides:
            set_key(data, item)
        if seed is not None:
            data.setdefault("engine", {})["master_seed"] = int(seed)
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def _check_types(self):
        try:
            if self.delta is not None:
                self.delta = float(self.delta)
            for name in ("deltas", "lambdas", "s_grid", "t_grid"):
                v = getattr(self, name)
                if v is not None:
                    setattr(self, name, [float(x) for x in (v if isinstance(v, list) else [v])])
            self.tol = float(self.tol)
            for k in ("gh_nodes", "mc_samples", "master_seed", "workers"):
                self.engine[k] = int(self.engine[k])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed numeric value: {exc}") from exc
        if self.tol <= 0:
            raise ConfigError("tol must be positive")

    # typed accessors ------------------------------------------------------------

    def _function(self, name, required):
        v = getattr(self, name)
        if v is None:
            if required:
                raise ConfigError(f"missing '{name}' descriptor")
            return None
        try:
            return ScalarConvexFunction.from_config(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad '{name}' descriptor: {exc}") from exc

    def _law(self, name, required, why):
        v = getattr(self, name)
        if v is None:
            if required:
                raise ConfigError(f"missing '{name}' law ({why})")
            return None
        try:
            return MarginalLaw.from_config(v)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad '{name}' law: {exc}") from exc

    def loss_fn(self, required=True):
        return self._function("loss", required)

    def reg_fn(self, required=False):
        return self._function("reg", required)

    def noise_law(self, required=True):
        law = self._law("noise", required, "the noise law Z must be given and have P(Z != 0) > 0")
        if law is not None and law.prob_nonzero() == 0:
            raise ConfigError("noise law violates the standing assumption P(Z != 0) > 0")
        return law

    def point_law(self):
        """Law of the point ``w`` for statistical dimensions, read from ``noise``; may be degenerate."""
        return self._law("noise", True, "statdim needs the law of w under 'noise'")

    def signal_law(self, required=False):
        return self._law("signal", required, "a penalized problem needs the signal law X")

    def engine_obj(self):
        e = self.engine
        try:
            return ExpectationEngine(e["gh_nodes"], e["mc_samples"], e["master_seed"], e["workers"],
                                     cauchy_method=e["cauchy_method"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def delta_list(self):
        if self.deltas:
            out = self.deltas
        elif self.delta is not None:
            out = [self.delta]
        else:
            raise ConfigError("missing 'delta' (or 'deltas')")
        if any(d <= 0 for d in out):
            raise ConfigError("sampling ratios must be positive")
        return out

    def lambda_list(self):
        if self.lambdas:
            lam = np.asarray(self.lambdas, dtype=float)
        else:
            g = self.lambda_grid
            lam = np.logspace(np.log10(float(g["start"])), np.log10(float(g["stop"])), int(g["num"]))
        if np.any(lam <= 0) or np.any(np.diff(lam) < 0):
            raise ConfigError("penalty grid must be positive and sorted")
        return lam


def set_key(data: dict, item: str):
    """Apply one ``dotted.key=value`` override; values are parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in override {item!r}")
    node = data
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {key}: '{p}' is not a mapping")
        node = nxt
    node[parts[-1]] = yaml.safe_load(raw)
