"""Experiment configuration: YAML file -> validated, fully defaulted tree.

Precedence is ``--set`` flags > file > defaults.  Every key is checked
before any computation starts and errors name the dotted key.

Schema (defaults in brackets; ``!`` marks required keys)::

    grid:      x1 [0], x2 [2 pi], m! , n_phys [null -> smallest even > 3m]
    solver:    dt!, T!, R [null -> 1e3 |u0|_H], scheme [exponential_rk4],
               seed [0], nonlinear [true], noise_refine [0],
               cutoff: {mode [norm], forced_one [false], lower [null], upper [null]}
    initial:   kind [fourier]: fourier -> terms [[1, 1.0, 0.0]] as [k, a_cos, b_sin];
               soliton -> speed, x0; constant -> value; zero
    noise:     marks [[]], rates [[]], inflate [1],
               jumps: {model [zero], scale [1], radius [10], zeta [1], L [null],
                       profile [[[1, 1.0, 0.0]]]}
               diffusion: {model [zero], amplitude [0.1], radius [10], decay [1],
                           alpha [1e-4], beta [1], kappa [null]}
    estimator: n_traj [100], p_values [[1, 2]], ms [[16, 32, 64]],
               dt_halving [true], thetas [[]], theta_fractions [[]],
               stopping_rule [running_median], dual_s [3], validate_samples [1000]
    simulate:  n_traj [1]
    output:    directory [skdv-out], formats [[text, binary]]
"""
from __future__ import annotations

import copy
import math
from pathlib import Path

import numpy as np
import yaml

from . import backend
from .coefficients import (
    AdditiveJumps,
    BoundedMultiplicativeJumps,
    DiagonalDampedDiffusion,
    LinearJumps,
    ZeroDiffusion,
    ZeroJumps,
)
from .noise import IntensityMeasure
from .solver import SolverConfig
from .spectral import SpectralGrid

REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


DEFAULTS = {
    "grid": {"x1": 0.0, "x2": 2 * math.pi, "m": REQUIRED, "n_phys": None},
    "solver": {
        "dt": REQUIRED,
        "T": REQUIRED,
        "R": None,
        "scheme": "exponential_rk4",
        "seed": 0,
        "nonlinear": True,
        "noise_refine": 0,
        "cutoff": {"mode": "norm", "forced_one": False, "lower": None, "upper": None},
    },
    "initial": {"kind": "fourier", "terms": [[1, 1.0, 0.0]], "speed": 1.0, "x0": None, "value": 0.0},
    "noise": {
        "marks": [],
        "rates": [],
        "inflate": 1.0,
        "jumps": {"model": "zero", "scale": 1.0, "radius": 10.0, "zeta": 1.0, "L": None, "profile": [[1, 1.0, 0.0]]},
        "diffusion": {
            "model": "zero",
            "amplitude": 0.1,
            "radius": 10.0,
            "decay": 1.0,
            "alpha": 1e-4,
            "beta": 1.0,
            "kappa": None,
        },
    },
    "estimator": {
        "n_traj": 100,
        "p_values": [1.0, 2.0],
        "ms": [16, 32, 64],
        "dt_halving": True,
        "thetas": [],
        "theta_fractions": [],
        "stopping_rule": "running_median",
        "dual_s": 3.0,
        "validate_samples": 1000,
    },
    "simulate": {"n_traj": 1},
    "output": {"directory": "skdv-out", "formats": ["text", "binary"]},
}

JUMP_MODELS = ("zero", "additive", "bounded_multiplicative", "linear")
DIFFUSION_MODELS = ("zero", "diagonal_damped")
INITIAL_KINDS = ("fourier", "soliton", "constant", "zero")
FORMATS = ("text", "binary")


# -- tree helpers ------------------------------------------------------------------


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(given).__name__}")
    out = {}
    for k in given:
        if k not in defaults:
            raise ConfigError(f"{path}{k}", "unknown key")
    for k, dv in defaults.items():
        key = f"{path}{k}"
        if isinstance(dv, dict):
            out[k] = _merge(dv, given.get(k, {}) if given.get(k) is not None else {}, key + ".")
        elif k in given:
            out[k] = copy.deepcopy(given[k])
        elif dv is REQUIRED:
            raise ConfigError(key, "required key is missing")
        else:
            out[k] = copy.deepcopy(dv)
    return out


def set_key(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot set a key below a scalar")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(text, "override must look like key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return key.strip(), value


# -- validators ---------------------------------------------------------------------


def _num(tree, key, *, positive=False, nonneg=False, integer=False, allow_none=False, finite=True):
    node = tree
    for p in key.split("."):
        node = node[p]
    if node is None:
        if allow_none:
            return None
        raise ConfigError(key, "must not be null")
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(key, f"must be a number, got {node!r}")
    v = float(node)
    if finite and not math.isfinite(v):
        raise ConfigError(key, f"must be finite, got {node!r}")
    if integer and v != int(v):
        raise ConfigError(key, f"must be an integer, got {node!r}")
    if positive and not v > 0:
        raise ConfigError(key, f"must be > 0, got {node!r}")
    if nonneg and not v >= 0:
        raise ConfigError(key, f"must be >= 0, got {node!r}")
    return int(v) if integer else v


def _choice(tree, key, options):
    node = tree
    for p in key.split("."):
        node = node[p]
    if node not in options:
        raise ConfigError(key, f"must be one of {list(options)}, got {node!r}")
    return node


def _num_list(tree, key, *, positive=False, integer=False, min_len=0):
    node = tree
    for p in key.split("."):
        node = node[p]
    if not isinstance(node, list):
        raise ConfigError(key, f"must be a list, got {node!r}")
    if len(node) < min_len:
        raise ConfigError(key, f"needs at least {min_len} entries, got {len(node)}")
    for i, v in enumerate(node):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
            raise ConfigError(f"{key}[{i}]", f"must be a finite number, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(f"{key}[{i}]", f"must be > 0, got {v!r}")
        if integer and v != int(v):
            raise ConfigError(f"{key}[{i}]", f"must be an integer, got {v!r}")
    return [int(v) if integer else float(v) for v in node]


def _terms(tree, key):
    node = tree
    for p in key.split("."):
        node = node[p]
    if not isinstance(node, list):
        raise ConfigError(key, "must be a list of [k, a_cos, b_sin] triples")
    for i, t in enumerate(node):
        if not (isinstance(t, list) and len(t) == 3 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in t)):
            raise ConfigError(f"{key}[{i}]", f"must be [k, a_cos, b_sin], got {t!r}")
        if t[0] != int(t[0]) or t[0] < 0:
            raise ConfigError(f"{key}[{i}]", f"wavenumber index must be a non-negative integer, got {t[0]!r}")
    return node


def validate(tree: dict) -> None:
    x1 = _num(tree, "grid.x1")
    x2 = _num(tree, "grid.x2")
    if not x2 > x1:
        raise ConfigError("grid.x2", f"must exceed grid.x1={x1}, got {x2}")
    m = _num(tree, "grid.m", positive=True, integer=True)
    n_phys = _num(tree, "grid.n_phys", positive=True, integer=True, allow_none=True)
    if n_phys is not None and n_phys < 2 * m + 1:
        raise ConfigError("grid.n_phys", f"must be >= 2m+1 = {2 * m + 1}, got {n_phys}")

    _num(tree, "solver.dt", positive=True)
    _num(tree, "solver.T", nonneg=True)
    R = tree["solver"]["R"]
    if R is not None and not (R == "inf" or (isinstance(R, (int, float)) and not isinstance(R, bool) and R > 0)):
        raise ConfigError("solver.R", f"must be > 0, 'inf' or null, got {R!r}")
    _choice(tree, "solver.scheme", tuple(backend.SCHEMES))
    _num(tree, "solver.seed", nonneg=True, integer=True)
    if not isinstance(tree["solver"]["nonlinear"], bool):
        raise ConfigError("solver.nonlinear", "must be true or false")
    _num(tree, "solver.noise_refine", nonneg=True, integer=True)
    _choice(tree, "solver.cutoff.mode", ("norm", "pointwise"))
    if not isinstance(tree["solver"]["cutoff"]["forced_one"], bool):
        raise ConfigError("solver.cutoff.forced_one", "must be true or false")
    lo = _num(tree, "solver.cutoff.lower", allow_none=True)
    hi = _num(tree, "solver.cutoff.upper", allow_none=True)
    lo = 0.5 * m if lo is None else lo
    hi = float(m) if hi is None else hi
    if not 0.5 * m <= lo < hi <= m:
        raise ConfigError("solver.cutoff", f"need m/2 <= lower < upper <= m, got lower={lo}, upper={hi}, m={m}")

    kind = _choice(tree, "initial.kind", INITIAL_KINDS)
    if kind == "fourier":
        for i, t in enumerate(_terms(tree, "initial.terms")):
            if t[0] > m:
                raise ConfigError(f"initial.terms[{i}]", f"wavenumber index {t[0]} exceeds m={m}")
    elif kind == "soliton":
        _num(tree, "initial.speed", positive=True)
        _num(tree, "initial.x0", allow_none=True)
    elif kind == "constant":
        _num(tree, "initial.value")

    marks = _num_list(tree, "noise.marks")
    rates = _num_list(tree, "noise.rates")
    if len(marks) != len(rates):
        raise ConfigError("noise.rates", f"has {len(rates)} entries but noise.marks has {len(marks)}")
    for i, r in enumerate(rates):
        if r < 0:
            raise ConfigError(f"noise.rates[{i}]", f"must be >= 0, got {r}")
    _num(tree, "noise.inflate", nonneg=True)
    jm = _choice(tree, "noise.jumps.model", JUMP_MODELS)
    _num(tree, "noise.jumps.scale")
    _num(tree, "noise.jumps.radius", positive=True)
    _num(tree, "noise.jumps.zeta", positive=True)
    _num(tree, "noise.jumps.L", nonneg=True, allow_none=True)
    if jm == "additive":
        _terms(tree, "noise.jumps.profile")
    if jm != "zero" and not marks:
        raise ConfigError("noise.marks", f"jump model {jm!r} needs at least one mark")
    _choice(tree, "noise.diffusion.model", DIFFUSION_MODELS)
    _num(tree, "noise.diffusion.amplitude", nonneg=True)
    _num(tree, "noise.diffusion.radius", positive=True)
    _num(tree, "noise.diffusion.decay", nonneg=True)
    _num(tree, "noise.diffusion.alpha", nonneg=True)
    _num(tree, "noise.diffusion.beta", nonneg=True)
    _num(tree, "noise.diffusion.kappa", nonneg=True, allow_none=True)

    _num(tree, "estimator.n_traj", positive=True, integer=True)
    zeta = float(tree["noise"]["jumps"]["zeta"])
    for i, pv in enumerate(_num_list(tree, "estimator.p_values", positive=True)):
        if not 0.5 <= pv <= 2.0 + zeta:
            raise ConfigError(f"estimator.p_values[{i}]", f"must lie in [1/2, 2+zeta] = [0.5, {2 + zeta:g}], got {pv}")
    _num_list(tree, "estimator.ms", positive=True, integer=True, min_len=1)
    if not isinstance(tree["estimator"]["dt_halving"], bool):
        raise ConfigError("estimator.dt_halving", "must be true or false")
    lags = _num_list(tree, "estimator.thetas", positive=True)
    T, dt = float(tree["solver"]["T"]), float(tree["solver"]["dt"])
    lags = lags + [f * T for f in _num_list(tree, "estimator.theta_fractions", positive=True)]
    if lags:
        if len(lags) < 4 or len(set(lags)) != len(lags):
            raise ConfigError("estimator.thetas", f"need at least 4 distinct lags for the fit, got {sorted(lags)}")
        for th in lags:
            if not th < T / 2:
                raise ConfigError("estimator.thetas", f"lag {th} must be below T/2 = {T / 2}")
            j = th / dt
            if abs(j - round(j)) > 1e-9 * max(1.0, j) or round(j) < 1:
                raise ConfigError("estimator.thetas", f"lag {th} is not a positive multiple of solver.dt = {dt}")
    rule = tree["estimator"]["stopping_rule"]
    if not isinstance(rule, str) or not (
        rule == "running_median" or rule.startswith("fixed:") or rule.startswith("level:")
    ):
        raise ConfigError("estimator.stopping_rule", f"must be running_median, fixed:<f> or level:<r>, got {rule!r}")
    if rule != "running_median":
        try:
            float(rule.partition(":")[2])
        except ValueError:
            raise ConfigError("estimator.stopping_rule", f"bad numeric argument in {rule!r}") from None
    _num(tree, "estimator.dual_s", positive=True)
    _num(tree, "estimator.validate_samples", positive=True, integer=True)
    _num(tree, "simulate.n_traj", positive=True, integer=True)

    if not isinstance(tree["output"]["directory"], str) or not tree["output"]["directory"]:
        raise ConfigError("output.directory", "must be a non-empty string")
    fm = tree["output"]["formats"]
    if not isinstance(fm, list) or any(f not in FORMATS for f in fm):
        raise ConfigError("output.formats", f"must be a list drawn from {list(FORMATS)}, got {fm!r}")


# -- the configuration object ------------------------------------------------------------


class ExperimentConfig:
    """Validated configuration tree with typed accessors."""

    def __init__(self, tree: dict):
        merged = _merge(DEFAULTS, tree)
        validate(merged)
        self.tree = merged

    @classmethod
    def from_yaml(cls, text: str, overrides=()) -> "ExperimentConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from None
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "top level must be a mapping")
        for ov in overrides:
            k, v = parse_override(ov) if isinstance(ov, str) else ov
            set_key(raw, k, v)
        return cls(raw)

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text(), overrides)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=True, default_flow_style=None)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.tree == other.tree

    def __repr__(self):
        return f"ExperimentConfig({self.tree!r})"

    def __getitem__(self, key):
        return self.tree[key]

    # -- builders ----------------------------------------------------------------

    def grid(self, m: int | None = None) -> SpectralGrid:
        g = self.tree["grid"]
        mm = g["m"] if m is None else m
        n_phys = g["n_phys"] if m is None else None
        return SpectralGrid(float(g["x1"]), float(g["x2"]), int(mm), n_phys)

    def solver_config(self, m: int | None = None, dt: float | None = None, noise_refine: int | None = None) -> SolverConfig:
        s = self.tree["solver"]
        own_m = m is None or m == self.tree["grid"]["m"]
        R = s["R"]
        R = math.inf if R == "inf" else (None if R is None else float(R))
        return SolverConfig(
            dt=float(s["dt"] if dt is None else dt),
            T=float(s["T"]),
            m=int(self.tree["grid"]["m"] if m is None else m),
            R=R,
            scheme=s["scheme"],
            seed=int(s["seed"]),
            cutoff_mode=s["cutoff"]["mode"],
            cutoff_forced_one=bool(s["cutoff"]["forced_one"]),
            # explicit bounds belong to grid.m; other levels of a sweep use m/2, m
            cutoff_lower=None if (s["cutoff"]["lower"] is None or not own_m) else float(s["cutoff"]["lower"]),
            cutoff_upper=None if (s["cutoff"]["upper"] is None or not own_m) else float(s["cutoff"]["upper"]),
            nonlinear=bool(s["nonlinear"]),
            noise_refine=int(s["noise_refine"] if noise_refine is None else noise_refine),
        )

    def intensity(self) -> IntensityMeasure:
        n = self.tree["noise"]
        return IntensityMeasure([float(y) for y in n["marks"]], [float(r) for r in n["rates"]])

    def _fourier(self, grid: SpectralGrid, terms):
        L = grid.length

        def f(x):
            out = np.zeros_like(x)
            for k, a, b in terms:
                kx = 2 * math.pi * k * (x - grid.x1) / L
                out = out + a * np.cos(kx) + b * np.sin(kx)
            return out

        return f

    def initial_function(self, grid: SpectralGrid):
        ini = self.tree["initial"]
        kind = ini["kind"]
        if kind == "zero":
            return lambda x: np.zeros_like(x)
        if kind == "constant":
            v = float(ini["value"])
            return lambda x: np.full_like(x, v)
        if kind == "soliton":
            c = float(ini["speed"])
            L = grid.length
            x0 = grid.x1 + 0.5 * L if ini["x0"] is None else float(ini["x0"])

            def sol(x):
                xi = (x - x0 + 0.5 * L) % L - 0.5 * L
                return 3 * c / np.cosh(0.5 * math.sqrt(c) * xi) ** 2

            return sol
        return self._fourier(grid, ini["terms"])

    def models(self, grid: SpectralGrid):
        """(F_model, Phi_model, nu) for the given grid."""
        n = self.tree["noise"]
        inflate = float(n["inflate"])
        nu = self.intensity()
        j = n["jumps"]
        model = j["model"]
        zeta = float(j["zeta"])
        scale = float(j["scale"]) * inflate
        if model == "zero":
            F = ZeroJumps(zeta)
        elif model == "additive":
            F = AdditiveJumps(nu, grid.interpolate(self._fourier(grid, j["profile"])).coeffs, scale, zeta)
        elif model == "bounded_multiplicative":
            F = BoundedMultiplicativeJumps(nu, scale, float(j["radius"]), zeta)
        else:
            F = LinearJumps(nu, scale, zeta, None if j["L"] is None else float(j["L"]))
        d = n["diffusion"]
        if d["model"] == "zero" or float(d["amplitude"]) * inflate == 0.0:
            Phi = ZeroDiffusion(grid.dim)
        else:
            Phi = DiagonalDampedDiffusion(
                grid,
                amplitude=float(d["amplitude"]) * inflate,
                radius=float(d["radius"]),
                decay=float(d["decay"]),
                alpha=float(d["alpha"]),
                beta=float(d["beta"]),
                kappa=None if d["kappa"] is None else float(d["kappa"]),
            )
        return F, Phi, nu

    def thetas(self) -> list:
        e = self.tree["estimator"]
        T = float(self.tree["solver"]["T"])
        return [float(t) for t in e["thetas"]] + [float(f) * T for f in e["theta_fractions"]]
