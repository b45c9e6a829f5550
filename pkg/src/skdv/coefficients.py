"""Jump coefficients F, diffusion coefficients Phi, and numerical hypothesis checks.

Models carry *declared* constants; ``validate_hypotheses`` samples states and
looks for violations.  A pass means no counterexample was found, nothing more.

Marks are real numbers and the built-in jump models use the mark itself as
the jump amplitude g(y) = scale * y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import IntensityMeasure
from .spectral import GalerkinState, SpectralGrid

RATIO_TOL = 1e-9


def _rho(r: float, r0: float) -> float:
    return 1.0 if r <= r0 else r0 / r


def k_lambda(grid: SpectralGrid, state: GalerkinState, lam: float) -> GalerkinState:
    """u_xxx + lam * P_m(u u_x), without the cutoff."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    out = grid.deriv_coeffs(state.coeffs, 3)
    if lam != 0.0:
        out = out + lam * grid.product_coeffs(state.coeffs)
    return GalerkinState(out, state.t)


# -- jump coefficients --------------------------------------------------------


class LevyNoiseModel:
    """Jump coefficient F(t, u; y) with declared constants L, C_p and zeta.

    ``growth`` maps exponents p to C_p; the declared set should cover
    {1, 2, 2 + zeta/2, 4 + zeta}.
    """

    name = "custom"

    def __init__(self, F: Callable, L: float, growth: dict, zeta: float = 1.0, name: str | None = None):
        self._F = F
        self.L = float(L)
        self.growth = {float(p): float(c) for p, c in growth.items()}
        self.zeta = float(zeta)
        if name:
            self.name = name

    @property
    def exponents(self) -> tuple:
        z = self.zeta
        return (1.0, 2.0, 2.0 + 0.5 * z, 4.0 + z)

    def F(self, t: float, c: np.ndarray, mark) -> np.ndarray:
        return np.asarray(self._F(t, c, mark), dtype=float)

    def growth_constant(self, p: float) -> float:
        try:
            return self.growth[float(p)]
        except KeyError:
            raise KeyError(f"model {self.name!r} declares no growth constant for p={p}") from None

    def compensator(self, t: float, c: np.ndarray, nu: IntensityMeasure) -> np.ndarray:
        """sum_i nu_i F(t, u; y_i)."""
        out = np.zeros_like(c, dtype=float)
        for y, r in zip(nu.marks, nu.rates):
            if r:
                out = out + r * self.F(t, c, y)[: c.size]
        return out

    def F_batch(self, t: float, C: np.ndarray, mark) -> np.ndarray:
        """F applied to every row of ``C``; ``t`` is a scalar or one time per row."""
        ts = np.broadcast_to(np.asarray(t, dtype=float), (len(C),))
        return np.array([self.F(float(s), c, mark)[: c.size] for s, c in zip(ts, C)]).reshape(C.shape)

    def kernel_form(self, nu: IntensityMeasure):
        """``(a, r0, b)`` with compensator = a rho(|u|_H; r0) u + b, or None."""
        return None

    @property
    def is_zero(self) -> bool:
        return False


class ZeroJumps(LevyNoiseModel):
    name = "zero"

    def __init__(self, zeta: float = 1.0):
        super().__init__(None, 0.0, {}, zeta)

    def F(self, t, c, mark):
        return np.zeros_like(c, dtype=float)

    def F_batch(self, t, C, mark):
        return np.zeros_like(C, dtype=float)

    def growth_constant(self, p):
        return 0.0

    def kernel_form(self, nu):
        return 0.0, math.inf, None

    @property
    def is_zero(self):
        return True


def _moment(nu: IntensityMeasure, scale: float, p: float) -> float:
    return math.fsum(r * abs(scale * y) ** p for y, r in zip(nu.marks, nu.rates))


class AdditiveJumps(LevyNoiseModel):
    """F(t, u; y) = scale * y * profile, independent of u (so L = 0)."""

    name = "additive"

    def __init__(self, nu: IntensityMeasure, profile: np.ndarray, scale: float = 1.0, zeta: float = 1.0):
        self.profile = np.asarray(profile, dtype=float).copy()
        self.profile.setflags(write=False)
        self.scale = float(scale)
        self._nu = nu
        pn = float(np.linalg.norm(self.profile))
        self._pn = pn
        z = float(zeta)
        growth = {p: _moment(nu, scale, p) * pn**p for p in (1.0, 2.0, 2.0 + 0.5 * z, 4.0 + z)}
        super().__init__(None, 0.0, growth, z)

    def F(self, t, c, mark):
        return (self.scale * float(mark)) * self.profile[: c.size]

    def F_batch(self, t, C, mark):
        return np.broadcast_to(self.F(t, C[0], mark), C.shape).copy()

    def growth_constant(self, p):
        return _moment(self._nu, self.scale, p) * self._pn**p

    def kernel_form(self, nu):
        b = math.fsum(r * self.scale * y for y, r in zip(nu.marks, nu.rates)) * self.profile
        return 0.0, math.inf, b


class BoundedMultiplicativeJumps(LevyNoiseModel):
    """F(t, u; y) = scale * y * rho(|u|_H) u with rho(r) = min(1, r0 / r).

    u -> rho(|u|) u is the metric projection onto the ball of radius r0, hence
    1-Lipschitz, which gives L = sum nu_i (scale y_i)^2 and
    C_p = sum nu_i |scale y_i|^p.
    """

    name = "bounded_multiplicative"

    def __init__(self, nu: IntensityMeasure, scale: float = 1.0, radius: float = 1.0, zeta: float = 1.0):
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius}")
        self.scale = float(scale)
        self.radius = float(radius)
        self._nu = nu
        z = float(zeta)
        growth = {p: _moment(nu, scale, p) for p in (1.0, 2.0, 2.0 + 0.5 * z, 4.0 + z)}
        super().__init__(None, _moment(nu, scale, 2.0), growth, z)

    def F(self, t, c, mark):
        r = float(np.sqrt(c @ c))
        return (self.scale * float(mark) * _rho(r, self.radius)) * c

    def F_batch(self, t, C, mark):
        r = np.sqrt(np.einsum("ij,ij->i", C, C))
        rho = np.where(r <= self.radius, 1.0, self.radius / np.maximum(r, 1e-300))
        return (self.scale * float(mark)) * rho[:, None] * C

    def growth_constant(self, p):
        return _moment(self._nu, self.scale, p)

    def kernel_form(self, nu):
        a = math.fsum(r * self.scale * y for y, r in zip(nu.marks, nu.rates))
        return a, self.radius, None


class LinearJumps(LevyNoiseModel):
    """F(t, u; y) = scale * y * u; exact constants L = C_2 = sum nu (scale y)^2."""

    name = "linear"

    def __init__(self, nu: IntensityMeasure, scale: float = 1.0, zeta: float = 1.0, L: float | None = None):
        self.scale = float(scale)
        self._nu = nu
        z = float(zeta)
        growth = {p: _moment(nu, scale, p) for p in (1.0, 2.0, 2.0 + 0.5 * z, 4.0 + z)}
        super().__init__(None, _moment(nu, scale, 2.0) if L is None else L, growth, z)

    def F(self, t, c, mark):
        return (self.scale * float(mark)) * c

    def F_batch(self, t, C, mark):
        return (self.scale * float(mark)) * C

    def growth_constant(self, p):
        return _moment(self._nu, self.scale, p)

    def kernel_form(self, nu):
        return math.fsum(r * self.scale * y for y, r in zip(nu.marks, nu.rates)), math.inf, None


# -- diffusion coefficients ---------------------------------------------------


class DiffusionModel:
    """Phi(t, u) as a (2m+1) x n_modes matrix with declared constants."""

    name = "custom"

    def __init__(
        self,
        matrix: Callable,
        n_modes: int,
        L_phi: float,
        alpha: float,
        beta: float,
        kappa: float,
        C_phi: float,
        name: str | None = None,
    ):
        self._matrix = matrix
        self.n_modes = int(n_modes)
        self.L_phi = float(L_phi)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.kappa = float(kappa)
        self.C_phi = float(C_phi)
        if name:
            self.name = name

    def matrix(self, t: float, c: np.ndarray) -> np.ndarray:
        return np.asarray(self._matrix(t, c), dtype=float)

    def hs_norm2(self, t: float, c: np.ndarray) -> float:
        M = self.matrix(t, c)
        return float(np.sum(M * M))

    def ito_terms(self, t: float, C: np.ndarray, dW: np.ndarray):
        """Per row: (Phi(u) dW, |Phi(u)|_HS^2, |Phi(u)^T u|^2)."""
        g, hs, gu = [], [], []
        ts = np.broadcast_to(np.asarray(t, dtype=float), (len(C),))
        for s, c, dw in zip(ts, C, dW):
            M = self.matrix(float(s), c)
            g.append(M @ dw)
            hs.append(float(np.sum(M * M)))
            v = M.T @ c
            gu.append(float(v @ v))
        return np.array(g).reshape(C.shape), np.array(hs), np.array(gu)

    def kernel_form(self):
        """``(S, r0)`` with Phi(u) = rho(|u|_V; r0) S, or None."""
        return None

    @property
    def is_zero(self) -> bool:
        return False


class ZeroDiffusion(DiffusionModel):
    name = "zero"

    def __init__(self, dim: int):
        super().__init__(None, 1, 0.0, 0.0, 0.0, 0.0, 0.0)
        self.dim = int(dim)

    def matrix(self, t, c):
        return np.zeros((c.size, 1))

    def kernel_form(self):
        return np.zeros((self.dim, 1)), math.inf

    @property
    def is_zero(self):
        return True


class DiagonalDampedDiffusion(DiffusionModel):
    """Phi(t, u) e_j = sigma_j rho(|u|_V) e_j, sigma_j = amplitude (1 + k_j^2)^(-decay).

    ``decay > 1/2`` keeps sum sigma_j^2 (1 + k_j^2) bounded as m grows.
    Declared constants: C_phi = sum sigma^2, L_phi = C_phi / r0^2 (rho is
    1/r0-Lipschitz), and (alpha, beta, kappa) default to (1e-4, 1, C_phi).
    """

    name = "diagonal_damped"

    def __init__(
        self,
        grid: SpectralGrid,
        amplitude: float = 0.1,
        radius: float = 10.0,
        decay: float = 1.0,
        alpha: float = 1e-4,
        beta: float = 1.0,
        kappa: float | None = None,
    ):
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius}")
        self.grid = grid
        self.amplitude = float(amplitude)
        self.radius = float(radius)
        self.decay = float(decay)
        k = grid.slot_k
        self.sigma = self.amplitude * (1.0 + k * k) ** (-self.decay)
        self._vw2 = 1.0 + k * k
        c_phi = float(np.sum(self.sigma**2))
        super().__init__(
            None,
            grid.dim,
            c_phi / self.radius**2,
            alpha,
            beta,
            c_phi if kappa is None else kappa,
            c_phi,
        )

    def gain(self, c: np.ndarray) -> float:
        return _rho(float(np.sqrt(np.sum(self._vw2 * c * c))), self.radius)

    def matrix(self, t, c):
        return np.diag(self.gain(c) * self.sigma)

    def hs_norm2(self, t, c):
        return self.gain(c) ** 2 * float(np.sum(self.sigma**2))

    def ito_terms(self, t, C, dW):
        r = np.sqrt(np.einsum("ij,j,ij->i", C, self._vw2, C))
        gain = np.where(r <= self.radius, 1.0, self.radius / np.maximum(r, 1e-300))
        g = gain[:, None] * self.sigma * dW
        hs = gain**2 * float(np.sum(self.sigma**2))
        gu = gain**2 * np.einsum("ij,j->i", C * C, self.sigma**2)
        return g, hs, gu

    def kernel_form(self):
        return np.diag(self.sigma), self.radius

    @property
    def is_zero(self):
        return self.amplitude == 0.0


# -- validation ---------------------------------------------------------------


@dataclass
class Check:
    name: str
    statistic: float
    passed: bool
    kind: str = "ratio"  # "ratio": max lhs/rhs, pass if <= 1; "excess": max relative rhs-lhs, pass if <= 0
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name:<16} max {self.kind} = {self.statistic:.6g}"


@dataclass
class ValidationReport:
    model: str
    n_samples: int
    checks: list
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_samples": self.n_samples,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "kind": c.kind, "statistic": c.statistic, "passed": c.passed, **c.detail}
                for c in self.checks
            ],
            "notes": self.notes,
        }

    def __str__(self):
        head = f"model {self.model}: {'PASS' if self.passed else 'FAIL'} on {self.n_samples} samples"
        return "\n".join([head] + [c.line() for c in self.checks])


def state_sampler(grid: SpectralGrid, h_range=(1e-2, 10.0), decay: float = 1.0):
    """Random states with |u|_H log-uniform in ``h_range`` and spectrum ~ (1+k^2)^(-decay/2)."""
    w = (1.0 + grid.slot_k**2) ** (-0.5 * decay)
    lo, hi = math.log(h_range[0]), math.log(h_range[1])

    def draw(rng: np.random.Generator) -> np.ndarray:
        c = rng.standard_normal(grid.dim) * w
        c /= np.linalg.norm(c)
        return c * math.exp(rng.uniform(lo, hi))

    return draw


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs <= 0 else math.inf


def validate_hypotheses(
    model,
    sampler: Callable[[np.random.Generator], np.ndarray],
    n_samples: int,
    nu: IntensityMeasure | None = None,
    grid: SpectralGrid | None = None,
    seed=0,
    t: float = 0.0,
) -> ValidationReport:
    """Spot-check (F1)-(F3) for jump models or (Phi1)-(Phi3) for diffusion models."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    if isinstance(model, LevyNoiseModel):
        if nu is None:
            raise ValueError("jump-model validation needs the intensity measure")
        return _validate_levy(model, sampler, n_samples, nu, rng, t)
    if isinstance(model, DiffusionModel):
        if grid is None:
            raise ValueError("diffusion-model validation needs the spectral grid")
        return _validate_diffusion(model, sampler, n_samples, grid, rng, t)
    raise TypeError(f"cannot validate object of type {type(model).__name__}")


def _validate_levy(model, sampler, n, nu, rng, t):
    marks, rates = nu.marks, nu.rates
    f2 = 0.0
    f3 = {p: 0.0 for p in model.exponents}
    null_mass = 0.0
    for _ in range(n):
        u1, u2 = sampler(rng), sampler(rng)
        d2 = float(np.sum((u1 - u2) ** 2))
        lhs = 0.0
        mom = {p: 0.0 for p in f3}
        nm = 0.0
        for y, r in zip(marks, rates):
            F1 = model.F(t, u1, y)
            F2 = model.F(t, u2, y)
            lhs += r * float(np.sum((F1 - F2) ** 2))
            nf = float(np.linalg.norm(F1))
            if nf == 0.0:
                nm += r
            for p in mom:
                mom[p] += r * nf**p
        null_mass = max(null_mass, nm)
        f2 = max(f2, _ratio(lhs, model.L * d2))
        h = float(np.linalg.norm(u1))
        for p in f3:
            f3[p] = max(f3[p], _ratio(mom[p], model.growth_constant(p) * (1.0 + h**p)))
    checks = [Check("F2", f2, f2 <= 1 + RATIO_TOL, detail={"L": model.L})]
    for p, v in f3.items():
        checks.append(Check(f"F3[p={p:g}]", v, v <= 1 + RATIO_TOL, detail={"C_p": model.growth_constant(p)}))
    notes = {
        # zero jumps carry no information and are thinned out of nu; reported only
        "F1_max_null_jump_mass": null_mass,
        "F4": "continuity: not falsifiable by sampling, not checked",
    }
    return ValidationReport(model.name, n, checks, notes)


def _validate_diffusion(model, sampler, n, grid, rng, t):
    vw = np.sqrt(1.0 + grid.slot_k**2)
    p1 = p3 = 0.0
    p2 = {0.0: -math.inf, 1.0: -math.inf}
    bad_v = math.inf
    max_v = 0.0
    for _ in range(n):
        u1, u2 = sampler(rng), sampler(rng)
        M1, M2 = model.matrix(t, u1), model.matrix(t, u2)
        dv2 = float(np.sum((vw * (u1 - u2)) ** 2))
        p1 = max(p1, _ratio(float(np.sum((M1 - M2) ** 2)), model.L_phi * dv2))
        hs = float(np.sum(M1 * M1))
        hv = float(np.linalg.norm(vw * u1))
        hh = float(np.linalg.norm(u1))
        max_v = max(max_v, hv)
        p3 = max(p3, _ratio(hs, model.C_phi * (max(hv, hh) + 1.0)))
        st = GalerkinState(u1, t)
        rhs = model.alpha * hv * hv - model.beta * hh - model.kappa
        for lam in p2:
            kl = float(k_lambda(grid, st, lam).coeffs @ u1)
            lhs = min(2.0 * kl - hs, -hs)
            # relative excess, so rounding in <K u, u> ~ 0 cannot fail a tight bound
            excess = (rhs - lhs) / (1.0 + abs(rhs) + abs(lhs))
            p2[lam] = max(p2[lam], excess)
            if excess > RATIO_TOL:
                bad_v = min(bad_v, hv)
    checks = [
        Check("Phi1", p1, p1 <= 1 + RATIO_TOL, detail={"L_phi": model.L_phi}),
        Check("Phi3", p3, p3 <= 1 + RATIO_TOL, detail={"C_phi": model.C_phi}),
    ]
    for lam, v in p2.items():
        checks.append(
            Check(
                f"Phi2[lambda={lam:g}]",
                v,
                v <= RATIO_TOL,
                kind="excess",
                detail={"alpha": model.alpha, "beta": model.beta, "kappa": model.kappa},
            )
        )
    notes = {
        "Phi2_holds_for_V_norm_below": bad_v if math.isfinite(bad_v) else max_v,
        "sampled_max_V_norm": max_v,
        "Phi4": "continuity: not falsifiable by sampling, not checked",
    }
    return ValidationReport(model.name, n, checks, notes)
