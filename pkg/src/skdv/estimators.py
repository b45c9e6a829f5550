"""Monte Carlo surrogates for the a-priori moment bounds and tightness diagnostics.

Every estimator here only tries to falsify: a pass means the sampled
ensemble showed no violation at the stated tolerance.

Ensembles never hold all trajectories in memory; each path is reduced to a
few scalars as soon as it is computed, and reductions use ``math.fsum`` so
the result does not depend on completion order.
"""
from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from .coefficients import DiffusionModel, LevyNoiseModel, ZeroDiffusion, ZeroJumps
from .noise import IntensityMeasure
from .solver import BlowUpError, GalerkinSolver, SolverConfig, Trajectory
from .spectral import GalerkinState, NormKind, SpectralGrid

BLOWUP_TOLERANCE = 0.01

__all__ = [
    "EnsembleBlowUp",
    "EnsembleStatistics",
    "ItoDecomposition",
    "AldousReport",
    "TaylorReport",
    "mean_se",
    "run_ensemble",
    "trajectory_functionals",
    "estimate_moments",
    "halving_stability",
    "ito_decomposition",
    "i_bound_check",
    "ito_ensemble",
    "doob_surrogate",
    "minimal_taylor_constants",
    "taylor_remainder_check",
    "stopping_index",
    "aldous_check",
]


class EnsembleBlowUp(RuntimeError):
    """More than ``BLOWUP_TOLERANCE`` of an ensemble blew up."""

    def __init__(self, n_blowups: int, n_traj: int, first: dict | None):
        self.n_blowups = n_blowups
        self.n_traj = n_traj
        self.first = first
        super().__init__(f"{n_blowups}/{n_traj} trajectories blew up (tolerance {BLOWUP_TOLERANCE:.0%}); first: {first}")


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error with correctly rounded sums (order-insensitive)."""
    v = [float(x) for x in values]
    n = len(v)
    if n == 0:
        return math.nan, math.nan
    mu = math.fsum(v) / n
    if n < 2:
        return mu, math.nan
    var = math.fsum((x - mu) ** 2 for x in v) / (n - 1)
    return mu, math.sqrt(var / n)


# -- ensemble plumbing ------------------------------------------------------------


ModelFactory = Callable[[SpectralGrid], tuple]


def _initial(grid: SpectralGrid, u0) -> GalerkinState:
    if isinstance(u0, GalerkinState):
        return grid.project(u0.coeffs) if u0.coeffs.size != grid.dim else u0
    if callable(u0):
        return grid.interpolate(u0)
    return grid.project(np.asarray(u0, dtype=float))


def make_solver(grid: SpectralGrid, config: SolverConfig, models: ModelFactory | tuple | None, backend=None):
    if models is None:
        F, Phi, nu = ZeroJumps(), ZeroDiffusion(grid.dim), IntensityMeasure.empty()
    elif callable(models):
        F, Phi, nu = models(grid)
    else:
        F, Phi, nu = models
    return GalerkinSolver(grid, config, F, Phi, nu, backend_name=backend)


@dataclass
class EnsembleResult:
    values: list          # per trajectory index; None where the path blew up
    blowups: list         # BlowUpError payloads

    @property
    def ok(self) -> list:
        return [v for v in self.values if v is not None]


def run_ensemble(
    solver: GalerkinSolver,
    u0: GalerkinState,
    n_traj: int,
    reduce: Callable[[Trajectory], object],
    threads: int = 1,
    first: int = 0,
    tolerate: float = BLOWUP_TOLERANCE,
) -> EnsembleResult:
    """Simulate trajectories ``first .. first+n_traj-1`` and reduce each one.

    Results are stored by trajectory index, so the merge is independent of
    the worker count and completion order.
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")

    def one(i):
        try:
            return reduce(solver.simulate(u0, first + i)), None
        except BlowUpError as exc:
            return None, exc.payload()

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(n_traj)))
    else:
        out = [one(i) for i in range(n_traj)]
    values = [v for v, _ in out]
    blow = [b for _, b in out if b is not None]
    if len(blow) > tolerate * n_traj:
        raise EnsembleBlowUp(len(blow), n_traj, blow[0])
    return EnsembleResult(values, blow)


# -- a-priori moment functionals ---------------------------------------------


def _pre_jump_right(traj: Trajectory) -> np.ndarray:
    """Right-end value of each interval before any jump at its end."""
    right = traj.states[1:].copy()
    for j, idx in enumerate(traj.jump_index):
        if idx >= 1:
            right[idx - 1] = traj.left_limits[j]
    return right


def trajectory_functionals(traj: Trajectory, p_values: Sequence[float]) -> dict:
    """sup_t |u|_H^{2p} over stored states (left limits included) and trapezoidal int |u|_V^2 dt."""
    g = traj.grid
    h = g.norms(traj.states, "H")
    if traj.left_limits.size:
        h = np.concatenate([h, g.norms(traj.left_limits, "H")])
    hmax = float(np.max(h))
    sup = {float(p): hmax ** (2 * p) for p in p_values}
    if len(traj) > 1:
        v_left = g.norms(traj.states[:-1], "V") ** 2
        v_right = g.norms(_pre_jump_right(traj), "V") ** 2
        dts = np.diff(traj.times)
        vint = math.fsum(0.5 * dts * (v_left + v_right))
    else:
        vint = 0.0
    return {"sup": sup, "v_int": vint, "stopped": traj.stopped_at is not None}


@dataclass
class EnsembleStatistics:
    """Estimates of E sup |u^m|_H^{2p} and E int |u^m|_V^2 per Galerkin level m."""

    n_traj: int
    p_values: list
    ms: list
    sup_moment: dict = field(default_factory=dict)   # (m, p) -> (mean, se)
    v_integral: dict = field(default_factory=dict)   # m -> (mean, se)
    blowups: dict = field(default_factory=dict)      # m -> count
    stopped: dict = field(default_factory=dict)      # m -> count of tau_m(R) < T
    dt: dict = field(default_factory=dict)           # m -> dt
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_traj < 2:
            raise ValueError("n_traj must be >= 2 for standard errors")

    def uniform_ratio(self) -> dict:
        """max/min across m of every estimated functional."""
        out = {}
        for p in self.p_values:
            vals = [self.sup_moment[(m, p)][0] for m in self.ms]
            out[f"sup_moment[p={p:g}]"] = max(vals) / min(vals) if min(vals) > 0 else math.inf
        vals = [self.v_integral[m][0] for m in self.ms]
        out["v_integral"] = max(vals) / min(vals) if min(vals) > 0 else math.inf
        return out

    def bounded_uniformly(self, ratio: float = 2.0) -> bool:
        r = self.uniform_ratio()
        return all(math.isfinite(v) and v <= ratio for v in r.values())

    def to_dict(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "p_values": list(self.p_values),
            "ms": list(self.ms),
            "dt": {str(m): self.dt.get(m) for m in self.ms},
            "sup_moment": [
                {"m": m, "p": p, "mean": self.sup_moment[(m, p)][0], "se": self.sup_moment[(m, p)][1]}
                for m in self.ms
                for p in self.p_values
            ],
            "v_integral": [{"m": m, "mean": self.v_integral[m][0], "se": self.v_integral[m][1]} for m in self.ms],
            "blowups": {str(m): self.blowups.get(m, 0) for m in self.ms},
            "stopped": {str(m): self.stopped.get(m, 0) for m in self.ms},
            "uniform_ratio": self.uniform_ratio(),
            "notes": list(self.notes),
        }

    def tables(self) -> dict:
        """Columnar data: name -> (header, rows)."""
        sup_rows = [[m, p, *self.sup_moment[(m, p)]] for m in self.ms for p in self.p_values]
        v_rows = [[m, *self.v_integral[m]] for m in self.ms]
        return {
            "sup_moment": (["m", "p", "mean", "se"], sup_rows),
            "v_integral": (["m", "mean", "se"], v_rows),
        }


def check_p_window(p_values, zeta: float) -> list:
    """Reject p outside [1/2, 2 + zeta]; note p above 2 + zeta/2."""
    notes = []
    for p in p_values:
        if not 0.5 <= p <= 2.0 + zeta:
            raise ValueError(f"moment order p={p} outside [1/2, 2+zeta] = [0.5, {2 + zeta:g}]")
        if p > 2.0 + 0.5 * zeta:
            notes.append(f"p={p:g} exceeds 2+zeta/2={2 + 0.5 * zeta:g}: covered only by the wider window")
    return notes


def estimate_moments(
    configs: Sequence[SolverConfig],
    models: ModelFactory | tuple | None,
    u0,
    n_traj: int,
    p_values: Sequence[float] = (1.0, 2.0),
    domain: tuple = (0.0, 2 * math.pi),
    threads: int = 1,
    backend: str | None = None,
) -> EnsembleStatistics:
    """Moment functionals for each configuration (one per Galerkin level m)."""
    p_values = [float(p) for p in p_values]
    ms = [c.m for c in configs]
    if len(set(ms)) != len(ms):
        raise ValueError(f"configs must have distinct m, got {ms}")
    stats_ = EnsembleStatistics(n_traj, p_values, ms)
    for cfg in configs:
        grid = SpectralGrid(domain[0], domain[1], cfg.m)
        solver = make_solver(grid, cfg, models, backend)
        if not stats_.notes:
            stats_.notes.extend(check_p_window(p_values, solver.F.zeta))
        res = run_ensemble(solver, _initial(grid, u0), n_traj, lambda tr: trajectory_functionals(tr, p_values), threads)
        ok = res.ok
        for p in p_values:
            stats_.sup_moment[(cfg.m, p)] = mean_se([r["sup"][p] for r in ok])
        stats_.v_integral[cfg.m] = mean_se([r["v_int"] for r in ok])
        stats_.blowups[cfg.m] = len(res.blowups)
        stats_.stopped[cfg.m] = sum(r["stopped"] for r in ok)
        stats_.dt[cfg.m] = cfg.dt
    return stats_


def halving_stability(coarse: EnsembleStatistics, fine: EnsembleStatistics, n_se: float = 2.0) -> dict:
    """Compare estimates at dt and dt/2: change must stay below ``n_se`` standard errors."""
    out = {}
    for m in coarse.ms:
        for p in coarse.p_values:
            a, sa = coarse.sup_moment[(m, p)]
            b, _ = fine.sup_moment[(m, p)]
            out[f"sup_moment[m={m},p={p:g}]"] = {"change": abs(a - b), "se": sa, "ok": abs(a - b) < n_se * sa}
        a, sa = coarse.v_integral[m]
        b, _ = fine.v_integral[m]
        out[f"v_integral[m={m}]"] = {"change": abs(a - b), "se": sa, "ok": abs(a - b) < n_se * sa}
    return out


# -- Ito bookkeeping ------------------------------------------------------------


def _pow(r2: np.ndarray | float, e: float):
    """|u|^e from |u|^2, with 0^e = 0 for the e <= 0 terms whose prefactor vanishes."""
    r2 = np.asarray(r2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r2 > 0, r2 ** (0.5 * e), 0.0 if e != 0 else 1.0)
    return out


@dataclass
class ItoDecomposition:
    """Discrete version of |u(t)|^{2p} = |u0|^{2p} + K + M + I on the stored grid.

    K: Wiener integral, tamed drift and Ito correction (left-point rule);
    M: jump increments of A minus their compensator;
    I: the compensated Taylor remainder integrated against nu dt.
    """

    times: np.ndarray
    A: np.ndarray
    K: np.ndarray
    M: np.ndarray
    I: np.ndarray
    wiener: np.ndarray
    p: float

    def __iter__(self):
        return iter((self.K, self.M, self.I))

    @property
    def residual(self) -> np.ndarray:
        return self.A - self.A[0] - self.K - self.M - self.I

    @property
    def rel_residual(self) -> float:
        scale = float(np.max(np.abs(self.A))) or 1.0
        return float(np.max(np.abs(self.residual))) / scale


def _batched_nonlinear(grid: SpectralGrid, C: np.ndarray, cutoff) -> np.ndarray:
    """Rows of theta * P_m(u u_x) (norm-based or pointwise cutoff)."""
    B = grid.basis(grid.nodes)
    Dm = np.column_stack([grid.deriv_coeffs(e, 1) for e in np.eye(grid.dim)])
    u = C @ B.T
    ux = C @ (B @ Dm).T
    if cutoff.forced_one:
        w = u * ux
    elif cutoff.mode == "pointwise":
        w = cutoff.theta(np.abs(ux) / grid.m) * u * ux
    else:
        kx = np.sqrt(np.sum((C * grid.slot_k) ** 2, axis=1))
        w = cutoff.theta(kx / grid.m)[:, None] * u * ux
    return (grid.length / grid.n_phys) * (w @ B)


def ito_decomposition(
    traj: Trajectory,
    Phi_model: DiffusionModel | None,
    F_model: LevyNoiseModel | None,
    nu: IntensityMeasure | None,
    p: float,
    cutoff=None,
) -> ItoDecomposition:
    g = traj.grid
    dim = g.dim
    Phi_model = Phi_model if Phi_model is not None else ZeroDiffusion(dim)
    F_model = F_model if F_model is not None else ZeroJumps()
    nu = nu if nu is not None else IntensityMeasure.empty()
    if traj.states.shape[1] != dim:
        raise ValueError(f"trajectory has {traj.states.shape[1]} coefficients, grid expects {dim}")
    if not Phi_model.is_zero:
        probe = Phi_model.matrix(0.0, traj.states[0])
        if probe.shape[0] != dim:
            raise ValueError(f"diffusion model maps into dimension {probe.shape[0]}, trajectory has {dim}")
        if traj.increments is None:
            raise ValueError("trajectory was stored without Wiener increments")
    p = float(p)
    if p < 1:
        raise ValueError("the Ito bookkeeping needs p >= 1")
    n = len(traj)
    S = traj.states
    r2 = np.einsum("ij,ij->i", S, S)
    A = _pow(r2, 2 * p)
    if n == 1:
        z = np.zeros(1)
        return ItoDecomposition(traj.times.copy(), A, z, z.copy(), z.copy(), z.copy(), p)
    from .spectral import CutoffSpec

    cut = cutoff or CutoffSpec(g.m)
    h = np.diff(traj.times)
    C = S[:-1]
    t = traj.times[:-1]
    w2 = _pow(r2[:-1], 2 * p - 2)
    # tamed drift: <u, P_m(theta u u_x)> vanishes up to rounding but is kept
    nl = _batched_nonlinear(g, C, cut)
    dk = -2 * p * w2 * np.einsum("ij,ij->i", C, nl) * h
    dw = np.zeros(n - 1)
    if not Phi_model.is_zero:
        gdw, hs, gu = Phi_model.ito_terms(t, C, traj.increments[: n - 1])
        dw = 2 * p * w2 * np.einsum("ij,ij->i", C, gdw)
        corr = p * w2 * hs
        if p != 1:
            corr = corr + 2 * p * (p - 1) * _pow(r2[:-1], 2 * p - 4) * gu
        dk = dk + corr * h + dw
    dm = np.zeros(n - 1)
    di = np.zeros(n - 1)
    if (not F_model.is_zero) and nu.total_rate > 0:
        comp = np.zeros(n - 1)
        rem = np.zeros(n - 1)
        for y, rate in zip(nu.marks, nu.rates):
            if not rate:
                continue
            f = F_model.F_batch(t, C, y)
            D, R1 = _taylor_sides(r2[:-1], np.einsum("ij,ij->i", f, f), np.einsum("ij,ij->i", C, f), p)
            comp += rate * D
            rem += rate * R1
        dm -= comp * h
        di += rem * h
    if traj.jump_index.size:
        left2 = np.einsum("ij,ij->i", traj.left_limits, traj.left_limits)
        np.add.at(dm, traj.jump_index - 1, A[traj.jump_index] - _pow(left2, 2 * p))
    K = np.concatenate([[0.0], np.cumsum(dk)])
    M = np.concatenate([[0.0], np.cumsum(dm)])
    I = np.concatenate([[0.0], np.cumsum(di)])
    W = np.concatenate([[0.0], np.cumsum(dw)])
    # a jump at t = 0 is impossible (events live in (0, T])
    return ItoDecomposition(traj.times.copy(), A, K, M, I, W, p)


def i_bound_check(decomp: ItoDecomposition, F_model: LevyNoiseModel, C1: float | None = None) -> dict:
    """|I(t)| <= C7 t + C7 int_0^t |u|^{2p} ds with C7 = C1(p) (2 C_2 + C_2p)."""
    p = decomp.p
    if C1 is None:
        C1 = minimal_taylor_constants(p)["C1"]
    C7 = C1 * (2 * F_model.growth_constant(2.0) + F_model.growth_constant(2 * p))
    t = decomp.times
    integral = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (decomp.A[1:] + decomp.A[:-1]))])
    bound = C7 * t + C7 * integral
    excess = float(np.max(np.abs(decomp.I) - bound)) if t.size else 0.0
    return {"C7": C7, "max_excess": excess, "holds": excess <= 1e-12 * max(1.0, float(np.max(bound)))}


def ito_ensemble(
    config: SolverConfig,
    models: ModelFactory | tuple | None,
    u0,
    n_traj: int,
    p: float = 1.0,
    q: float = 1.0,
    domain: tuple = (0.0, 2 * math.pi),
    threads: int = 1,
    first: int = 0,
    backend: str | None = None,
) -> dict:
    """Ensemble means of M(T), the Wiener integral, I(T) and sup_t |M(t)|^q."""
    grid = SpectralGrid(domain[0], domain[1], config.m)
    solver = make_solver(grid, config, models, backend)

    def reduce(tr):
        d = ito_decomposition(tr, solver.Phi, solver.F, solver.nu, p, solver.cutoff)
        return (d.M[-1], d.wiener[-1], d.I[-1], float(np.max(np.abs(d.M))) ** q, d.rel_residual)

    res = run_ensemble(solver, _initial(grid, u0), n_traj, reduce, threads, first)
    ok = res.ok
    out = {"n_traj": n_traj, "blowups": len(res.blowups), "p": p, "q": q}
    for k, name in enumerate(("M_T", "wiener_T", "I_T", "sup_abs_M_q", "rel_residual")):
        mu, se = mean_se([r[k] for r in ok])
        out[name] = {"mean": mu, "se": se}
    return out


def doob_surrogate(config, models, u0, n_traj: int, p: float = 1.0, q: float = 2.0, **kw) -> dict:
    """E sup_t |M(t)|^q from n and 2n trajectories; stable if the change is < 2 standard errors."""
    a = ito_ensemble(config, models, u0, n_traj, p, q, **kw)["sup_abs_M_q"]
    b = ito_ensemble(config, models, u0, 2 * n_traj, p, q, **kw)["sup_abs_M_q"]
    change = abs(a["mean"] - b["mean"])
    se = math.hypot(a["se"], b["se"])
    return {"n": a, "2n": b, "change": change, "stable": bool(math.isfinite(b["mean"]) and change < 2 * se)}


# -- Taylor-remainder inequalities -------------------------------------------------


def _binom_rem(p: float, z):
    """(1+z)^p - 1 - p z, accurate for small |z| (series) and exact-form otherwise."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.05
    if np.any(~small):
        zz = z[~small]
        out[~small] = np.expm1(p * np.log1p(zz)) - p * zz
    if np.any(small):
        zz = z[small]
        acc = np.zeros_like(zz)
        zpow = zz.copy()
        coef = p
        for k in range(2, 40):
            coef = coef * (p - k + 1) / k
            zpow = zpow * zz
            acc = acc + coef * zpow
        out[small] = acc
    return out


def _taylor_sides(nx2, nh2, xh, p):
    """Return (D, R1) with D = |x+h|^{2p} - |x|^{2p}, R1 = D - 2p|x|^{2p-2}<x,h>.

    Uses |x+h|^2 = |x|^2 (1 + z) so that the cancellation for |h| << |x| is
    done analytically.
    """
    nx2 = np.asarray(nx2, dtype=float)
    nh2 = np.asarray(nh2, dtype=float)
    xh = np.asarray(xh, dtype=float)
    nx2, nh2, xh = np.broadcast_arrays(nx2, nh2, xh)
    D = np.empty(nx2.shape)
    R1 = np.empty(nx2.shape)
    big = nx2 > nh2
    if np.any(big):
        a2, b2, c = nx2[big], nh2[big], xh[big]
        # |x+h|^2 >= 0 means z >= -1; rounding can push h = -x just below
        z = np.maximum((2 * c + b2) / a2, -1.0)
        ap = a2**p
        with np.errstate(divide="ignore"):
            D[big] = ap * np.expm1(p * np.log1p(z))
            # R(z) >= 0 and p b2/a2 > 0: a sum of non-negative terms
            R1[big] = ap * (_binom_rem(p, z) + p * b2 / a2)
    sm = ~big
    if np.any(sm):
        a2, b2, c = nx2[sm], nh2[sm], xh[sm]
        s2 = np.maximum(a2 + 2 * c + b2, 0.0)
        D[sm] = s2**p - a2**p
        R1[sm] = D[sm] - 2 * p * _pow(a2, 2 * p - 2) * c
    return D, R1


def _ratios(a, cphi, p):
    """Constant-defining ratios at |h| = 1, |x| = a, cos(angle) = cphi."""
    a = np.asarray(a, float)
    nx2 = a * a
    D, R1 = _taylor_sides(nx2, np.ones_like(nx2), a * cphi, p)
    w = _pow(nx2, 2 * p - 2)
    r1 = np.abs(R1) / (w + 1.0)
    r2 = (0.5 * D * D - 4 * p * p * _pow(nx2, 4 * p - 2)) / (w + 1.0) ** 2
    r3 = (D * D - 8 * p * p * _pow(nx2, 4 * p - 2)) / (_pow(nx2, 4 * p - 4) + 1.0)
    return r1, r2, r3


@lru_cache(maxsize=None)
def minimal_taylor_constants(p: float, safety: float = 1e-9) -> dict:
    """Brute-force the smallest C1, C2, C3 for the corrected inequalities

        | |x+h|^{2p} - |x|^{2p} - 2p|x|^{2p-2}<x,h> | <= C1 (|x|^{2p-2} + |h|^{2p-2}) |h|^2
        (|x+h|^{2p} - |x|^{2p})^2 <= 2 {4p^2 |x|^{4p-2}|h|^2 + C2 (|x|^{2p-2} + |h|^{2p-2})^2 |h|^4}
                                  <= 8p^2 |x|^{4p-2}|h|^2 + C3 |x|^{4p-4}|h|^4 + C3 |h|^{4p}

    All three are homogeneous of degree 4p (or 2p), so |h| = 1 and the search
    runs over a = |x| and the angle.  A coarse grid is refined with a bounded
    local optimizer; the maximum is inflated by ``safety`` (relative).
    """
    p = float(p)
    if p < 1:
        raise ValueError("the Taylor-remainder bounds need p >= 1")
    a = np.concatenate([[0.0], np.logspace(-4, 6, 801)])
    cphi = np.cos(np.linspace(0.0, math.pi, 241))
    A, Cg = np.meshgrid(a, cphi, indexing="ij")
    grids = _ratios(A, Cg, p)
    out = {}
    for name, R in zip(("C1", "C2", "C3"), grids):
        k = int(np.argmax(R))
        best = float(R.flat[k])
        i0, j0 = np.unravel_index(k, R.shape)

        def neg(v, _name=name):
            la, cp = v
            r = _ratios(np.array([math.exp(la)]), np.array([max(-1.0, min(1.0, cp))]), p)
            return -float(r[("C1", "C2", "C3").index(_name)][0])

        if A[i0, j0] > 0:
            x0 = [math.log(A[i0, j0]), Cg[i0, j0]]
            res = optimize.minimize(neg, x0, method="L-BFGS-B", bounds=[(math.log(1e-4), math.log(1e6)), (-1, 1)])
            best = max(best, -float(res.fun))
        out[name] = max(best, 0.0) * (1 + safety) + 1e-300
    out["p"] = p
    return out


@dataclass
class TaylorReport:
    p: float
    form: str
    lhs: dict
    rhs: dict
    constants: dict

    @property
    def margins(self) -> dict:
        return {k: self.rhs[k] - self.lhs[k] for k in self.lhs}

    @property
    def holds(self) -> bool:
        # exact zeros on both sides (h = 0) count as holding
        return all(self.lhs[k] <= self.rhs[k] for k in self.lhs)

    def to_dict(self) -> dict:
        return {"p": self.p, "form": self.form, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds}


def taylor_remainder_check(x, h, p: float, constants: dict | None = None, form: str = "corrected") -> TaylorReport:
    """Evaluate both sides of the Taylor-remainder inequalities for concrete (x, h).

    ``form="printed"`` uses the exponents as originally typeset
    (|h|^{2p} in the first line, |x|^{2p-2} and 4p^2 in the second); those are
    not homogeneous and fail, e.g., for small h parallel to x when p > 1.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if x.shape != h.shape:
        raise ValueError(f"x and h have different shapes {x.shape} and {h.shape}")
    p = float(p)
    if p < 1:
        raise ValueError("the Taylor-remainder bounds need p >= 1")
    C = constants or minimal_taylor_constants(p)
    nx2, nh2, xh = float(x @ x), float(h @ h), float(x @ h)
    D, R1 = (float(v) for v in _taylor_sides(nx2, nh2, xh, p))
    xw = float(_pow(nx2, 2 * p - 2))
    hw = float(_pow(nh2, 2 * p - 2))
    lhs = {"T1": abs(R1), "T2": D * D, "T3": D * D}
    if form == "corrected":
        rhs = {
            "T1": C["C1"] * (xw + hw) * nh2,
            "T2": 2 * (4 * p * p * float(_pow(nx2, 4 * p - 2)) * nh2 + C["C2"] * (xw + hw) ** 2 * nh2 * nh2),
            "T3": 8 * p * p * float(_pow(nx2, 4 * p - 2)) * nh2
            + C["C3"] * float(_pow(nx2, 4 * p - 4)) * nh2 * nh2
            + C["C3"] * float(_pow(nh2, 4 * p)),
        }
    elif form == "printed":
        rhs = {
            "T1": C["C1"] * (xw + hw) * float(_pow(nh2, 2 * p)),
            "T2": 2 * (4 * p * p * xw * nh2 + C["C2"] * (xw + hw) ** 2 * nh2 * nh2),
            "T3": 4 * p * p * float(_pow(nx2, 4 * p - 2)) * nh2
            + C["C3"] * float(_pow(nx2, 4 * p - 4)) * nh2 * nh2
            + C["C3"] * float(_pow(nh2, 4 * p)),
        }
    else:
        raise ValueError(f"form must be 'corrected' or 'printed', got {form!r}")
    return TaylorReport(p, form, lhs, rhs, {k: C[k] for k in ("C1", "C2", "C3")})


# -- Aldous diagnostic ------------------------------------------------------------


def stopping_index(h_norms: np.ndarray, rule: str, cap: int) -> int:
    """Uniform-grid index of a bounded stopping time, using only past/present values.

    ``running_median``: first k >= 1 with h_k above the median of h_0..h_{k-1};
    ``fixed:f``: deterministic k = floor(f * cap);
    ``level:r``: first k with h_k >= r * h_0.
    The result is capped at ``cap`` (tau ^ (T - theta_max) is again a stopping time).
    """
    n = min(len(h_norms) - 1, cap)
    if rule == "running_median":
        past = [float(h_norms[0])]
        for k in range(1, n + 1):
            hk = float(h_norms[k])
            q = len(past)
            med = past[q // 2] if q % 2 else 0.5 * (past[q // 2 - 1] + past[q // 2])
            if hk > med:
                return k
            bisect.insort(past, hk)
        return n
    kind, _, arg = rule.partition(":")
    if kind == "fixed":
        f = float(arg)
        if not 0 <= f <= 1:
            raise ValueError(f"fixed stopping fraction must lie in [0, 1], got {f}")
        return int(math.floor(f * n))
    if kind == "level":
        r = float(arg)
        target = r * float(h_norms[0])
        for k in range(0, n + 1):
            if h_norms[k] >= target:
                return k
        return n
    raise ValueError(f"unknown stopping rule {rule!r}")


@dataclass
class AldousReport:
    thetas: list
    increments: dict          # theta -> (mean, se)
    fitted_b: float
    fitted_C: float
    b_ci: tuple
    stopping_rule: str
    n_traj: int
    degenerate: bool = False
    blowups: int = 0
    norm: str = "V_dual_3"

    def to_dict(self) -> dict:
        return {
            "thetas": list(self.thetas),
            "increments": [{"theta": t, "mean": self.increments[t][0], "se": self.increments[t][1]} for t in self.thetas],
            "fitted_b": self.fitted_b,
            "fitted_C": self.fitted_C,
            "b_ci": list(self.b_ci),
            "stopping_rule": self.stopping_rule,
            "n_traj": self.n_traj,
            "degenerate": self.degenerate,
            "blowups": self.blowups,
            "norm": self.norm,
        }

    def table(self):
        return ["theta", "mean", "se"], [[t, *self.increments[t]] for t in self.thetas]


def _fit_loglog(thetas, means, ses, level=0.95):
    x = np.log(np.asarray(thetas))
    y = np.log(np.asarray(means))
    s = np.asarray(ses) / np.asarray(means)
    w = np.ones_like(x)
    if np.all(s > 0):
        w = 1.0 / s**2
    X = np.column_stack([np.ones_like(x), x])
    WX = X * w[:, None]
    cov = np.linalg.inv(X.T @ WX)
    beta = cov @ (WX.T @ y)
    resid = y - X @ beta
    dof = max(len(x) - 2, 1)
    chi2 = float(resid @ (w * resid)) / dof
    cov = cov * max(chi2, 1.0) if np.any(s > 0) else cov * chi2
    se_b = math.sqrt(max(cov[1, 1], 0.0))
    tq = float(stats.t.ppf(0.5 + level / 2, dof))
    b = float(beta[1])
    return b, float(math.exp(beta[0])), (b - tq * se_b, b + tq * se_b)


def aldous_check(
    config: SolverConfig,
    models: ModelFactory | tuple | None,
    u0,
    n_traj: int,
    thetas: Sequence[float],
    stopping_rule: str = "running_median",
    domain: tuple = (0.0, 2 * math.pi),
    dual_s: float = 3.0,
    threads: int = 1,
    backend: str | None = None,
) -> AldousReport:
    """Estimate E|u(tau + theta) - u(tau)|_{U'} over lags and fit C theta^b.

    Lags must be multiples of ``config.dt``; tau lives on the uniform grid.
    """
    thetas = [float(t) for t in thetas]
    if len(thetas) < 4:
        raise ValueError(f"need at least 4 lags for the fit, got {len(thetas)}")
    if any(b <= a for a, b in zip(thetas, thetas[1:])) or thetas[0] <= 0:
        raise ValueError("thetas must be positive and strictly increasing")
    if thetas[-1] >= config.T / 2:
        raise ValueError(f"thetas must lie in (0, T/2); largest is {thetas[-1]} with T = {config.T}")
    lag = []
    for th in thetas:
        j = th / config.dt
        if abs(j - round(j)) > 1e-9 * max(1.0, j):
            raise ValueError(f"theta={th} is not a multiple of dt={config.dt}")
        lag.append(int(round(j)))
    grid = SpectralGrid(domain[0], domain[1], config.m)
    solver = make_solver(grid, config, models, backend)
    w = grid.norm_weights(NormKind.dual(dual_s))
    cap = config.n_steps - lag[-1]

    def reduce(tr):
        idx = tr.grid_indices
        states = tr.states[idx]
        last = len(idx) - 1
        h = grid.norms(states, "H")
        k = stopping_index(h, stopping_rule, cap)
        out = []
        for j in lag:
            # a path stopped at tau_m(R) is frozen there
            a = states[min(k, last)]
            b = states[min(k + j, last)]
            out.append(float(np.sqrt(np.sum((w * (b - a)) ** 2))))
        return out

    start = _initial(grid, u0)
    res = run_ensemble(solver, start, n_traj, reduce, threads)
    ok = res.ok
    incs = {th: mean_se([r[i] for r in ok]) for i, th in enumerate(thetas)}
    means = [incs[t][0] for t in thetas]
    # increments at round-off level (e.g. a constant state) carry no slope
    floor = 1e-13 * max(grid.norm(start, "H"), 1e-300)
    if all(mu <= floor for mu in means):
        return AldousReport(thetas, incs, math.nan, math.nan, (math.nan, math.nan), stopping_rule, n_traj, True, len(res.blowups), f"V_dual_{dual_s:g}")
    ses = [incs[t][1] if math.isfinite(incs[t][1]) else 0.0 for t in thetas]
    b, C, ci = _fit_loglog(thetas, means, ses)
    return AldousReport(thetas, incs, b, C, ci, stopping_rule, n_traj, False, len(res.blowups), f"V_dual_{dual_s:g}")
