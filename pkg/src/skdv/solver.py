"""Time integration of the truncated stochastic KdV system.

    du + [u_xxx + theta(|u_x|/m) u u_x] dt = int_Y P_m F(u(s-); y) eta~(ds, dy) + P_m Phi(u) dW

Between jumps the dispersive term is propagated exactly (rotation of each
Fourier pair), the tamed nonlinearity and the jump compensator
-sum_i nu_i F(u; y_i) are explicit, and the Wiener term is Euler-Maruyama.
Jump times are inserted into the uniform grid, so every jump is applied at
its exact time with the pre-jump state kept as the left limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .coefficients import DiffusionModel, LevyNoiseModel, ZeroDiffusion, ZeroJumps
from .noise import (
    STREAM_BRIDGE,
    STREAM_JUMPS,
    STREAM_WIENER,
    IntensityMeasure,
    JumpEvent,
    bridge_split,
    sample_prm,
    sample_wiener,
    stream_rng,
)
from .spectral import CutoffSpec, GalerkinState, NormKind, SpectralGrid

__all__ = ["SolverConfig", "Trajectory", "BlowUpError", "GalerkinSolver", "simulate"]


class BlowUpError(RuntimeError):
    """A step produced non-finite coefficients."""

    def __init__(self, t: float, last_state: GalerkinState, h_norm: float, v_norm: float, trajectory: int = 0):
        self.t = t
        self.last_state = last_state
        self.h_norm = h_norm
        self.v_norm = v_norm
        self.trajectory = trajectory
        super().__init__(
            f"numerical blow-up in trajectory {trajectory} after t={t:.6g} "
            f"(last finite |u|_H={h_norm:.6g}, |u|_V={v_norm:.6g})"
        )

    def payload(self) -> dict:
        return {"t": self.t, "h_norm": self.h_norm, "v_norm": self.v_norm, "trajectory": self.trajectory}


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``R`` is the stopping radius for tau_m(R); ``None`` means 1e3 |u0|_H
    (infinite for a zero initial state).  ``noise_refine = r`` draws the
    Brownian path at dt / 2^r so that runs at different dt can share it.

    Linear stability needs nothing: the dispersive term is integrated exactly
    (or A-stably by Crank-Nicolson).  The explicit nonlinearity needs roughly
    dt * k_max * max|u| < 2.8 for ``exponential_rk4`` and much smaller for
    ``exponential_euler``.
    """

    dt: float
    T: float
    m: int
    R: float | None = None
    scheme: str = "exponential_rk4"
    seed: int = 0
    cutoff_mode: str = "norm"
    cutoff_forced_one: bool = False
    cutoff_lower: float | None = None
    cutoff_upper: float | None = None
    nonlinear: bool = True
    noise_refine: int = 0
    keep_increments: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be non-negative, got {self.T}")
        if self.R is not None and not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.scheme not in backend.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(backend.SCHEMES)}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if self.noise_refine < 0:
            raise ValueError("noise_refine must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9)) if self.T > 0 else 0


@dataclass
class Trajectory:
    """Stored path of one simulation.

    ``states[i]`` is the cadlag value u(times[i]) (post-jump at jump times);
    ``left_limits[j]`` holds u(t-) for the j-th applied jump, which sits at
    ``times[jump_index[j]]``.  ``increments[i]`` is the Wiener increment used
    on (times[i], times[i+1]].  ``on_grid`` flags the uniform k*dt times.
    """

    grid: SpectralGrid
    times: np.ndarray
    states: np.ndarray
    stopped_at: float | None
    jump_log: list
    left_limits: np.ndarray
    jump_index: np.ndarray
    on_grid: np.ndarray
    dt: float
    increments: np.ndarray | None = None
    trajectory: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def state(self, i: int) -> GalerkinState:
        return GalerkinState(self.states[i], float(self.times[i]))

    def norms(self, kind: NormKind | str = "H") -> np.ndarray:
        return self.grid.norms(self.states, kind)

    def value_at(self, t: float) -> np.ndarray:
        """Cadlag evaluation: state at the last stored time <= t (frozen after the end)."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(i, 0)]

    @property
    def grid_indices(self) -> np.ndarray:
        return np.flatnonzero(self.on_grid)


class GalerkinSolver:
    """Precomputes operator tables for one (grid, models, noise) combination."""

    def __init__(
        self,
        grid: SpectralGrid,
        config: SolverConfig,
        F_model: LevyNoiseModel | None = None,
        Phi_model: DiffusionModel | None = None,
        nu: IntensityMeasure | None = None,
        backend_name: str | None = None,
    ):
        if config.m != grid.m:
            raise ValueError(f"config.m={config.m} does not match grid.m={grid.m}")
        self.grid = grid
        self.config = config
        self.F = F_model if F_model is not None else ZeroJumps()
        self.Phi = Phi_model if Phi_model is not None else ZeroDiffusion(grid.dim)
        self.nu = nu if nu is not None else IntensityMeasure.empty()
        self.backend = backend_name or backend.NAME
        self.cutoff = CutoffSpec(
            grid.m,
            config.cutoff_lower,
            config.cutoff_upper,
            mode=config.cutoff_mode,
            forced_one=config.cutoff_forced_one,
        )
        self.ops = self._build_ops()
        self.n_modes = self.ops.S.shape[1] if self.ops.noise_matrix is None else self.Phi.n_modes
        self.noise_on = not self.Phi.is_zero
        self.jumps_on = (not self.F.is_zero) and self.nu.total_rate > 0

    def _build_ops(self) -> backend.KernelOps:
        g = self.grid
        B = g.basis(g.nodes)
        Dm = np.column_stack([g.deriv_coeffs(e, 1) for e in np.eye(g.dim)])
        BD = np.vstack([B, B @ Dm])
        Q = (g.length / g.n_phys) * B.T
        k = np.asarray(g.slot_k, dtype=float)
        if self.cutoff.forced_one:
            tmode = backend.THETA_MODES["forced_one"]
        else:
            tmode = backend.THETA_MODES[self.cutoff.mode]
        ops = backend.KernelOps(
            m=float(g.m),
            slot_k=k.copy(),
            v_weight2=1.0 + k * k,
            BD=np.ascontiguousarray(BD),
            Q=np.ascontiguousarray(Q),
            S=np.zeros((g.dim, 1)),
            scheme_code=backend.SCHEMES[self.config.scheme],
            theta_mode=tmode,
            theta_lo=self.cutoff.lower,
            theta_hi=self.cutoff.upper,
            nl_coef=1.0 if self.config.nonlinear else 0.0,
        )
        jf = self.F.kernel_form(self.nu)
        if jf is None:
            F, nu = self.F, self.nu
            ops.drift_extra = lambda t, c: -F.compensator(t, c, nu)
        else:
            a, r0, b = jf
            ops.comp_a, ops.comp_r0 = float(a), float(r0)
            ops.comp_b = None if b is None else np.ascontiguousarray(np.asarray(b, dtype=float)[: g.dim])
        df = self.Phi.kernel_form()
        if df is None:
            Phi = self.Phi
            ops.noise_matrix = lambda t, c: Phi.matrix(t, c)
            ops.noise_on = True
        else:
            S, r0 = df
            ops.S = np.ascontiguousarray(np.asarray(S, dtype=float))
            ops.noise_r0 = float(r0)
            ops.noise_on = bool(np.any(ops.S != 0.0))
        return ops

    # -- single operations ---------------------------------------------------

    def _blowup(self, t, c, trajectory=0):
        st = GalerkinState(c, t)
        return BlowUpError(t, st, self.grid.norm(st, "H"), self.grid.norm(st, "V"), trajectory)

    def step(self, state: GalerkinState, dt_eff: float, wiener_increment=None) -> GalerkinState:
        """One continuous step of length ``dt_eff`` (no jump inside)."""
        if not dt_eff > 0:
            raise ValueError(f"dt_eff must be positive, got {dt_eff}")
        dw = np.zeros((1, self.n_modes)) if wiener_increment is None else np.asarray(wiener_increment, float).reshape(1, -1)
        out = np.empty((1, self.grid.dim))
        n, status = backend.advance(state.coeffs, [dt_eff], dw, out, self.ops, math.inf, state.t, self.backend)
        if status == 2:
            raise self._blowup(state.t, state.coeffs)
        return GalerkinState(out[0], state.t + dt_eff)

    def jump_increment(self, t: float, c: np.ndarray, event: JumpEvent) -> np.ndarray:
        y = self.nu.marks[event.mark_index]
        return self.F.F(t, c, y)[: self.grid.dim]

    def apply_jump(self, state: GalerkinState, event: JumpEvent) -> GalerkinState:
        """u(t) = u(t-) + P_m F(t, u(t-); y)."""
        if not math.isclose(state.t, event.t, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"jump at t={event.t} applied to a state at t={state.t}")
        return GalerkinState(state.coeffs + self.jump_increment(event.t, state.coeffs, event), event.t)

    # -- full path -------------------------------------------------------------

    def stop_radius(self, u0: GalerkinState) -> float:
        if self.config.R is not None:
            return float(self.config.R)
        h0 = self.grid.norm(u0, "H")
        return 1e3 * h0 if h0 > 0 else math.inf

    def _interval_plan(self, trajectory: int):
        """Interval lengths, Wiener increments and jump placement for one path."""
        cfg = self.config
        n = cfg.n_steps
        T, dt = cfg.T, cfg.dt
        grid_t = np.minimum(dt * np.arange(n + 1), T)
        grid_t[-1] = T
        if self.noise_on:
            W = sample_wiener(self.n_modes, n, dt, stream_rng(cfg.seed, trajectory, STREAM_WIENER), cfg.noise_refine)
            inc = W.increments
            last = grid_t[-1] - grid_t[-2] if n else dt
            if n and last < dt:
                inc[-1] *= math.sqrt(last / dt)
        else:
            inc = np.zeros((n, self.n_modes))
        events = sample_prm(self.nu, T, stream_rng(cfg.seed, trajectory, STREAM_JUMPS)) if (self.jumps_on and T > 0) else []
        if not events:
            return grid_t, np.diff(grid_t), inc, [], np.ones(n + 1, bool), events

        bridge = stream_rng(cfg.seed, trajectory, STREAM_BRIDGE)
        ev_t = np.array([e.t for e in events])
        # step k covers (grid_t[k-1], grid_t[k]]
        step_of = np.searchsorted(grid_t, ev_t, side="left")
        times = [grid_t[0]]
        incs = []
        flags = [True]
        jumps_at = []  # (time index, event)
        e = 0
        for k in range(1, n + 1):
            a, b = grid_t[k - 1], grid_t[k]
            dw = inc[k - 1]
            while e < len(events) and step_of[e] == k:
                te = ev_t[e]
                if te < b:
                    if te > times[-1]:
                        first, dw = bridge_split(dw, (te - a) / (b - a), bridge, b - a)
                        times.append(te)
                        incs.append(first)
                        flags.append(False)
                        a = te
                    jumps_at.append((len(times) - 1, events[e]))
                    e += 1
                else:
                    break
            times.append(b)
            incs.append(dw)
            flags.append(True)
            while e < len(events) and step_of[e] == k:
                jumps_at.append((len(times) - 1, events[e]))
                e += 1
        times = np.asarray(times)
        return times, np.diff(times), np.asarray(incs).reshape(len(incs), self.n_modes), jumps_at, np.asarray(flags), events

    def simulate(self, u0: GalerkinState, trajectory: int = 0) -> Trajectory:
        """Jump-adapted path on [0, T], stopped at tau_m(R)."""
        g = self.grid
        if u0.coeffs.size != g.dim:
            raise ValueError(f"u0 has {u0.coeffs.size} coefficients, expected {g.dim} (project it first)")
        R = self.stop_radius(u0)
        times, dts, incs, jumps_at, flags, _ = self._interval_plan(trajectory)
        n_t = times.size
        states = np.empty((n_t, g.dim))
        states[0] = u0.coeffs
        left, jidx, jlog = [], [], []
        stopped = None
        end = n_t
        if float(np.linalg.norm(u0.coeffs)) >= R:
            stopped, end = float(times[0]), 1
        else:
            cursor = 0
            queue = list(jumps_at) + [(n_t - 1, None)]
            qi = 0
            while qi < len(queue):
                target, event = queue[qi]
                if target > cursor:
                    done, status = backend.advance(
                        states[cursor], dts[cursor:target], incs[cursor:target],
                        states[cursor + 1 : target + 1], self.ops, R, times[cursor], self.backend,
                    )
                    if status == 2:
                        i = cursor + done
                        raise self._blowup(float(times[i]), states[i], trajectory)
                    if status == 1:
                        end = cursor + done + 1
                        stopped = float(times[end - 1])
                        break
                    cursor = target
                if event is None:
                    break
                c_minus = states[cursor].copy()
                c_plus = c_minus + self.jump_increment(event.t, c_minus, event)
                if not np.all(np.isfinite(c_plus)):
                    raise self._blowup(float(times[cursor]), c_minus, trajectory)
                left.append(c_minus)
                jidx.append(cursor)
                jlog.append(event)
                states[cursor] = c_plus
                if float(np.linalg.norm(c_plus)) >= R:
                    end = cursor + 1
                    stopped = float(times[cursor])
                    break
                qi += 1
        keep_inc = self.config.keep_increments
        return Trajectory(
            grid=g,
            times=times[:end].copy(),
            states=states[:end].copy() if end < n_t else states,
            stopped_at=stopped,
            jump_log=jlog,
            left_limits=np.asarray(left).reshape(len(left), g.dim),
            jump_index=np.asarray(jidx, dtype=int),
            on_grid=flags[:end].copy(),
            dt=self.config.dt,
            increments=incs[: max(end - 1, 0)].copy() if keep_inc else None,
            trajectory=trajectory,
            meta={"stop_radius": R, "backend": self.backend},
        )


def simulate(
    config: SolverConfig,
    u0: GalerkinState,
    F_model: LevyNoiseModel | None = None,
    Phi_model: DiffusionModel | None = None,
    nu: IntensityMeasure | None = None,
    grid: SpectralGrid | None = None,
    trajectory: int = 0,
) -> Trajectory:
    """Convenience wrapper; the grid defaults to [0, 2 pi) with ``config.m`` modes."""
    grid = grid or SpectralGrid(0.0, 2 * math.pi, config.m)
    return GalerkinSolver(grid, config, F_model, Phi_model, nu).simulate(u0, trajectory)
