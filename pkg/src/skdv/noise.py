"""Driving noises: finite-activity Poisson random measure and truncated Wiener process.

Random streams are derived from a single master seed with
``SeedSequence(master, spawn_key=(trajectory, stream))`` (rule ``SEED_RULE``),
so every trajectory owns independent generators regardless of the order in
which trajectories are computed.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

SEED_RULE = "skdv-seed-v1: SeedSequence(entropy=master, spawn_key=(trajectory, stream))"

STREAM_JUMPS = 0
STREAM_WIENER = 1
STREAM_BRIDGE = 2


def stream_rng(master_seed: int, trajectory: int = 0, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(trajectory), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, init=False)
class IntensityMeasure:
    """Finite list of marks y_i with jump rates nu_i per unit time."""

    marks: tuple
    rates: tuple

    def __init__(self, marks: Sequence, rates: Sequence[float]):
        marks = tuple(float(y) if np.isscalar(y) else y for y in marks)
        rates = tuple(float(r) for r in rates)
        if len(marks) != len(rates):
            raise ValueError(f"{len(marks)} marks but {len(rates)} rates")
        if any(not (r >= 0 and math.isfinite(r)) for r in rates):
            raise ValueError(f"rates must be finite and non-negative, got {rates}")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def empty(cls) -> "IntensityMeasure":
        return cls((), ())

    @property
    def total_rate(self) -> float:
        return math.fsum(self.rates)

    @property
    def probabilities(self) -> np.ndarray:
        lam = self.total_rate
        return np.asarray(self.rates) / lam

    def __len__(self) -> int:
        return len(self.marks)


@dataclass(frozen=True)
class JumpEvent:
    t: float
    mark_index: int


def sample_prm(nu: IntensityMeasure, horizon: float, seed=None) -> list[JumpEvent]:
    """Sample the Poisson random measure on (0, horizon] x marks.

    Total count ~ Poisson(Lambda T), times i.i.d. uniform, marks i.i.d. with
    probabilities nu_i / Lambda: exact for finite activity.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    lam = nu.total_rate
    if lam == 0.0:
        return []
    rng = as_rng(seed)
    n = rng.poisson(lam * horizon)
    if n == 0:
        return []
    # 1 - U lies in (0, 1], so event times land in (0, T]
    times = np.sort(horizon * (1.0 - rng.random(n)))
    if len(nu) == 1:
        idx = np.zeros(n, dtype=int)
    else:
        idx = rng.choice(len(nu), size=n, p=nu.probabilities)
    return [JumpEvent(float(t), int(i)) for t, i in zip(times, idx)]


def counts_by_mark(events: Sequence[JumpEvent], n_marks: int, t0: float = 0.0, t1: float = math.inf) -> np.ndarray:
    out = np.zeros(n_marks, dtype=int)
    for ev in events:
        if t0 < ev.t <= t1:
            out[ev.mark_index] += 1
    return out


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def compensator_path(
    nu: IntensityMeasure,
    integrand: Callable[[float, int], np.ndarray],
    times: np.ndarray,
    n_quad: int = 8,
) -> np.ndarray:
    """int_0^t sum_i f(s, y_i) nu_i ds on ``times`` (Gauss-Legendre per interval)."""
    times = np.asarray(times, dtype=float)
    nodes, weights = _gauss_legendre(n_quad)
    probe = np.atleast_1d(np.asarray(integrand(float(times[0]), 0), dtype=float)) if len(nu) else np.zeros(1)
    out = np.zeros((times.size,) + probe.shape)
    acc = np.zeros(probe.shape)
    prev = 0.0
    for n, t in enumerate(times):
        if t > prev:
            half = 0.5 * (t - prev)
            mid = 0.5 * (t + prev)
            for x, w in zip(nodes, weights):
                s = mid + half * x
                for i, r in enumerate(nu.rates):
                    if r:
                        acc = acc + (half * w * r) * np.asarray(integrand(s, i), dtype=float)
            prev = t
        out[n] = acc
    return out


def compensated_integral(
    events: Sequence[JumpEvent],
    nu: IntensityMeasure,
    integrand: Callable[[float, int], np.ndarray],
    horizon: float,
    times: np.ndarray | None = None,
    n_quad: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Path of int_0^t int_Y f(s, y) (eta - ds nu)(ds, dy) on a time grid.

    Returns ``(times, values)`` with ``values[n]`` the jump sum over events
    with t_i <= times[n] minus the compensator.  ``times`` defaults to
    ``[0, horizon]``.
    """
    if times is None:
        times = np.array([0.0, float(horizon)])
    times = np.asarray(times, dtype=float)
    comp = compensator_path(nu, integrand, times, n_quad) if len(nu) else np.zeros((times.size, 1))
    jumps = np.zeros_like(comp)
    if events:
        ev_t = np.array([e.t for e in events])
        contrib = np.array([np.atleast_1d(np.asarray(integrand(e.t, e.mark_index), dtype=float)) for e in events])
        csum = np.cumsum(contrib, axis=0)
        pos = np.searchsorted(ev_t, times, side="right")
        has = pos > 0
        jumps[has] = csum[pos[has] - 1]
    return times, jumps - comp


@dataclass(frozen=True)
class WienerPath:
    """Increments of an n_modes-truncated cylindrical Wiener process."""

    n_modes: int
    increments: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def values(self) -> np.ndarray:
        """W at the grid times, starting from W(0) = 0."""
        out = np.zeros((self.n_steps + 1, self.n_modes))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def sample_wiener(n_modes: int, n_steps: int, dt: float, seed=None, refine: int = 0) -> WienerPath:
    """i.i.d. N(0, dt) increments, one column per mode.

    With ``refine = r`` the path is drawn on the finer grid dt / 2^r and
    summed back in blocks, so runs at dt and dt/2 can share one Brownian path.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_modes < 1:
        raise ValueError(f"n_modes must be positive, got {n_modes}")
    if n_steps < 0 or refine < 0:
        raise ValueError("n_steps and refine must be non-negative")
    rng = as_rng(seed)
    sub = 1 << refine
    z = rng.standard_normal((n_steps * sub, n_modes)) * math.sqrt(dt / sub)
    if sub > 1:
        z = z.reshape(n_steps, sub, n_modes).sum(axis=1)
    return WienerPath(int(n_modes), z, float(dt))


def bridge_split(increment: np.ndarray, frac: float, rng: np.random.Generator, dt: float):
    """Split a Brownian increment over dt at fraction ``frac`` of the step."""
    s = frac * dt
    first = frac * increment + math.sqrt(max(s * (dt - s) / dt, 0.0)) * rng.standard_normal(increment.shape)
    return first, increment - first


# -- columnar audit format --------------------------------------------------------


def write_events(events: Sequence[JumpEvent], fh=None) -> str:
    buf = io.StringIO()
    buf.write("# t mark_index\n")
    for ev in events:
        buf.write(f"{ev.t!r} {ev.mark_index}\n")
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_events(text: str) -> list[JumpEvent]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t, i = line.split()
        out.append(JumpEvent(float(t), int(i)))
    return out


def write_increments(path: WienerPath, fh=None) -> str:
    buf = io.StringIO()
    buf.write(f"# dt {path.dt!r} n_modes {path.n_modes} n_steps {path.n_steps}\n")
    for row in path.increments:
        buf.write(" ".join(repr(float(v)) for v in row))
        buf.write("\n")
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_increments(text: str) -> WienerPath:
    lines = text.splitlines()
    head = lines[0].lstrip("#").split()
    meta = dict(zip(head[::2], head[1::2]))
    n_modes = int(meta["n_modes"])
    rows = [[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()]
    inc = np.array(rows, dtype=float).reshape(len(rows), n_modes)
    return WienerPath(n_modes, inc, float(meta["dt"]))
