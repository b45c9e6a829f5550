"""Periodic Fourier-Galerkin discretization on [x1, x2].

Coefficients are stored against the real orthonormal basis of L^2(x1, x2)::

    e_0 = 1/sqrt(L),
    e_{2j-1} = sqrt(2/L) cos(k_j (x - x1)),
    e_{2j}   = sqrt(2/L) sin(k_j (x - x1)),   k_j = 2 pi j / L,

so a state with Galerkin dimension m has 2m+1 entries ordered
``[a_0, c_1, s_1, ..., c_m, s_m]`` and the H-norm is the Euclidean norm of
that vector.  Physical-space products go through a real FFT on ``n_phys``
equispaced nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "SpectralGrid",
    "GalerkinState",
    "NormKind",
    "CutoffSpec",
    "smooth_step",
    "project",
]


class DimensionError(ValueError):
    """Coefficient vector length does not fit the requested Galerkin dimension."""


def project(coeffs_full, m: int, t: float = 0.0) -> "GalerkinState":
    """Orthogonal projection P_m: keep the first 2m+1 basis coefficients."""
    coeffs_full = np.asarray(coeffs_full, dtype=float)
    if m < 1:
        raise DimensionError(f"Galerkin dimension m must be >= 1, got {m}")
    need = 2 * m + 1
    if coeffs_full.ndim != 1 or coeffs_full.shape[0] < need:
        raise DimensionError(
            f"cannot project a vector of length {coeffs_full.size} onto m={m}: "
            f"need length >= {need}"
        )
    return GalerkinState(coeffs_full[:need].copy(), t)


@dataclass(frozen=True)
class GalerkinState:
    """Coefficients of u^m at time ``t``; read-only and always finite."""

    coeffs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size % 2 != 1:
            raise DimensionError(f"state needs an odd-length 1-D vector, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise FloatingPointError("state contains non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "t", float(self.t))

    @property
    def m(self) -> int:
        return (self.coeffs.size - 1) // 2

    def __add__(self, other: "GalerkinState") -> "GalerkinState":
        return GalerkinState(self.coeffs + other.coeffs, self.t)

    def __sub__(self, other: "GalerkinState") -> "GalerkinState":
        return GalerkinState(self.coeffs - other.coeffs, self.t)

    def scaled(self, a: float) -> "GalerkinState":
        return GalerkinState(a * self.coeffs, self.t)


@dataclass(frozen=True)
class NormKind:
    """Which Sobolev-type norm to take: ``H``, ``V`` or ``V_dual`` with order ``s``."""

    tag: str = "H"
    s: float = 3.0

    def __post_init__(self):
        if self.tag not in ("H", "V", "V_dual"):
            raise ValueError(f"unknown norm tag {self.tag!r}")
        if self.tag == "V_dual" and not self.s > 0:
            raise ValueError(f"dual norm order must be positive, got {self.s}")

    @classmethod
    def H(cls) -> "NormKind":
        return cls("H")

    @classmethod
    def V(cls) -> "NormKind":
        return cls("V")

    @classmethod
    def dual(cls, s: float = 3.0) -> "NormKind":
        return cls("V_dual", s)

    def weights(self, k: np.ndarray) -> np.ndarray:
        if self.tag == "H":
            return np.ones_like(k)
        if self.tag == "V":
            return np.sqrt(1.0 + k * k)
        return (1.0 + k * k) ** (-0.5 * self.s)


def smooth_step(x):
    """C-infinity transition: 1 for x <= 0, 0 for x >= 1."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0.0, 1.0, 0.0)
    inner = (x > 0.0) & (x < 1.0)
    if np.any(inner):
        xi = x[inner]
        a = np.exp(-1.0 / (1.0 - xi))
        b = np.exp(-1.0 / xi)
        out[inner] = a / (a + b)
    return out


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth taming factor theta for the nonlinearity.

    theta = 1 on [0, lower], decreases smoothly on [lower, upper] and vanishes
    beyond ``upper``.  Defaults are lower = m/2, upper = m.  ``mode`` selects
    where the argument |u_x|/m is evaluated: ``"norm"`` uses the H-norm of u_x
    (one scalar per state), ``"pointwise"`` evaluates it at every collocation
    node.  ``forced_one`` disables the taming entirely.
    """

    m: int
    lower: float | None = None
    upper: float | None = None
    mode: str = "norm"
    forced_one: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"cutoff needs m >= 1, got {self.m}")
        lo = 0.5 * self.m if self.lower is None else float(self.lower)
        hi = float(self.m) if self.upper is None else float(self.upper)
        if not (0.5 * self.m <= lo < hi <= self.m):
            raise ValueError(
                f"cutoff profile must satisfy m/2 <= lower < upper <= m; "
                f"got lower={lo}, upper={hi}, m={self.m}"
            )
        if self.mode not in ("norm", "pointwise"):
            raise ValueError(f"cutoff mode must be 'norm' or 'pointwise', got {self.mode!r}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def theta(self, xi):
        if self.forced_one:
            return np.ones_like(np.asarray(xi, dtype=float))
        xi = np.abs(np.asarray(xi, dtype=float))
        return smooth_step((xi - self.lower) / (self.upper - self.lower))


@dataclass(frozen=True)
class SpectralGrid:
    """Periodic domain [x1, x2) with m retained Fourier modes.

    ``n_phys`` defaults to the smallest even size above 3m, which makes the
    quadratic product u*u_x alias-free after projection.  Any n_phys >= 2m+1
    is accepted.
    """

    x1: float = 0.0
    x2: float = 2 * math.pi
    m: int = 16
    n_phys: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.x2 > self.x1:
            raise ValueError(f"need x2 > x1, got x1={self.x1}, x2={self.x2}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        n = self.n_phys
        if n is None:
            n = 3 * self.m + 1
            n += n % 2
        if n < 2 * self.m + 1:
            raise ValueError(f"n_phys={n} is below 2m+1={2 * self.m + 1}")
        object.__setattr__(self, "n_phys", int(n))

    @property
    def length(self) -> float:
        return self.x2 - self.x1

    @property
    def dim(self) -> int:
        return 2 * self.m + 1

    @property
    def dealiased(self) -> bool:
        return self.n_phys > 3 * self.m

    @property
    def wavenumbers(self) -> np.ndarray:
        """k_j = 2 pi j / L for j = 0..m (the negative half mirrors these)."""
        return 2 * math.pi * np.arange(self.m + 1) / self.length

    @property
    def slot_k(self) -> np.ndarray:
        """Wavenumber attached to each coefficient slot."""
        if "slot_k" not in self._cache:
            k = self.wavenumbers
            sk = np.empty(self.dim)
            sk[0] = 0.0
            sk[1::2] = k[1:]
            sk[2::2] = k[1:]
            sk.setflags(write=False)
            self._cache["slot_k"] = sk
        return self._cache["slot_k"]

    @property
    def nodes(self) -> np.ndarray:
        return self.x1 + self.length * np.arange(self.n_phys) / self.n_phys

    # -- basis / transforms -------------------------------------------------

    def basis(self, x) -> np.ndarray:
        """Orthonormal basis functions evaluated at ``x``: shape (len(x), dim)."""
        x = np.asarray(x, dtype=float) - self.x1
        L = self.length
        out = np.empty((x.size, self.dim))
        out[:, 0] = 1.0 / math.sqrt(L)
        kx = np.outer(x, self.wavenumbers[1:])
        out[:, 1::2] = math.sqrt(2.0 / L) * np.cos(kx)
        out[:, 2::2] = math.sqrt(2.0 / L) * np.sin(kx)
        return out

    def to_spectrum(self, coeffs) -> np.ndarray:
        """Real coefficients -> complex amplitudes u_hat_j, j = 0..m."""
        c = np.asarray(coeffs, dtype=float)
        L = self.length
        z = np.empty(self.m + 1, dtype=complex)
        z[0] = c[0] / math.sqrt(L)
        z[1:] = (c[1::2] - 1j * c[2::2]) / math.sqrt(2.0 * L)
        return z

    def from_spectrum(self, z) -> np.ndarray:
        L = self.length
        c = np.empty(self.dim)
        c[0] = z[0].real * math.sqrt(L)
        c[1::2] = z[1 : self.m + 1].real * math.sqrt(2.0 * L)
        c[2::2] = -z[1 : self.m + 1].imag * math.sqrt(2.0 * L)
        return c

    def to_physical(self, coeffs) -> np.ndarray:
        """Sample the band-limited function on ``nodes``."""
        n = self.n_phys
        half = np.zeros(n // 2 + 1, dtype=complex)
        half[: self.m + 1] = n * self.to_spectrum(coeffs)
        return np.fft.irfft(half, n=n)

    def from_physical(self, values) -> np.ndarray:
        """Projection P_m of nodal samples onto the retained modes."""
        n = self.n_phys
        half = np.fft.rfft(np.asarray(values, dtype=float)) / n
        # n >= 2m+1 keeps every retained mode strictly below Nyquist
        return self.from_spectrum(half[: self.m + 1])

    def state(self, coeffs, t: float = 0.0) -> GalerkinState:
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (self.dim,):
            raise DimensionError(f"expected {self.dim} coefficients for m={self.m}, got {c.size}")
        return GalerkinState(c, t)

    def interpolate(self, f, t: float = 0.0) -> GalerkinState:
        """P_m applied to a callable sampled on the nodes."""
        return GalerkinState(self.from_physical(f(self.nodes)), t)

    def project(self, coeffs_full, t: float = 0.0) -> GalerkinState:
        return project(coeffs_full, self.m, t)

    # -- operators ----------------------------------------------------------

    def _check(self, state: GalerkinState):
        if state.coeffs.size != self.dim:
            raise DimensionError(
                f"state has {state.coeffs.size} coefficients, grid expects {self.dim}"
            )

    def deriv_coeffs(self, c: np.ndarray, order: int) -> np.ndarray:
        if int(order) != order or order < 1:
            raise ValueError(f"derivative order must be a positive integer, got {order}")
        order = int(order)
        out = np.zeros_like(c)
        cc, ss = c[1::2], c[2::2]
        kn = self.slot_k[1::2] ** order
        # d/dx maps (cos, sin) coefficients (a, b) to k (b, -a): a quarter turn per order
        q = order % 4
        if q == 0:
            out[1::2], out[2::2] = kn * cc, kn * ss
        elif q == 1:
            out[1::2], out[2::2] = kn * ss, -kn * cc
        elif q == 2:
            out[1::2], out[2::2] = -kn * cc, -kn * ss
        else:
            out[1::2], out[2::2] = -kn * ss, kn * cc
        return out

    def deriv(self, state: GalerkinState, order: int) -> GalerkinState:
        """d^order/dx^order, exact on the retained modes."""
        self._check(state)
        return GalerkinState(self.deriv_coeffs(state.coeffs, order), state.t)

    def product_coeffs(self, c: np.ndarray, cutoff: CutoffSpec | None = None) -> np.ndarray:
        """theta * P_m(u u_x) for a raw coefficient vector (theta = 1 if no cutoff)."""
        u = self.to_physical(c)
        ux_c = self.deriv_coeffs(c, 1)
        ux = self.to_physical(ux_c)
        if cutoff is None:
            return self.from_physical(u * ux)
        if cutoff.mode == "norm":
            th = float(cutoff.theta(math.sqrt(float(ux_c @ ux_c)) / cutoff.m))
            if th == 0.0:
                return np.zeros_like(c)
            return th * self.from_physical(u * ux)
        return self.from_physical(cutoff.theta(np.abs(ux) / cutoff.m) * u * ux)

    def nonlinear_term(self, state: GalerkinState, cutoff: CutoffSpec | None = None) -> GalerkinState:
        """Cutoff-tamed, dealiased P_m(u u_x)."""
        self._check(state)
        if cutoff is not None and cutoff.m != self.m:
            raise DimensionError(f"cutoff built for m={cutoff.m} used on grid with m={self.m}")
        return GalerkinState(self.product_coeffs(state.coeffs, cutoff), state.t)

    def norm_weights(self, kind: NormKind) -> np.ndarray:
        return kind.weights(self.slot_k)

    def norm(self, state: GalerkinState | np.ndarray, kind: NormKind | str = "H") -> float:
        c = state.coeffs if isinstance(state, GalerkinState) else np.asarray(state, dtype=float)
        if isinstance(kind, str):
            kind = NormKind(kind)
        w = self.norm_weights(kind)
        return float(np.sqrt(np.sum((w * c) ** 2)))

    def norms(self, coeffs: np.ndarray, kind: NormKind | str = "H") -> np.ndarray:
        """Row-wise norms of a (n, dim) coefficient array."""
        if isinstance(kind, str):
            kind = NormKind(kind)
        w = self.norm_weights(kind)
        return np.sqrt(np.sum((np.asarray(coeffs) * w) ** 2, axis=-1))

    def inner(self, a: GalerkinState, b: GalerkinState) -> float:
        return float(a.coeffs @ b.coeffs)

    def mass(self, state: GalerkinState) -> float:
        """Integral of u over one period."""
        return float(state.coeffs[0] * math.sqrt(self.length))
