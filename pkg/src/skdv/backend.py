"""Selects the stepping kernel at import: compiled if built, numpy otherwise.

Set ``SKDV_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _fallback

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

SCHEMES = {"exponential_euler": 0, "exponential_rk4": 1, "semi_implicit_cn": 2}
THETA_MODES = {"norm": 0, "pointwise": 1, "forced_one": 2}

_forced = os.environ.get("SKDV_BACKEND", "").strip().lower()
if _forced == "python" or _kernels is None:
    NAME = "python"
else:
    NAME = "compiled"


def available() -> list[str]:
    return ["python"] + (["compiled"] if _kernels is not None else [])


@dataclass
class KernelOps:
    """Precomputed operator tables shared by both backends."""

    m: float
    slot_k: np.ndarray
    v_weight2: np.ndarray
    BD: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    scheme_code: int = 1
    theta_mode: int = 0
    theta_lo: float = 0.5
    theta_hi: float = 1.0
    nl_coef: float = 1.0
    comp_a: float = 0.0
    comp_r0: float = np.inf
    comp_b: np.ndarray | None = None
    noise_on: bool = False
    noise_r0: float = np.inf
    drift_extra: object = None
    noise_matrix: object = None

    @property
    def compiled_ok(self) -> bool:
        return self.drift_extra is None and self.noise_matrix is None


def advance(c0, dts, dW, out, ops: KernelOps, stop_radius: float, t0: float = 0.0, backend: str | None = None):
    """Run ``len(dts)`` steps from ``c0``; returns ``(n_written, status)``."""
    name = backend or NAME
    if name == "compiled" and _kernels is not None and ops.compiled_ok:
        dts = np.ascontiguousarray(dts, dtype=float)
        dW = np.ascontiguousarray(dW, dtype=float)
        if dW.ndim != 2 or dW.shape[1] == 0:
            dW = np.zeros((len(dts), max(ops.S.shape[1], 1)))
        return _kernels.advance(np.array(c0, dtype=float), dts, dW, out, ops, float(stop_radius))
    return _fallback.advance(c0, dts, dW, out, ops, stop_radius, t0)
