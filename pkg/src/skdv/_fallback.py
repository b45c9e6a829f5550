"""Pure-numpy twin of the compiled stepping kernel.

Same arithmetic as ``_kernels.pyx``; additionally accepts arbitrary drift and
noise callables (``ops.drift_extra`` / ``ops.noise_matrix``) for coefficient
models that have no closed kernel form.
"""
from __future__ import annotations

import numpy as np

from .spectral import smooth_step


def _theta(xi, lo, hi):
    return smooth_step((np.abs(xi) - lo) / (hi - lo))


def _rho(r, r0):
    return 1.0 if r <= r0 else r0 / r


class _Stepper:
    def __init__(self, ops):
        self.ops = ops
        self.k3 = ops.slot_k**3
        self.N = ops.Q.shape[1]
        self.pairs_c = slice(1, None, 2)
        self.pairs_s = slice(2, None, 2)
        self._h = None

    def drift(self, t, c):
        o = self.ops
        out = np.zeros_like(c)
        if o.nl_coef != 0.0:
            th = 1.0
            if o.theta_mode == 0:
                th = float(_theta(np.sqrt(np.sum((o.slot_k * c) ** 2)) / o.m, o.theta_lo, o.theta_hi))
            if th != 0.0:
                phys = o.BD @ c
                u, ux = phys[: self.N], phys[self.N :]
                if o.theta_mode == 1:
                    w = _theta(np.abs(ux) / o.m, o.theta_lo, o.theta_hi) * u * ux
                else:
                    w = u * ux
                out = (-o.nl_coef * th) * (o.Q @ w)
        if o.comp_a != 0.0:
            out = out - (o.comp_a * _rho(float(np.sqrt(c @ c)), o.comp_r0)) * c
        if o.comp_b is not None:
            out = out - o.comp_b
        if o.drift_extra is not None:
            out = out + o.drift_extra(t, c)
        return out

    def noise(self, t, c, dw):
        o = self.ops
        if o.noise_matrix is not None:
            return o.noise_matrix(t, c) @ dw
        if not o.noise_on:
            return np.zeros_like(c)
        gain = _rho(float(np.sqrt(np.sum(o.v_weight2 * c * c))), o.noise_r0)
        return gain * (o.S @ dw)

    def set_h(self, h):
        if h != self._h:
            om = self.k3[1::2] * h
            self.cs, self.sn = np.cos(om), np.sin(om)
            om2 = self.k3[1::2] * (0.5 * h)
            self.cs2, self.sn2 = np.cos(om2), np.sin(om2)
            self._h = h

    @staticmethod
    def rotate(v, cs, sn):
        out = v.copy()
        a, b = v[1::2], v[2::2]
        out[1::2] = a * cs + b * sn
        out[2::2] = b * cs - a * sn
        return out

    def step(self, t, c, h, dw):
        self.set_h(h)
        g = self.noise(t, c, dw)
        scheme = self.ops.scheme_code
        if scheme == 0:
            k1 = self.drift(t, c)
            return self.rotate(c + h * k1 + g, self.cs, self.sn)
        if scheme == 1:
            cs, sn, cs2, sn2 = self.cs, self.sn, self.cs2, self.sn2
            k1 = self.drift(t, c)
            k2 = self.drift(t + 0.5 * h, self.rotate(c + 0.5 * h * k1, cs2, sn2))
            k3 = self.drift(t + 0.5 * h, self.rotate(c, cs2, sn2) + 0.5 * h * k2)
            k3 = self.rotate(k3, cs2, sn2)
            k4 = self.drift(t + h, self.rotate(c, cs, sn) + h * k3)
            k2 = self.rotate(k2, cs2, sn2)
            out = self.rotate(c + (h / 6.0) * k1 + g, cs, sn)
            return out + (h / 3.0) * (k2 + k3) + (h / 6.0) * k4
        # Crank-Nicolson on the dispersive term
        rhs = h * self.drift(t, c) + g
        om = 0.5 * h * self.k3[1::2]
        z = c[1::2] - 1j * c[2::2]
        gz = rhs[1::2] - 1j * rhs[2::2]
        z = ((1 + 1j * om) * z + gz) / (1 - 1j * om)
        out = np.empty_like(c)
        out[0] = c[0] + rhs[0]
        out[1::2] = z.real
        out[2::2] = -z.imag
        return out


def advance(c0, dts, dW, out, ops, stop_radius, t0=0.0):
    """See ``skdv._kernels.advance``; ``t0`` feeds time-dependent callables."""
    n = len(dts)
    if n == 0:
        return 0, 0
    stepper = _Stepper(ops)
    c = np.array(c0, dtype=float)
    t = float(t0)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            h = float(dts[i])
            c = stepper.step(t, c, h, dW[i])
            t += h
            s = float(c @ c)
            if not np.isfinite(s) or not np.all(np.isfinite(c)):
                return i, 2
            out[i] = c
            if np.sqrt(s) >= stop_radius:
                return i + 1, 1
    return n, 0
