# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop: advance one Galerkin trajectory over a run of steps.

Mirrors ``skdv._fallback.advance`` operation for operation; the Python
wrapper in ``skdv.backend`` picks whichever is importable.
"""
import numpy as np

from libc.math cimport sqrt, exp, cos, sin, isfinite, fabs
from scipy.linalg.cython_blas cimport dgemv

cdef double _ONE = 1.0
cdef double _ZERO = 0.0
cdef int _INC = 1


cdef inline double _step_fn(double x) noexcept nogil:
    # smooth 1 -> 0 transition on (0, 1)
    cdef double a, b
    if x <= 0.0:
        return 1.0
    if x >= 1.0:
        return 0.0
    a = exp(-1.0 / (1.0 - x))
    b = exp(-1.0 / x)
    return a / (a + b)


cdef inline double _theta(double xi, double lo, double hi) noexcept nogil:
    return _step_fn((fabs(xi) - lo) / (hi - lo))


cdef inline double _rho(double r, double r0) noexcept nogil:
    if r <= r0:
        return 1.0
    return r0 / r


cdef struct Ops:
    int dim
    int nphys
    int nw
    int scheme
    int theta_mode      # 0 norm, 1 pointwise, 2 forced one
    int noise_on
    double m
    double theta_lo
    double theta_hi
    double nl_coef
    double comp_a
    double comp_r0
    double noise_r0
    double *k
    double *vw2
    double *BD
    double *Q
    double *S
    double *comp_b
    double *phys       # 2 * nphys
    double *w          # nphys


cdef void _drift(Ops *o, double *c, double *out) noexcept nogil:
    """out = -nl_coef * theta * P_m(u u_x) - compensator(u)."""
    cdef int i, n
    cdef int dim = o.dim, N = o.nphys
    cdef int two_n = 2 * N
    cdef double th, s, r, gain
    for i in range(dim):
        out[i] = 0.0
    if o.nl_coef != 0.0:
        th = 1.0
        if o.theta_mode == 0:
            s = 0.0
            for i in range(dim):
                s += o.k[i] * o.k[i] * c[i] * c[i]
            th = _theta(sqrt(s) / o.m, o.theta_lo, o.theta_hi)
        if th != 0.0:
            # phys[:N] = u, phys[N:] = u_x at the nodes
            dgemv(b"T", &dim, &two_n, &_ONE, o.BD, &dim, c, &_INC, &_ZERO, o.phys, &_INC)
            if o.theta_mode == 1:
                for n in range(N):
                    o.w[n] = _theta(fabs(o.phys[N + n]) / o.m, o.theta_lo, o.theta_hi) * o.phys[n] * o.phys[N + n]
            else:
                for n in range(N):
                    o.w[n] = o.phys[n] * o.phys[N + n]
            gain = -o.nl_coef * th
            dgemv(b"T", &N, &dim, &gain, o.Q, &N, o.w, &_INC, &_ZERO, out, &_INC)
    if o.comp_a != 0.0:
        s = 0.0
        for i in range(dim):
            s += c[i] * c[i]
        r = sqrt(s)
        gain = o.comp_a * _rho(r, o.comp_r0)
        for i in range(dim):
            out[i] -= gain * c[i]
    if o.comp_b != NULL:
        for i in range(dim):
            out[i] -= o.comp_b[i]


cdef void _noise(Ops *o, double *c, double *dw, double *out) noexcept nogil:
    cdef int i
    cdef int dim = o.dim, nw = o.nw
    cdef double s = 0.0, gain
    for i in range(dim):
        s += o.vw2[i] * c[i] * c[i]
    gain = _rho(sqrt(s), o.noise_r0)
    dgemv(b"T", &nw, &dim, &gain, o.S, &nw, dw, &_INC, &_ZERO, out, &_INC)


cdef void _rotate(Ops *o, double *v, double *cs, double *sn) noexcept nogil:
    # exact flow of u_t = -u_xxx on each (cos, sin) pair
    cdef int j
    cdef double a, b
    for j in range(1, o.dim, 2):
        a = v[j]
        b = v[j + 1]
        v[j] = a * cs[j] + b * sn[j]
        v[j + 1] = b * cs[j] - a * sn[j]


cdef void _trig(Ops *o, double h, double *cs, double *sn) noexcept nogil:
    cdef int j
    cdef double om
    for j in range(1, o.dim, 2):
        om = o.k[j] * o.k[j] * o.k[j] * h
        cs[j] = cos(om)
        sn[j] = sin(om)


def advance(
    double[::1] c0,
    const double[::1] dts,
    const double[:, ::1] dW,
    double[:, ::1] out,
    ops,
    double stop_radius,
):
    """Advance ``c0`` through ``len(dts)`` steps, writing each new state into ``out``.

    Returns ``(n_written, status)``: status 0 finished, 1 stopped because
    |u|_H >= stop_radius (last written row is the crossing state), 2 hit a
    non-finite value (the offending state is not written).
    """
    cdef Ops o
    cdef int n_steps = dts.shape[0]
    cdef int dim = c0.shape[0]
    cdef int i, j, step, status = 0, written = 0
    cdef double h, last_h = -1.0, s

    cdef double[::1] k = np.ascontiguousarray(ops.slot_k, dtype=np.float64)
    cdef double[::1] vw2 = np.ascontiguousarray(ops.v_weight2, dtype=np.float64)
    cdef double[:, ::1] BD = np.ascontiguousarray(ops.BD, dtype=np.float64)
    cdef double[:, ::1] Q = np.ascontiguousarray(ops.Q, dtype=np.float64)
    cdef double[:, ::1] S = np.ascontiguousarray(ops.S, dtype=np.float64)
    cdef double[::1] comp_b
    cdef double[::1] phys = np.empty(BD.shape[0])
    cdef double[::1] wbuf = np.empty(Q.shape[1])
    cdef double[:, ::1] work = np.zeros((10, dim))
    cdef double[::1] u = np.array(c0, dtype=np.float64)

    if n_steps == 0:
        return 0, 0
    if dW.shape[0] < n_steps or out.shape[0] < n_steps or out.shape[1] != dim:
        raise ValueError("dW/out do not match the number of steps")

    o.dim = dim
    o.nphys = Q.shape[1]
    o.nw = S.shape[1]
    o.scheme = ops.scheme_code
    o.theta_mode = ops.theta_mode
    o.noise_on = 1 if ops.noise_on else 0
    o.m = ops.m
    o.theta_lo = ops.theta_lo
    o.theta_hi = ops.theta_hi
    o.nl_coef = ops.nl_coef
    o.comp_a = ops.comp_a
    o.comp_r0 = ops.comp_r0
    o.noise_r0 = ops.noise_r0
    o.k = &k[0]
    o.vw2 = &vw2[0]
    o.BD = &BD[0, 0]
    o.Q = &Q[0, 0]
    o.S = &S[0, 0]
    o.phys = &phys[0]
    o.w = &wbuf[0]
    if ops.comp_b is not None:
        comp_b = np.ascontiguousarray(ops.comp_b, dtype=np.float64)
        o.comp_b = &comp_b[0]
    else:
        o.comp_b = NULL
    if dW.shape[1] != o.nw and o.noise_on:
        raise ValueError("Wiener increments have the wrong number of modes")

    cdef double *k1 = &work[0, 0]
    cdef double *k2 = &work[1, 0]
    cdef double *k3 = &work[2, 0]
    cdef double *k4 = &work[3, 0]
    cdef double *tmp = &work[4, 0]
    cdef double *gnoise = &work[5, 0]
    cdef double *cs = &work[6, 0]
    cdef double *sn = &work[7, 0]
    cdef double *cs2 = &work[8, 0]
    cdef double *sn2 = &work[9, 0]
    cdef double *up = &u[0]
    cdef double a, b, om, den, re, im, gr, gi, nr, ni

    with nogil:
        for step in range(n_steps):
            h = dts[step]
            if h != last_h:
                _trig(&o, h, cs, sn)
                _trig(&o, 0.5 * h, cs2, sn2)
                last_h = h
            if o.noise_on:
                _noise(&o, up, &dW[step, 0], gnoise)
            else:
                for i in range(dim):
                    gnoise[i] = 0.0

            if o.scheme == 0:
                # exponential Euler: u <- E(h) [u + h N(u) + G dW]
                _drift(&o, up, k1)
                for i in range(dim):
                    up[i] = up[i] + h * k1[i] + gnoise[i]
                _rotate(&o, up, cs, sn)
            elif o.scheme == 1:
                # Lawson RK4 for the drift, Euler-Maruyama noise carried by E(h)
                _drift(&o, up, k1)
                for i in range(dim):
                    tmp[i] = up[i] + 0.5 * h * k1[i]
                _rotate(&o, tmp, cs2, sn2)
                _drift(&o, tmp, k2)
                for i in range(dim):
                    tmp[i] = up[i]
                _rotate(&o, tmp, cs2, sn2)
                for i in range(dim):
                    tmp[i] = tmp[i] + 0.5 * h * k2[i]
                _drift(&o, tmp, k3)
                # k3 <- E(h/2) k3 is reused twice below
                _rotate(&o, k3, cs2, sn2)
                for i in range(dim):
                    tmp[i] = up[i]
                _rotate(&o, tmp, cs, sn)
                for i in range(dim):
                    tmp[i] = tmp[i] + h * k3[i]
                _drift(&o, tmp, k4)
                # u_new = E(h)(u + h/6 k1 + G dW) + h/3 E(h/2)(k2 + k3_raw) + h/6 k4
                _rotate(&o, k2, cs2, sn2)
                for i in range(dim):
                    up[i] = up[i] + (h / 6.0) * k1[i] + gnoise[i]
                _rotate(&o, up, cs, sn)
                for i in range(dim):
                    up[i] = up[i] + (h / 3.0) * (k2[i] + k3[i]) + (h / 6.0) * k4[i]
            else:
                # Crank-Nicolson on the dispersive term, explicit drift and noise
                _drift(&o, up, k1)
                for i in range(dim):
                    tmp[i] = h * k1[i] + gnoise[i]
                up[0] = up[0] + tmp[0]
                for j in range(1, dim, 2):
                    om = 0.5 * h * o.k[j] * o.k[j] * o.k[j]
                    # complex amplitude z = c - i s obeys z' = i k^3 z
                    re = up[j]
                    im = -up[j + 1]
                    gr = tmp[j]
                    gi = -tmp[j + 1]
                    # (1 + i om) z + g, divided by (1 - i om)
                    nr = re - om * im + gr
                    ni = im + om * re + gi
                    den = 1.0 + om * om
                    a = (nr - om * ni) / den
                    b = (ni + om * nr) / den
                    up[j] = a
                    up[j + 1] = -b

            s = 0.0
            for i in range(dim):
                s += up[i] * up[i]
            if not isfinite(s):
                status = 2
                break
            for i in range(dim):
                out[step, i] = up[i]
            written = step + 1
            if sqrt(s) >= stop_radius:
                status = 1
                break

    return written, status
