"""Jitted numerical kernels: Hamiltonians, gradients, Hessians, RKF45 core.

Everything here operates on raw float64 arrays so that numba can compile it.
The public modules (model, dynamics, integrate, ...) wrap these with
validation and friendlier signatures.  If numba is unavailable the kernels
still run as plain Python, just much slower.

Coordinate conventions
----------------------
2DF state vector: y = [Q1, Q2, P1, P2]
4DF state vector: y = [Q1, Q2, Q3, Q4, P1, P2, P3, P4]
Variational states append the tangent matrix in row-major order.

Integration status codes: see STATUS_* constants.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco

# system kinds for the shared integrator core
KIND_FLOW2 = 0   # 2DF flow, dim 4
KIND_FLOW4 = 1   # 4DF flow, dim 8
KIND_VAR2 = 2    # 2DF flow + 4x4 tangent, dim 20
KIND_VAR4 = 3    # 4DF flow + 8x8 tangent, dim 72

STATUS_OK = 0
STATUS_ESCAPED = 1
STATUS_UNDERFLOW = 2
STATUS_COLLAPSE = 3
STATUS_MAXSTEPS = 4

# smallest admissible value of the collision denominators; stepping onto
# total collapse (or an unregularized unequal-mass collision) is a hard error
DEN_FLOOR = 1e-300


# ----------------------------------------------------------------------------
# 2DF system
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def gamma2(y, m, E):
    u, v, P1, P2 = y[0], y[1], y[2], y[3]
    R = math.sqrt(u ** 4 + v ** 4)
    return (v * v * P1 * P1 / 16.0 + u * u * P2 * P2 / (16.0 * m)
            - 0.5 * m * m * u * u - 0.5 * v * v
            - 4.0 * m * u * u * v * v / R - E * u * u * v * v)


@njit(cache=True, nogil=True)
def rhs2(y, m, E, out):
    u, v, P1, P2 = y[0], y[1], y[2], y[3]
    R2 = u ** 4 + v ** 4
    R = math.sqrt(R2)
    R3 = R2 * R
    out[0] = 0.125 * v * v * P1
    out[1] = 0.125 * u * u * P2 / m
    out[2] = (-0.125 * u * P2 * P2 / m + u * m * m
              + 8.0 * u * v * v * m / R - 8.0 * u ** 5 * v * v * m / R3
              + 2.0 * u * v * v * E)
    out[3] = (-0.125 * v * P1 * P1 + v
              + 8.0 * u * u * v * m / R - 8.0 * u * u * v ** 5 * m / R3
              + 2.0 * u * u * v * E)


@njit(cache=True, nogil=True)
def grad2(y, m, E, out):
    u, v, P1, P2 = y[0], y[1], y[2], y[3]
    R2 = u ** 4 + v ** 4
    R = math.sqrt(R2)
    R3 = R2 * R
    W_u = 2.0 * u * v * v / R - 2.0 * u ** 5 * v * v / R3
    W_v = 2.0 * u * u * v / R - 2.0 * u * u * v ** 5 / R3
    out[0] = u * P2 * P2 / (8.0 * m) - m * m * u - 4.0 * m * W_u - 2.0 * E * u * v * v
    out[1] = v * P1 * P1 / 8.0 - v - 4.0 * m * W_v - 2.0 * E * u * u * v
    out[2] = v * v * P1 / 8.0
    out[3] = u * u * P2 / (8.0 * m)


@njit(cache=True, nogil=True)
def hess2(y, m, E, out):
    u, v, P1, P2 = y[0], y[1], y[2], y[3]
    R2 = u ** 4 + v ** 4
    R = math.sqrt(R2)
    R3 = R2 * R
    R5 = R3 * R2
    W_uu = 2.0 * v * v / R - 14.0 * u ** 4 * v * v / R3 + 12.0 * u ** 8 * v * v / R5
    W_uv = (4.0 * u * v / R - 4.0 * u * v ** 5 / R3
            - 4.0 * u ** 5 * v / R3 + 12.0 * u ** 5 * v ** 5 / R5)
    W_vv = 2.0 * u * u / R - 14.0 * u * u * v ** 4 / R3 + 12.0 * u * u * v ** 8 / R5
    out[:, :] = 0.0
    out[0, 0] = P2 * P2 / (8.0 * m) - m * m - 4.0 * m * W_uu - 2.0 * E * v * v
    out[0, 1] = -4.0 * m * W_uv - 4.0 * E * u * v
    out[0, 3] = u * P2 / (4.0 * m)
    out[1, 1] = P1 * P1 / 8.0 - 1.0 - 4.0 * m * W_vv - 2.0 * E * u * u
    out[1, 2] = v * P1 / 4.0
    out[2, 2] = v * v / 8.0
    out[3, 3] = u * u / (8.0 * m)
    out[1, 0] = out[0, 1]
    out[3, 0] = out[0, 3]
    out[2, 1] = out[1, 2]


# ----------------------------------------------------------------------------
# 4DF system
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _quartic4(y):
    """Cross term in the pair-interaction denominators."""
    Q1, Q2, Q3, Q4 = y[0], y[1], y[2], y[3]
    return (Q1 * Q1 * Q3 * Q4 - Q2 * Q2 * Q3 * Q4
            - Q1 * Q2 * Q3 * Q3 + Q1 * Q2 * Q4 * Q4)


@njit(cache=True, nogil=True)
def gamma4(y, m, E):
    Q1, Q2, Q3, Q4 = y[0], y[1], y[2], y[3]
    P1, P2, P3, P4 = y[4], y[5], y[6], y[7]
    r1 = Q1 * Q1 + Q2 * Q2
    r2 = Q3 * Q3 + Q4 * Q4
    p12 = P1 * P1 + P2 * P2
    p34 = P3 * P3 + P4 * P4
    QQ = _quartic4(y)
    hp = r1 * r1 + r2 * r2 + 4.0 * QQ
    hm = r1 * r1 + r2 * r2 - 4.0 * QQ
    G = 1.0 / math.sqrt(hp) + 1.0 / math.sqrt(hm)
    return (r2 * p12 / 16.0 + r1 * p34 / (16.0 * m)
            - 0.5 * r2 - 0.5 * m * m * r1
            - 2.0 * m * r1 * r2 * G - E * r1 * r2)


@njit(cache=True, nogil=True)
def grad4(y, m, E, out):
    Q1, Q2, Q3, Q4 = y[0], y[1], y[2], y[3]
    P1, P2, P3, P4 = y[4], y[5], y[6], y[7]
    r1 = Q1 * Q1 + Q2 * Q2
    r2 = Q3 * Q3 + Q4 * Q4
    p12 = P1 * P1 + P2 * P2
    p34 = P3 * P3 + P4 * P4
    QQ = _quartic4(y)

    dr1 = np.zeros(4)
    dr2 = np.zeros(4)
    dr1[0] = 2.0 * Q1
    dr1[1] = 2.0 * Q2
    dr2[2] = 2.0 * Q3
    dr2[3] = 2.0 * Q4

    dQQ = np.empty(4)
    dQQ[0] = 2.0 * Q1 * Q3 * Q4 - Q2 * (Q3 * Q3 - Q4 * Q4)
    dQQ[1] = -2.0 * Q2 * Q3 * Q4 - Q1 * (Q3 * Q3 - Q4 * Q4)
    dQQ[2] = (Q1 * Q1 - Q2 * Q2) * Q4 - 2.0 * Q1 * Q2 * Q3
    dQQ[3] = (Q1 * Q1 - Q2 * Q2) * Q3 + 2.0 * Q1 * Q2 * Q4

    hp = r1 * r1 + r2 * r2 + 4.0 * QQ
    hm = r1 * r1 + r2 * r2 - 4.0 * QQ
    gp = 1.0 / math.sqrt(hp)
    gm = 1.0 / math.sqrt(hm)
    gp3 = gp * gp * gp
    gm3 = gm * gm * gm
    G = gp + gm

    for i in range(4):
        dhp = 2.0 * r1 * dr1[i] + 2.0 * r2 * dr2[i] + 4.0 * dQQ[i]
        dhm = 2.0 * r1 * dr1[i] + 2.0 * r2 * dr2[i] - 4.0 * dQQ[i]
        dG = -0.5 * gp3 * dhp - 0.5 * gm3 * dhm
        dT = (dr1[i] * r2 + r1 * dr2[i]) * G + r1 * r2 * dG
        out[i] = (p34 / (16.0 * m) * dr1[i] + p12 / 16.0 * dr2[i]
                  - 0.5 * dr2[i] - 0.5 * m * m * dr1[i]
                  - 2.0 * m * dT - E * (dr1[i] * r2 + r1 * dr2[i]))
    out[4] = r2 * P1 / 8.0
    out[5] = r2 * P2 / 8.0
    out[6] = r1 * P3 / (8.0 * m)
    out[7] = r1 * P4 / (8.0 * m)


@njit(cache=True, nogil=True)
def rhs4(y, m, E, out):
    g = np.empty(8)
    grad4(y, m, E, g)
    out[0] = g[4]
    out[1] = g[5]
    out[2] = g[6]
    out[3] = g[7]
    out[4] = -g[0]
    out[5] = -g[1]
    out[6] = -g[2]
    out[7] = -g[3]


@njit(cache=True, nogil=True)
def hess4(y, m, E, out):
    Q1, Q2, Q3, Q4 = y[0], y[1], y[2], y[3]
    P1, P2, P3, P4 = y[4], y[5], y[6], y[7]
    r1 = Q1 * Q1 + Q2 * Q2
    r2 = Q3 * Q3 + Q4 * Q4
    p12 = P1 * P1 + P2 * P2
    p34 = P3 * P3 + P4 * P4
    QQ = _quartic4(y)

    dr1 = np.zeros(4)
    dr2 = np.zeros(4)
    dr1[0] = 2.0 * Q1
    dr1[1] = 2.0 * Q2
    dr2[2] = 2.0 * Q3
    dr2[3] = 2.0 * Q4
    ddr1 = np.zeros((4, 4))
    ddr2 = np.zeros((4, 4))
    ddr1[0, 0] = 2.0
    ddr1[1, 1] = 2.0
    ddr2[2, 2] = 2.0
    ddr2[3, 3] = 2.0

    dQQ = np.empty(4)
    dQQ[0] = 2.0 * Q1 * Q3 * Q4 - Q2 * (Q3 * Q3 - Q4 * Q4)
    dQQ[1] = -2.0 * Q2 * Q3 * Q4 - Q1 * (Q3 * Q3 - Q4 * Q4)
    dQQ[2] = (Q1 * Q1 - Q2 * Q2) * Q4 - 2.0 * Q1 * Q2 * Q3
    dQQ[3] = (Q1 * Q1 - Q2 * Q2) * Q3 + 2.0 * Q1 * Q2 * Q4

    ddQQ = np.empty((4, 4))
    ddQQ[0, 0] = 2.0 * Q3 * Q4
    ddQQ[0, 1] = -(Q3 * Q3 - Q4 * Q4)
    ddQQ[0, 2] = 2.0 * Q1 * Q4 - 2.0 * Q2 * Q3
    ddQQ[0, 3] = 2.0 * Q1 * Q3 + 2.0 * Q2 * Q4
    ddQQ[1, 1] = -2.0 * Q3 * Q4
    ddQQ[1, 2] = -2.0 * Q2 * Q4 - 2.0 * Q1 * Q3
    ddQQ[1, 3] = -2.0 * Q2 * Q3 + 2.0 * Q1 * Q4
    ddQQ[2, 2] = -2.0 * Q1 * Q2
    ddQQ[2, 3] = Q1 * Q1 - Q2 * Q2
    ddQQ[3, 3] = 2.0 * Q1 * Q2
    for i in range(4):
        for j in range(i):
            ddQQ[i, j] = ddQQ[j, i]

    hp = r1 * r1 + r2 * r2 + 4.0 * QQ
    hm = r1 * r1 + r2 * r2 - 4.0 * QQ
    gp = 1.0 / math.sqrt(hp)
    gm = 1.0 / math.sqrt(hm)
    gp3 = gp * gp * gp
    gm3 = gm * gm * gm
    gp5 = gp3 * gp * gp
    gm5 = gm3 * gm * gm
    G = gp + gm

    dhp = np.empty(4)
    dhm = np.empty(4)
    dG = np.empty(4)
    dT = np.empty(4)
    dr12 = np.empty(4)
    for i in range(4):
        dhp[i] = 2.0 * r1 * dr1[i] + 2.0 * r2 * dr2[i] + 4.0 * dQQ[i]
        dhm[i] = 2.0 * r1 * dr1[i] + 2.0 * r2 * dr2[i] - 4.0 * dQQ[i]
        dG[i] = -0.5 * gp3 * dhp[i] - 0.5 * gm3 * dhm[i]
        dr12[i] = dr1[i] * r2 + r1 * dr2[i]
        dT[i] = dr12[i] * G + r1 * r2 * dG[i]

    out[:, :] = 0.0
    # Q-Q block
    for i in range(4):
        for j in range(i, 4):
            ddh_common = (2.0 * dr1[i] * dr1[j] + 2.0 * r1 * ddr1[i, j]
                          + 2.0 * dr2[i] * dr2[j] + 2.0 * r2 * ddr2[i, j])
            ddhp = ddh_common + 4.0 * ddQQ[i, j]
            ddhm = ddh_common - 4.0 * ddQQ[i, j]
            ddG = (0.75 * gp5 * dhp[i] * dhp[j] - 0.5 * gp3 * ddhp
                   + 0.75 * gm5 * dhm[i] * dhm[j] - 0.5 * gm3 * ddhm)
            ddr12 = (dr1[i] * dr2[j] + dr2[i] * dr1[j]
                     + r2 * ddr1[i, j] + r1 * ddr2[i, j])
            ddT = (ddr12 * G + dr12[i] * dG[j] + dG[i] * dr12[j]
                   + r1 * r2 * ddG)
            val = (p34 / (16.0 * m) * ddr1[i, j] + p12 / 16.0 * ddr2[i, j]
                   - 0.5 * ddr2[i, j] - 0.5 * m * m * ddr1[i, j]
                   - 2.0 * m * ddT - E * ddr12)
            out[i, j] = val
            out[j, i] = val
    # Q-P block
    out[0, 6] = Q1 * P3 / (4.0 * m)
    out[0, 7] = Q1 * P4 / (4.0 * m)
    out[1, 6] = Q2 * P3 / (4.0 * m)
    out[1, 7] = Q2 * P4 / (4.0 * m)
    out[2, 4] = Q3 * P1 / 4.0
    out[2, 5] = Q3 * P2 / 4.0
    out[3, 4] = Q4 * P1 / 4.0
    out[3, 5] = Q4 * P2 / 4.0
    for i in range(4):
        for j in range(4, 8):
            out[j, i] = out[i, j]
    # P-P block
    out[4, 4] = r2 / 8.0
    out[5, 5] = r2 / 8.0
    out[6, 6] = r1 / (8.0 * m)
    out[7, 7] = r1 / (8.0 * m)


# ----------------------------------------------------------------------------
# batch helpers (used by invariance sweeps in the tests and the CLI verifier)
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def gamma2_batch(Y, m, E, out):
    for i in range(Y.shape[0]):
        out[i] = gamma2(Y[i], m, E)


@njit(cache=True, nogil=True)
def gamma4_batch(Y, m, E, out):
    for i in range(Y.shape[0]):
        out[i] = gamma4(Y[i], m, E)


@njit(cache=True, nogil=True)
def rhs2_batch(Y, m, E, out):
    for i in range(Y.shape[0]):
        rhs2(Y[i], m, E, out[i])


# ----------------------------------------------------------------------------
# shared right-hand side dispatch
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def rhs_any(kind, y, m, E, out):
    if kind == KIND_FLOW2:
        rhs2(y, m, E, out)
    elif kind == KIND_FLOW4:
        rhs4(y, m, E, out)
    elif kind == KIND_VAR2:
        rhs2(y[:4], m, E, out[:4])
        H = np.empty((4, 4))
        hess2(y[:4], m, E, H)
        # M = J H, then dXi = M Xi with Xi stored row-major in y[4:]
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for k in range(4):
                    if i < 2:
                        Mik = H[i + 2, k]
                    else:
                        Mik = -H[i - 2, k]
                    acc += Mik * y[4 + 4 * k + j]
                out[4 + 4 * i + j] = acc
    else:
        rhs4(y[:8], m, E, out[:8])
        H = np.empty((8, 8))
        hess4(y[:8], m, E, H)
        for i in range(8):
            for j in range(8):
                acc = 0.0
                for k in range(8):
                    if i < 4:
                        Mik = H[i + 4, k]
                    else:
                        Mik = -H[i - 4, k]
                    acc += Mik * y[8 + 8 * k + j]
                out[8 + 8 * i + j] = acc


@njit(cache=True, nogil=True)
def _domain_ok(kind, y):
    if kind == KIND_FLOW2 or kind == KIND_VAR2:
        return y[0] ** 4 + y[1] ** 4 > DEN_FLOOR
    r1 = y[0] * y[0] + y[1] * y[1]
    r2 = y[2] * y[2] + y[3] * y[3]
    QQ = _quartic4(y)
    h = r1 * r1 + r2 * r2
    return h - 4.0 * abs(QQ) > DEN_FLOOR


# ----------------------------------------------------------------------------
# RKF45 stepping (Fehlberg 4(5) pair; the 5th-order solution is propagated,
# the 4(5) difference drives the step control)
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _rkf45_step(kind, y, m, E, h, k, ynew, yerr):
    """One trial step of size h.  k is a (6, n) work array.

    Fills ynew with the 5th-order solution and yerr with the embedded
    4(5) error estimate.
    """
    n = y.shape[0]
    ytmp = np.empty(n)

    rhs_any(kind, y, m, E, k[0])

    for i in range(n):
        ytmp[i] = y[i] + h * 0.25 * k[0, i]
    rhs_any(kind, ytmp, m, E, k[1])

    for i in range(n):
        ytmp[i] = y[i] + h * (3.0 / 32.0 * k[0, i] + 9.0 / 32.0 * k[1, i])
    rhs_any(kind, ytmp, m, E, k[2])

    for i in range(n):
        ytmp[i] = y[i] + h * (1932.0 / 2197.0 * k[0, i]
                              - 7200.0 / 2197.0 * k[1, i]
                              + 7296.0 / 2197.0 * k[2, i])
    rhs_any(kind, ytmp, m, E, k[3])

    for i in range(n):
        ytmp[i] = y[i] + h * (439.0 / 216.0 * k[0, i] - 8.0 * k[1, i]
                              + 3680.0 / 513.0 * k[2, i]
                              - 845.0 / 4104.0 * k[3, i])
    rhs_any(kind, ytmp, m, E, k[4])

    for i in range(n):
        ytmp[i] = y[i] + h * (-8.0 / 27.0 * k[0, i] + 2.0 * k[1, i]
                              - 3544.0 / 2565.0 * k[2, i]
                              + 1859.0 / 4104.0 * k[3, i]
                              - 11.0 / 40.0 * k[4, i])
    rhs_any(kind, ytmp, m, E, k[5])

    for i in range(n):
        ynew[i] = y[i] + h * (16.0 / 135.0 * k[0, i]
                              + 6656.0 / 12825.0 * k[2, i]
                              + 28561.0 / 56430.0 * k[3, i]
                              - 9.0 / 50.0 * k[4, i]
                              + 2.0 / 55.0 * k[5, i])
        yerr[i] = h * (1.0 / 360.0 * k[0, i]
                       - 128.0 / 4275.0 * k[2, i]
                       - 2197.0 / 75240.0 * k[3, i]
                       + 1.0 / 50.0 * k[4, i]
                       + 2.0 / 55.0 * k[5, i])


@njit(cache=True, nogil=True)
def _err_norm(y, ynew, yerr, atol, rtol):
    en = 0.0
    for i in range(y.shape[0]):
        sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
        e = abs(yerr[i]) / sc
        if e != e:  # NaN from a stage outside the domain: force rejection
            return 1e308
        if e > en:
            en = e
    return en


@njit(cache=True, nogil=True)
def advance(kind, y0, m, E, s0, s_end, rtol, atol, h0, hmin, hmax, guard,
            max_steps, nbase):
    """Adaptive RKF45 from s0 to s_end (forward only).

    guard applies to the first nbase components (the base state for
    variational systems).  Returns (status, s_reached, y, nsteps, h_next).
    """
    n = y0.shape[0]
    y = y0.copy()
    ynew = np.empty(n)
    yerr = np.empty(n)
    k = np.empty((6, n))
    s = s0
    h = h0
    nsteps = 0
    if s_end <= s0:
        return STATUS_OK, s, y, 0, h
    while s < s_end:
        if nsteps >= max_steps:
            return STATUS_MAXSTEPS, s, y, nsteps, h
        if h > hmax:
            h = hmax
        last = False
        if s + h >= s_end:
            h = s_end - s
            last = True
        _rkf45_step(kind, y, m, E, h, k, ynew, yerr)
        en = _err_norm(y, ynew, yerr, atol, rtol)
        if en <= 1.0:
            s = s_end if last else s + h
            for i in range(n):
                y[i] = ynew[i]
            nsteps += 1
            if not _domain_ok(kind, y):
                return STATUS_COLLAPSE, s, y, nsteps, h
            for i in range(nbase):
                if abs(y[i]) > guard:
                    return STATUS_ESCAPED, s, y, nsteps, h
            if en > 0.0:
                fac = 0.9 * en ** -0.2
            else:
                fac = 5.0
            if fac > 5.0:
                fac = 5.0
            h = max(h * fac, hmin)
        else:
            fac = 0.9 * en ** -0.2
            if fac < 0.2:
                fac = 0.2
            h = h * fac
            if h < hmin:
                return STATUS_UNDERFLOW, s, y, nsteps, h
    return STATUS_OK, s, y, nsteps, h


@njit(cache=True, nogil=True)
def _rk4_fixed(kind, y0, m, E, ds, nsub, out):
    """Classical RK4 with nsub fixed substeps over a short span ds."""
    n = y0.shape[0]
    y = out
    for i in range(n):
        y[i] = y0[i]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    yt = np.empty(n)
    h = ds / nsub
    for _ in range(nsub):
        rhs_any(kind, y, m, E, k1)
        for i in range(n):
            yt[i] = y[i] + 0.5 * h * k1[i]
        rhs_any(kind, yt, m, E, k2)
        for i in range(n):
            yt[i] = y[i] + 0.5 * h * k2[i]
        rhs_any(kind, yt, m, E, k3)
        for i in range(n):
            yt[i] = y[i] + h * k3[i]
        rhs_any(kind, yt, m, E, k4)
        for i in range(n):
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True, nogil=True)
def crossings2(y0, m, E, alpha, max_cross, guard, rtol, atol, h0, hmin, hmax,
               refine_tol, s_max, max_steps, out):
    """Record surface crossings g = Q1^2 - alpha*Q2^2 = 0 of the 2DF flow.

    Both crossing directions are recorded.  A seed sitting exactly on the
    surface is not counted; crossings are detected only after the
    trajectory has left it.  out must be (max_cross, 5): rows are
    [s, Q1, Q2, P1, P2].  Returns (status, n_found, s_reached).

    status OK means max_cross crossings were found; MAXSTEPS/ESCAPED are
    tagged terminations, UNDERFLOW/COLLAPSE are integration failures.
    """
    y = y0.copy()
    ynew = np.empty(4)
    yerr = np.empty(4)
    k = np.empty((6, 4))
    yref = np.empty(4)
    s = 0.0
    h = h0
    nfound = 0
    nsteps = 0
    g_prev = y[0] * y[0] - alpha * y[1] * y[1]
    have_prev = abs(g_prev) > 1e-12
    while s < s_max:
        if nsteps >= max_steps:
            return STATUS_MAXSTEPS, nfound, s
        if h > hmax:
            h = hmax
        _rkf45_step(KIND_FLOW2, y, m, E, h, k, ynew, yerr)
        en = _err_norm(y, ynew, yerr, atol, rtol)
        if en <= 1.0:
            g_new = ynew[0] * ynew[0] - alpha * ynew[1] * ynew[1]
            if have_prev and g_prev * g_new < 0.0:
                # refine the crossing inside (s, s+h] by bisection
                nsub = 8 + min(120, int(h * 1024.0))
                lo = 0.0
                hi = h
                g_lo = g_prev
                for _ in range(80):
                    if hi - lo < refine_tol:
                        break
                    tau = 0.5 * (lo + hi)
                    _rk4_fixed(KIND_FLOW2, y, m, E, tau, nsub, yref)
                    g_tau = yref[0] * yref[0] - alpha * yref[1] * yref[1]
                    if g_tau == 0.0:
                        break
                    if g_lo * g_tau < 0.0:
                        hi = tau
                    else:
                        lo = tau
                        g_lo = g_tau
                _rk4_fixed(KIND_FLOW2, y, m, E, 0.5 * (lo + hi), nsub, yref)
                out[nfound, 0] = s + 0.5 * (lo + hi)
                for i in range(4):
                    out[nfound, 1 + i] = yref[i]
                nfound += 1
                if nfound >= max_cross:
                    return STATUS_OK, nfound, s + 0.5 * (lo + hi)
            if abs(g_new) > 1e-12:
                g_prev = g_new
                have_prev = True
            s += h
            for i in range(4):
                y[i] = ynew[i]
            nsteps += 1
            if not _domain_ok(KIND_FLOW2, y):
                return STATUS_COLLAPSE, nfound, s
            for i in range(4):
                if abs(y[i]) > guard:
                    return STATUS_ESCAPED, nfound, s
            if en > 0.0:
                fac = 0.9 * en ** -0.2
            else:
                fac = 5.0
            if fac > 5.0:
                fac = 5.0
            h = max(h * fac, hmin)
        else:
            fac = 0.9 * en ** -0.2
            if fac < 0.2:
                fac = 0.2
            h = h * fac
            if h < hmin:
                return STATUS_UNDERFLOW, nfound, s
    return STATUS_MAXSTEPS, nfound, s
