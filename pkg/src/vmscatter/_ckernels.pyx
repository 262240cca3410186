# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: per-particle Dormand-Prince in the bump field and
retarded-cone sums for bump sources.

The algorithms mirror ``_pykernels`` step for step.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, exp, INFINITY, isfinite

cnp.import_array()

cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double A71 = 35.0 / 384, A73 = 500.0 / 1113, A74 = 125.0 / 192, A75 = -2187.0 / 6784, A76 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40


cdef struct BumpPar:
    double amp
    double k
    double dE[3]
    double dB[3]
    double q
    int zero


cdef inline double smooth_cutoff(double s) noexcept nogil:
    cdef double tau = 2.0 * s - 1.0, z, e
    if tau <= 0.0:
        return 1.0
    if tau >= 1.0:
        return 0.0
    z = 1.0 / (1.0 - tau) - 1.0 / tau
    e = exp(-fabs(z))
    if z > 0.0:
        return e / (1.0 + e)
    return 1.0 / (1.0 + e)


cdef inline void bump_eval(double t, double* x, BumpPar* P, double* E, double* B) noexcept nogil:
    cdef double r = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    cdef double chi = smooth_cutoff(r / (t + P.k)), a
    cdef int i
    if chi > 0.0:
        a = P.amp * chi / ((t + r + 2 * P.k) * (t - r + 2 * P.k))
    else:
        a = 0.0
    for i in range(3):
        E[i] = a * P.dE[i]
        B[i] = a * P.dB[i]


cdef inline void rhs_bump(double s, double* y, BumpPar* P, double* dy) noexcept nogil:
    cdef double V0, Vh[3], xf[3], E[3], B[3], L[3], LV
    cdef int i
    if P.zero:
        for i in range(6):
            dy[i] = 0.0
        return
    V0 = sqrt(1.0 + y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
    for i in range(3):
        Vh[i] = y[3 + i] / V0
        xf[i] = y[i] + (s / V0) * y[3 + i]
    bump_eval(s, xf, P, E, B)
    L[0] = E[0] + (Vh[1] * B[2] - Vh[2] * B[1])
    L[1] = E[1] + (Vh[2] * B[0] - Vh[0] * B[2])
    L[2] = E[2] + (Vh[0] * B[1] - Vh[1] * B[0])
    LV = L[0] * Vh[0] + L[1] * Vh[1] + L[2] * Vh[2]
    for i in range(3):
        dy[3 + i] = P.q * L[i]
        dy[i] = (s * P.q / V0) * (Vh[i] * LV - L[i])


cdef int dopri_one(double* y, double s, const double* targets, int M, double* out,
                   BumpPar* P, double rtol, double atol, double h0, long max_steps,
                   long* nsteps_out) noexcept nogil:
    cdef double k1[6], k2[6], k3[6], k4[6], k5[6], k6[6], k7[6], tmp[6], ynew[6]
    cdef double hmag = h0, facmax = 10.0, h, rem, tgt, err, sc, ev, fac, dirn
    cdef int ti = 0, i, clipped, status = 0, finite
    cdef long nsteps = 0
    cdef int have_k1 = 0
    while ti < M and targets[ti] == s:
        for i in range(6):
            out[ti * 6 + i] = y[i]
        ti += 1
    while ti < M:
        tgt = targets[ti]
        rem = tgt - s
        dirn = 1.0 if rem > 0 else -1.0
        h = hmag
        clipped = 0
        if h >= fabs(rem):
            h = fabs(rem)
            clipped = 1
        h = dirn * h
        if not have_k1:
            rhs_bump(s, y, P, k1)
            have_k1 = 1
        for i in range(6):
            tmp[i] = y[i] + h * A21 * k1[i]
        rhs_bump(s + C2 * h, tmp, P, k2)
        for i in range(6):
            tmp[i] = y[i] + h * A31 * k1[i] + h * A32 * k2[i]
        rhs_bump(s + C3 * h, tmp, P, k3)
        for i in range(6):
            tmp[i] = y[i] + h * A41 * k1[i] + h * A42 * k2[i] + h * A43 * k3[i]
        rhs_bump(s + C4 * h, tmp, P, k4)
        for i in range(6):
            tmp[i] = (y[i] + h * A51 * k1[i] + h * A52 * k2[i] + h * A53 * k3[i]
                      + h * A54 * k4[i])
        rhs_bump(s + C5 * h, tmp, P, k5)
        for i in range(6):
            tmp[i] = (y[i] + h * A61 * k1[i] + h * A62 * k2[i] + h * A63 * k3[i]
                      + h * A64 * k4[i] + h * A65 * k5[i])
        rhs_bump(s + h, tmp, P, k6)
        for i in range(6):
            ynew[i] = (y[i] + h * A71 * k1[i] + h * A73 * k3[i] + h * A74 * k4[i]
                       + h * A75 * k5[i] + h * A76 * k6[i])
        rhs_bump(s + h, ynew, P, k7)
        err = 0.0
        finite = 1
        for i in range(6):
            ev = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            sc = atol + rtol * (fabs(y[i]) if fabs(y[i]) > fabs(ynew[i]) else fabs(ynew[i]))
            err += (ev / sc) * (ev / sc)
            if not isfinite(ynew[i]):
                finite = 0
        err = sqrt(err / 6.0)
        if not isfinite(err) or not finite:
            err = INFINITY
            finite = 0
        nsteps += 1
        if err > 0:
            fac = 0.9 * pow(err, -0.2)
        else:
            fac = 0.9 * pow(1e-30, -0.2)
        if fac < 0.2:
            fac = 0.2
        if fac > facmax:
            fac = facmax
        if err <= 1.0:
            for i in range(6):
                y[i] = ynew[i]
                k1[i] = k7[i]
            if clipped:
                s = tgt
                if fabs(h) * fac > hmag:
                    hmag = fabs(h) * fac
            else:
                s = s + h
                hmag = fabs(h) * fac
            facmax = 10.0
            if clipped:
                while ti < M and targets[ti] == s:
                    for i in range(6):
                        out[ti * 6 + i] = y[i]
                    ti += 1
        else:
            if not finite:
                hmag = fabs(h) * 0.2
            else:
                hmag = fabs(h) * fac
            facmax = 1.0
            if hmag < 1e-14 * (fabs(s) if fabs(s) > 1.0 else 1.0):
                status = 1
                break
        if ti < M and nsteps >= max_steps:
            status = 2
            break
    nsteps_out[0] = nsteps
    return status


def integrate_bump(const double[:, ::1] Y0, const double[::1] s0, const double[::1] targets,
                   const double[::1] q, double amp, double k, const double[::1] dE, const double[::1] dB,
                   double rtol=1e-10, double atol=1e-12, double h0=1e-2,
                   long max_steps=200000, bint zero=False):
    """Per-particle Dormand-Prince integration in the bump field, GIL released."""
    cdef Py_ssize_t N = Y0.shape[0], M = targets.shape[0], n, i
    out_a = np.zeros((N, M, 6))
    st_a = np.zeros(N, dtype=np.int64)
    ns_a = np.zeros(N, dtype=np.int64)
    cdef double[:, :, ::1] out = out_a
    cdef long[::1] st = st_a
    cdef long[::1] ns = ns_a
    cdef double y[6]
    cdef BumpPar P
    cdef long nst
    P.amp = amp
    P.k = k
    P.zero = 1 if zero else 0
    for i in range(3):
        P.dE[i] = dE[i]
        P.dB[i] = dB[i]
    with nogil:
        for n in range(N):
            for i in range(6):
                y[i] = Y0[n, i]
            P.q = q[n]
            nst = 0
            st[n] = dopri_one(y, s0[n], &targets[0], <int>M, &out[n, 0, 0], &P,
                              rtol, atol, h0, max_steps, &nst)
            ns[n] = nst
    return out_a, st_a, ns_a


cdef inline double bshape(double s2, int p) noexcept nogil:
    cdef double a = 1.0 - s2
    if a <= 0.0:
        return 0.0
    return pow(a, p)


def cone_sum(const double[::1] x, double t, const double[::1] r, const double[:, ::1] om,
             const double[::1] wq, int kind, const double[::1] xc, double Rx, const double[::1] vc,
             double Rv, int power, double amp, double rho_v, const double[:, ::1] xi,
             const double[::1] mu, int mode, const double[:, ::1] Em, const double[:, ::1] Bm):
    """Retarded-cone sums for a bump source; see ``_pykernels.cone_sum``."""
    cdef Py_ssize_t M = r.shape[0], J = mu.shape[0], m, j
    cdef double SE[3], SB[3], cE[3], cB[3]
    cdef double dmin = INFINITY
    cdef double tp, y[3], o[3], u[3], uh[3], z[3], w, u0, D, den, rr, ww, fx, fv, a, sa
    cdef double L[3], G[3], uL, og, accE[3], accB[3], KE[3], KB[3], tv, yv
    cdef int zreg, i
    for i in range(3):
        SE[i] = 0.0
        SB[i] = 0.0
        cE[i] = 0.0
        cB[i] = 0.0
    with nogil:
        for m in range(M):
            rr = r[m]
            tp = t - rr
            for i in range(3):
                o[i] = om[m, i]
                y[i] = x[i] + rr * o[i]
            zreg = 1 if (kind == 1 and tp * rho_v >= Rx) else 0
            for i in range(3):
                accE[i] = 0.0
                accB[i] = 0.0
            for j in range(J):
                if not zreg:
                    for i in range(3):
                        u[i] = vc[i] + Rv * xi[j, i]
                    fv = bshape(xi[j, 0] * xi[j, 0] + xi[j, 1] * xi[j, 1] + xi[j, 2] * xi[j, 2], power)
                    if fv == 0.0:
                        continue
                    u0 = sqrt(1.0 + u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
                    for i in range(3):
                        uh[i] = u[i] / u0
                    if kind == 1:
                        for i in range(3):
                            z[i] = (y[i] - tp * uh[i] - xc[i]) / Rx
                    else:
                        for i in range(3):
                            z[i] = (y[i] - xc[i]) / Rx
                    fx = bshape(z[0] * z[0] + z[1] * z[1] + z[2] * z[2], power)
                    w = amp * Rv * Rv * Rv * mu[j] * fv * fx
                else:
                    fx = bshape(xi[j, 0] * xi[j, 0] + xi[j, 1] * xi[j, 1] + xi[j, 2] * xi[j, 2], power)
                    if fx == 0.0:
                        continue
                    for i in range(3):
                        uh[i] = (y[i] - xc[i] - Rx * xi[j, i]) / tp
                    a = 1.0 - (uh[0] * uh[0] + uh[1] * uh[1] + uh[2] * uh[2])
                    if a <= 0.0:
                        continue
                    sa = sqrt(a)
                    for i in range(3):
                        u[i] = uh[i] / sa
                        z[i] = (u[i] - vc[i]) / Rv
                    fv = bshape(z[0] * z[0] + z[1] * z[1] + z[2] * z[2], power)
                    u0 = 1.0 / sa
                    w = amp * Rx * Rx * Rx * mu[j] * fx * fv * pow(sa, -5) / (tp * tp * tp)
                if w == 0.0:
                    continue
                D = 1.0 + uh[0] * o[0] + uh[1] * o[1] + uh[2] * o[2]
                if D < dmin:
                    dmin = D
                if mode == 0:
                    den = w / (u0 * u0 * D * D)
                    for i in range(3):
                        accE[i] += (o[i] + uh[i]) * den
                    accB[0] += (o[1] * uh[2] - o[2] * uh[1]) * den
                    accB[1] += (o[2] * uh[0] - o[0] * uh[2]) * den
                    accB[2] += (o[0] * uh[1] - o[1] * uh[0]) * den
                else:
                    L[0] = Em[m, 0] + (uh[1] * Bm[m, 2] - uh[2] * Bm[m, 1])
                    L[1] = Em[m, 1] + (uh[2] * Bm[m, 0] - uh[0] * Bm[m, 2])
                    L[2] = Em[m, 2] + (uh[0] * Bm[m, 1] - uh[1] * Bm[m, 0])
                    uL = uh[0] * L[0] + uh[1] * L[1] + uh[2] * L[2]
                    for i in range(3):
                        G[i] = (L[i] - uh[i] * uL) / u0
                    og = G[0] * o[0] + G[1] * o[1] + G[2] * o[2]
                    for i in range(3):
                        accE[i] += w * (G[i] / D - (o[i] + uh[i]) * og / (D * D))
                    accB[0] += w * ((o[1] * G[2] - o[2] * G[1]) / D - (o[1] * uh[2] - o[2] * uh[1]) * og / (D * D))
                    accB[1] += w * ((o[2] * G[0] - o[0] * G[2]) / D - (o[2] * uh[0] - o[0] * uh[2]) * og / (D * D))
                    accB[2] += w * ((o[0] * G[1] - o[1] * G[0]) / D - (o[0] * uh[1] - o[1] * uh[0]) * og / (D * D))
            ww = wq[m] if mode == 0 else wq[m] * rr
            # Neumaier-compensated accumulation over nodes
            for i in range(3):
                tv = SE[i] + ww * accE[i]
                if fabs(SE[i]) >= fabs(ww * accE[i]):
                    cE[i] += (SE[i] - tv) + ww * accE[i]
                else:
                    cE[i] += (ww * accE[i] - tv) + SE[i]
                SE[i] = tv
                yv = SB[i] + ww * accB[i]
                if fabs(SB[i]) >= fabs(ww * accB[i]):
                    cB[i] += (SB[i] - yv) + ww * accB[i]
                else:
                    cB[i] += (ww * accB[i] - yv) + SB[i]
                SB[i] = yv
    return (np.array([SE[0] + cE[0], SE[1] + cE[1], SE[2] + cE[2]]),
            np.array([SB[0] + cB[0], SB[1] + cB[1], SB[2] + cB[2]]), dmin)
