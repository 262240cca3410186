"""Pure numpy kernels: the reference implementation of the compiled core.

Every function here has a compiled twin in ``_ckernels`` with the same
signature and algorithm; the compiled versions loop per particle or per
node while these operate on whole arrays.
"""
from __future__ import annotations

import numpy as np

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAXSTEPS = 2
STATUS_NONFINITE = 3


# ---------------------------------------------------------------- fields

def smooth_cutoff(s):
    """C^infinity cutoff equal to 1 on [0, 1/2] and 0 on [1, inf), with derivative.

    On the transition ``tau = 2s - 1`` in ``(0, 1)`` it is the logistic
    function of ``z = 1/(1 - tau) - 1/tau``, evaluated without overflow.
    """
    s = np.asarray(s, dtype=float)
    tau = 2.0 * s - 1.0
    mid = (tau > 0.0) & (tau < 1.0)
    tm = np.where(mid, tau, 0.5)
    z = 1.0 / (1.0 - tm) - 1.0 / tm
    e = np.exp(-np.abs(z))
    chi_mid = np.where(z > 0, e / (1.0 + e), 1.0 / (1.0 + e))
    dz = 1.0 / (1.0 - tm) ** 2 + 1.0 / tm ** 2
    dchi_mid = -2.0 * e / (1.0 + e) ** 2 * dz
    chi = np.where(mid, chi_mid, np.where(tau <= 0.0, 1.0, 0.0))
    dchi = np.where(mid, dchi_mid, 0.0)
    return chi, dchi


def bump_field(t, x, amp, k, dE, dB, grad=False):
    """Prescribed bump field and optionally its spatial Jacobians.

    ``t`` broadcasts against the leading axis of ``x`` (shape ``(N, 3)``).
    """
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    r = np.sqrt(np.einsum("...i,...i->...", x, x))
    T = t + k
    chi, dchi = smooth_cutoff(r / T)
    den = (t + r + 2 * k) * (t - r + 2 * k)
    live = chi > 0
    phi = np.where(live, 1.0 / np.where(live, den, 1.0), 0.0)
    a = amp * chi * phi
    E = a[..., None] * np.asarray(dE, float)
    B = a[..., None] * np.asarray(dB, float)
    if not grad:
        return E, B
    rs = np.where(r > 0, r, 1.0)
    gfac = amp * (dchi * phi / (rs * T) + 2.0 * chi * phi * phi)
    gvec = gfac[..., None] * x
    jE = np.asarray(dE, float)[:, None] * gvec[..., None, :]
    jB = np.asarray(dB, float)[:, None] * gvec[..., None, :]
    return E, B, jE, jB


# ---------------------------------------------------------------- ODE

def char_rhs(s, Y, q, E, B):
    """Right-hand side of the g-characteristics given field values at X + s*Vhat."""
    X, V = Y[..., :3], Y[..., 3:]
    V0 = np.sqrt(1.0 + np.einsum("...i,...i->...", V, V))
    Vh = V / V0[..., None]
    L = E + np.cross(Vh, B)
    LV = np.einsum("...i,...i->...", L, Vh)
    dV = q[..., None] * L
    dX = (s * q / V0)[..., None] * (Vh * LV[..., None] - L)
    return np.concatenate([dX, dV], axis=-1)


def shifted_point(s, Y):
    V = Y[..., 3:]
    V0 = np.sqrt(1.0 + np.einsum("...i,...i->...", V, V))
    return Y[..., :3] + (s / V0)[..., None] * V


def dopri_batch(rhs, Y0, s0, targets, rtol=1e-10, atol=1e-12, h0=1e-2,
                max_steps=200000):
    """Vectorized Dormand-Prince integration with per-member step control.

    Parameters
    ----------
    rhs : callable
        ``rhs(s, Y, idx)`` returning ``dY`` for the active members ``idx``;
        ``s`` has shape ``(n,)`` and ``Y`` shape ``(n, d)``.
    Y0 : ndarray, shape (N, d)
    s0 : ndarray, shape (N,)
    targets : ndarray, shape (M,)
        Output times, monotone in the integration direction of every member.

    Returns
    -------
    out : ndarray, shape (N, M, d)
    status : ndarray of int, shape (N,)
    nsteps : ndarray of int, shape (N,)
    """
    Y = np.array(Y0, dtype=float, copy=True)
    N, d = Y.shape
    s = np.array(np.broadcast_to(s0, (N,)), dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    M = targets.size
    out = np.zeros((N, M, d))
    status = np.zeros(N, dtype=np.int64)
    nsteps = np.zeros(N, dtype=np.int64)
    nacc = np.zeros(N, dtype=np.int64)
    ti = np.zeros(N, dtype=np.int64)
    hmag = np.full(N, float(h0))
    k1 = np.zeros((N, d))
    have_k1 = np.zeros(N, dtype=bool)
    facmax = np.full(N, 10.0)
    # record targets already coinciding with the start
    done = np.zeros(N, dtype=bool)

    def _advance_targets(idx):
        for i in idx:
            while ti[i] < M and targets[ti[i]] == s[i]:
                out[i, ti[i]] = Y[i]
                ti[i] += 1
            if ti[i] >= M:
                done[i] = True

    _advance_targets(np.arange(N))
    while True:
        idx = np.nonzero(~done)[0]
        if idx.size == 0:
            break
        tgt = targets[ti[idx]]
        rem = tgt - s[idx]
        dirn = np.sign(rem)
        h = np.minimum(hmag[idx], np.abs(rem))
        clipped = h >= np.abs(rem)
        h = dirn * h
        si, yi = s[idx], Y[idx]
        need = ~have_k1[idx]
        if np.any(need):
            j = idx[need]
            k1[j] = rhs(s[j], Y[j], j)
            have_k1[j] = True
        ks = [k1[idx]]
        for st in range(1, 7):
            acc = yi.copy()
            for jj, a in enumerate(_A[st]):
                if a != 0.0:
                    acc += (h * a)[:, None] * ks[jj]
            ks.append(rhs(si + _C[st] * h, acc, idx))
            if st == 6:
                ynew = acc
        errv = np.zeros_like(yi)
        for jj in range(7):
            if _E[jj] != 0.0:
                errv += _E[jj] * ks[jj]
        errv *= h[:, None]
        sc = atol + rtol * np.maximum(np.abs(yi), np.abs(ynew))
        err = np.sqrt(np.mean((errv / sc) ** 2, axis=1))
        finite = np.isfinite(err) & np.all(np.isfinite(ynew), axis=1)
        err = np.where(finite, err, np.inf)
        acc_m = err <= 1.0
        nsteps[idx] += 1
        with np.errstate(divide="ignore"):
            fac = 0.9 * np.where(err > 0, err, 1e-30) ** -0.2
        fmax = facmax[idx]
        fac = np.clip(fac, 0.2, fmax)
        # accepted members
        a_idx = idx[acc_m]
        if a_idx.size:
            Y[a_idx] = ynew[acc_m]
            s[a_idx] = np.where(clipped[acc_m], tgt[acc_m], si[acc_m] + h[acc_m])
            k1[a_idx] = ks[6][acc_m]
            nacc[a_idx] += 1
            facmax[a_idx] = 10.0
            # do not let the clip to a target shrink the controller's step
            hmag[a_idx] = np.where(clipped[acc_m],
                                   np.maximum(hmag[a_idx], np.abs(h[acc_m]) * fac[acc_m]),
                                   np.abs(h[acc_m]) * fac[acc_m])
            hit = a_idx[clipped[acc_m]]
            _advance_targets(hit)
        r_idx = idx[~acc_m]
        if r_idx.size:
            hr = np.abs(h[~acc_m])
            bad = ~finite[~acc_m]
            hmag[r_idx] = np.where(bad, hr * 0.2, hr * fac[~acc_m])
            facmax[r_idx] = 1.0
            small = hmag[r_idx] < 1e-14 * np.maximum(1.0, np.abs(s[r_idx]))
            if np.any(small):
                status[r_idx[small]] = STATUS_UNDERFLOW
                done[r_idx[small]] = True
        over = (~done) & (nsteps >= max_steps)
        if np.any(over):
            status[over] = STATUS_MAXSTEPS
            done[over] = True
    return out, status, nsteps


def integrate_bump(Y0, s0, targets, q, amp, k, dE, dB, rtol=1e-10, atol=1e-12,
                   h0=1e-2, max_steps=200000, zero=False):
    """g-characteristics in the bump (or zero) field."""
    q = np.broadcast_to(np.asarray(q, dtype=float), (len(Y0),))
    dE = np.asarray(dE, float)
    dB = np.asarray(dB, float)

    def rhs(s, Y, idx):
        if zero:
            return np.zeros_like(Y)
        xf = shifted_point(s, Y)
        E, B = bump_field(s, xf, amp, k, dE, dB)
        return char_rhs(s, Y, q[idx], E, B)

    return dopri_batch(rhs, Y0, s0, targets, rtol, atol, h0, max_steps)


# ---------------------------------------------------------------- cone sums

def _bump_shape(s2, power):
    return np.clip(1.0 - s2, 0.0, None) ** power


def source_momentum_samples(tp, y, src, xi, mu):
    """Momentum samples of a bump source at retarded points.

    Parameters
    ----------
    tp : ndarray (M,)
        Retarded times.
    y : ndarray (M, 3)
    src : dict
        ``kind`` (0 static, 1 free streaming), ``xc``, ``Rx``, ``vc``, ``Rv``
        (unit-mass momentum), ``power``, ``amp``, ``rho_v`` (speed-ball radius).
    xi, mu : reference nodes and weights on the unit ball.

    Returns
    -------
    u : ndarray (M, J, 3) unit-mass momenta
    w : ndarray (M, J) weights of ``f du``
    """
    xc, Rx, vc, Rv = src["xc"], src["Rx"], src["vc"], src["Rv"]
    p, amp = src["power"], src["amp"]
    M, J = tp.size, mu.size
    zreg = np.zeros(M, dtype=bool)
    if src["kind"] == 1:
        zreg = tp * src["rho_v"] >= Rx
    u = np.empty((M, J, 3))
    w = np.empty((M, J))
    vr = ~zreg
    if np.any(vr):
        uu = vc + Rv * xi  # (J,3)
        u[vr] = uu[None]
        fv = _bump_shape(np.einsum("ij,ij->i", xi, xi), p)
        if src["kind"] == 1:
            uh = uu / np.sqrt(1.0 + np.einsum("ij,ij->i", uu, uu))[:, None]
            z = y[vr][:, None, :] - tp[vr][:, None, None] * uh[None]
        else:
            z = np.broadcast_to(y[vr][:, None, :], (int(vr.sum()), J, 3))
        dz = (z - xc) / Rx
        fx = _bump_shape(np.einsum("mji,mji->mj", dz, dz), p)
        w[vr] = amp * Rv ** 3 * (mu * fv)[None] * fx
    if np.any(zreg):
        z = xc + Rx * xi
        fx = _bump_shape(np.einsum("ij,ij->i", xi, xi), p)
        t3 = tp[zreg]
        uh = (y[zreg][:, None, :] - z[None]) / t3[:, None, None]
        a = 1.0 - np.einsum("mji,mji->mj", uh, uh)
        ok = a > 0
        sa = np.sqrt(np.where(ok, a, 1.0))
        uu = uh / sa[..., None]
        dv = (uu - vc) / Rv
        fv = np.where(ok, _bump_shape(np.einsum("mji,mji->mj", dv, dv), p), 0.0)
        jac = np.where(ok, sa ** -5, 0.0) / t3[:, None] ** 3
        u[zreg] = np.where(ok[..., None], uu, 0.0)
        w[zreg] = amp * Rx ** 3 * (mu * fx)[None] * fv * jac
    return u, w


def kernel_T(om, u):
    """``W`` and its magnetic twin for directions ``om`` (M,3) and momenta ``u`` (M,J,3)."""
    u0 = np.sqrt(1.0 + np.einsum("mji,mji->mj", u, u))
    uh = u / u0[..., None]
    D = 1.0 + np.einsum("mji,mi->mj", uh, om)
    den = 1.0 / (u0 * u0 * D * D)
    KE = (om[:, None, :] + uh) * den[..., None]
    KB = np.cross(om[:, None, :], uh) * den[..., None]
    return KE, KB, D


def kernel_S(om, u, Em, Bm):
    """``grad_u k . L`` for the electric and magnetic kernels."""
    u0 = np.sqrt(1.0 + np.einsum("mji,mji->mj", u, u))
    uh = u / u0[..., None]
    L = Em[:, None, :] + np.cross(uh, Bm[:, None, :])
    G = (L - uh * np.einsum("mji,mji->mj", uh, L)[..., None]) / u0[..., None]
    D = 1.0 + np.einsum("mji,mi->mj", uh, om)
    og = np.einsum("mji,mi->mj", G, om)
    omb = om[:, None, :]
    KE = G / D[..., None] - (omb + uh) * (og / (D * D))[..., None]
    KB = np.cross(omb, G) / D[..., None] - np.cross(omb, uh) * (og / (D * D))[..., None]
    return KE, KB, D


def cone_sum(x, t, r, om, wq, kind, xc, Rx, vc, Rv, power, amp, rho_v, xi, mu, mode,
             Em, Bm, chunk=2048):
    """Raw retarded-cone sums over prepared spatial nodes.

    ``mode`` 0 sums ``W f`` (transport part), mode 1 sums ``r (grad k . L) f``
    with field values ``Em``, ``Bm`` at the nodes. The source is a bump
    profile given by its parameters (see ``source_momentum_samples``).

    Returns
    -------
    SE, SB : ndarray (3,)
    dmin : float
        Smallest ``1 + uhat.om`` over samples of nonzero weight.
    """
    src = dict(kind=kind, xc=np.asarray(xc), Rx=Rx, vc=np.asarray(vc), Rv=Rv, power=power,
               amp=amp, rho_v=rho_v)
    SE = np.zeros(3)
    SB = np.zeros(3)
    dmin = np.inf
    M = r.size
    for a in range(0, M, chunk):
        b = min(M, a + chunk)
        rr, oo = r[a:b], om[a:b]
        tp = t - rr
        y = x + rr[:, None] * oo
        u, w = source_momentum_samples(tp, y, src, xi, mu)
        if mode == 0:
            KE, KB, D = kernel_T(oo, u)
            ww = wq[a:b]
        else:
            KE, KB, D = kernel_S(oo, u, Em[a:b], Bm[a:b])
            ww = wq[a:b] * rr
        live = w != 0
        if np.any(live):
            dmin = min(dmin, float(D[live].min()))
        SE += np.einsum("m,mj,mji->i", ww, w, KE)
        SB += np.einsum("m,mj,mji->i", ww, w, KB)
    return SE, SB, dmin
