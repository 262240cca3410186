"""Retarded source access: momentum samples of f_alpha at retarded points.

``BumpSource`` evaluates analytic sources (static blob or free streaming
of the initial bump) and feeds the compiled cone kernel; ``EnsembleSource``
represents f_alpha by particle trajectories and sums retarded crossings
directly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import _pykernels as pk
from .quadrature import QuadConfig, WorldTube, unit_ball_rule

logger = logging.getLogger(__name__)

STATIC, FREE = 0, 1


class BumpSource:
    """Analytic bump source for every species of an ``InitialData``.

    ``kind='free'`` is the free-streaming evolution
    ``f(t', y, v) = f0(y - t' vhat, v)``; ``kind='static'`` freezes
    ``f(t', y, v) = f0(y, v)`` (a quadrature fixture, not a Vlasov solution).
    """

    def __init__(self, data, kind="free", scale=1.0):
        if kind not in ("free", "static"):
            raise ValueError(f"unknown source kind {kind!r}")
        self.data = data
        self.kind = kind
        self.code = FREE if kind == "free" else STATIC
        self.scale = float(scale)
        self._balls = [sd.unit_profile.speed_ball() for sd in data.species]

    @property
    def species(self):
        return [sd.species for sd in self.data.species]

    def __len__(self):
        return len(self.data.species)

    def is_empty(self, i):
        return self.data.species[i].profile.amplitude == 0.0 or self.scale == 0.0

    def tube(self, i) -> WorldTube:
        prof = self.data.species[i].unit_profile
        if self.code == STATIC:
            return WorldTube(prof.xc, np.zeros(3), prof.x_radius, 0.0)
        ch, rho = self._balls[i]
        return WorldTube(prof.xc, ch, prof.x_radius, rho)

    def params(self, i):
        prof = self.data.species[i].unit_profile
        return dict(kind=self.code, xc=np.ascontiguousarray(prof.xc), Rx=float(prof.x_radius),
                    vc=np.ascontiguousarray(prof.vc), Rv=float(prof.v_radius),
                    power=int(prof.power), amp=float(prof.amplitude) * self.scale,
                    rho_v=float(self._balls[i][1]))

    def density(self, i, tp, y, u):
        """``f_alpha(t', y, m u)`` at unit-mass momenta ``u``."""
        prof = self.data.species[i].unit_profile
        u = np.asarray(u, float)
        if self.code == FREE:
            uh = u / np.sqrt(1 + np.sum(u * u, -1))[..., None]
            y = y - np.asarray(tp)[..., None] * uh
        return self.scale * prof.value(y, u)

    def density_grad_u(self, i, tp, y, u):
        """``grad_u`` of ``density`` (chain rule through the free-streaming shift)."""
        prof = self.data.species[i].unit_profile
        u = np.asarray(u, float)
        tp = np.asarray(tp, float)
        if self.code == STATIC:
            return self.scale * prof.grad(y, u)[1]
        u0 = np.sqrt(1 + np.sum(u * u, -1))
        uh = u / u0[..., None]
        z = y - tp[..., None] * uh
        gx, gv = prof.grad(z, u)
        # d uhat_l / d u_j = (delta_lj - uh_l uh_j) / u0 (symmetric)
        P = (np.eye(3) - uh[..., :, None] * uh[..., None, :]) / u0[..., None, None]
        return self.scale * (gv - tp[..., None] * np.einsum("...l,...lj->...j", gx, P))

    def samples(self, i, tp, y, cfg: QuadConfig = QuadConfig()):
        """Weighted momentum samples ``(u, w)`` of ``f du`` at points ``(t', y)``."""
        xi, mu = unit_ball_rule(cfg.mom_radial, cfg.mom_theta, cfg.mom_phi)
        return pk.source_momentum_samples(np.atleast_1d(np.asarray(tp, float)),
                                          np.atleast_2d(np.asarray(y, float)), self.params(i), xi, mu)


# ---------------------------------------------------------------- ensembles

def hermite(s, s0, s1, x0, x1, d0, d1):
    """Cubic Hermite interpolation; arrays broadcast, ``s`` in ``[s0, s1]``."""
    h = s1 - s0
    tau = (s - s0) / h
    t2, t3 = tau * tau, tau * tau * tau
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + tau
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return (h00[..., None] * x0 + (h10 * h)[..., None] * d0 + h01[..., None] * x1
            + (h11 * h)[..., None] * d1)


@dataclass
class TrajectoryStore:
    """Particle trajectories in f-coordinates at stored times (write once)."""

    times: np.ndarray   # (n_s,)
    X: np.ndarray       # (N, n_s, 3) physical positions X + s Vhat
    U: np.ndarray       # (N, n_s, 3) unit-mass momenta
    weights: np.ndarray  # (N,) physical weights of f dx dv
    charge: np.ndarray  # (N,)
    mass: np.ndarray    # (N,)

    def __post_init__(self):
        for name in ("times", "X", "U", "weights", "charge", "mass"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            setattr(self, name, arr)

    @property
    def n(self):
        return self.weights.size

    def velocity(self, j):
        U = self.U[:, j]
        return U / np.sqrt(1 + np.sum(U * U, -1))[:, None]

    def state_at(self, s):
        """Hermite-interpolated positions and linearly interpolated momenta at scalar ``s``."""
        j = int(np.clip(np.searchsorted(self.times, s, side="right") - 1, 0, self.times.size - 2))
        s0, s1 = self.times[j], self.times[j + 1]
        ss = np.full(self.n, float(s))
        X = hermite(ss, s0, s1, self.X[:, j], self.X[:, j + 1], self.velocity(j), self.velocity(j + 1))
        lam = (s - s0) / (s1 - s0)
        return X, (1 - lam) * self.U[:, j] + lam * self.U[:, j + 1]


class EnsembleSource:
    """Particle representation of f_alpha read along the backward light cone.

    Each particle crosses the backward cone of ``(t, x)`` exactly once
    (speeds are below 1); the crossing is located on the Hermite
    interpolant of the stored trajectory. The volume factor of the
    crossing is ``1 / (1 + uhat . omega)``. A softening length ``eps``
    regularizes the point-particle singularity.
    """

    def __init__(self, store: TrajectoryStore, eps: float = 0.25, bisect_iters: int = 48):
        self.store = store
        self.eps = float(eps)
        self.bisect_iters = bisect_iters

    def crossings(self, t, x):
        """Retarded crossing times, positions and momenta for one point ``x``.

        Returns arrays over the particles that do cross, and their indices.
        """
        st = self.store
        times = st.times
        if st.n == 0:
            return np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3))
        x = np.asarray(x, float)
        phi0 = t - times[0] - np.linalg.norm(st.X[:, 0] - x, axis=1)
        live = np.nonzero(phi0 >= 0)[0]
        if live.size == 0 or t <= times[0]:
            return np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3))
        # phi decreases along each trajectory: the crossing lies in the
        # segment after the last stored time with phi >= 0
        seg = np.zeros(live.size, np.int64)
        for j in range(1, times.size):
            if times[j] >= t:
                break
            ph = t - times[j] - np.linalg.norm(st.X[live, j] - x, axis=1)
            seg = np.where(ph >= 0, j, seg)
        seg = np.minimum(seg, times.size - 2)
        s0, s1 = times[seg], times[seg + 1]
        lo, hi = s0.copy(), np.minimum(s1, t)
        X0, X1 = st.X[live, seg], st.X[live, seg + 1]
        U0, U1 = st.U[live, seg], st.U[live, seg + 1]
        V0 = U0 / np.sqrt(1 + np.sum(U0 * U0, -1))[:, None]
        V1 = U1 / np.sqrt(1 + np.sum(U1 * U1, -1))[:, None]
        for _ in range(self.bisect_iters):
            mid = 0.5 * (lo + hi)
            Xm = hermite(mid, s0, s1, X0, X1, V0, V1)
            ph = t - mid - np.linalg.norm(Xm - x, axis=1)
            pos = ph >= 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        tc = 0.5 * (lo + hi)
        Xc = hermite(tc, s0, s1, X0, X1, V0, V1)
        lam = ((tc - s0) / (s1 - s0))[:, None]
        Uc = (1 - lam) * U0 + lam * U1
        return live, tc, Xc, Uc

    def eval_point(self, t, x, field=None):
        """``(E_T, B_T)`` and, when ``field`` is given, ``(E_S, B_S)`` at one point."""
        st = self.store
        idx, tc, Xc, Uc = self.crossings(t, x)
        zero = np.zeros(3)
        if idx.size == 0:
            return (zero, zero) if field is None else (zero, zero, zero, zero)
        d = Xc - x
        r = np.linalg.norm(d, axis=1)
        om = d / np.where(r > 0, r, 1.0)[:, None]
        u0 = np.sqrt(1 + np.sum(Uc * Uc, -1))
        uh = Uc / u0[:, None]
        D = 1 + np.sum(uh * om, 1)
        w = st.weights[idx]
        e = st.charge[idx]
        m = st.mass[idx]
        soft2 = r * r + self.eps * self.eps
        cT = -e * w / (u0 * u0 * D * D * D * soft2)
        ET = np.sum(cT[:, None] * (om + uh), 0)
        BT = np.sum(cT[:, None] * np.cross(om, uh), 0)
        if field is None:
            return ET, BT
        Em, Bm = field.values(tc, Xc)
        L = Em + np.cross(uh, Bm)
        G = (L - uh * np.sum(uh * L, 1)[:, None]) / u0[:, None]
        og = np.sum(G * om, 1)
        KE = G / D[:, None] - (om + uh) * (og / (D * D))[:, None]
        KB = np.cross(om, G) / D[:, None] - np.cross(om, uh) * (og / (D * D))[:, None]
        cS = -(e * e / m) * w * r / (soft2 * D)
        return ET, BT, np.sum(cS[:, None] * KE, 0), np.sum(cS[:, None] * KB, 0)
