"""Independent Monte Carlo oracles for the quadrature paths.

Each oracle integrates the same quantity as a production routine but
through a different parametrization, so agreement tests the transcription
and the quadrature rather than re-running the same code. Samples are
scrambled Sobol points (``scipy.stats.qmc``) with a fixed seed.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def _ball_points(u, radius, center):
    """Map unit-cube points (n, 3) to a ball; returns points and the volume."""
    r = radius * u[:, 0] ** (1.0 / 3.0)
    c = 2 * u[:, 1] - 1
    ph = 2 * np.pi * u[:, 2]
    s = np.sqrt(1 - c * c)
    pts = np.stack([r * s * np.cos(ph), r * s * np.sin(ph), r * c], 1) + center
    return pts, 4.0 / 3.0 * np.pi * radius ** 3


def sobol(dim, log2n, seed):
    return qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(log2n)


def _batched(fn, pts, batch=1 << 16):
    acc = None
    for a in range(0, pts.shape[0], batch):
        v = fn(pts[a:a + batch])
        acc = v if acc is None else acc + v
    return acc


def static_blob_T(data, t, x, log2n=20, seed=7):
    """``(E_T, B_T)`` of a static source by sampling ``(y, u)`` in the support balls."""
    x = np.asarray(x, float)
    E = np.zeros(3)
    B = np.zeros(3)
    for i, sd in enumerate(data.species):
        prof = sd.unit_profile
        pts = sobol(6, log2n, seed + i)

        def fn(p):
            y, vy = _ball_points(p[:, :3], prof.x_radius, prof.xc)
            u, vu = _ball_points(p[:, 3:], prof.v_radius, prof.vc)
            d = y - x
            r = np.linalg.norm(d, axis=1)
            inside = r <= t
            om = d / r[:, None]
            u0 = np.sqrt(1 + np.sum(u * u, 1))
            uh = u / u0[:, None]
            D = 1 + np.sum(uh * om, 1)
            f = prof.value(y, u) * inside
            c = f / (u0 * u0 * D * D * r * r) * vy * vu
            return np.concatenate([c @ (om + uh), c @ np.cross(om, uh)])

        s = _batched(fn, pts) / pts.shape[0]
        pref = -sd.species.charge * sd.species.mass ** 3
        E += pref * s[:3]
        B += pref * s[3:]
    return E, B


def _cone_crossing(z, uh, t, x):
    """Time ``s`` at which ``z + s uhat`` meets the backward cone of ``(t, x)``."""
    d = z - x
    a = 1 - np.sum(uh * uh, 1)
    b = t + np.sum(d * uh, 1)
    c = t * t - np.sum(d * d, 1)
    ok = c > 0
    s = np.where(ok, c / (b + np.sqrt(np.clip(b * b - a * c, 0, None))), 0.0)
    return s, a, ok


def blob_S(src, field, t, x, log2n=20, seed=11):
    """``(E_S, B_S)`` from the non-integrated form ``k (L . grad_v f)``.

    Static sources are sampled in ``(y, u)``. Free-streaming sources are
    sampled in initial phase points ``(z, u)``: at fixed ``u`` the map
    ``y -> z = y - t' uhat`` on the cone has Jacobian ``1 + uhat.omega``.
    """
    x = np.asarray(x, float)
    E = np.zeros(3)
    B = np.zeros(3)
    for i, sd in enumerate(src.data.species):
        prof = sd.unit_profile
        pts = sobol(6, log2n, seed + i)
        free = src.kind == "free"

        def fn(p):
            u, vu = _ball_points(p[:, 3:], prof.v_radius, prof.vc)
            u0 = np.sqrt(1 + np.sum(u * u, 1))
            uh = u / u0[:, None]
            if free:
                z, vz = _ball_points(p[:, :3], prof.x_radius, prof.xc)
                tp, _, inside = _cone_crossing(z, uh, t, x)
                y = z + tp[:, None] * uh
            else:
                y, vz = _ball_points(p[:, :3], prof.x_radius, prof.xc)
            d = y - x
            r = np.linalg.norm(d, axis=1)
            rs = np.where(r > 0, r, 1.0)
            if not free:
                tp = t - r
                inside = tp >= 0
            tpc = np.where(inside, tp, 0.0)
            om = d / rs[:, None]
            D = 1 + np.sum(uh * om, 1)
            Em, Bm = field.values(tpc, y)
            L = Em + np.cross(uh, Bm)
            gu = src.density_grad_u(i, tpc, y, u)
            Lg = np.sum(L * gu, 1) * inside
            # r dr domega = dy / r, and dy = dz / D on the free-streaming chart
            jac = D if free else 1.0
            c = Lg / (D * rs * jac) * vz * vu
            return np.concatenate([c @ (om + uh), c @ np.cross(om, uh)])

        s = _batched(fn, pts) / pts.shape[0]
        pref = sd.species.charge ** 2 * sd.species.mass ** 2
        E += pref * s[:3]
        B += pref * s[3:]
    return E, B


def free_streaming_T(data, t, x, log2n=20, seed=3):
    """Transport piece of a free-streaming source from retarded point-charge fields.

    Each initial phase point ``(z, u)`` moves on ``z + s uhat``; its crossing
    of the backward cone solves ``a s^2 - 2 b s + c = 0`` and contributes the
    retarded point-charge field ``-(omega+uhat)(1-|uhat|^2)/((1+uhat.omega)^3 r^2)``.
    """
    x = np.asarray(x, float)
    E = np.zeros(3)
    B = np.zeros(3)
    for i, sd in enumerate(data.species):
        prof = sd.unit_profile
        pts = sobol(6, log2n, seed + i)

        def fn(p):
            z, vz = _ball_points(p[:, :3], prof.x_radius, prof.xc)
            u, vu = _ball_points(p[:, 3:], prof.v_radius, prof.vc)
            u0 = np.sqrt(1 + np.sum(u * u, 1))
            uh = u / u0[:, None]
            s, a, ok = _cone_crossing(z, uh, t, x)
            y = z + s[:, None] * uh
            dy = y - x
            r = np.linalg.norm(dy, axis=1)
            rs = np.where(r > 0, r, 1.0)
            om = dy / rs[:, None]
            D = 1 + np.sum(uh * om, 1)
            f = prof.value(z, u) * ok
            w = f * vz * vu * a / (D ** 3 * rs * rs)
            return np.concatenate([w @ (om + uh), w @ np.cross(om, uh)])

        s = _batched(fn, pts) / pts.shape[0]
        pref = -sd.species.charge * sd.species.mass ** 3
        E += pref * s[:3]
        B += pref * s[3:]
    return E, B


def asymptotic_field_point_charge(Q, center, radius, v, log2n=20, seed=5):
    """``(E_alpha, B_alpha)(v)`` as the field of point charges leaving the origin.

    ``Q`` is a vectorized callable of unit-mass momenta supported in the
    ball ``(center, radius)``. At ``(t, x) = (1, vhat)`` the charge of
    momentum ``u`` sits at ``s uhat`` with ``1 - s = |vhat - s uhat|``.
    Momenta are sampled in spherical coordinates about ``v``, which
    cancels the ``|u - v|^-2`` growth of the integrand.
    """
    v = np.asarray(v, float)
    center = np.asarray(center, float)
    vh = v / np.sqrt(1 + v @ v)
    rho_max = np.linalg.norm(center - v) + radius
    pts = sobol(3, log2n, seed)

    def fn(p):
        rho = rho_max * p[:, 0]
        c = 2 * p[:, 1] - 1
        ph = 2 * np.pi * p[:, 2]
        sn = np.sqrt(1 - c * c)
        u = v + rho[:, None] * np.stack([sn * np.cos(ph), sn * np.sin(ph), c], 1)
        vol = 4 * np.pi * rho_max * rho * rho
        inside = np.linalg.norm(u - center, axis=1) <= radius
        u0 = np.sqrt(1 + np.sum(u * u, 1))
        uh = u / u0[:, None]
        a = 1 - np.sum(uh * uh, 1)
        b = 1 - uh @ vh
        cc = 1 - vh @ vh
        s = cc / (b + np.sqrt(np.clip(b * b - a * cc, 0, None)))
        r = 1 - s
        with np.errstate(divide="ignore", invalid="ignore"):
            om = (s[:, None] * uh - vh) / r[:, None]
            D = 1 + np.sum(uh * om, 1)
            w = np.where(inside & (r > 0), -Q(u) * vol * a / (D ** 3 * r * r), 0.0)
        om = np.where(np.isfinite(om), om, 0.0)
        return np.concatenate([w @ (om + uh), w @ np.cross(om, uh)])

    s = _batched(fn, pts) / pts.shape[0]
    return s[:3], s[3:]
