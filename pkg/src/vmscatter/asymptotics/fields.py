"""Asymptotic fields from the asymptotic charge.

For one species with asymptotic charge ``Q`` (unit-mass momenta),

    E_a(v) = - int dr int d omega  <u>^5 W(omega, u) Q(u) (1 - r)^-3,
    u = check((r omega + vhat) / (1 - r)),
    W(omega, u) = (omega + uhat) / (<u>^2 (1 + uhat . omega)^2),

and ``B_a`` with ``omega x uhat`` in place of ``omega + uhat``; the
spherical coordinates ``y = r omega`` absorb the ``|y|^-2`` weight. The
integrand vanishes unless ``(r omega + vhat)/(1 - r)`` lies in the speed
ball of the support; this confines ``r`` to
``r <= (|vhat| + beta_hat)/(1 + beta_hat)``.
Totals are ``E = sum_a e_a m_a^3 E_a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from ..fields.quadrature import QuadratureError, _cap_cos, cap_rule, composite_gl
from ..flow.data import BumpProfile
from ..relkin import energy

logger = logging.getLogger(__name__)


class DomainViolation(RuntimeError):
    """A quadrature node left the admissible region ``1 - |y| > 0``."""


@dataclass(frozen=True)
class AFQuadConfig:
    panels: int = 2
    order: int = 8
    n_theta: int = 8
    n_phi: int = 16
    rtol: float = 1e-6
    atol: float = 1e-14
    max_levels: int = 4     # level 5 needs ~10 GB of nodes
    scan: int = 513


@dataclass(frozen=True)
class SupportBall:
    """Momentum ball ``|u - center| <= radius`` containing the support of Q."""

    center: tuple
    radius: float

    def speed_ball(self):
        return BumpProfile(1.0, v_center=tuple(self.center), v_radius=float(self.radius)).speed_ball()

    @property
    def beta_hat(self):
        r = float(np.linalg.norm(self.center)) + float(self.radius)
        return r / np.sqrt(1 + r * r)


def _intervals(vh, ch, rho, rmax, scan):
    """Radii in ``[0, rmax]`` where the sphere ``|y| = r`` meets the speed-ball image."""
    def g(r):
        c = (1 - r) * ch - vh
        return abs(r - np.linalg.norm(c)) - (1 - r) * rho

    rs = np.linspace(0.0, rmax, scan)
    vals = np.array([g(r) for r in rs])
    inside = vals <= 0
    out = []
    i = 0
    while i < scan:
        if inside[i]:
            j = i
            while j + 1 < scan and inside[j + 1]:
                j += 1
            a = rs[i] if i == 0 else brentq(g, rs[i - 1], rs[i], xtol=1e-15)
            b = rs[j] if j == scan - 1 else brentq(g, rs[j], rs[j + 1], xtol=1e-15)
            out.append((a, b))
            i = j + 1
        else:
            i += 1
    return out


def _nodes(v, ball: SupportBall, cfg: AFQuadConfig, level: int):
    """Nodes ``(r, omega)`` and weights of ``dr d omega`` over the support region."""
    f = 2 ** level
    vh = v / energy(v)
    ch, rho = ball.speed_ball()
    bh = ball.beta_hat
    rmax = (np.linalg.norm(vh) + bh) / (1 + bh)
    R, OM, W = [], [], []
    for a, b in _intervals(vh, ch, rho, rmax, cfg.scan):
        rn, rw = composite_gl(a, b, cfg.panels * f, cfg.order)
        for r, w in zip(rn, rw):
            c = (1 - r) * ch - vh
            d = float(np.linalg.norm(c))
            cmin = float(_cap_cos(r, d, (1 - r) * rho))
            axis = c if d > 0 else np.array([0.0, 0.0, 1.0])
            om, ow = cap_rule(axis, cmin, cfg.n_theta * f, cfg.n_phi * f)
            R.append(np.full(ow.size, r))
            OM.append(om)
            W.append(ow * w)
    if not R:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0), rmax
    return np.concatenate(R), np.concatenate(OM), np.concatenate(W), rmax


def _integrate(Q, v, ball, cfg, level):
    r, om, w, rmax = _nodes(v, ball, cfg, level)
    if r.size == 0:
        return np.zeros(6)
    if np.any(1 - r < 1 - rmax - 1e-14) or rmax >= 1:
        raise DomainViolation("quadrature node outside the admissible radius")
    vh = v / energy(v)
    z = (r[:, None] * om + vh) / (1 - r)[:, None]
    z2 = np.einsum("ij,ij->i", z, z)
    ok = z2 < 1
    u = np.zeros_like(z)
    u[ok] = z[ok] / np.sqrt(1 - z2[ok])[:, None]
    u0 = energy(u)
    q = np.zeros(r.size)
    q[ok] = np.asarray(Q(u[ok]), float)
    D = 1 + np.einsum("ij,ij->i", z, om)
    c = -w * u0 ** 3 * q / (D * D * (1 - r) ** 3)
    return np.concatenate([c @ (om + z), c @ np.cross(om, z)])


def species_asymptotic_field(Q: Callable, ball: SupportBall, v, cfg: AFQuadConfig = AFQuadConfig()):
    """``(E_a(v), B_a(v))`` for one species; refinement doubles every rule."""
    v = np.asarray(v, float)
    prev = _integrate(Q, v, ball, cfg, 0)
    for lev in range(1, cfg.max_levels + 1):
        cur = _integrate(Q, v, ball, cfg, lev)
        err = np.max(np.abs(cur - prev))
        scale = max(np.linalg.norm(cur[:3]), np.linalg.norm(cur[3:]))
        if err <= max(cfg.rtol * scale, cfg.atol):
            return cur[:3], cur[3:]
        prev = cur
    raise QuadratureError(f"asymptotic field quadrature not converged (change {err:.3e})", cur, prev)


def asymptotic_fields(Qs: Sequence[Callable], balls: Sequence[SupportBall], species, v,
                      cfg: AFQuadConfig = AFQuadConfig()):
    """Total ``(E(v), B(v)) = sum_a e_a m_a^3 (E_a, B_a)(v)``.

    ``v`` may be a single momentum (3,) or an array (K, 3).
    """
    v = np.asarray(v, float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    E = np.zeros((v.shape[0], 3))
    B = np.zeros((v.shape[0], 3))
    for Q, ball, sp in zip(Qs, balls, species):
        pref = sp.charge * sp.mass ** 3
        for i in range(v.shape[0]):
            e, b = species_asymptotic_field(Q, ball, v[i], cfg)
            E[i] += pref * e
            B[i] += pref * b
    if single:
        return E[0], B[0]
    return E, B
