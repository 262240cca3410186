"""Retarded-integral decomposition of the field into transport (T),
field-coupling (S) and initial-data pieces.

Conventions: ``omega = (y - x)/|y - x|`` and ``y = x + r omega``, so
``dy / |y - x|^2 = dr d omega``. Per species the transport piece is
``-e m^3 int dr d omega int W(omega, u) f du`` with
``W = (omega + uhat) / (<u>^2 (1 + uhat.omega)^2)``; the coupling piece is
the integrated-by-parts form ``-e^2 m^2 int r dr d omega int (grad_u k . L) f du``
with ``k = (omega + uhat)/(1 + uhat.omega)`` (``omega x uhat`` for B) and
``L = E + uhat x B`` at the retarded point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .. import _backend
from ..parallel import map_chunks
from .quadrature import (QuadConfig, QuadratureError, adaptive, retarded_ball_nodes,
                         sphere_cap_nodes, unit_ball_rule)

logger = logging.getLogger(__name__)

KERNEL_FLOOR = 1e-6


class SupportViolation(RuntimeError):
    """A kernel denominator ``1 + uhat.omega`` dropped below the floor."""


@dataclass
class ConeResult:
    E: np.ndarray
    B: np.ndarray
    levels: int
    dmin: float
    n_nodes: int


def _species_cone(src, i, t, x, cfg, mode, field, kern):
    tube = src.tube(i)
    r, om, wq = retarded_ball_nodes(x, t, tube, cfg)
    if r.size == 0:
        return np.zeros(3), np.zeros(3), np.inf, 0
    if mode == 1:
        Em, Bm = field.values(t - r, x + r[:, None] * om)
        Em, Bm = np.ascontiguousarray(Em), np.ascontiguousarray(Bm)
    else:
        Em = Bm = np.zeros((1, 3))
    xi, mu = unit_ball_rule(cfg.mom_radial, cfg.mom_theta, cfg.mom_phi)
    p = src.params(i)
    x = np.ascontiguousarray(x, dtype=float)

    def work(a, b):
        if mode == 1:
            Ea, Ba = Em[a:b], Bm[a:b]
        else:
            Ea = Ba = Em
        return kern.cone_sum(x, float(t), r[a:b], om[a:b], wq[a:b], p["kind"], p["xc"], p["Rx"],
                             p["vc"], p["Rv"], p["power"], p["amp"], p["rho_v"],
                             np.ascontiguousarray(xi), np.ascontiguousarray(mu), mode, Ea, Ba)

    parts = map_chunks(work, r.size, size=8192)
    SE = np.zeros(3)
    SB = np.zeros(3)
    dmin = np.inf
    for pe, pb, dm in parts:  # fixed-order merge
        SE = SE + pe
        SB = SB + pb
        dmin = min(dmin, dm)
    return SE, SB, dmin, r.size


def _cone(src, t, x, cfg, mode, field=None, backend=None):
    if t <= 0:
        raise ValueError("retarded integrals require t > 0")
    x = np.asarray(x, dtype=float)
    if hasattr(src, "eval_point"):
        out = src.eval_point(t, x, field if mode == 1 else None)
        E, B = (out[0], out[1]) if mode == 0 else (out[2], out[3])
        return ConeResult(E, B, 0, np.nan, 0)
    kern = _backend.get(backend)
    live = [i for i in range(len(src)) if not src.is_empty(i)]
    if not live or (mode == 1 and field is not None and field.is_zero):
        return ConeResult(np.zeros(3), np.zeros(3), 0, np.inf, 0)
    info = {"dmin": np.inf, "n": 0}

    def evaluate(c):
        tot = np.zeros(6)
        for i in live:
            sp = src.species[i]
            SE, SB, dmin, n = _species_cone(src, i, t, x, c, mode, field, kern)
            pref = -sp.charge * sp.mass ** 3 if mode == 0 else -sp.charge ** 2 * sp.mass ** 2
            tot += pref * np.concatenate([SE, SB])
            info["dmin"] = min(info["dmin"], dmin)
            info["n"] = n
        return tot

    val, lev = adaptive(evaluate, cfg, label="retarded-cone quadrature")
    if info["dmin"] < KERNEL_FLOOR:
        raise SupportViolation(f"kernel denominator {info['dmin']:.3e} below {KERNEL_FLOOR}")
    return ConeResult(val[:3], val[3:], lev, info["dmin"], info["n"])


def eval_T(src, t, x, cfg: QuadConfig = QuadConfig(), backend=None) -> ConeResult:
    """Transport pieces ``(E_T, B_T)`` at one point."""
    return _cone(src, t, x, cfg, 0, backend=backend)


def eval_S(src, field, t, x, cfg: QuadConfig = QuadConfig(), backend=None) -> ConeResult:
    """Field-coupling pieces ``(E_S, B_S)`` at one point."""
    return _cone(src, t, x, cfg, 1, field=field, backend=backend)


def eval_E_T(src, t, x, cfg=QuadConfig(), backend=None):
    return eval_T(src, t, x, cfg, backend).E


def eval_B_T(src, t, x, cfg=QuadConfig(), backend=None):
    return eval_T(src, t, x, cfg, backend).B


def eval_E_S(src, field, t, x, cfg=QuadConfig(), backend=None):
    return eval_S(src, field, t, x, cfg, backend).E


def eval_B_S(src, field, t, x, cfg=QuadConfig(), backend=None):
    return eval_S(src, field, t, x, cfg, backend).B


# ---------------------------------------------------------------- data term

def _data_sphere(data, t, x, n_t, n_p, cfg):
    """Initial-data piece on one angular resolution.

    Returns the 6-vector ``(E, B)`` and the integral of the absolute integrand.
    """
    out = np.zeros(6)
    mag = 0.0
    xi, mu = unit_ball_rule(cfg.mom_radial, cfg.mom_theta, cfg.mom_phi)
    for sd in data.species:
        prof = sd.unit_profile
        if prof.amplitude == 0:
            continue
        om, wo = sphere_cap_nodes(x, t, prof.xc, prof.x_radius, n_t, n_p)
        if wo.size == 0:
            continue
        y = x + t * om
        u = prof.vc + prof.v_radius * xi
        u0 = np.sqrt(1 + np.sum(u * u, 1))
        uh = u / u0[:, None]
        # separable profile: f = (x factor) x (momentum factor)
        fx = prof.value(y, np.broadcast_to(prof.vc, y.shape))
        fu = prof.value(np.broadcast_to(prof.xc, u.shape), u) / max(prof.amplitude, 1e-300)
        od = om @ uh.T  # (M, J)
        D = 1 + od
        ws = wo * t * t  # dS = t^2 d omega
        # A = dS f du / D; shell kernels (omega - (uhat.omega) uhat)/D and (omega x uhat)/D
        A = (ws * fx)[:, None] * (fu * prof.v_radius ** 3 * mu)[None, :] / D
        shellE = om.T @ A.sum(1) - uh.T @ np.sum(A * od, 0)
        shellB = np.sum(np.cross(om, A @ uh), 0)
        fw = (ws * fx)[:, None] * (fu * prof.v_radius ** 3 * mu)[None, :]
        curr = uh.T @ fw.sum(0)
        e, m = sd.species.charge, sd.species.mass
        out[:3] += -(e * m ** 3 / t) * shellE - (e * m ** 3 / (4 * np.pi * t)) * curr
        out[3:] += -(e * m ** 3 / t) * shellB
        absf = float(np.sum(np.abs(fw)))
        mag += abs(e) * m ** 3 / t * (2.0 + 1.0 / (4 * np.pi)) * absf / max(float(np.min(D)), 1e-300)
    if data.has_fields:
        k = data.k
        om, wo = sphere_cap_nodes(x, t, np.zeros(3), k, n_t, n_p)
        if wo.size:
            y = x + t * om
            ws = wo * t * t
            zero = lambda fn, shp: np.zeros((y.shape[0],) + shp) if fn is None else np.asarray(fn(y), float)
            E0, B0 = zero(data.E0, (3,)), zero(data.B0, (3,))
            gE, gB = zero(data.gradE0, (3, 3)), zero(data.gradB0, (3, 3))
            cE, cB = zero(data.curlE0, (3,)), zero(data.curlB0, (3,))
            dy = y - x
            # ((y - x) . grad) F_i = sum_j (y - x)_j d_j F_i
            termE = E0 + np.einsum("mij,mj->mi", gE, dy) + t * cB
            termB = B0 + np.einsum("mij,mj->mi", gB, dy) - t * cE
            out[:3] += ws @ termE / (4 * np.pi * t * t)
            out[3:] += ws @ termB / (4 * np.pi * t * t)
            mag += ws @ (np.linalg.norm(termE, axis=1) + np.linalg.norm(termB, axis=1)) / (4 * np.pi * t * t)
    return out, mag


def eval_data(data, t, x, cfg: QuadConfig = QuadConfig()):
    """Initial-data pieces ``(E_data, B_data)``; exactly zero off the shell ``|t - |x|| <= k``."""
    x = np.asarray(x, dtype=float)
    if t <= 0:
        raise ValueError("the data term requires t > 0")
    k = data.k
    if abs(t - np.linalg.norm(x)) > k:
        return np.zeros(3), np.zeros(3)
    # absolute floor on the natural shell scale sum |e| M / (t k^2)
    ref = sum(abs(sd.species.charge) * sd.profile.total_mass() for sd in data.species) / (t * k * k)
    cfg = replace(cfg, atol=max(cfg.atol, cfg.rtol * ref))
    val, _ = adaptive(lambda c: _data_sphere(data, t, x, c.n_theta, c.n_phi, c), cfg,
                      label="data-shell quadrature")
    return val[:3], val[3:]


def eval_E_data(data, t, x, cfg=QuadConfig()):
    return eval_data(data, t, x, cfg)[0]


def eval_B_data(data, t, x, cfg=QuadConfig()):
    return eval_data(data, t, x, cfg)[1]


def total_field(src, data, field, t, x, cfg=QuadConfig(), backend=None):
    """Sum of the three pieces at one point."""
    T = eval_T(src, t, x, cfg, backend)
    S = eval_S(src, field, t, x, cfg, backend)
    Ed, Bd = eval_data(data, t, x, cfg)
    return T.E + S.E + Ed, T.B + S.B + Bd


__all__ = ["ConeResult", "QuadratureError", "SupportViolation", "eval_T", "eval_S", "eval_E_T",
           "eval_B_T", "eval_E_S", "eval_B_S", "eval_data", "eval_E_data", "eval_B_data",
           "total_field"]
