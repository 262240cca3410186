"""Product quadrature rules: Gauss-Legendre lines, unit-ball rules and
spherical caps around an axis, plus the retarded-ball node builder."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance within budget."""

    def __init__(self, msg, last, previous):
        super().__init__(msg)
        self.last = last
        self.previous = previous


@dataclass(frozen=True)
class QuadConfig:
    """Resolution of the retarded-cone quadrature.

    The spatial rule is refined by doubling ``radial_panels``, ``n_theta``
    and ``n_phi`` until two successive levels agree to ``rtol`` (relative
    to the larger norm, with ``atol`` as absolute floor). The momentum
    rule (``mom_*``) is fixed.
    """

    radial_panels: int = 4
    radial_order: int = 8
    n_theta: int = 8
    n_phi: int = 16
    mom_radial: int = 6
    mom_theta: int = 6
    mom_phi: int = 12
    rtol: float = 1e-6
    atol: float = 1e-300
    max_levels: int = 4
    scan_points: int = 2049

    def refined(self, level: int) -> "QuadConfig":
        f = 2 ** level
        return replace(self, radial_panels=self.radial_panels * f,
                       n_theta=self.n_theta * f, n_phi=self.n_phi * f)


@lru_cache(maxsize=64)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gl_interval(a, b, n):
    x, w = gauss_legendre(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def composite_gl(a, b, panels, order):
    edges = np.linspace(a, b, panels + 1)
    x, w = gauss_legendre(order)
    h = np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + 0.5 * h[:, None] * x[None]).ravel()
    weights = (0.5 * h[:, None] * w[None]).ravel()
    return nodes, weights


@lru_cache(maxsize=32)
def unit_ball_rule(n_r: int, n_t: int, n_p: int):
    """Product rule on the unit ball (integrates ``dz``; weights sum to 4 pi / 3)."""
    xr, wr = gl_interval(0.0, 1.0, n_r)
    xc, wc = gauss_legendre(n_t)
    ph = 2 * np.pi * (np.arange(n_p) + 0.5) / n_p
    R, C, P = np.meshgrid(xr, xc, ph, indexing="ij")
    S = np.sqrt(1 - C * C)
    nodes = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], -1).reshape(-1, 3)
    W = (wr[:, None, None] * xr[:, None, None] ** 2 * wc[None, :, None]
         * np.full(n_p, 2 * np.pi / n_p)[None, None, :]).ravel()
    nodes = np.ascontiguousarray(nodes)
    nodes.setflags(write=False)
    W.setflags(write=False)
    return nodes, W


def orthonormal_frame(axis):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    trial = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = trial - (trial @ a) * a
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return a, e1, e2


def cap_rule(axis, cmin, n_t, n_p):
    """Directions with ``omega . axis >= cmin`` and weights of ``d omega``."""
    a, e1, e2 = orthonormal_frame(axis)
    c, wc = gl_interval(cmin, 1.0, n_t)
    ph = 2 * np.pi * (np.arange(n_p) + 0.5) / n_p
    C, P = np.meshgrid(c, ph, indexing="ij")
    S = np.sqrt(np.clip(1 - C * C, 0, None))
    om = (C[..., None] * a + (S * np.cos(P))[..., None] * e1 + (S * np.sin(P))[..., None] * e2)
    w = (wc[:, None] * np.full(n_p, 2 * np.pi / n_p)[None, :])
    return om.reshape(-1, 3), w.ravel()


@dataclass(frozen=True)
class WorldTube:
    """Bounding balls ``|y - (c0 + t' cv)| <= rho0 + t' rho_v`` of a source."""

    c0: np.ndarray
    cv: np.ndarray
    rho0: float
    rho_v: float

    def center(self, tp):
        return self.c0 + np.multiply.outer(tp, self.cv)

    def radius(self, tp):
        return self.rho0 + np.asarray(tp) * self.rho_v


def _cap_cos(r, d, rho):
    """Cosine bound of the cap ``{omega : |x + r omega - c| <= rho}`` with ``d = |c - x|``."""
    r, d, rho = np.asarray(r, float), np.asarray(d, float), np.asarray(rho, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (r * r + d * d - rho * rho) / (2 * r * d)
    c = np.where((r <= rho - d) | (d == 0), -1.0, c)
    return np.clip(c, -1.0, 1.0)


def radial_intervals(x, t, tube: WorldTube, scan=2049):
    """Intervals of ``r in [0, t]`` where the sphere of radius r about x meets the tube."""
    x = np.asarray(x, float)

    def g(r):
        tp = t - r
        d = np.linalg.norm(tube.center(tp) - x, axis=-1)
        return np.abs(r - d) - tube.radius(tp)

    rs = np.linspace(0.0, t, scan)
    gv = g(rs)
    neg = gv <= 0
    if not np.any(neg):
        return []
    out = []
    i = 0
    n = rs.size
    gs = lambda r: float(g(np.array([r]))[0])
    while i < n:
        if not neg[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and neg[j + 1]:
            j += 1
        a = rs[i] if i == 0 else brentq(gs, rs[i - 1], rs[i], xtol=1e-13 * max(1, t))
        b = rs[j] if j == n - 1 else brentq(gs, rs[j], rs[j + 1], xtol=1e-13 * max(1, t))
        if b > a:
            out.append((a, b))
        i = j + 1
    return out


def retarded_ball_nodes(x, t, tube: WorldTube, cfg: QuadConfig):
    """Nodes ``(r, omega, weight)`` of ``int_0^t dr int d omega`` restricted to the tube."""
    x = np.asarray(x, float)
    rlist, olist, wlist = [], [], []
    for a, b in radial_intervals(x, t, tube, cfg.scan_points):
        rn, rw = composite_gl(a, b, cfg.radial_panels, cfg.radial_order)
        for r, wr in zip(rn, rw):
            tp = t - r
            c = tube.center(tp)
            d = float(np.linalg.norm(c - x))
            cm = float(_cap_cos(r, d, tube.radius(tp)))
            axis = (c - x) if d > 0 else np.array([0.0, 0.0, 1.0])
            om, wo = cap_rule(axis, cm, cfg.n_theta, cfg.n_phi)
            rlist.append(np.full(wo.size, r))
            olist.append(om)
            wlist.append(wr * wo)
    if not rlist:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0)
    return (np.ascontiguousarray(np.concatenate(rlist)), np.ascontiguousarray(np.concatenate(olist)),
            np.ascontiguousarray(np.concatenate(wlist)))


def sphere_cap_nodes(x, radius, center, ball_radius, n_t, n_p):
    """Directions on ``|y - x| = radius`` with ``y`` in the ball ``(center, ball_radius)``."""
    x = np.asarray(x, float)
    c = np.asarray(center, float)
    d = float(np.linalg.norm(c - x))
    if abs(radius - d) > ball_radius:
        return np.zeros((0, 3)), np.zeros(0)
    cm = float(_cap_cos(radius, d, ball_radius))
    axis = (c - x) if d > 0 else np.array([0.0, 0.0, 1.0])
    return cap_rule(axis, cm, n_t, n_p)


def adaptive(evaluate, cfg: QuadConfig, label="quadrature"):
    """Run ``evaluate(cfg_level)`` on doubling levels until two agree.

    ``evaluate`` returns an ndarray, or a pair ``(value, magnitude)`` where
    ``magnitude`` is the integral of the absolute integrand; then
    ``rtol * magnitude`` also serves as an absolute floor, so values that
    cancel to round-off still converge. The last value is returned
    together with the number of levels used.
    """
    def run(lev):
        out = evaluate(cfg.refined(lev))
        return out if isinstance(out, tuple) else (out, 0.0)

    hist = [run(0)]
    for lev in range(1, cfg.max_levels):
        cur, mag = run(lev)
        prev = hist[-1][0]
        diff = float(np.max(np.abs(cur - prev)))
        scale = max(float(np.max(np.abs(cur))), float(np.max(np.abs(prev))))
        hist.append((cur, mag))
        if diff <= max(cfg.rtol * max(scale, mag), cfg.atol):
            return cur, lev
    raise QuadratureError(f"{label} did not converge to rtol={cfg.rtol} in {cfg.max_levels} levels",
                          last=hist[-1][0], previous=hist[-2][0] if len(hist) > 1 else hist[-1][0])
