"""Spatial averages of g and the asymptotic charge.

``Q_a(t, v) = int g_a(t, x, v) dx`` in unit-mass momentum. Values are
tabulated on a momentum lattice, and ``Q_inf`` is the value at the
largest computed time, with the convergence rate fitted as a diagnostic.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..fields.quadrature import QuadratureError
from ..flow.characteristics import DEFAULT_TOL, apriori_bounds, evaluate_g
from .rates import RateFit, rate_fit

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("species", "t", "vx", "vy", "vz", "Q")


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class XQuadConfig:
    """Midpoint rule on the cube ``|x_i| <= half_width`` with ``n`` cells per axis.

    With ``levels > 0`` the cell count is doubled until two successive
    values agree to ``rtol`` (relative) or ``atol``.
    """

    n: int = 32
    levels: int = 0
    rtol: float = 1e-6
    atol: float = 1e-12
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.n < 1 or self.levels < 0:
            raise ValueError("invalid x-quadrature resolution")


def _cube(R, n):
    h = 2.0 * R / n
    ax = -R + h * (np.arange(n) + 0.5)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    return g, h ** 3


def _midpoint_Q(t, v, field, sd, R, n, tol, bounds):
    x, dV = _cube(R, n)
    out = np.zeros(v.shape[0])
    for i in range(v.shape[0]):
        g = evaluate_g(t, x, np.broadcast_to(v[i], x.shape), field, sd, tol, bounds)
        out[i] = np.sum(g) * dV
    return out


def spatial_average_Q(t, v, field, species_data, quad: XQuadConfig = XQuadConfig(),
                      support_radius: Optional[float] = None, bounds=None):
    """``int g(t, x, v) dx`` for unit-mass momenta ``v`` ((3,) or (K, 3)).

    The integration box has half width ``support_radius`` (the caller's
    measured support bound, e.g. ``1.1 C_fit log(2 + t)``); without it the
    a-priori support bound is used, which is safe but loose.

    Raises
    ------
    QuadratureError
        If refinement is requested and does not converge.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    v = np.asarray(v, float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if bounds is None:
        bounds = apriori_bounds(species_data, field, max(float(t), 1e-12))
    R = float(support_radius) if support_radius is not None else float(bounds.x_max(t)) * 1.01
    vmax = 1.01 * bounds.v_max
    live = np.linalg.norm(v, axis=1) <= vmax
    out = np.zeros(v.shape[0])
    if np.any(live):
        vl = v[live]
        prev = _midpoint_Q(t, vl, field, species_data, R, quad.n, quad.tol, bounds)
        n = quad.n
        for lev in range(quad.levels):
            n *= 2
            cur = _midpoint_Q(t, vl, field, species_data, R, n, quad.tol, bounds)
            err = np.max(np.abs(cur - prev))
            scale = max(float(np.max(np.abs(cur))), 1e-300)
            prev, last = cur, prev
            if err <= max(quad.rtol * scale, quad.atol):
                break
        else:
            if quad.levels:
                raise QuadratureError(f"x-quadrature not converged at n={n}: change {err:.3e}",
                                      prev, last)
        out[live] = prev
    return float(out[0]) if single else out


# ---------------------------------------------------------------- momentum grid

@dataclass(frozen=True)
class MomentumGrid:
    """Lattice of ``n^3`` momenta over the cube ``center +- radius``.

    Quadrature nodes are the lattice points inside the support ball
    ``|v - center| <= radius``; values at the remaining lattice points are
    zero by construction and only serve the interpolation.
    """

    center: tuple
    radius: float
    n: int = 9

    def __post_init__(self):
        if self.radius <= 0 or self.n < 2:
            raise ValueError("momentum grid needs radius > 0 and n >= 2")

    @property
    def axis(self):
        c = np.asarray(self.center, float)
        return [np.linspace(c[i] - self.radius, c[i] + self.radius, self.n) for i in range(3)]

    @property
    def lattice(self):
        a = self.axis
        return np.stack(np.meshgrid(*a, indexing="ij"), -1).reshape(-1, 3)

    @property
    def mask(self):
        d = self.lattice - np.asarray(self.center, float)
        return np.linalg.norm(d, axis=1) <= self.radius * (1 + 1e-12)

    @property
    def nodes(self):
        return self.lattice[self.mask]

    @property
    def weights(self):
        h = 2.0 * self.radius / (self.n - 1)
        return np.full(int(self.mask.sum()), h ** 3)

    def interpolator(self, values):
        """Trilinear interpolant of node values, zero outside the lattice."""
        full = np.zeros(self.n ** 3)
        full[self.mask] = values
        return LatticeInterpolant(self, full.reshape(self.n, self.n, self.n))


class LatticeInterpolant:
    """Callable trilinear interpolant that counts queries outside the hull."""

    def __init__(self, grid: MomentumGrid, table):
        self.grid = grid
        self._rgi = RegularGridInterpolator(grid.axis, table, method="linear",
                                            bounds_error=False, fill_value=0.0)
        self.outside = 0

    def __call__(self, u):
        u = np.atleast_2d(np.asarray(u, float))
        c = np.asarray(self.grid.center, float)
        out = np.abs(u - c) > self.grid.radius
        self.outside += int(np.sum(np.any(out, axis=1)))
        return self._rgi(u)


def momentum_grid_for(ensemble, i, n=9, inflate=1.05) -> MomentumGrid:
    """Grid around the species' momentum center covering every stored momentum."""
    mem = ensemble.members[i]
    prof_c = np.mean(mem.u0, axis=0) if mem.n else np.zeros(3)
    if mem.n and ensemble.V:
        R = float(np.max(np.linalg.norm(ensemble.V[i] - prof_c, axis=-1)))
    else:
        R = 1.0
    return MomentumGrid(tuple(prof_c), inflate * max(R, 1e-6), n)


# ---------------------------------------------------------------- profiles

@dataclass
class ChargeProfile:
    """Values ``Q_a(t_j, v)`` at the grid nodes, one row per time."""

    species: object
    grid: MomentumGrid
    times: np.ndarray
    values: np.ndarray  # (n_t, n_nodes)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, float)
        if self.values.shape != (self.times.size, int(self.grid.mask.sum())):
            raise ValueError("profile values do not match times and grid")

    def at(self, t):
        j = np.nonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0]
        if j.size == 0:
            raise KeyError(f"no profile at t={t}")
        return self.values[j[0]]

    def to_rows(self):
        nodes = self.grid.nodes
        label = getattr(self.species, "label", str(self.species))
        for j, t in enumerate(self.times):
            for i in range(nodes.shape[0]):
                yield [label, repr(float(t))] + [repr(float(a)) for a in nodes[i]] + [repr(float(self.values[j, i]))]


def write_charge_csv(profiles: Sequence[ChargeProfile], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for p in profiles:
            for row in p.to_rows():
                w.writerow(row)


def charge_profile(times, grid: MomentumGrid, field, species_data, quad: XQuadConfig = XQuadConfig(),
                   support_radius=None) -> ChargeProfile:
    """Tabulate ``Q_a(t, v)`` at the grid nodes for every ``t`` in ``times``.

    ``support_radius`` is a number or a callable of ``t``.
    """
    times = np.asarray(times, float)
    nodes = grid.nodes
    bounds = apriori_bounds(species_data, field, max(float(times.max()), 1e-12))
    rows = []
    for t in times:
        R = support_radius(t) if callable(support_radius) else support_radius
        rows.append(spatial_average_Q(t, nodes, field, species_data, quad, R, bounds))
    return ChargeProfile(species_data.species, grid, times, np.vstack(rows))


# ---------------------------------------------------------------- extrapolation

@dataclass
class QInfinity:
    """Extrapolated asymptotic charge with its rate diagnostics."""

    values: np.ndarray          # Q_inf at the grid nodes (last-time value)
    times: np.ndarray           # times of the difference series (t_max excluded)
    distance: np.ndarray        # sup_v |Q(t, v) - Q_inf(v)|
    fit: Optional[RateFit]
    monotone: bool
    model_limit: np.ndarray     # least-squares limit of Q_inf + C env(t), per node
    grid: Optional[MomentumGrid] = None

    def interpolator(self):
        if self.grid is None:
            raise ValueError("no momentum grid attached")
        return self.grid.interpolator(self.values)


def _dyadic(t):
    r = t[1:] / t[:-1]
    return np.allclose(r, 2.0, rtol=1e-9, atol=0)


def extrapolate_Q_infinity(profile: ChargeProfile, p: float = 5.0, q: float = 1.0,
                           min_times=4, min_t_max=50.0) -> QInfinity:
    """``Q_inf`` as the value at the largest time, with envelope diagnostics.

    The distances ``sup_v |Q(t_j, v) - Q(t_max, v)|`` over the earlier
    times are fitted against ``C log^p(2+t)/(2+t)^q``; a tail whose
    distances do not decrease is flagged as non-monotone. As a further
    diagnostic, ``model_limit`` fits ``Q(t) = L + C env(t)`` by least
    squares at each node.
    """
    t = profile.times
    if t.size < min_times or not _dyadic(t) or t[-1] < min_t_max:
        raise ValueError(f"extrapolation needs >= {min_times} dyadic times with t_max >= {min_t_max}")
    Q = profile.values
    last = Q[-1].copy()
    dist = np.max(np.abs(Q[:-1] - last[None, :]), axis=1) if Q.shape[1] else np.zeros(t.size - 1)
    monotone = bool(np.all(np.diff(dist) < 0)) or not np.any(dist)
    if not monotone:
        logger.warning("non-monotone convergence tail: %s", dist)
    fit = rate_fit(t[:-1], dist, p, q) if t.size - 1 >= 3 else None
    e = np.log(2.0 + t) ** p / (2.0 + t) ** q
    A = np.stack([np.ones_like(e), e], 1)
    coef, *_ = np.linalg.lstsq(A, Q, rcond=None)
    return QInfinity(last, t[:-1], dist, fit, monotone, coef[0], profile.grid)
