"""Charge and current densities of ensembles and their late-time asymptotics.

Densities are in physical momentum: ``rho = sum_a e_a int f_a dv`` and
``j = sum_a e_a int vhat_a f_a dv``. The asymptotic densities are

    rho_as(t, x) = t^-3 Q(check(x/t)) <check(x/t)>^5  for |x| < t,
    j_as = (x/t) rho_as,

where ``Q`` is the charge-weighted asymptotic charge ``sum_a e_a m_a^3 Q_a``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .parallel import map_chunks
from .relkin import check_map, energy

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "cell_center_x", "cell_center_y", "cell_center_z", "rho", "jx", "jy", "jz")


@dataclass(frozen=True)
class GridSpec:
    """Cubic grid of ``n^3`` cells covering ``center +- half_width``."""

    center: tuple = (0.0, 0.0, 0.0)
    half_width: float = 1.0
    n: int = 16

    def __post_init__(self):
        if self.half_width <= 0 or int(self.n) != self.n or self.n < 1:
            raise ValueError("grid needs a positive half width and cell count")

    @property
    def h(self):
        return 2.0 * self.half_width / self.n

    @property
    def cell_volume(self):
        return self.h ** 3

    def axis(self, i):
        c = self.center[i] - self.half_width + self.h * (np.arange(self.n) + 0.5)
        return c

    def centers(self):
        g = np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")
        return np.stack(g, -1).reshape(-1, 3)

    def locate(self, x):
        """Flat cell index of each point, ``-1`` outside the grid."""
        x = np.atleast_2d(np.asarray(x, float))
        lo = np.asarray(self.center, float) - self.half_width
        idx = np.floor((x - lo) / self.h).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < self.n), axis=1)
        flat = (idx[:, 0] * self.n + idx[:, 1]) * self.n + idx[:, 2]
        return np.where(ok, flat, -1)


@dataclass
class MomentField:
    """Cell densities at time ``t``.

    ``charge`` holds the deposited charge per cell (density times volume),
    so totals are sums of deposited weights. ``overflow_*`` collect the
    particles that fell outside the grid.
    """

    t: float
    grid: GridSpec
    charge: np.ndarray          # (n^3,)
    current: np.ndarray         # (n^3, 3) deposited e w vhat
    abs_charge: np.ndarray      # (n^3,) deposited |e| w
    overflow_charge: float = 0.0
    overflow_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def rho(self):
        return self.charge / self.grid.cell_volume

    @property
    def j(self):
        return self.current / self.grid.cell_volume

    @property
    def rho_abs(self):
        return self.abs_charge / self.grid.cell_volume

    def total_charge(self) -> float:
        return float(np.sum(self.charge) + self.overflow_charge)

    def to_csv(self, path) -> None:
        c = self.grid.centers()
        rho, j = self.rho, self.j
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i in range(c.shape[0]):
                w.writerow([repr(float(self.t))] + [repr(float(a)) for a in c[i]]
                           + [repr(float(rho[i]))] + [repr(float(a)) for a in j[i]])


def read_moment_csv(path):
    """Rows of a MomentField CSV as a float array (columns as ``CSV_COLUMNS``)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        rows = [[float(a) for a in row] for row in r]
    return np.asarray(rows, float).reshape(-1, len(CSV_COLUMNS))


def compute_rho_j(ensemble, t, grid: GridSpec, chunk=1 << 16) -> MomentField:
    """Nearest-grid-point deposition of ``e w`` and ``e w vhat`` at a stored time.

    Chunks are binned separately and summed in chunk order, so the result
    does not depend on the worker count.
    """
    ncell = grid.n ** 3
    charge = np.zeros(ncell)
    current = np.zeros((ncell, 3))
    absq = np.zeros(ncell)
    over_q, over_n = 0.0, 0
    for i, mem in enumerate(ensemble.members):
        if mem.n == 0:
            continue
        e = mem.species.charge
        X = ensemble.positions(i, t)
        _, V = ensemble.state(i, t)
        vh = V / energy(V)[:, None]

        def work(a, b):
            idx = grid.locate(X[a:b])
            ok = idx >= 0
            w = mem.w[a:b]
            q = np.bincount(idx[ok], weights=e * w[ok], minlength=ncell)
            jj = np.stack([np.bincount(idx[ok], weights=e * w[ok] * vh[a:b][ok, c], minlength=ncell)
                           for c in range(3)], 1)
            qa = np.bincount(idx[ok], weights=abs(e) * w[ok], minlength=ncell)
            return q, jj, qa, float(np.sum(e * w[~ok])), int(np.sum(~ok))

        for q, jj, qa, oq, on in map_chunks(work, mem.n, size=chunk):
            charge += q
            current += jj
            absq += qa
            over_q += oq
            over_n += on
    if over_n:
        logger.warning("%d particles outside the moment grid at t=%g", over_n, t)
    return MomentField(float(t), grid, charge, current, absq, over_q, over_n)


def _charge_profile(Q) -> Callable:
    if callable(Q):
        return Q
    fn = getattr(Q, "charge_weighted", None)
    if fn is None:
        raise TypeError("Q must be callable or provide charge_weighted(u)")
    return fn


def asymptotic_rho_j(Q, t, x):
    """``(rho_as, j_as)`` at points ``x`` (shape (3,) or (N, 3)).

    ``Q`` is a callable of unit-mass momenta returning the charge-weighted
    asymptotic charge, or an object exposing it as ``charge_weighted``.
    """
    if t <= 0:
        raise ValueError("asymptotic densities need t > 0")
    Q = _charge_profile(Q)
    x = np.asarray(x, float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    u = x / t
    inside = np.einsum("ij,ij->i", u, u) < 1.0
    rho = np.zeros(x.shape[0])
    if np.any(inside):
        v = check_map(u[inside])
        rho[inside] = energy(v) ** 5 * np.asarray(Q(v), float) / t ** 3
    j = u * rho[:, None]
    if single:
        return float(rho[0]), j[0]
    return rho, j


@dataclass
class MomentDiscrepancy:
    error: float
    estimate: float
    asymptotic: float
    n_eff: float
    low_confidence: bool


def _gauss_hermite_3d(n):
    z, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / np.sqrt(2 * np.pi)
    Z = np.stack(np.meshgrid(z, z, z, indexing="ij"), -1).reshape(-1, 3)
    W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return Z, W


def moment_asymptotics_error(ensemble, Q: Callable, h: Callable, t, x, species: int = 0,
                             N: int = 8, beta_hat: Optional[float] = None, k: float = 1.0,
                             n_gh: int = 12, detail: bool = False):
    """``|t^3 int h f_a dv - m^3 [<.>^5 h(m .) Q_a](check(x/t))|`` at one point.

    The velocity integral at ``x`` is a Gaussian window average of width
    ``(beta_hat t + k) / N`` over the ensemble; the asymptotic term is
    averaged with the same window (Gauss-Hermite rule), so both sides see
    the same spatial resolution.

    Parameters
    ----------
    Q : callable
        ``Q_a`` of this species as a function of unit-mass momentum.
    h : callable
        Test function of the physical momentum, vectorized over (N, 3).
    beta_hat : float, optional
        Speed bound; defaults to the largest stored speed of the species.
    """
    x = np.asarray(x, float)
    if not np.linalg.norm(x) < t:
        raise ValueError("the moment asymptotics need |x| < t")
    mem = ensemble.members[species]
    m = mem.species.mass
    if beta_hat is None:
        if mem.n:
            V = ensemble.V[species]
            vmax = float(np.max(np.linalg.norm(V, axis=-1)))
            beta_hat = vmax / np.sqrt(1 + vmax * vmax)
        else:
            beta_hat = 0.0
    eps = (beta_hat * t + k) / N
    # ensemble side
    est, n_eff = 0.0, 0.0
    if mem.n:
        X = ensemble.positions(species, t)
        _, V = ensemble.state(species, t)
        d2 = np.sum((X - x) ** 2, 1) / (eps * eps)
        near = d2 < 64.0
        ker = np.exp(-0.5 * d2[near]) / ((2 * np.pi) ** 1.5 * eps ** 3)
        hv = np.asarray(h(m * V[near]), float)
        est = t ** 3 * float(np.sum(mem.w[near] * hv * ker))
        n_eff = float(np.sum(ker) * eps ** 3)
    # asymptotic side averaged with the same window
    Z, W = _gauss_hermite_3d(n_gh)
    y = x + eps * Z
    u = y / t
    inside = np.einsum("ij,ij->i", u, u) < 1.0
    val = np.zeros(y.shape[0])
    if np.any(inside):
        v = check_map(u[inside])
        val[inside] = m ** 3 * energy(v) ** 5 * np.asarray(h(m * v), float) * np.asarray(Q(v), float)
    asym = float(W @ val)
    low = n_eff == 0.0
    if low and mem.n:
        logger.warning("empty window at t=%g, x=%s", t, x)
    err = abs(est - asym)
    if detail:
        return MomentDiscrepancy(err, est, asym, n_eff, low)
    return err
