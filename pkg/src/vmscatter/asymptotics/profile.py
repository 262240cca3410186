"""Asymptotic Lorentz force, log corrections and the tabulated asymptotic profile."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..relkin import energy

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("vx", "vy", "vz", "Qinf", "Ex", "Ey", "Ez", "Bx", "By", "Bz",
               "Lx", "Ly", "Lz", "D", "Ctx", "Cty", "Ctz")
IDENTITY_TOL = 1e-12


class ConsistencyError(RuntimeError):
    """The two closed forms of the corrected drift disagree."""


@dataclass
class Corrections:
    L: np.ndarray    # E + vhat x B
    D: np.ndarray    # -vhat . L
    C: np.ndarray    # -L
    Ct: np.ndarray   # C - vhat D


def corrections(E, B, v, tol: float = IDENTITY_TOL) -> Corrections:
    """``(L, D, C, Ct)`` at unit-mass momenta ``v`` (broadcast over leading axes).

    ``Ct`` is computed as ``C - vhat D`` and checked against
    ``vhat (E . vhat) - (E + vhat x B)``, relative to ``1 + |E| + |B|``.
    """
    E = np.asarray(E, float)
    B = np.asarray(B, float)
    v = np.asarray(v, float)
    vh = v / energy(v)[..., None]
    L = E + np.cross(vh, B)
    D = -np.einsum("...i,...i->...", vh, L)
    C = -L
    Ct = C - vh * D[..., None]
    alt = vh * np.einsum("...i,...i->...", E, vh)[..., None] - (E + np.cross(vh, B))
    scale = 1.0 + np.linalg.norm(E, axis=-1) + np.linalg.norm(B, axis=-1)
    gap = np.max(np.abs(Ct - alt) / scale[..., None], initial=0.0)
    if gap > tol:
        raise ConsistencyError(f"corrected drift forms differ by {gap:.3e}")
    return Corrections(L, D, C, Ct)


@dataclass
class AsymptoticProfile:
    """Asymptotic quantities at momentum nodes, plus an evaluator off the nodes.

    ``fields_fn(v) -> (E, B)`` gives the asymptotic fields at arbitrary
    unit-mass momenta (arrays (N, 3)); the modified states use it. ``Q``
    holds the per-species asymptotic charges at the nodes and ``Q_fns``
    their interpolants.
    """

    nodes: np.ndarray
    E: np.ndarray
    B: np.ndarray
    Q: np.ndarray = None          # (n_species, K)
    charges: tuple = ()
    masses: tuple = ()
    fields_fn: Optional[Callable] = None
    Q_fns: Sequence[Callable] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, float)).reshape(-1, 3)
        K = self.nodes.shape[0]
        self.E = np.asarray(self.E, float).reshape(K, 3)
        self.B = np.asarray(self.B, float).reshape(K, 3)
        if self.Q is None:
            self.Q = np.zeros((len(self.charges), K))
        self.Q = np.asarray(self.Q, float).reshape(-1, K)
        self._corr = corrections(self.E, self.B, self.nodes)

    @classmethod
    def zero(cls, nodes=np.zeros((1, 3)), species=()):
        nodes = np.atleast_2d(np.asarray(nodes, float))
        z = np.zeros_like(nodes)
        return cls(nodes, z, z, None, tuple(s.charge for s in species), tuple(s.mass for s in species),
                   lambda v: (np.zeros_like(np.atleast_2d(v)), np.zeros_like(np.atleast_2d(v))))

    @property
    def L(self):
        return self._corr.L

    @property
    def D(self):
        return self._corr.D

    @property
    def C(self):
        return self._corr.C

    @property
    def Ct(self):
        return self._corr.Ct

    @property
    def Q_total(self):
        """Charge-weighted total ``sum_a e_a Q_a`` at the nodes."""
        if not len(self.charges):
            return np.zeros(self.nodes.shape[0])
        return np.asarray(self.charges, float) @ self.Q

    def charge_weighted(self, u):
        """``sum_a e_a m_a^3 Q_a(u)`` from the interpolants (density prefactor)."""
        u = np.atleast_2d(np.asarray(u, float))
        out = np.zeros(u.shape[0])
        for e, m, fn in zip(self.charges, self.masses, self.Q_fns):
            out += e * m ** 3 * np.asarray(fn(u), float)
        return out

    def fields_at(self, v):
        v = np.atleast_2d(np.asarray(v, float))
        if self.fields_fn is None:
            raise ValueError("profile has no off-node field evaluator")
        E, B = self.fields_fn(v)
        return np.atleast_2d(E), np.atleast_2d(B)

    def restricted(self, v) -> "AsymptoticProfile":
        """Copy whose off-node fields at exactly ``v`` are computed once.

        Other queries fall through to the original evaluator; repeated
        evaluation at fixed sample momenta (one per output time) is cheap.
        """
        v = np.atleast_2d(np.asarray(v, float)).copy()
        E, B = self.fields_at(v)
        parent = self.fields_fn

        def fn(u):
            u = np.atleast_2d(np.asarray(u, float))
            if u.shape == v.shape and np.array_equal(u, v):
                return E, B
            return parent(u)

        return AsymptoticProfile(self.nodes, self.E, self.B, self.Q, self.charges, self.masses, fn,
                                 self.Q_fns, dict(self.meta))

    def corrections_at(self, v) -> Corrections:
        v = np.atleast_2d(np.asarray(v, float))
        E, B = self.fields_at(v)
        return corrections(E, B, v)

    def to_csv(self, path) -> None:
        Qt = self.Q_total
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i in range(self.nodes.shape[0]):
                vals = np.concatenate([self.nodes[i], [Qt[i]], self.E[i], self.B[i], self.L[i],
                                       [self.D[i]], self.Ct[i]])
                w.writerow([repr(float(a)) for a in vals])


def read_profile_csv(path) -> dict:
    """Columns of an AsymptoticProfile CSV as float arrays keyed by name."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r)) != CSV_COLUMNS:
            raise ValueError("unexpected profile CSV columns")
        rows = np.asarray([[float(a) for a in row] for row in r], float).reshape(-1, len(CSV_COLUMNS))
    return {c: rows[:, i] for i, c in enumerate(CSV_COLUMNS)}
