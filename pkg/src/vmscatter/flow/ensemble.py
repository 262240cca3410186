"""Particle ensembles: deterministic discretization of f0 and cached trajectories."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..fields.evaluators import FieldEvaluator
from ..fields.sources import EnsembleSource, TrajectoryStore
from ..relkin import SpeciesParams, speed_of
from .characteristics import DEFAULT_TOL, integrate_char

logger = logging.getLogger(__name__)

MAX_PARTICLES = 4_000_000
SNAPSHOT_MAGIC = b"VMSENS1\n"


class ResolutionError(ValueError):
    """Requested resolution exceeds the particle budget."""


def _midpoints(center, radius, n):
    h = 2.0 * radius / n
    ax = [c - radius + h * (np.arange(n) + 0.5) for c in center]
    g = np.stack(np.meshgrid(*ax, indexing="ij"), -1).reshape(-1, 3)
    return g, h ** 3


@dataclass
class SpeciesEnsemble:
    """Phase points of one species: positions, unit-mass momenta, physical weights."""

    species: SpeciesParams
    x0: np.ndarray
    u0: np.ndarray
    w: np.ndarray

    @property
    def n(self):
        return self.w.size

    @property
    def total_weight(self):
        return float(np.sum(self.w))


@dataclass
class ParticleEnsemble:
    """Per-species weighted samples of f0 and (after ``integrate``) trajectories.

    Weights are ``f_alpha0(x, m u) dx dv`` in physical momentum, so
    ``sum w`` approximates ``int int f_alpha0``. Trajectories are stored in
    shifted coordinates: ``X[i][:, j]`` and ``V[i][:, j]`` at ``times[j]``.
    """

    members: List[SpeciesEnsemble]
    resolution: tuple
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    X: list = field(default_factory=list)
    V: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def species(self):
        return [m.species for m in self.members]

    def __len__(self):
        return len(self.members)

    @property
    def n_particles(self):
        return sum(m.n for m in self.members)

    def net_charge(self) -> float:
        return float(sum(m.species.charge * m.total_weight for m in self.members))

    def integrate(self, field: FieldEvaluator, times: Sequence[float], tol=DEFAULT_TOL,
                  backend=None) -> "ParticleEnsemble":
        """Push every member forward along the characteristics to ``times``.

        ``times`` must be increasing and start at 0 or later; trajectories
        are write-once, so calling again replaces the whole store.
        """
        times = np.asarray(times, float)
        if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
            raise ValueError("output times must be a non-empty increasing sequence >= 0")
        X, V = [], []
        for m in self.members:
            Xi, Vi = integrate_char(m.x0, m.u0, 0.0, times, field, m.species.charge_to_mass,
                                    tol, backend=backend)
            for arr in (Xi, Vi):
                arr.setflags(write=False)
            X.append(Xi)
            V.append(Vi)
        self.times, self.X, self.V = times, X, V
        return self

    def index_of(self, t) -> int:
        j = np.nonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0]
        if j.size == 0:
            raise KeyError(f"no stored trajectories at t={t}")
        return int(j[0])

    def positions(self, i, t):
        """Physical positions ``X + t Vhat`` of species ``i`` at a stored time."""
        j = self.index_of(t)
        V = self.V[i][:, j]
        return self.X[i][:, j] + t * V / np.sqrt(1 + np.sum(V * V, -1))[:, None]

    def state(self, i, t):
        j = self.index_of(t)
        return self.X[i][:, j], self.V[i][:, j]

    def source(self, eps=0.25) -> EnsembleSource:
        """Retarded-source view of the stored trajectories (all species merged)."""
        if self.times.size < 2:
            raise ValueError("a retarded source needs trajectories at >= 2 times")
        Xf, U, w, e, m = [], [], [], [], []
        for i, mem in enumerate(self.members):
            Vh = self.V[i] / np.sqrt(1 + np.sum(self.V[i] ** 2, -1))[..., None]
            Xf.append(self.X[i] + self.times[None, :, None] * Vh)
            U.append(self.V[i])
            w.append(mem.w)
            e.append(np.full(mem.n, mem.species.charge))
            m.append(np.full(mem.n, mem.species.mass))
        store = TrajectoryStore(self.times, np.concatenate(Xf), np.concatenate(U),
                                np.concatenate(w), np.concatenate(e), np.concatenate(m))
        return EnsembleSource(store, eps)


def build_ensemble(data, resolution, max_particles=MAX_PARTICLES) -> ParticleEnsemble:
    """Midpoint tensor grid over each species' support box.

    ``resolution`` is ``n`` or ``(n_x, n_v)`` cells per axis in position and
    momentum; cells with zero profile value are dropped.
    """
    nx, nv = (resolution, resolution) if np.isscalar(resolution) else tuple(resolution)
    nx, nv = int(nx), int(nv)
    if nx < 1 or nv < 1:
        raise ValueError("resolution must be positive")
    members = []
    total = 0
    for sd in data.species:
        prof = sd.unit_profile
        m = sd.species.mass
        if prof.amplitude == 0:
            members.append(SpeciesEnsemble(sd.species, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)))
            continue
        xg, dx = _midpoints(prof.xc, prof.x_radius, nx)
        ug, du = _midpoints(prof.vc, prof.v_radius, nv)
        # separable profile: evaluate the factors once
        fx = prof.value(xg, np.broadcast_to(prof.vc, xg.shape)) / max(prof.amplitude, 1e-300)
        fu = prof.value(np.broadcast_to(prof.xc, ug.shape), ug)
        ix, iu = np.nonzero(fx > 0)[0], np.nonzero(fu > 0)[0]
        total += ix.size * iu.size
        if total > max_particles:
            raise ResolutionError(f"resolution ({nx}, {nv}) exceeds the budget of {max_particles} samples")
        I, J = np.meshgrid(ix, iu, indexing="ij")
        I, J = I.ravel(), J.ravel()
        # physical momentum cell is m^3 du
        w = fx[I] * fu[J] * dx * du * m ** 3
        members.append(SpeciesEnsemble(sd.species, np.ascontiguousarray(xg[I]),
                                       np.ascontiguousarray(ug[J]), w))
    ens = ParticleEnsemble(members, (nx, nv))
    logger.info("ensemble with %d particles, net charge %.3e", ens.n_particles, ens.net_charge())
    return ens


# ---------------------------------------------------------------- diagnostics

@dataclass
class SupportDiagnostics:
    t: float
    max_X: float        # max |X| in shifted coordinates
    max_V: float        # max |V| (unit-mass momentum)
    max_Xf: float       # max |X + t Vhat|
    fitted_C: float     # max_X / log(2 + t)
    cone_margin: float  # min (t - |X_f| + 2k) / (t (1 - beta_hat))


def support_diagnostics(ens: ParticleEnsemble, t, k: float = 1.0,
                        beta_hat: Optional[float] = None) -> SupportDiagnostics:
    """Support maxima of the stored trajectories at time ``t``.

    ``beta_hat`` defaults to the speed of the largest momentum over the
    whole stored run.
    """
    mX = mV = mXf = 0.0
    Xf_all = []
    if beta_hat is None:
        vmax = max((float(np.max(np.linalg.norm(V, axis=-1), initial=0.0)) for V in ens.V), default=0.0)
        beta_hat = speed_of(vmax)
    for i in range(len(ens)):
        if ens.members[i].n == 0:
            continue
        X, V = ens.state(i, t)
        Xf = ens.positions(i, t)
        mX = max(mX, float(np.max(np.linalg.norm(X, axis=1))))
        mV = max(mV, float(np.max(np.linalg.norm(V, axis=1))))
        mXf = max(mXf, float(np.max(np.linalg.norm(Xf, axis=1))))
        Xf_all.append(Xf)
    if Xf_all and t > 0:
        r = np.linalg.norm(np.concatenate(Xf_all), axis=1)
        margin = float(np.min((t - r + 2 * k) / (t * (1 - beta_hat))))
    else:
        margin = np.inf
    return SupportDiagnostics(float(t), mX, mV, mXf, mX / np.log(2 + t), margin)


# ---------------------------------------------------------------- snapshots

def write_snapshot(ens: ParticleEnsemble, path) -> None:
    """Write stored states as magic + length-prefixed JSON header + arrays.

    For every stored time and species the payload holds physical positions
    ``x`` (N, 3), physical momenta ``v`` (N, 3) and weights ``w`` (N,), as
    little-endian float64 in that order.
    """
    header = {
        "format": "vmscatter-ensemble",
        "version": 1,
        "resolution": list(ens.resolution),
        "times": [float(t) for t in ens.times],
        "species": [dict(mass=s.mass, charge=s.charge, support_radius=s.support_radius,
                         label=s.label, n=int(m.n)) for s, m in zip(ens.species, ens.members)],
        "arrays": ["x", "v", "w"],
        "momentum": "physical",
        "meta": ens.meta,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(np.uint64(len(raw)).astype("<u8").tobytes())
        fh.write(raw)
        for j, t in enumerate(ens.times):
            for i, mem in enumerate(ens.members):
                x = ens.positions(i, t)
                v = ens.V[i][:, j] * mem.species.mass
                for arr in (x, v, mem.w):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path) -> ParticleEnsemble:
    """Inverse of ``write_snapshot`` (trajectories rebuilt in shifted coordinates)."""
    with open(path, "rb") as fh:
        if fh.read(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
            raise ValueError(f"{path} is not an ensemble snapshot")
        n = int(np.frombuffer(fh.read(8), "<u8")[0])
        header = json.loads(fh.read(n).decode())
        body = np.frombuffer(fh.read(), "<f8")
    times = np.asarray(header["times"], float)
    sp = [SpeciesParams(s["mass"], s["charge"], s["support_radius"], s["label"]) for s in header["species"]]
    counts = [s["n"] for s in header["species"]]
    X = [np.zeros((c, times.size, 3)) for c in counts]
    V = [np.zeros((c, times.size, 3)) for c in counts]
    W = [None] * len(sp)
    pos = 0
    for j, t in enumerate(times):
        for i, c in enumerate(counts):
            x = body[pos:pos + 3 * c].reshape(c, 3)
            pos += 3 * c
            u = body[pos:pos + 3 * c].reshape(c, 3) / sp[i].mass
            pos += 3 * c
            W[i] = body[pos:pos + c].copy()
            pos += c
            V[i][:, j] = u
            X[i][:, j] = x - t * u / np.sqrt(1 + np.sum(u * u, -1))[:, None]
    if pos != body.size:
        raise ValueError("snapshot payload size does not match its header")
    members = [SpeciesEnsemble(s, X[i][:, 0].copy() if times.size else np.zeros((0, 3)),
                               V[i][:, 0].copy() if times.size else np.zeros((0, 3)),
                               W[i] if W[i] is not None else np.zeros(0))
               for i, s in enumerate(sp)]
    ens = ParticleEnsemble(members, tuple(header["resolution"]), times, X, V, header.get("meta", {}))
    return ens
