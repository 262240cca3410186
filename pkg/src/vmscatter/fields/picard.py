"""Self-consistent fields by Picard iteration on a space-time table.

Each iteration pushes the ensemble through the current field table and
rebuilds the table from the retarded decomposition of the pushed
ensemble (transport and coupling pieces) plus the initial-data piece,
which does not change between iterations.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from ..parallel import map_chunks
from .decomposition import eval_data
from .evaluators import DecayBudget, TabulatedField, ZeroField, fitted_budget
from .quadrature import QuadConfig

logger = logging.getLogger(__name__)

FIELD_MAGIC = b"VMSFIELD1\n"


class PicardDivergence(RuntimeError):
    """Successive differences stopped contracting."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class PicardConfig:
    T_end: float = 4.0
    n_t: int = 5
    n_x: int = 9
    resolution: tuple = (4, 4)
    tol: float = 1e-8
    max_iter: int = 12
    eps: float = 0.25
    ode_tol: float = 1e-9
    n_store: int = 33   # stored trajectory times used for cone crossings
    patience: int = 3
    max_T_end: float = 50.0
    data_quad: QuadConfig = dc_field(default_factory=lambda: QuadConfig(rtol=1e-6))

    def __post_init__(self):
        if self.T_end <= 0 or self.T_end > self.max_T_end:
            raise ValueError(f"T_end must lie in (0, {self.max_T_end}]")
        if min(self.n_t, self.n_x) < 2 or self.n_store < 2:
            raise ValueError("grid sizes must be >= 2")


@dataclass
class PicardResult:
    field: TabulatedField
    ensemble: object
    history: list
    iterations: int
    converged: bool


def _grid(cfg: PicardConfig, k):
    L = cfg.T_end + k
    ax = np.linspace(-L, L, cfg.n_x)
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    times = np.linspace(0.0, cfg.T_end, cfg.n_t)
    return L, times, pts


def _initial_slice(data, pts):
    out = np.zeros((pts.shape[0], 6))
    if data.E0 is not None:
        out[:, :3] = data.E0(pts)
    if data.B0 is not None:
        out[:, 3:] = data.B0(pts)
    return out


def _data_table(data, times, pts, k, qcfg):
    """Initial-data piece on the grid; zero off the light shell."""
    tab = np.zeros((times.size, pts.shape[0], 6))
    tab[0] = _initial_slice(data, pts)
    r = np.linalg.norm(pts, axis=1)
    for j, t in enumerate(times[1:], start=1):
        for p in np.nonzero(np.abs(t - r) <= k)[0]:
            E, B = eval_data(data, t, pts[p], qcfg)
            tab[j, p, :3], tab[j, p, 3:] = E, B
    return tab


def _rebuild(src, field, times, pts, k, base):
    """Transport plus coupling pieces from an ensemble source, added to ``base``."""
    tab = base.copy()
    r = np.linalg.norm(pts, axis=1)
    for j, t in enumerate(times):
        if t == 0:
            continue
        live = np.nonzero(r <= t + k)[0]

        def work(a, b):
            out = np.zeros((b - a, 6))
            for q, p in enumerate(live[a:b]):
                ET, BT, ES, BS = src.eval_point(t, pts[p], field)
                out[q, :3] = ET + ES
                out[q, 3:] = BT + BS
            return out

        parts = map_chunks(work, live.size, size=64)
        if parts:
            tab[j, live] += np.concatenate(parts, 0)
    return tab


def self_consistent_solve(data, cfg: PicardConfig = PicardConfig()) -> PicardResult:
    """Picard iteration for the coupled flow and field.

    Returns the last tabulated field, the ensemble pushed through it, and
    the sup-norm differences of successive field tables.

    Raises
    ------
    PicardDivergence
        When the difference ratio is ``>= 1`` for ``cfg.patience``
        consecutive iterations.
    """
    from ..flow.ensemble import build_ensemble

    k = data.k
    L, times, pts = _grid(cfg, k)
    shape = (times.size, cfg.n_x, cfg.n_x, cfg.n_x, 6)
    store_times = np.linspace(0.0, cfg.T_end, cfg.n_store)
    ens = build_ensemble(data, cfg.resolution)
    base = _data_table(data, times, pts, k, cfg.data_quad)
    table = base.copy()
    field = (TabulatedField(times, L, table.reshape(shape), DecayBudget(1.0, k))
             if np.any(table) else ZeroField(k))
    history, bad = [], 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        ens.integrate(field, store_times, cfg.ode_tol)
        if ens.n_particles:
            new = _rebuild(ens.source(cfg.eps), field, times, pts, k, base)
        else:
            new = base.copy()
        diff = float(np.max(np.abs(new - table), initial=0.0))
        history.append(diff)
        logger.info("Picard iteration %d: sup difference %.3e", it, diff)
        table = new
        field = TabulatedField(times, L, table.reshape(shape), DecayBudget(1.0, k))
        if diff < cfg.tol:
            converged = True
            break
        if len(history) >= 2 and history[-1] >= history[-2]:
            bad += 1
            if bad >= cfg.patience:
                raise PicardDivergence(f"no contraction for {bad} iterations: {history}", history)
        else:
            bad = 0
    if not np.any(table):
        field = ZeroField(k)
    else:
        tt = np.repeat(times, pts.shape[0])
        xx = np.tile(pts, (times.size, 1))
        inside = np.linalg.norm(xx, axis=1) <= tt + k
        field.budget = fitted_budget(field, (tt[inside], xx[inside]), k)
        field.meta.update(iterations=it, history=history, converged=converged)
    ens.integrate(field, store_times, cfg.ode_tol)
    return PicardResult(field, ens, history, it, converged)


# ---------------------------------------------------------------- snapshots

def write_field_snapshot(field: TabulatedField, path, species=()) -> None:
    """Magic line, little-endian u64 header length, JSON header, then the
    ``(n_t, n, n, n, 6)`` table of ``(Ex, Ey, Ez, Bx, By, Bz)`` as row-major
    little-endian float64."""
    header = {
        "format": "vmscatter-field",
        "version": 1,
        "times": [float(t) for t in field.times],
        "half_width": field.L,
        "n": field.n,
        "components": ["Ex", "Ey", "Ez", "Bx", "By", "Bz"],
        "budget": {"C0": float(field.budget.C0), "k": float(field.budget.k)},
        "species": [dict(mass=s.mass, charge=s.charge, support_radius=s.support_radius, label=s.label)
                    for s in species],
        "picard": field.meta,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(np.uint64(len(raw)).astype("<u8").tobytes())
        fh.write(raw)
        fh.write(np.ascontiguousarray(field.data, dtype="<f8").tobytes())


def read_field_snapshot(path) -> TabulatedField:
    with open(path, "rb") as fh:
        if fh.read(len(FIELD_MAGIC)) != FIELD_MAGIC:
            raise ValueError(f"{path} is not a field snapshot")
        n = int(np.frombuffer(fh.read(8), "<u8")[0])
        header = json.loads(fh.read(n).decode())
        body = np.frombuffer(fh.read(), "<f8")
    nt, g = len(header["times"]), header["n"]
    data = body.reshape(nt, g, g, g, 6).copy()
    b = header["budget"]
    return TabulatedField(header["times"], header["half_width"], data, DecayBudget(b["C0"], b["k"]),
                          header.get("picard", {}))
