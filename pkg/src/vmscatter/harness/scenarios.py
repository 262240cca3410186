"""Scenario pipeline: ensemble, flow, asymptotic charge, asymptotic fields,
modified states, then the check suite. Stages run in dependency order and
record their wall-clock time; a failing stage is re-raised as
``StageError`` naming it, with the artifacts written so far left on disk.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from .._backend import NAME as BACKEND
from ..asymptotics import (AFQuadConfig, AsymptoticProfile, MomentumGrid, SupportBall, XQuadConfig,
                           asymptotic_fields, charge_profile, modified_state_h, write_charge_csv)
from ..fields import (BumpField, PicardConfig, ZeroField, read_field_snapshot, self_consistent_solve,
                      write_field_snapshot)
from ..flow import (apriori_bounds, build_ensemble, default_initial_data, read_snapshot,
                    support_diagnostics, write_snapshot)
from ..moments import CSV_COLUMNS as MOMENT_COLUMNS, GridSpec, compute_rho_j
from ..oracles import sobol
from ..parallel import get_threads, set_threads
from .config import ScenarioConfig
from .report import RunReport, emit_report

logger = logging.getLogger(__name__)

EARLY_TIMES = (0.0, 1.0, 2.0, 5.0, 10.0)


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunState:
    """Everything the stages produce; the checks read from here."""

    cfg: ScenarioConfig
    out: Path
    data: object = None
    field: object = None
    picard: object = None
    ensemble: object = None
    flow_times: tuple = ()
    horizon: float = 0.0
    diagnostics: dict = dc_field(default_factory=dict)
    charge: list = dc_field(default_factory=list)      # per species ChargeProfile at the check nodes
    q_inf: list = dc_field(default_factory=list)       # per species QInfinity on the momentum grid
    grid: Optional[MomentumGrid] = None
    profile: Optional[AsymptoticProfile] = None
    samples: tuple = ()
    h_values: dict = dc_field(default_factory=dict)
    g_values: dict = dc_field(default_factory=dict)
    artifacts: dict = dc_field(default_factory=dict)
    timing: dict = dc_field(default_factory=dict)

    @property
    def dyadic_times(self):
        return tuple(t for t in self.cfg.times if t <= self.horizon)

    @property
    def species_data(self):
        return self.data.species


def _data(cfg):
    d = cfg.data
    return default_initial_data(amplitude=d.amplitude, drift=d.drift, v_radius=d.v_radius,
                                x_radius=d.x_radius, k=d.k, power=d.power, mass=d.mass, charge=d.charge)


def _field(cfg, data):
    if cfg.name == "free_transport" or cfg.field.preset == "zero":
        return ZeroField(data.k)
    return BumpField(cfg.field.amplitude, data.k, cfg.field.dir_E, cfg.field.dir_B)


# ---------------------------------------------------------------- stages

def stage_setup(st: RunState, resume=False):
    cfg = st.cfg
    st.data = _data(cfg)
    snap = st.out / "field.snap"
    if cfg.name == "self_consistent" and resume and snap.is_file():
        st.field = read_field_snapshot(snap)
        st.horizon = cfg.picard.T_end
    elif cfg.name == "self_consistent":
        p = cfg.picard
        pc = PicardConfig(T_end=p.T_end, n_t=p.n_t, n_x=p.n_x, resolution=tuple(p.resolution),
                          tol=p.tol, max_iter=p.max_iter, ode_tol=max(cfg.tolerances.ode, 1e-10))
        st.picard = self_consistent_solve(st.data, pc)
        st.field = st.picard.field
        st.horizon = p.T_end
        if hasattr(st.field, "data"):
            write_field_snapshot(st.field, snap, [sd.species for sd in st.data.species])
            st.artifacts["field"] = snap
    else:
        st.field = _field(cfg, st.data)
        st.horizon = cfg.t_max


def flow_times(st: RunState):
    return sorted({t for t in EARLY_TIMES + st.cfg.all_times if t <= st.horizon} | {0.0, st.horizon})


def stage_flow(st: RunState, resume=False):
    cfg = st.cfg
    times = flow_times(st)
    st.flow_times = tuple(times)
    path = st.out / "ensemble.snap"
    if resume and path.is_file():
        ens = read_snapshot(path)
        if ens.meta.get("config_hash") != cfg.digest():
            raise ValueError(f"{path} was written with a different configuration")
    else:
        ens = build_ensemble(st.data, tuple(cfg.resolution.ensemble))
        ens.integrate(st.field, times, cfg.tolerances.ode)
        ens.meta.update(scenario=cfg.name, config_hash=cfg.digest())
        write_snapshot(ens, path)
    st.ensemble = ens
    st.artifacts["ensemble"] = path
    for t in times:
        st.diagnostics[t] = support_diagnostics(ens, t, st.data.k)
    # charge and current densities at the output times
    rows = []
    beta = max((d.max_V for d in st.diagnostics.values()), default=0.0)
    bh = beta / np.sqrt(1 + beta * beta)
    for t in times:
        if t <= 0:
            continue
        mf = compute_rho_j(ens, t, GridSpec(half_width=bh * t + st.data.k, n=8))
        c = mf.grid.centers()
        for i in range(c.shape[0]):
            rows.append([t, *c[i], mf.rho[i], *mf.j[i]])
    path = st.out / "moments.csv"
    with open(path, "w") as fh:
        fh.write(",".join(MOMENT_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(a)) for a in r) + "\n")
    st.artifacts["moments"] = path


def support_radius(st: RunState):
    """Half width of a fixed box covering the measured support of g at every stored time."""
    return 1.1 * max(d.max_X for d in st.diagnostics.values())


def check_nodes(st: RunState, i):
    """Deterministic momenta inside the species support for the rate checks."""
    prof = st.data.species[i].unit_profile
    n = st.cfg.resolution.charge_nodes
    p = sobol(3, max(1, int(np.ceil(np.log2(max(n, 2))))), st.cfg.seed + 101 + i)[:n]
    d = 2 * p - 1
    d = d / np.maximum(1.0, np.linalg.norm(d, axis=1))[:, None]
    return prof.vc + 0.5 * prof.v_radius * d


class NodeList:
    """Explicit momentum nodes with the grid interface used by ChargeProfile."""

    def __init__(self, nodes):
        self.nodes = np.atleast_2d(np.asarray(nodes, float))
        self.mask = np.ones(self.nodes.shape[0], bool)


def charge_times(st: RunState):
    t = [a for a in st.cfg.all_times if a <= st.horizon]
    return t if t else [st.horizon]


def stage_charge(st: RunState):
    cfg = st.cfg
    R = support_radius(st)
    quad = XQuadConfig(n=cfg.resolution.x_quad, tol=cfg.tolerances.ode)
    times = charge_times(st)
    st.charge = [charge_profile(times, NodeList(check_nodes(st, i)), st.field, sd, quad, R)
                 for i, sd in enumerate(st.data.species)]
    path = st.out / "charge_profile.csv"
    write_charge_csv(st.charge, path)
    st.artifacts["charge"] = path
    # asymptotic charge on a common momentum lattice, from the last time
    beta = max(d.max_V for d in st.diagnostics.values())
    st.grid = MomentumGrid((0.0, 0.0, 0.0), 1.05 * beta, cfg.resolution.momentum_nodes)
    nodes = st.grid.nodes
    st.q_inf = []
    for i, sd in enumerate(st.data.species):
        V = st.ensemble.V[i]
        c = sd.unit_profile.vc
        reach = 1.05 * float(np.max(np.linalg.norm(V - c, axis=-1), initial=0.0))
        live = np.linalg.norm(nodes - c, axis=1) <= reach
        vals = np.zeros(nodes.shape[0])
        if np.any(live):
            vals[live] = charge_profile([times[-1]], NodeList(nodes[live]), st.field, sd, quad, R).values[0]
        st.q_inf.append(vals)


def stage_fields(st: RunState):
    sp = [sd.species for sd in st.data.species]
    nodes = st.grid.nodes
    Qs = np.vstack(st.q_inf) if st.q_inf else np.zeros((0, nodes.shape[0]))
    if isinstance(st.field, BumpField):
        # particles are driven by the prescribed field: its ray limit is the asymptotic field
        fields_fn = st.field.ray_limit
        q_fns = [st.grid.interpolator(q) for q in st.q_inf]
    else:
        if st.field.is_zero:
            # frozen flow: Q_inf is the spatial marginal of the initial profile
            q_fns = [sd.unit_profile.spatial_marginal for sd in st.data.species]
        else:
            q_fns = [st.grid.interpolator(q) for q in st.q_inf]
        balls = [SupportBall((0.0, 0.0, 0.0), st.grid.radius)] * len(sp)
        if st.field.is_zero:
            balls = [SupportBall(tuple(sd.unit_profile.vc), sd.unit_profile.v_radius)
                     for sd in st.data.species]

        afq = AFQuadConfig(rtol=st.cfg.tolerances.quad_rtol)

        def fields_fn(v, q_fns=q_fns, balls=balls):
            return asymptotic_fields(q_fns, balls, sp, np.atleast_2d(v), afq)
    E, B = fields_fn(nodes)
    st.profile = AsymptoticProfile(nodes, E, B, Qs, tuple(s.charge for s in sp), tuple(s.mass for s in sp),
                                   fields_fn, q_fns)
    path = st.out / "asymptotic_profile.csv"
    st.profile.to_csv(path)
    st.artifacts["profile"] = path


def sample_points(st: RunState, i):
    """Phase-space sample points covering the species support."""
    prof = st.data.species[i].unit_profile
    n = st.cfg.resolution.sample_points
    p = sobol(6, max(1, int(np.ceil(np.log2(n)))), st.cfg.seed + 17 + i)[:n]
    x = prof.xc + 1.2 * prof.x_radius * (2 * p[:, :3] - 1)
    v = prof.vc + prof.v_radius * (2 * p[:, 3:] - 1)
    return x, v


def stage_modified(st: RunState):
    zero = AsymptoticProfile.zero(species=[sd.species for sd in st.data.species])
    times = [t for t in st.cfg.times if 1 <= t <= st.horizon]
    st.samples = tuple(sample_points(st, i) for i in range(len(st.data.species)))
    for i, sd in enumerate(st.data.species):
        x, v = st.samples[i]
        bounds = apriori_bounds(sd, st.field, max(times)) if times else None
        prof = st.profile.restricted(v) if times else st.profile
        for t in times:
            st.h_values[(i, t)] = modified_state_h(t, x, v, prof, st.field, sd, st.cfg.tolerances.ode,
                                                   bounds)
            st.g_values[(i, t)] = modified_state_h(t, x, v, zero, st.field, sd, st.cfg.tolerances.ode,
                                                   bounds)


STAGES = (("setup", stage_setup), ("flow", stage_flow), ("charge", stage_charge),
          ("fields", stage_fields), ("modified", stage_modified))


RESUMABLE = ("setup", "flow")


def run_pipeline(cfg: ScenarioConfig, out, until=None, resume=False) -> RunState:
    """Run the stages in order up to and including ``until`` (default: all).

    With ``resume``, the flow stage reads ``ensemble.snap`` (and the
    self-consistent setup reads ``field.snap``) from ``out`` instead of
    recomputing them.
    """
    names = [n for n, _ in STAGES]
    if until is not None and until not in names:
        raise ValueError(f"unknown stage {until!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    old_threads = get_threads()
    set_threads(cfg.threads)
    st = RunState(cfg, out)
    try:
        for name, fn in STAGES:
            t0 = time.perf_counter()
            try:
                if name in RESUMABLE:
                    fn(st, resume)
                else:
                    fn(st)
            except Exception as exc:
                logger.error("stage %s failed: %s", name, exc)
                raise StageError(name, exc) from exc
            st.timing[name] = time.perf_counter() - t0
            if name == until:
                break
    finally:
        set_threads(old_threads)
    return st


def provenance(cfg: ScenarioConfig):
    import scipy
    return {"config_hash": cfg.digest(), "version": __version__, "backend": BACKEND,
            "numpy": np.__version__, "scipy": scipy.__version__}


def run_scenario(cfg: ScenarioConfig, out=None, checks=None) -> tuple:
    """Run the pipeline and the check suite; returns ``(report, state)``.

    ``checks`` overrides the configured check list; an empty list enables
    every check. The text and CSV reports are written to the output
    directory.
    """
    from .checks import run_checks

    st = run_pipeline(cfg, out if out is not None else cfg.out)
    report = RunReport(cfg.name, provenance=provenance(cfg))
    t0 = time.perf_counter()
    try:
        run_checks(st, report, checks if checks is not None else cfg.checks)
    except Exception as exc:
        logger.error("stage checks failed: %s", exc)
        raise StageError("checks", exc) from exc
    st.timing["checks"] = time.perf_counter() - t0
    report.wall_clock = dict(st.timing)
    for fmt, fname in (("text", "report.txt"), ("csv", "report.csv")):
        st.artifacts[f"report_{fmt}"] = emit_report(report, fmt, st.out / fname)
    return report, st
