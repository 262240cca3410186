"""The check suite run at the end of a scenario.

Every check returns a ``CheckRecord``. Checks that do not apply to the
scenario (or whose time horizon is too short) are recorded as skipped,
so the report always enumerates the full suite. Envelope checks accept a
series when its constant does not grow (stability ratio at or above the
lower end of the band); a ratio above the upper end is noted as
"non-sharp" in the detail.
"""
from __future__ import annotations

import logging
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..asymptotics import (SupportBall, XQuadConfig, asymptotic_fields, corrections,
                           extrapolate_Q_infinity, log_shift, rate_fit, spatial_average_Q,
                           write_rate_csv)
from ..asymptotics.charge import ChargeProfile
from ..asymptotics.profile import IDENTITY_TOL
from ..fields import BumpField, BumpSource, QuadConfig, eval_data, eval_S, eval_T
from ..flow import BumpProfile, InitialData, SpeciesData, flow_gradients
from ..oracles import blob_S, free_streaming_T, sobol
from ..relkin import SpeciesParams, check_map, energy, jacobian_hat, vhat
from .scenarios import NodeList, run_pipeline, sample_points, support_radius
from .report import FAIL, PASS, SKIP, CheckRecord, RunReport

logger = logging.getLogger(__name__)

# lower ends of the stability bands
BAND_RATE = (0.5, 2.0)
BAND_GRADIENT = (0.7, 1.3)
BAND_DECAY = (0.8, 1.2)
SUPPORT_SPREAD = 0.3
H_SUPPORT_SPREAD = 0.1
V_GROWTH = 0.01
ORACLE_RTOL = 1e-3
SYNTHETIC_LIMIT = 3.0


class CheckContext:
    """Scenario state plus the rate fits collected while checking."""

    def __init__(self, st):
        self.st = st
        self.fits = []

    def fit(self, name, t, y, p, q):
        f = rate_fit(t, y, p, q, name=name)
        self.fits.append(f)
        return f


def _status(ok):
    return PASS if ok else FAIL


def _band(fit, band):
    """Detail text for a stability ratio relative to its band."""
    lo, hi = band
    if fit.stability_ratio < lo:
        return f"constant grows (ratio {fit.stability_ratio:.3g} < {lo})"
    if fit.stability_ratio > hi:
        return f"non-sharp (ratio {fit.stability_ratio:.3g} > {hi})"
    return "in band"


def _half_spread(a):
    a = np.asarray(a, float)
    s = a.max() + a.min()
    return float((a.max() - a.min()) / s) if s > 0 else 0.0


def _later_dyadic(st, n=3):
    t = st.dyadic_times
    return t if len(t) >= n else None


# ---------------------------------------------------------------- 1

def check_kinematics(ctx):
    rng = np.random.default_rng(ctx.st.cfg.seed)
    v = rng.normal(size=(100, 3)) * rng.uniform(0.01, 10.0, size=(100, 1))
    v0 = energy(v)
    vh = vhat(v)
    e1 = float(np.max(np.abs(v0 ** 2 * (1 - np.sum(vh * vh, 1)) - 1)))
    e2 = float(np.max(np.linalg.norm(check_map(vh) - v, axis=1) / (1 + np.linalg.norm(v, axis=1))))
    mat, det = jacobian_hat(v)
    e3 = float(np.max(np.abs(np.linalg.det(mat) - v0 ** -5.0) / v0 ** -5.0))
    h = 1e-6 * np.maximum(1.0, np.linalg.norm(v, axis=1))
    fd = np.stack([(vhat(v + h[:, None] * e) - vhat(v - h[:, None] * e)) / (2 * h[:, None])
                   for e in np.eye(3)], -1)
    e4 = float(np.max(np.abs(np.linalg.det(fd) - det) / det))
    ok = e1 <= 1e-12 and e2 <= 1e-12 and e3 <= 1e-10 and e4 <= 1e-6
    return CheckRecord("kinematics", "kinematic identities", _status(ok), None, None,
                       f"energy {e1:.2e} inverse {e2:.2e} det {e3:.2e} fd {e4:.2e}"), None


# ---------------------------------------------------------------- 2

def check_free_transport(ctx):
    st = ctx.st
    if st.cfg.name != "free_transport":
        return None, "applies to free_transport"
    errQ = 0.0
    quad = XQuadConfig(n=st.cfg.resolution.x_quad, tol=st.cfg.tolerances.ode)
    for i, sd in enumerate(st.data.species):
        prof = st.charge[i]
        Q0 = spatial_average_Q(0.0, prof.grid.nodes, st.field, sd, quad, support_radius(st))
        errQ = max(errQ, float(np.max(np.abs(prof.values - Q0[None, :]))))
    errg = 0.0
    for (i, t), g in st.g_values.items():
        x, v = st.samples[i]
        errg = max(errg, float(np.max(np.abs(g - st.data.species[i].unit_profile.value(x, v)))))
    errX = 0.0
    for i in range(len(st.data.species)):
        X, V = st.ensemble.X[i], st.ensemble.V[i]
        if X.size:
            errX = max(errX, float(np.max(np.abs(X - X[:, :1]))), float(np.max(np.abs(V - V[:, :1]))))
    ok = errQ <= 1e-8 and errg <= 1e-8 and errX <= 1e-8
    return CheckRecord("free_transport_exactness", "free transport", _status(ok), None, None,
                       f"Q {errQ:.2e} g {errg:.2e} flow {errX:.2e}"), None


# ---------------------------------------------------------------- 3

def check_support(ctx):
    st = ctx.st
    t = _later_dyadic(st)
    if t is None:
        return None, "horizon too short"
    if st.field.is_zero:
        return None, "no field: supports are frozen"
    d = [st.diagnostics[a] for a in t]
    mV = [a.max_V for a in d]
    growth = (mV[-1] - mV[-2]) / mV[-2] if mV[-2] > 0 else 0.0
    cX = [a.fitted_C for a in d]
    spread = _half_spread(cX)
    fit = ctx.fit("support_envelope", t, [a.max_X for a in d], 1.0, 0.0)
    margin = min(a.cone_margin for a in d)
    ok = growth <= V_GROWTH and spread <= SUPPORT_SPREAD and margin > 0
    return CheckRecord("support_envelope", "support envelope", _status(ok), fit.C,
                       fit.stability_ratio,
                       f"max|V| growth {growth:.2e}; C spread {spread:.3f}; cone margin {margin:.3g}"), None


# ---------------------------------------------------------------- 4

def check_gradients(ctx):
    st = ctx.st
    t = _later_dyadic(st)
    if t is None:
        return None, "horizon too short"
    if st.field.is_zero:
        return None, "no field: g is time independent"
    n = st.cfg.resolution.gradient_points
    gx, gv, flagged = [], [], 0
    for a in t:
        mx = mv = 0.0
        for i, sd in enumerate(st.data.species):
            x, v = sample_points(st, i)
            r = flow_gradients(a, x[:n], v[:n], st.field, sd, tol=st.cfg.tolerances.ode)
            mx = max(mx, float(np.max(np.linalg.norm(r.grad_x, axis=1))))
            mv = max(mv, float(np.max(np.linalg.norm(r.grad_v, axis=1))))
            flagged += int(np.sum(r.flagged))
        gx.append(mx)
        gv.append(mv)
    fx = ctx.fit("gradient_x", t, gx, 0.0, 0.0)
    fv = ctx.fit("gradient_v", t, gv, 2.0, 0.0)
    lo = BAND_GRADIENT[0]
    ok = fx.stable(lo) and fv.stable(lo) and flagged == 0
    return CheckRecord("gradient_envelope", "gradient envelope", _status(ok), fv.C,
                       min(fx.stability_ratio, fv.stability_ratio),
                       f"grad_x {_band(fx, BAND_GRADIENT)}; grad_v {_band(fv, BAND_GRADIENT)}; "
                       f"flagged {flagged}"), None


# ---------------------------------------------------------------- 5

def synthetic_recovery(t_max=800.0, limit=SYNTHETIC_LIMIT, p=5.0, q=1.0):
    """Relative errors of the last-time value and of the model fit on ``limit + env``."""
    t = 25.0 * 2.0 ** np.arange(int(round(np.log2(t_max / 25.0))) + 1)
    series = limit + np.log(2 + t) ** p / (2 + t) ** q
    prof = ChargeProfile("synthetic", NodeList(np.zeros((1, 3))), t, series[:, None])
    res = extrapolate_Q_infinity(prof, p, q)
    return abs(res.values[0] - limit) / limit, abs(res.model_limit[0] - limit) / limit


def check_charge(ctx):
    st = ctx.st
    if not st.charge or len(st.charge[0].times) < 4:
        return None, "horizon too short"
    fits, mono, C, worst = [], True, 0.0, np.inf
    for prof in st.charge:
        res = extrapolate_Q_infinity(prof)
        mono &= res.monotone
        if res.fit is not None:
            res.fit.name = f"charge_convergence_{getattr(prof.species, 'label', '')}"
            ctx.fits.append(res.fit)
            C = max(C, res.fit.C)
            worst = min(worst, res.fit.stability_ratio)
            fits.append(res.fit)
    last_err, model_err = synthetic_recovery()
    stable = all(f.stable(BAND_RATE[0]) for f in fits)
    ok = mono and stable and model_err <= 0.01
    notes = "; ".join(_band(f, BAND_RATE) for f in fits)
    return CheckRecord("charge_convergence", "asymptotic charge", _status(ok), C,
                       None if not np.isfinite(worst) else worst,
                       f"monotone {mono}; {notes}; synthetic limit err {model_err:.2e} "
                       f"(last value {last_err:.2e})"), None


# ---------------------------------------------------------------- 6

ORACLE_POINTS = ((5.0, (-3.0, -3.0, 0.5)), (8.0, (-2.0, 4.0, 1.0)), (6.0, (-4.0, 1.0, -1.0)),
                 (10.0, (-3.0, -5.0, 2.0)), (9.0, (-6.0, 0.0, -2.0)))
SCAN_TIMES = (25.0, 50.0, 100.0, 200.0)


def oracle_fixture():
    """Single-species free-streaming blob and a strong bump field."""
    sp = SpeciesParams(1.0, 1.0, 1.0, "blob")
    prof = BumpProfile(1.0, (0.0, 0.0, 0.0), 1.0, (0.3, 0.1, 0.0), 0.6, 4)
    data = InitialData([SpeciesData(sp, prof)], require_neutral=False)
    return data, BumpSource(data, "free"), BumpField(0.5, 1.0, (0.0, 0.0, 1.0), (0.0, 1.0, 0.0))


def oracle_errors(quad=QuadConfig(rtol=1e-4), log2n=20, points=ORACLE_POINTS):
    """Relative errors of E_T and E_S against Monte Carlo at the fixture points."""
    data, src, fld = oracle_fixture()
    eT, eS = [], []
    for t, x in points:
        x = np.asarray(x, float)
        r = eval_T(src, t, x, quad)
        o = free_streaming_T(data, t, x, log2n)
        eT.append(np.linalg.norm(r.E - o[0]) / np.linalg.norm(o[0]))
        r = eval_S(src, fld, t, x, quad)
        o = blob_S(src, fld, t, x, log2n)
        eS.append(np.linalg.norm(r.E - o[0]) / np.linalg.norm(o[0]))
    return np.asarray(eT), np.asarray(eS)


def decay_scans(data, field, times=SCAN_TIMES, quad=QuadConfig(rtol=1e-3)):
    """Scaled sups of E_S and E_data per time, plus the largest off-shell E_data.

    E_S is weighted by ``(t+|x|+2k)(t-|x|+2k)^2`` inside the cone and
    E_data by ``t`` on shell points; off-shell points must give zero.
    """
    src = BumpSource(data, "free")
    k = data.k
    dirs = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.6, 0.8]])
    cS, cD, off = [], [], 0.0
    for t in times:
        s = 0.0
        for x in (np.zeros(3), 0.5 * t * dirs[0], 0.5 * t * dirs[1]):
            a = np.linalg.norm(x)
            s = max(s, np.linalg.norm(eval_S(src, field, t, x, quad).E) * (t + a + 2 * k) * (t - a + 2 * k) ** 2)
        d = 0.0
        for u in dirs:
            for r in (t - 0.5 * k, t, t + 0.5 * k):
                d = max(d, np.linalg.norm(eval_data(data, t, r * u, quad)[0]) * t)
            for r in (t - 1.5 * k, t + 1.5 * k, 0.5 * t):
                E, B = eval_data(data, t, r * u, quad)
                off = max(off, float(np.max(np.abs(E))), float(np.max(np.abs(B))))
        cS.append(s)
        cD.append(d)
    return np.asarray(cS), np.asarray(cD), off


def check_oracles(ctx):
    st = ctx.st
    if st.cfg.name != "free_transport":
        return None, "applies to free_transport"
    eT, eS = oracle_errors()
    field = BumpField(st.cfg.field.amplitude, st.data.k, st.cfg.field.dir_E, st.cfg.field.dir_B)
    cS, cD, off = decay_scans(st.data, field)
    fS = ctx.fit("decay_E_S", np.asarray(SCAN_TIMES), cS, 0.0, 0.0)
    fD = ctx.fit("decay_E_data", np.asarray(SCAN_TIMES), cD, 0.0, 0.0)
    lo = BAND_DECAY[0]
    ok = (np.max(eT) <= ORACLE_RTOL and np.max(eS) <= ORACLE_RTOL and off == 0.0
          and fS.stable(lo) and fD.stable(lo))
    return CheckRecord("decomposition_oracles", "field decomposition", _status(ok), fS.C,
                       min(fS.stability_ratio, fD.stability_ratio),
                       f"E_T rel {np.max(eT):.2e}; E_S rel {np.max(eS):.2e}; off-shell {off:.1e}; "
                       f"E_S {_band(fS, BAND_DECAY)}; E_data {_band(fD, BAND_DECAY)}"), None


# ---------------------------------------------------------------- 7

TWO_PATH_TIMES = (50.0, 100.0, 200.0)


def two_path_nodes(data, n=10, seed=0, max_speed=0.5):
    """Deterministic momenta in the union support with ``|vhat| <= max_speed``."""
    out = []
    pts = sobol(3, 8, seed + 29)
    profs = [sd.unit_profile for sd in data.species]
    for j, p in enumerate(pts):
        prof = profs[j % len(profs)]
        d = 2 * p - 1
        if np.linalg.norm(d) > 1:
            continue
        v = prof.vc + 0.8 * prof.v_radius * d
        if np.linalg.norm(vhat(v)) <= max_speed:
            out.append(v)
        if len(out) == n:
            break
    return np.asarray(out)


def two_path_discrepancy(data, nodes, times=TWO_PATH_TIMES, quad=QuadConfig(rtol=1e-4)):
    """``sup_nodes |t^2 E_T(t, t vhat) - E_inf(v)|`` per time for the free-streaming source."""
    src = BumpSource(data, "free")
    sp = [sd.species for sd in data.species]
    Qs = [sd.unit_profile.spatial_marginal for sd in data.species]
    balls = [SupportBall(tuple(sd.unit_profile.vc), sd.unit_profile.v_radius) for sd in data.species]
    Einf, _ = asymptotic_fields(Qs, balls, sp, nodes)
    out = []
    for t in times:
        d = 0.0
        for v, E in zip(nodes, Einf):
            r = eval_T(src, t, t * vhat(v), quad)
            d = max(d, float(np.linalg.norm(t * t * r.E - E)))
        out.append(d)
    return np.asarray(out)


def check_two_path(ctx):
    st = ctx.st
    if st.cfg.name != "free_transport":
        return None, "applies to free_transport"
    nodes = two_path_nodes(st.data, st.cfg.resolution.field_nodes, st.cfg.seed)
    d = two_path_discrepancy(st.data, nodes, quad=QuadConfig(rtol=st.cfg.tolerances.quad_rtol))
    f = ctx.fit("two_path_fields", np.asarray(TWO_PATH_TIMES), d, 6.0, 1.0)
    ok = f.stable(BAND_RATE[0])
    return CheckRecord("two_path_fields", "transport field limit", _status(ok), f.C, f.stability_ratio,
                       f"{len(nodes)} nodes; sup err " + ", ".join(f"{a:.2e}" for a in d)
                       + f"; {_band(f, BAND_RATE)}"), None


# ---------------------------------------------------------------- 8

def check_corrections(ctx):
    prof = ctx.st.profile
    c = corrections(prof.E, prof.B, prof.nodes)
    vh = vhat(prof.nodes)
    alt = vh * np.sum(prof.E * vh, 1)[:, None] - (prof.E + np.cross(vh, prof.B))
    scale = 1.0 + np.linalg.norm(prof.E, axis=1) + np.linalg.norm(prof.B, axis=1)
    gap = float(np.max(np.abs(c.Ct - alt) / scale[:, None], initial=0.0))
    return CheckRecord("correction_identity", "correction identity", _status(gap <= IDENTITY_TOL), None, None,
                       f"max gap {gap:.2e} at {prof.nodes.shape[0]} nodes"), None


# ---------------------------------------------------------------- 9

def cauchy_sups(values, ts):
    return np.array([max(float(np.max(np.abs(values[(i, 2 * t)] - values[(i, t)])))
                         for i in {k[0] for k in values}) for t in ts])


def check_modified(ctx):
    st = ctx.st
    t = st.dyadic_times
    ts = [a for a in t if 2 * a in t]
    if len(ts) < 3:
        return None, "horizon too short"
    if st.field.is_zero:
        return None, "no field acts on the particles"
    dh = cauchy_sups(st.h_values, ts)
    dg = cauchy_sups(st.g_values, ts)
    fh = ctx.fit("modified_scattering_h", np.asarray(ts, float), dh, 6.0, 1.0)
    fg = ctx.fit("modified_scattering_g", np.asarray(ts, float), dg, 6.0, 1.0)
    ok = fh.stable(BAND_RATE[0]) and fg.C > fh.C
    n = sum(x.shape[0] for x, _ in st.samples)
    return CheckRecord("modified_scattering", "modified-state envelope", _status(ok), fh.C, fh.stability_ratio,
                       f"{n} sample points; h {_band(fh, BAND_RATE)}; unmodified C {fg.C:.3g}"), None


# ---------------------------------------------------------------- 10

def h_support_radii(st):
    times = [t for t in st.flow_times if 1.0 <= t <= st.horizon]
    R = []
    for t in times:
        r = 0.0
        for i, sd in enumerate(st.data.species):
            X, V = st.ensemble.state(i, t)
            if X.shape[0]:
                xh = X - log_shift(t, V, st.profile, sd.species.charge_to_mass)
                r = max(r, float(np.max(np.linalg.norm(xh, axis=1))))
        R.append(r)
    return np.asarray(times), np.asarray(R)


def check_h_support(ctx):
    st = ctx.st
    if st.field.is_zero:
        return None, "no field acts on the particles"
    t, R = h_support_radii(st)
    if t.size < 2:
        return None, "horizon too short"
    spread = _half_spread(R)
    return CheckRecord("h_support", "limit support", _status(spread <= H_SUPPORT_SPREAD),
                       float(R.max()), None,
                       f"radius {R.min():.4g}..{R.max():.4g} over t in [{t[0]:g}, {t[-1]:g}]; "
                       f"spread {spread:.3f}"), None


# ---------------------------------------------------------------- 11

CSV_ARTIFACTS = ("charge_profile.csv", "asymptotic_profile.csv", "moments.csv")


def check_determinism(ctx):
    st = ctx.st
    threads = 1 if st.cfg.threads > 1 else 2
    tmp = Path(tempfile.mkdtemp(prefix="vms_det_", dir=st.out))
    try:
        run_pipeline(replace(st.cfg, threads=threads), tmp)
        diff = [n for n in CSV_ARTIFACTS if (st.out / n).read_bytes() != (tmp / n).read_bytes()]
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return CheckRecord("determinism", "reproducibility", _status(not diff), None, None,
                       f"threads {st.cfg.threads} vs {threads}: "
                       + ("identical" if not diff else "differ in " + ", ".join(diff))), None


# ---------------------------------------------------------------- registry

REGISTRY = (
    ("kinematics", "kinematic identities", check_kinematics),
    ("free_transport_exactness", "free transport", check_free_transport),
    ("support_envelope", "support envelope", check_support),
    ("gradient_envelope", "gradient envelope", check_gradients),
    ("charge_convergence", "asymptotic charge", check_charge),
    ("decomposition_oracles", "field decomposition", check_oracles),
    ("two_path_fields", "transport field limit", check_two_path),
    ("correction_identity", "correction identity", check_corrections),
    ("modified_scattering", "modified-state envelope", check_modified),
    ("h_support", "limit support", check_h_support),
    ("determinism", "reproducibility", check_determinism),
)
CHECK_NAMES = tuple(r[0] for r in REGISTRY)


def run_checks(st, report: RunReport, enabled=()):
    """Run the enabled checks (all when ``enabled`` is empty) and write ``rate_fits.csv``."""
    unknown = set(enabled) - set(CHECK_NAMES)
    if unknown:
        from .config import ConfigError
        raise ConfigError(f"unknown checks {sorted(unknown)}")
    ctx = CheckContext(st)
    for name, tag, fn in REGISTRY:
        if enabled and name not in enabled:
            report.add(CheckRecord(name, tag, SKIP, detail="not enabled"))
            continue
        logger.info("check %s", name)
        rec, why = fn(ctx)
        report.add(rec if rec is not None else CheckRecord(name, tag, SKIP, detail=why))
    path = st.out / "rate_fits.csv"
    write_rate_csv(ctx.fits, path)
    st.artifacts["rates"] = path
    return report
