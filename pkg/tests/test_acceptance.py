"""Acceptance suite: the eleven criteria on the two default scenarios.

Each default scenario is built once (stages only) and every check is run
on it individually so its runtime can be reported. A criterion passes on
the one-sided reading of its stability band (the fitted constant must not
grow); the literal two-sided band status is printed next to it, so a
non-sharp envelope is visible in the summary.
"""
import time

import pytest

from vmscatter.harness import checks as C
from vmscatter.harness.config import ScenarioConfig
from vmscatter.harness.report import PASS
from vmscatter.harness.scenarios import run_pipeline

pytestmark = pytest.mark.acceptance

BANDS = {
    "support_envelope": None,
    "gradient_x": C.BAND_GRADIENT,
    "gradient_v": C.BAND_GRADIENT,
    "decay_E_S": C.BAND_DECAY,
    "decay_E_data": C.BAND_DECAY,
    "two_path_fields": C.BAND_RATE,
    "modified_scattering_h": C.BAND_RATE,
    "modified_scattering_g": None,
}


def _literal(fits):
    """Two-sided band status of the fits a check produced."""
    parts = []
    for f in fits:
        band = BANDS.get(f.name, C.BAND_RATE if f.name.startswith("charge_convergence") else None)
        if band is None:
            continue
        inside = band[0] <= f.stability_ratio <= band[1]
        parts.append(f"{f.name} {f.stability_ratio:.3g} {'in' if inside else 'outside'} "
                     f"[{band[0]:g}, {band[1]:g}]")
    return "; ".join(parts) if parts else "n/a"


def _run(ctx, fn):
    n0 = len(ctx.fits)
    t0 = time.perf_counter()
    rec, why = fn(ctx)
    dt = time.perf_counter() - t0
    return rec, why, dt, ctx.fits[n0:]


def _verdict(log, num, rec, why, dt, fits, extra=True):
    ok = rec is not None and rec.status == PASS and extra
    detail = rec.detail if rec is not None else why
    line = (f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  "
            f"{rec.name if rec is not None else '?':26s} {dt:7.1f} s  literal: {_literal(fits)}  | {detail}")
    log.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def bump_ctx(tmp_path_factory):
    st = run_pipeline(ScenarioConfig(name="prescribed_bump"), tmp_path_factory.mktemp("accept_bump"))
    return C.CheckContext(st)


@pytest.fixture(scope="module")
def free_ctx(tmp_path_factory):
    st = run_pipeline(ScenarioConfig(name="free_transport"), tmp_path_factory.mktemp("accept_free"))
    return C.CheckContext(st)


def test_criterion_01_kinematics(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_kinematics)
    assert _verdict(acceptance_log, 1, rec, why, dt, fits, dt < 1.0), rec


def test_criterion_02_free_transport(free_ctx, acceptance_log):
    rec, why, dt, fits = _run(free_ctx, C.check_free_transport)
    # the scenario itself (flow and charge stages) is what must be fast
    tm = free_ctx.st.timing
    dt += sum(tm.get(k, 0.0) for k in ("setup", "flow", "charge"))
    assert _verdict(acceptance_log, 2, rec, why, dt, fits, dt < 60.0), rec


def test_criterion_03_support(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_support)
    assert _verdict(acceptance_log, 3, rec, why, dt, fits), rec


def test_criterion_04_gradients(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_gradients)
    assert _verdict(acceptance_log, 4, rec, why, dt, fits), rec


def test_criterion_05_charge(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_charge)
    assert _verdict(acceptance_log, 5, rec, why, dt, fits), rec


def test_criterion_06_oracles(free_ctx, acceptance_log):
    rec, why, dt, fits = _run(free_ctx, C.check_oracles)
    assert _verdict(acceptance_log, 6, rec, why, dt, fits), rec


def test_criterion_07_two_path(free_ctx, acceptance_log):
    rec, why, dt, fits = _run(free_ctx, C.check_two_path)
    n = len(C.two_path_nodes(free_ctx.st.data, free_ctx.st.cfg.resolution.field_nodes))
    assert _verdict(acceptance_log, 7, rec, why, dt, fits, dt < 600.0 and n >= 10), rec


def test_criterion_08_corrections(bump_ctx, free_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_corrections)
    rec2, _, dt2, _ = _run(free_ctx, C.check_corrections)
    assert _verdict(acceptance_log, 8, rec, why, dt + dt2, fits, rec2.status == PASS), (rec, rec2)


def test_criterion_09_modified(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_modified)
    n = sum(x.shape[0] for x, _ in bump_ctx.st.samples)
    assert _verdict(acceptance_log, 9, rec, why, dt, fits, n >= 100), rec


def test_criterion_10_h_support(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_h_support)
    t, _ = C.h_support_radii(bump_ctx.st)
    covers = t.size > 0 and t[0] <= 1.0 and t[-1] >= 200.0
    assert _verdict(acceptance_log, 10, rec, why, dt, fits, covers), rec


def test_criterion_11_determinism(bump_ctx, acceptance_log):
    rec, why, dt, fits = _run(bump_ctx, C.check_determinism)
    assert _verdict(acceptance_log, 11, rec, why, dt, fits), rec


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
