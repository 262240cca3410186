import csv
from dataclasses import replace

import numpy as np
import pytest

from vmscatter.fields import QuadratureError
from vmscatter.harness import cli
from vmscatter.harness.checks import CHECK_NAMES
from vmscatter.harness.config import ConfigError, ScenarioConfig, load_config, parse_config
from vmscatter.harness.report import (FAIL, PASS, SKIP, CheckRecord, RunReport, emit_report,
                                      read_report_csv, report_text)
from vmscatter.harness.scenarios import StageError, run_pipeline, run_scenario

SMALL = """
[scenario]
name = {name}
times = 25, 50, 100
t_max = 100
[resolution]
ensemble = 3, 3
x_quad = 8
refine_x_quad = 16
momentum_nodes = 3
charge_nodes = 2
sample_points = 8
field_nodes = 2
gradient_points = 8
"""


def small(name="prescribed_bump", **kw):
    return parse_config(SMALL.format(name=name)).with_overrides(**kw)


# ---------------------------------------------------------------- configuration

def test_defaults_are_dyadic():
    cfg = ScenarioConfig()
    assert cfg.times == (25.0, 50.0, 100.0, 200.0) and cfg.all_times[-1] == cfg.t_max


def test_parse_sections():
    cfg = parse_config(SMALL.format(name="free_transport") + "[field]\namplitude = 0.1\n")
    assert cfg.name == "free_transport" and cfg.resolution.ensemble == (3, 3)
    assert cfg.field.amplitude == 0.1 and cfg.times == (25.0, 50.0, 100.0)


def test_mixed_case_keys():
    cfg = parse_config("[picard]\nT_end = 6\n[tolerances]\nquad_rtol = 1e-3\n")
    assert cfg.picard.T_end == 6.0 and cfg.tolerances.quad_rtol == 1e-3


@pytest.mark.parametrize("text", [
    "[scenario]\nname = nope\n",
    "[scenario]\ntimes = 50, 25\n",
    "[scenario]\ntimes = 25, 50\nt_max = 30\n",
    "[scenario]\nthreads = 0\n",
    "[scenario]\ncolour = red\n",
    "[resolution]\nx_quad = 0\n",
    "[resolution]\nx_quad = many\n",
    "[tolerances]\ngamma = 1.5\n",
    "[bogus]\na = 1\n",
    "[data]\nwidth = 2\n",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_digest_ignores_threads_and_out():
    a = ScenarioConfig()
    assert a.digest() == a.with_overrides(threads=4, out="elsewhere").digest()
    assert a.digest() != a.with_overrides(seed=1).digest()


# ---------------------------------------------------------------- reports

def _report():
    r = RunReport("demo", provenance={"config_hash": "abc"})
    r.add(CheckRecord("a", "tag a", PASS, 1.5, 0.9, "fine"))
    r.add(CheckRecord("b", "tag b", FAIL, None, 3.0, "bad, really"))
    r.add(CheckRecord("c", "tag c", SKIP, detail="not enabled"))
    return r


def test_report_csv_round_trip(tmp_path):
    r = _report()
    p = emit_report(r, "csv", tmp_path / "r.csv")
    back = read_report_csv(p, "demo")
    assert sorted(back.checks, key=lambda c: c.name) == sorted(r.checks, key=lambda c: c.name)


def test_empty_report_is_header_only(tmp_path):
    r = RunReport("empty")
    p = emit_report(r, "csv", tmp_path / "r.csv")
    assert p.read_text().strip().splitlines() == [",".join(("name", "tag", "status", "constant",
                                                             "stability_ratio", "detail"))]
    text = emit_report(r, "text", tmp_path / "r.txt").read_text()
    assert "[" not in text and text.startswith("scenario: empty")


def test_failures_listed_first(tmp_path):
    r = _report()
    assert not r.passed
    lines = [l for l in report_text(r).splitlines() if l.startswith("[")]
    assert lines[0].startswith("[FAIL] b (tag b)")
    rows = list(csv.reader(open(emit_report(r, "csv", tmp_path / "r.csv"))))
    assert rows[1][0] == "b"


def test_duplicate_check_rejected():
    r = _report()
    with pytest.raises(ValueError):
        r.add(CheckRecord("a", "tag", PASS))


def test_unknown_report_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(_report(), "xml", tmp_path / "r.xml")


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def bump_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bump")
    return run_scenario(small(), out)


def test_report_enumerates_every_check(bump_run):
    report, _ = bump_run
    assert [c.name for c in sorted(report.checks, key=lambda c: CHECK_NAMES.index(c.name))] == list(CHECK_NAMES)
    assert report.passed
    assert set(report.wall_clock) >= {"setup", "flow", "charge", "fields", "modified", "checks"}


def test_artifacts_are_written(bump_run):
    _, st = bump_run
    for name in ("ensemble.snap", "charge_profile.csv", "asymptotic_profile.csv", "moments.csv",
                 "rate_fits.csv", "report.txt", "report.csv"):
        assert (st.out / name).is_file(), name


def test_rerun_is_byte_identical(bump_run, tmp_path):
    _, st = bump_run
    run_pipeline(st.cfg, tmp_path)
    for name in ("charge_profile.csv", "asymptotic_profile.csv", "moments.csv"):
        assert (st.out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_thread_count_does_not_change_outputs(bump_run, tmp_path):
    _, st = bump_run
    run_pipeline(replace(st.cfg, threads=3), tmp_path)
    for name in ("charge_profile.csv", "asymptotic_profile.csv", "moments.csv"):
        assert (st.out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_resume_rejects_changed_config(bump_run, tmp_path):
    _, st = bump_run
    run_pipeline(st.cfg, tmp_path, until="flow")
    with pytest.raises(StageError) as err:
        run_pipeline(st.cfg.with_overrides(seed=5), tmp_path, until="fields", resume=True)
    assert err.value.stage == "flow"


def test_free_transport_charge_rows_identical(tmp_path):
    cfg = small("free_transport", checks=("free_transport_exactness", "correction_identity"))
    report, st = run_scenario(cfg, tmp_path)
    rec = {c.name: c for c in report.checks}
    assert rec["free_transport_exactness"].status == PASS
    for prof in st.charge:
        assert np.all(np.abs(prof.values - prof.values[:1]) <= 1e-8)


def test_unknown_check_is_a_config_error(tmp_path):
    with pytest.raises(StageError) as err:
        run_scenario(small(checks=("nope",)), tmp_path)
    assert isinstance(err.value.cause, ConfigError)


# ---------------------------------------------------------------- CLI

def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return str(p)


def test_cli_verify_passes(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.format(name="prescribed_bump"))
    code = cli.main(["verify", "--config", cfg, "--out", str(tmp_path / "o"),
                     "--checks", "kinematics,correction_identity"])
    assert code == 0
    assert "result: PASS" in capsys.readouterr().out


def test_cli_failed_check_exits_one(tmp_path, monkeypatch, capsys):
    def fake(cfg, out=None, checks=None):
        r = RunReport(cfg.name)
        r.add(CheckRecord("x", "tag", FAIL))
        return r, None
    monkeypatch.setattr(cli, "run_scenario", fake)
    assert cli.main(["verify"]) == 1
    assert "[FAIL] x" in capsys.readouterr().out


def test_cli_config_error_exits_two(tmp_path, capsys):
    cfg = _write(tmp_path, "[scenario]\nname = bogus\n")
    assert cli.main(["verify", "--config", cfg]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_unknown_check_exits_two(tmp_path):
    cfg = _write(tmp_path, SMALL.format(name="prescribed_bump"))
    assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path / "o"), "--checks", "nope"]) == 2


def test_cli_numerical_failure_exits_three(capsys):
    code = cli.main(["fields", "--piece", "T", "--source", "static", "--t", "10", "--x", "2", "0", "0",
                     "--rtol", "1e-17", "--max-levels", "2"])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_stage_failure_exits_three(monkeypatch, capsys):
    def boom(cfg, out=None, checks=None):
        raise StageError("charge", QuadratureError("no convergence", np.zeros(1), np.zeros(1)))
    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["verify"]) == 3
    assert "charge" in capsys.readouterr().err


def test_cli_fields_prescribed(capsys):
    assert cli.main(["fields", "--piece", "prescribed", "--t", "0", "--x", "0", "0", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    E = [float(a) for a in out[0].split("=")[1].split()]
    assert np.allclose(E, [0.05 / 4, 0, 0], rtol=1e-12)


def test_cli_simulate_then_asymptotics(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.format(name="prescribed_bump"))
    out = str(tmp_path / "o")
    assert cli.main(["simulate", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "o" / "ensemble.snap").is_file()
    assert not (tmp_path / "o" / "asymptotic_profile.csv").exists()
    assert cli.main(["asymptotics", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "o" / "asymptotic_profile.csv").is_file()
