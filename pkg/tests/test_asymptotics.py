import numpy as np
import pytest

from vmscatter.asymptotics import (AsymptoticProfile, ConsistencyError, MomentumGrid,
                                   PreconditionError, SupportBall, XQuadConfig, asymptotic_fields,
                                   charge_profile, corrections, envelope, extrapolate_Q_infinity,
                                   field_limit_check, limit_time, modified_state_h,
                                   modified_state_h_tilde, rate_fit, read_profile_csv, read_rate_csv,
                                   spatial_average_Q, species_asymptotic_field, write_rate_csv)
from vmscatter.fields import BumpField, BumpSource, QuadConfig, ZeroField
from vmscatter.flow import build_ensemble, evaluate_g
from vmscatter.harness.checks import BAND_RATE, synthetic_recovery, two_path_nodes
from vmscatter.oracles import asymptotic_field_point_charge
from vmscatter.relkin import energy, vhat

T_DYADIC = np.array([25.0, 50.0, 100.0, 200.0, 400.0, 800.0])


# ---------------------------------------------------------------- rate fits

def test_rate_fit_exact_envelope():
    t = T_DYADIC
    f = rate_fit(t, envelope(t, 6.0, 1.0), 6.0, 1.0)
    assert f.C == pytest.approx(1.0, rel=1e-14)
    assert f.stability_ratio == pytest.approx(1.0, rel=1e-14)
    assert f.residual <= 1e-14


def test_rate_fit_constant_series():
    f = rate_fit([1.0, 2.0, 4.0, 8.0], [0.7] * 4, 0.0, 0.0)
    assert f.C == pytest.approx(0.7, rel=1e-15) and f.stability_ratio == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_rate_fit_noise_robustness(seed):
    rng = np.random.default_rng(seed)
    t = T_DYADIC
    y = 2.0 * envelope(t, 5.0, 1.0)
    clean = rate_fit(t, y, 5.0, 1.0)
    for mode in ("envelope", "fit"):
        noisy = rate_fit(t, y * (1 + 0.1 * rng.uniform(-1, 1, t.size)), 5.0, 1.0, mode=mode)
        assert abs(noisy.C - clean.C) <= 0.15 * clean.C


def test_rate_fit_needs_three_points():
    with pytest.raises(ValueError):
        rate_fit([1.0, 2.0], [1.0, 1.0], 0, 0)


def test_rate_fit_rejects_unsorted_times():
    with pytest.raises(ValueError):
        rate_fit([1.0, 3.0, 2.0], [1.0, 1.0, 1.0], 0, 0)


def test_rate_csv_round_trip(tmp_path):
    fits = [rate_fit(T_DYADIC, envelope(T_DYADIC, 6, 1), 6, 1, name="a"),
            rate_fit(T_DYADIC[:3], [1, 2, 3], 0, 0, name="b")]
    p = tmp_path / "r.csv"
    write_rate_csv(fits, p)
    rows = read_rate_csv(p)
    assert [r["check_name"] for r in rows] == ["a", "b"]
    assert float(rows[1]["C"]) == fits[1].C


# ---------------------------------------------------------------- spatial averages

def test_zero_field_freezes_spatial_average(data):
    sd = data.species[0]
    v = np.array([[0.3, 0.1, 0.0], [0.0, 0.2, -0.3], [0.5, 0.0, 0.0]])
    q0 = spatial_average_Q(0.0, v, ZeroField(), sd, XQuadConfig(n=24), 1.1)
    qt = spatial_average_Q(40.0, v, ZeroField(), sd, XQuadConfig(n=24), 1.1)
    assert np.array_equal(q0, qt)
    assert np.allclose(q0, sd.unit_profile.spatial_marginal(v), rtol=1e-4)


def test_spatial_average_vanishes_outside_momentum_support(data, bump):
    sd = data.species[0]
    assert spatial_average_Q(10.0, np.array([5.0, 0.0, 0.0]), bump, sd, XQuadConfig(n=8)) == 0.0


def test_spatial_average_refinement_at_t50(data, bump):
    sd = data.species[0]
    ens = build_ensemble(data, (4, 4))
    ens.integrate(bump, (0.0, 50.0))
    R = 1.1 * max(float(np.max(np.linalg.norm(ens.state(i, 50.0)[0], axis=1))) for i in range(2))
    v = np.array([0.3, 0.1, 0.0])
    a = spatial_average_Q(50.0, v, bump, sd, XQuadConfig(n=16), R)
    b = spatial_average_Q(50.0, v, bump, sd, XQuadConfig(n=32), R)
    assert a > 0 and abs(a - b) < 1e-6


def test_spatial_average_rejects_negative_time(data, zero):
    with pytest.raises(ValueError):
        spatial_average_Q(-1.0, np.zeros(3), zero, data.species[0])


# ---------------------------------------------------------------- extrapolation

def test_synthetic_limit_recovered():
    _, model_err = synthetic_recovery(t_max=800.0)
    assert model_err <= 0.01


def test_zero_field_limit_is_initial_marginal(data, zero):
    sd = data.species[0]
    prof_u = sd.unit_profile
    grid = MomentumGrid(tuple(prof_u.vc), 1.05 * prof_u.v_radius, 5)
    prof = charge_profile(T_DYADIC[:4], grid, zero, sd, XQuadConfig(n=16), 1.1)
    res = extrapolate_Q_infinity(prof)
    q0 = spatial_average_Q(0.0, grid.nodes, zero, sd, XQuadConfig(n=16), 1.1)
    assert np.array_equal(res.values, q0)
    assert res.monotone and np.all(res.distance == 0)


def test_limit_vanishes_outside_support(data, zero):
    sd = data.species[0]
    grid = MomentumGrid(tuple(sd.unit_profile.vc), 1.05 * sd.unit_profile.v_radius, 5)
    prof = charge_profile(T_DYADIC[:4], grid, zero, sd, XQuadConfig(n=8), 1.1)
    res = extrapolate_Q_infinity(prof)
    fn = res.interpolator()
    far = np.array([[3.0, 0, 0], [0, -2.0, 1.0]])
    assert not np.any(fn(far))
    beyond = np.linalg.norm(grid.nodes - sd.unit_profile.vc, axis=1) > sd.unit_profile.v_radius
    assert beyond.any() and not np.any(res.values[beyond])


def test_extrapolation_needs_enough_dyadic_times(data, zero):
    sd = data.species[0]
    grid = MomentumGrid((0.0, 0.0, 0.0), 1.0, 2)
    prof = charge_profile([25.0, 50.0, 100.0], grid, zero, sd, XQuadConfig(n=4), 1.1)
    with pytest.raises(ValueError):
        extrapolate_Q_infinity(prof)


# ---------------------------------------------------------------- asymptotic fields

BALL = SupportBall((0.3, 0.1, 0.0), 0.6)


def _aniso(u):
    d = np.linalg.norm(u - np.asarray(BALL.center), axis=1) / BALL.radius
    return np.where(d < 1, (1 - d * d) ** 4 * (1.0 + 0.8 * u[:, 0] - 0.5 * u[:, 2]), 0.0)


def test_zero_charge_gives_zero_fields():
    E, B = species_asymptotic_field(lambda u: np.zeros(len(u)), BALL, np.array([0.2, 0, 0.1]))
    assert not np.any(E) and not np.any(B)


def test_isotropic_charge_at_rest_has_no_field():
    ball = SupportBall((0.0, 0.0, 0.0), 0.5)
    Q = lambda u: np.clip(1 - np.sum(u * u, 1) / 0.25, 0, None) ** 3
    E, B = species_asymptotic_field(Q, ball, np.zeros(3))
    ref = np.linalg.norm(species_asymptotic_field(Q, ball, np.array([0.3, 0, 0]))[0])
    assert np.linalg.norm(E) <= 1e-12 * ref and np.linalg.norm(B) <= 1e-12 * ref


@pytest.mark.parametrize("v", [(0.2, -0.1, 0.3), (0.0, 0.4, 0.0)])
def test_anisotropic_field_matches_monte_carlo(v):
    v = np.asarray(v)
    E, B = species_asymptotic_field(_aniso, BALL, v)
    Eo, Bo = asymptotic_field_point_charge(_aniso, BALL.center, BALL.radius, v, log2n=20)
    assert np.linalg.norm(E - Eo) / np.linalg.norm(Eo) <= 1e-3
    assert np.linalg.norm(B - Bo) / max(np.linalg.norm(Bo), np.linalg.norm(Eo)) <= 1e-3


def test_total_field_weights_species(data):
    sp = [sd.species for sd in data.species]
    v = np.array([0.1, 0.2, 0.0])
    E, B = asymptotic_fields([_aniso, _aniso], [BALL, BALL], sp, v)
    assert np.allclose(E, 0.0, atol=1e-15) and np.allclose(B, 0.0, atol=1e-15)
    E1, _ = asymptotic_fields([_aniso], [BALL], sp[:1], v)
    assert np.linalg.norm(E1) > 0


# ---------------------------------------------------------------- corrections

def test_corrections_at_rest():
    c = corrections(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.zeros(3))
    assert np.allclose(c.L, [1, 0, 0]) and c.D == 0.0
    assert np.allclose(c.C, [-1, 0, 0]) and np.allclose(c.Ct, [-1, 0, 0])


def test_pure_magnetic_correction_is_transverse(rng):
    v = rng.normal(size=(50, 3))
    B = rng.normal(size=(50, 3))
    c = corrections(np.zeros((50, 3)), B, v)
    vh = vhat(v)
    assert np.allclose(c.Ct, -np.cross(vh, B), atol=1e-14)
    assert np.max(np.abs(np.sum(c.Ct * vh, 1))) <= 1e-14


def test_correction_identity_sweep(rng):
    v = rng.normal(size=(500, 3)) * rng.uniform(0.01, 5, size=(500, 1))
    E = rng.normal(size=(500, 3))
    B = rng.normal(size=(500, 3))
    c = corrections(E, B, v)
    vh = vhat(v)
    alt = vh * np.sum(E * vh, 1)[:, None] - E - np.cross(vh, B)
    assert np.max(np.abs((c.C - vh * c.D[:, None]) - alt)) <= 1e-12
    assert np.max(np.abs(np.sum(vh * np.cross(vh, B), 1))) <= 1e-15


def test_correction_disagreement_is_reported():
    with pytest.raises(ConsistencyError):
        corrections(np.ones(3), np.ones(3), np.array([0.3, 0.2, 0.1]), tol=-1.0)


def test_profile_csv_round_trip(tmp_path, rng):
    nodes = rng.normal(size=(6, 3))
    p = AsymptoticProfile(nodes, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)),
                          rng.uniform(size=(2, 6)), (1.0, -1.0), (1.0, 1.0))
    p.to_csv(tmp_path / "a.csv")
    cols = read_profile_csv(tmp_path / "a.csv")
    assert np.array_equal(cols["D"], p.D) and np.array_equal(cols["Qinf"], p.Q_total)
    assert np.array_equal(np.stack([cols["Ctx"], cols["Cty"], cols["Ctz"]], 1), p.Ct)


# ---------------------------------------------------------------- modified states

def _bump_profile(field):
    return AsymptoticProfile(np.zeros((1, 3)), *field.ray_limit(np.zeros((1, 3))), fields_fn=field.ray_limit)


@pytest.fixture(scope="module")
def points(data):
    rng = np.random.default_rng(7)
    prof = data.species[0].unit_profile
    x = prof.xc + rng.uniform(-0.7, 0.7, size=(12, 3))
    v = prof.vc + rng.uniform(-0.4, 0.4, size=(12, 3))
    return x, v


def test_h_at_unit_time_is_g(data, points):
    fld = BumpField(0.2)
    x, v = points
    sd = data.species[0]
    h = modified_state_h(1.0, x, v, _bump_profile(fld), fld, sd)
    assert np.array_equal(h, evaluate_g(1.0, x, v, fld, sd))


def test_h_with_zero_profile_is_g(data, points, bump):
    x, v = points
    sd = data.species[0]
    zp = AsymptoticProfile.zero()
    for t in (2.0, 20.0):
        assert np.array_equal(modified_state_h(t, x, v, zp, bump, sd), evaluate_g(t, x, v, bump, sd))


def test_h_needs_unit_time(data, points, bump):
    x, v = points
    with pytest.raises(PreconditionError):
        modified_state_h(0.5, x, v, AsymptoticProfile.zero(), bump, data.species[0])


def test_h_tilde_at_rest_with_zero_profile(data, bump):
    sd = data.species[0]
    x = np.array([[0.2, -0.1, 0.3], [0.5, 0.0, 0.0]])
    v = np.zeros((2, 3))
    for t in (1.0, 3.0, 12.0):
        ht = modified_state_h_tilde(t, x, v, AsymptoticProfile.zero(), bump, sd)
        assert np.allclose(ht, evaluate_g(t, x, v, bump, sd), rtol=1e-8, atol=1e-12)


def test_h_tilde_with_zero_profile_is_g_at_energy_time(data, points, bump):
    x, v = points
    sd = data.species[0]
    t = 6.0
    ht = modified_state_h_tilde(t, x, v, AsymptoticProfile.zero(), bump, sd)
    g = np.array([evaluate_g(t * energy(v[i]), x[i], v[i], bump, sd) for i in range(len(v))])
    assert np.allclose(ht, g, rtol=1e-7, atol=1e-10)


def test_h_tilde_rejects_negative_time(data, bump):
    sd = data.species[0]
    v = np.array([[0.3, 0.0, 0.0]])
    big = lambda u: (1e6 * vhat(np.atleast_2d(u)), np.zeros_like(np.atleast_2d(u)))
    prof = AsymptoticProfile(v, *big(v), fields_fn=big)
    with pytest.raises(PreconditionError):
        modified_state_h_tilde(3.0, np.zeros((1, 3)), v, prof, bump, sd)


def test_h_tilde_chain_envelope(data, points):
    fld = BumpField(0.2)
    prof = _bump_profile(fld)
    sd = data.species[0]
    e = sd.species.charge
    x, v = points
    v0 = energy(v)
    corr = prof.corrections_at(v)
    ts = (25.0, 50.0, 100.0, 200.0)
    d = []
    for t in ts:
        ht = modified_state_h_tilde(t, x, v, prof, fld, sd)
        xs = x - (e * np.log(v0) / v0)[:, None] * corr.Ct
        h = np.array([modified_state_h(t * v0[i], xs[i], v[i], prof, fld, sd) for i in range(len(v))])
        d.append(float(np.max(np.abs(ht - h))))
    f = rate_fit(ts, d, 6.0, 1.0)
    assert f.stable(BAND_RATE[0])


# ---------------------------------------------------------------- field limits

def test_field_limit_zero_data(zero):
    prof = AsymptoticProfile.zero()
    eE, eB = field_limit_check(10.0, np.zeros(3), np.array([[0.2, 0.1, 0.0]]), zero, prof)
    assert eE == 0.0 and eB == 0.0


def test_field_limit_of_prescribed_bump_decays():
    fld = BumpField(0.3)
    prof = _bump_profile(fld)
    v = np.array([[0.2, 0.1, 0.0], [-0.3, 0.2, 0.1]])
    x = np.array([0.5, -0.2, 0.1])
    ts = (25.0, 50.0, 100.0, 200.0)
    d = [max(np.max(a) for a in field_limit_check(t, x, v, fld, prof)) for t in ts]
    assert np.all(np.diff(d) < 0)
    assert rate_fit(ts, d, 6.0, 1.0).stable(BAND_RATE[0])


def test_limit_time_formula():
    assert limit_time(0.5, 1.0, 0.4) == pytest.approx(2.0 / (0.5 * 1.4) + 1.0)


def test_transport_limit_rejects_bad_points(data):
    src = BumpSource(data, "free")
    prof = AsymptoticProfile.zero()
    bh = data.beta_hat_max
    T = limit_time(0.5, data.k, bh)
    with pytest.raises(PreconditionError):
        field_limit_check(50.0, np.array([30.0, 0, 0]), None, None, prof, source=src, beta_hat_max=bh)
    with pytest.raises(PreconditionError):
        field_limit_check(0.9 * T, np.zeros(3), None, None, prof, source=src, beta_hat_max=bh)


def test_transport_limit_envelope_free_source(data):
    sp = [sd.species for sd in data.species]
    Qs = [sd.unit_profile.spatial_marginal for sd in data.species]
    balls = [SupportBall(tuple(sd.unit_profile.vc), sd.unit_profile.v_radius) for sd in data.species]
    node = two_path_nodes(data, 1)
    E, B = asymptotic_fields(Qs, balls, sp, node)
    prof = AsymptoticProfile(node, E, B, fields_fn=lambda u: asymptotic_fields(Qs, balls, sp, u))
    src = BumpSource(data, "free")
    ts = (50.0, 100.0, 200.0)
    d = [field_limit_check(t, t * vhat(node[0]), None, None, prof, source=src, gamma=0.5,
                           beta_hat_max=data.beta_hat_max, quad=QuadConfig(rtol=1e-3))[0] for t in ts]
    assert rate_fit(ts, d, 6.0, 1.0).stable(BAND_RATE[0])
