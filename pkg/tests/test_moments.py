import numpy as np
import pytest

from vmscatter.asymptotics import rate_fit
from vmscatter.fields import ZeroField
from vmscatter.flow import build_ensemble, default_initial_data
from vmscatter.harness.checks import BAND_DECAY, BAND_RATE
from vmscatter.moments import (GridSpec, asymptotic_rho_j, compute_rho_j, moment_asymptotics_error,
                               read_moment_csv)
from vmscatter.relkin import energy

TIMES = (20.0, 25.0, 40.0, 50.0, 80.0, 100.0)


@pytest.fixture(scope="module")
def free_ens(data):
    ens = build_ensemble(data, (8, 8))
    ens.integrate(ZeroField(), TIMES)
    return ens


@pytest.fixture(scope="module")
def empty_ens():
    ens = build_ensemble(default_initial_data(amplitude=0.0), (4, 4))
    ens.integrate(ZeroField(), (0.0, 5.0))
    return ens


def test_empty_ensemble_deposits_nothing(empty_ens):
    m = compute_rho_j(empty_ens, 5.0, GridSpec(half_width=3.0, n=4))
    assert not np.any(m.rho) and not np.any(m.j) and m.total_charge() == 0.0


@pytest.mark.parametrize("t", TIMES)
def test_neutral_data_deposits_zero_total(free_ens, data, t):
    m = compute_rho_j(free_ens, t, GridSpec(half_width=data.beta_hat_max * t + 1, n=8))
    assert abs(m.total_charge()) <= 1e-12
    assert m.overflow_count == 0


def test_deposition_conserves_signed_weight(data):
    ens = build_ensemble(data, (5, 5))
    ens.members[1].w[:] *= 0.5         # break neutrality
    ens.integrate(ZeroField(), (0.0, 3.0))
    total = sum(m.species.charge * float(np.sum(m.w)) for m in ens.members)
    for n in (2, 7, 16):
        m = compute_rho_j(ens, 3.0, GridSpec(half_width=1.5, n=n))
        assert abs(m.total_charge() - total) <= 1e-12


def test_free_transport_density_decay_is_stable(free_ens, data):
    ts = (20.0, 40.0, 80.0)
    s = [np.max(np.abs(compute_rho_j(free_ens, t, GridSpec(half_width=data.beta_hat_max * t + 1, n=8)).rho))
         * t ** 3 for t in ts]
    f = rate_fit(ts, s, 0.0, 0.0)
    assert BAND_DECAY[0] <= f.stability_ratio <= BAND_DECAY[1]


def test_moment_csv_round_trip(free_ens, tmp_path):
    m = compute_rho_j(free_ens, 20.0, GridSpec(half_width=8.0, n=4))
    p = tmp_path / "m.csv"
    m.to_csv(p)
    rows = read_moment_csv(p)
    assert rows.shape == (64, 8)
    assert np.array_equal(rows[:, 4], m.rho)
    assert np.array_equal(rows[:, 5:], m.j)


def test_asymptotic_density_outside_cone_is_zero():
    Q = lambda v: np.ones(len(v))
    rho, j = asymptotic_rho_j(Q, 4.0, np.array([[4.0, 0, 0], [0, 5.0, 0]]))
    assert not np.any(rho) and not np.any(j)


def test_asymptotic_density_at_origin():
    Q = lambda v: 2.0 + v[:, 0]
    rho, j = asymptotic_rho_j(Q, 3.0, np.zeros(3))
    assert rho == pytest.approx(2.0 / 27.0, rel=1e-15)
    assert not np.any(j)


def test_asymptotic_current_is_transport_of_density(rng):
    Q = lambda v: np.exp(-np.sum(v * v, 1))
    t = 7.0
    x = rng.uniform(-4, 4, size=(200, 3))
    rho, j = asymptotic_rho_j(Q, t, x)
    assert np.array_equal(j, (x / t) * rho[:, None])


def test_asymptotic_density_needs_positive_time():
    with pytest.raises(ValueError):
        asymptotic_rho_j(lambda v: np.ones(len(v)), 0.0, np.zeros(3))


@pytest.mark.parametrize("test_fn", ["one", "vhat_x", "vhat_z"])
def test_moment_error_envelope_is_stable(free_ens, data, test_fn):
    h = {"one": lambda v: np.ones(len(v)),
         "vhat_x": lambda v: v[:, 0] / energy(v),
         "vhat_z": lambda v: v[:, 2] / energy(v)}[test_fn]
    Q = data.species[0].unit_profile.spatial_marginal
    ts = (25.0, 50.0, 100.0)
    e = [moment_asymptotics_error(free_ens, Q, h, t, np.zeros(3), 0) for t in ts]
    f = rate_fit(ts, e, 6.0, 1.0)
    assert f.stable(BAND_RATE[0])


def test_moment_error_zero_for_zero_data(empty_ens):
    e = moment_asymptotics_error(empty_ens, lambda v: np.zeros(len(v)), lambda v: np.ones(len(v)),
                                 5.0, np.array([1.0, 0, 0]), 0)
    assert e == 0.0


def test_moment_error_needs_point_inside_cone(free_ens):
    with pytest.raises(ValueError):
        moment_asymptotics_error(free_ens, lambda v: np.ones(len(v)), lambda v: np.ones(len(v)),
                                 20.0, np.array([20.0, 0, 0]), 0)
