import numpy as np
import pytest

from vmscatter.relkin import (KinematicsDomainError, SpeciesParams, check_map, energy, jacobian_hat,
                              kinematics, species_rescale, speed_of, vhat)


def ball(rng, n, radius):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * radius * rng.uniform(0, 1, size=(n, 1)) ** (1 / 3)


def test_zero_momentum():
    k = kinematics(np.zeros(3))
    assert k.v0 == 1.0
    assert np.all(k.vhat == 0)


def test_sqrt3():
    k = kinematics(np.array([np.sqrt(3), 0, 0]))
    assert k.v0 == pytest.approx(2.0, abs=1e-15)
    assert np.allclose(k.vhat, [np.sqrt(3) / 2, 0, 0], atol=1e-15)


def test_random_speed_identities(rng):
    v = ball(rng, 100, 10.0)
    k = kinematics(v)
    assert np.all(np.linalg.norm(k.vhat, axis=1) < 1)
    assert np.allclose(k.v0[:, None] * k.vhat, v, rtol=1e-14, atol=1e-14)
    assert np.max(np.abs(k.v0 ** 2 * (1 - np.sum(k.vhat ** 2, 1)) - 1)) <= 1e-12


def test_check_map_values():
    assert np.all(check_map(np.zeros(3)) == 0)
    assert np.allclose(check_map(np.array([0.6, 0, 0])), [0.75, 0, 0], atol=1e-15)


def test_check_map_root_finding_oracle():
    from scipy.optimize import brentq
    r = brentq(lambda s: s / np.sqrt(1 + s * s) - 0.6, 0, 10, xtol=1e-15)
    assert check_map(np.array([0.6, 0, 0]))[0] == pytest.approx(r, abs=1e-12)


def test_check_map_round_trip(rng):
    u = ball(rng, 100, 0.95)
    assert np.max(np.abs(vhat(check_map(u)) - u)) <= 1e-12


def test_check_map_domain():
    with pytest.raises(KinematicsDomainError):
        check_map(np.array([1.0, 0, 0]))
    with pytest.raises(KinematicsDomainError):
        kinematics(np.array([np.nan, 0, 0]))


def test_jacobian_at_rest():
    mat, det = jacobian_hat(np.zeros(3))
    assert det == 1.0
    assert np.array_equal(mat, np.eye(3))


def test_jacobian_determinant_unit_momentum():
    mat, det = jacobian_hat(np.array([1.0, 0, 0]))
    assert det == pytest.approx(2 ** -2.5, rel=1e-14)
    assert np.linalg.det(mat) == pytest.approx(2 ** -2.5, rel=1e-12)


def test_jacobian_finite_differences(rng):
    v = ball(rng, 50, 5.0)
    mat, det = jacobian_hat(v)
    h = 1e-5
    fd = np.stack([(vhat(v + h * e) - vhat(v - h * e)) / (2 * h) for e in np.eye(3)], -1)
    assert np.max(np.abs(fd - mat)) <= 1e-6
    assert np.max(np.abs(np.linalg.det(mat) - det) / det) <= 1e-10


def test_species_rescale():
    one = SpeciesParams(1.0, 1.0, 1.0)
    two = SpeciesParams(2.0, 1.0, 1.0)
    assert np.array_equal(species_rescale(one, np.array([1.0, 2, 3])), [1, 2, 3])
    assert np.array_equal(species_rescale(two, np.array([1.0, 0, 0])), [2, 0, 0])
    assert np.array_equal(species_rescale(two, np.array([2.0, 0, 0]), inverse=True), [1, 0, 0])


def test_species_speed_invariance(rng):
    m = rng.uniform(0.1, 10, size=100)
    v = ball(rng, 100, 5.0)
    lhs = vhat(m[:, None] * v, m)
    assert np.max(np.abs(lhs - vhat(v))) <= 1e-14


def test_species_validation():
    with pytest.raises(ValueError):
        SpeciesParams(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SpeciesParams(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        SpeciesParams(1.0, 1.0, -1.0)


def test_speed_of():
    assert speed_of(np.sqrt(3)) == pytest.approx(np.sqrt(3) / 2)
    assert energy(np.array([3.0, 4.0, 0.0]), 2.0) == pytest.approx(np.sqrt(29))
