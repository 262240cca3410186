"""Modified states and field-limit checks.

With ``Ct`` the corrected drift of the asymptotic profile,

    h(t, x, v) = g(t, x + (q / <v>) log(t) Ct(v), v)            (unit-mass v),
    ht(t, x, v) = g(T, x + (e / v0) log(t) Ct(v/m), v/m),
    T = t v0 + (e / v0) log(t) D(v/m),  v0 = sqrt(m^2 + |v|^2)  (physical v),

the second being ``f_a(T, x + t v + (e/v0) log(t) C, v)`` rewritten in
shifted coordinates. Both require ``t >= 1``.
"""
from __future__ import annotations

import logging

import numpy as np

from ..fields.decomposition import eval_T
from ..fields.quadrature import QuadConfig
from ..flow.characteristics import DEFAULT_TOL, evaluate_g, integrate_char
from ..relkin import check_map, energy
from .profile import AsymptoticProfile

logger = logging.getLogger(__name__)


class PreconditionError(ValueError):
    """Arguments outside the domain where a modified state or limit is defined."""


def _as2d(a):
    a = np.asarray(a, float)
    return a.ndim == 1, np.atleast_2d(a)


def log_shift(t, v, profile: AsymptoticProfile, q):
    """Spatial shift ``(q/<v>) log(t) Ct(v)`` for unit-mass momenta ``v`` (N, 3)."""
    Ct = profile.corrections_at(v).Ct
    return (q * np.log(t) / energy(v))[:, None] * Ct


def modified_state_h(t, x, v, profile: AsymptoticProfile, field, species_data,
                     tol=DEFAULT_TOL, bounds=None, backend=None):
    """``h(t, x, v)`` for unit-mass momenta ``v``; points broadcast as (N, 3)."""
    if t < 1:
        raise PreconditionError(f"modified states need t >= 1, got t={t}")
    single, x = _as2d(x)
    _, v = _as2d(v)
    x, v = np.broadcast_arrays(x, v)
    q = species_data.species.charge_to_mass
    xs = x + log_shift(t, v, profile, q)
    out = evaluate_g(t, xs, v, field, species_data, tol, bounds, backend)
    return float(out[0]) if single else out


def modified_state_h_tilde(t, x, v, profile: AsymptoticProfile, field, species_data,
                           tol=DEFAULT_TOL, backend=None):
    """``ht(t, x, v)`` for physical momenta ``v``.

    Raises
    ------
    PreconditionError
        When ``t < 1`` or the reparametrized time is negative.
    """
    if t < 1:
        raise PreconditionError(f"modified states need t >= 1, got t={t}")
    sp = species_data.species
    single, x = _as2d(x)
    _, v = _as2d(v)
    x, v = np.broadcast_arrays(x, v)
    u = v / sp.mass
    v0 = energy(v, sp.mass)
    corr = profile.corrections_at(u)
    T = t * v0 + sp.charge / v0 * np.log(t) * corr.D
    if np.any(T < 0):
        raise PreconditionError(f"reparametrized time is negative (min {float(np.min(T)):.3e})")
    xs = x + (sp.charge * np.log(t) / v0)[:, None] * corr.Ct
    if field.is_zero:
        out = species_data.unit_profile.value(xs, u)
    else:
        # per-point start times: integrate every point back to s = 0 at once
        X, V = integrate_char(xs, u, T, [0.0], field, sp.charge_to_mass, tol, backend=backend)
        out = species_data.unit_profile.value(X[:, 0], V[:, 0])
    return float(out[0]) if single else out


def limit_time(gamma, k, beta_hat_max):
    """``T(gamma) = 2k / ((1 - gamma)(1 + beta_hat_max)) + 1``."""
    return 2.0 * k / ((1.0 - gamma) * (1.0 + beta_hat_max)) + 1.0


def field_limit_check(t, x, v, field, profile: AsymptoticProfile, species=None, source=None,
                      gamma=0.5, k=1.0, beta_hat_max=None, quad: QuadConfig = QuadConfig(rtol=1e-4)):
    """Discrepancies ``(errE, errB)`` between rescaled fields and their limit.

    With a field evaluator, ``|t^2 E(t, x + t vhat) - E_inf(v)|`` (and B)
    for unit-mass ``v``. With ``source`` (a retarded source) and
    ``field=None``, the transport piece is compared instead:
    ``|t^2 E_T(t, x) - E_inf(check(x/t))|``, which requires
    ``|x| <= gamma t`` and ``t >= T(gamma)``.
    """
    x = np.asarray(x, float)
    if field is not None:
        v = np.atleast_2d(np.asarray(v, float))
        vh = v / energy(v)[:, None]
        E, B = field.values(np.full(v.shape[0], float(t)), np.atleast_2d(x) + t * vh)
        Ei, Bi = profile.fields_at(v)
        errE = np.linalg.norm(t * t * E - Ei, axis=1)
        errB = np.linalg.norm(t * t * B - Bi, axis=1)
        if errE.size == 1:
            return float(errE[0]), float(errB[0])
        return errE, errB
    if source is None:
        raise ValueError("need a field evaluator or a retarded source")
    if beta_hat_max is None:
        raise ValueError("the transport limit needs beta_hat_max")
    T = limit_time(gamma, k, beta_hat_max)
    if np.linalg.norm(x) > gamma * t or t < T:
        raise PreconditionError(f"need |x| <= {gamma} t and t >= T(gamma) = {T:.6g}")
    res = eval_T(source, t, x, quad)
    Ei, Bi = profile.fields_at(check_map(x / t))
    return (float(np.linalg.norm(t * t * res.E - Ei[0])), float(np.linalg.norm(t * t * res.B - Bi[0])))
