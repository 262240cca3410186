"""g-characteristics: the ODE, its integration, and evaluation of g.

In shifted coordinates ``X(s)`` with ``X + s Vhat`` the physical position,
the characteristic system of the transported profile reads::

    dX/ds = (s / V0) q [Vhat (L . Vhat) - L],    dV/ds = q L,

with ``q = e/m``, unit-mass momentum ``V`` and ``L = E + Vhat x B``
evaluated at ``(s, X + s Vhat)``. Without fields both sides vanish.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .. import _backend
from .. import _pykernels as pk
from ..fields.evaluators import BumpField, FieldEvaluator
from ..parallel import map_chunks
from ..relkin import speed_of

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
# the controller runs at a fraction of the requested tolerance so that
# the accumulated (global) error, not only the per-step error, is O(tol)
CONTROLLER_SAFETY = 0.1
INFLATE = 1.01


class IntegrationError(RuntimeError):
    """Characteristic integration failed (step underflow, step budget, NaN)."""

    def __init__(self, msg, index, state, s):
        super().__init__(msg)
        self.index = index
        self.state = state
        self.s = s


@dataclass
class CharState:
    """Point ``(X, V)`` on a characteristic at time ``s`` (arrays broadcast)."""

    X: np.ndarray
    V: np.ndarray
    s: float

    @property
    def position(self):
        """Physical position ``X + s Vhat``."""
        return pk.shifted_point(self.s, np.concatenate([self.X, self.V], -1))


def char_rhs(s, state: CharState, field: FieldEvaluator, q: float):
    """Right-hand side ``(dX, dV)`` of the characteristic system."""
    Y = np.atleast_2d(np.concatenate([np.asarray(state.X, float), np.asarray(state.V, float)], -1))
    s = float(s)
    if field.is_zero:
        out = np.zeros_like(Y)
    else:
        E, B = field.values(np.full(len(Y), s), pk.shifted_point(s, Y))
        out = pk.char_rhs(s, Y, np.full(len(Y), float(q)), E, B)
    if np.ndim(state.X) == 1:
        out = out[0]
    return out[..., :3], out[..., 3:]


def _generic(field, Y0, s0, targets, q, rtol, atol, max_steps):
    def rhs(s, Y, idx):
        E, B = field.values(s, pk.shifted_point(s, Y))
        return pk.char_rhs(s, Y, q[idx], E, B)
    return pk.dopri_batch(rhs, Y0, s0, targets, rtol, atol, 1e-2, max_steps)


def integrate_char(X0, V0, s0, targets, field: FieldEvaluator, q, tol=DEFAULT_TOL,
                   max_steps=200000, backend=None, chunk=1024):
    """Integrate many characteristics from ``s0`` to each of ``targets``.

    Parameters
    ----------
    X0, V0 : ndarray, shape (N, 3)
        Shifted positions and unit-mass momenta at ``s0``.
    s0 : float or ndarray (N,)
    targets : array_like, shape (M,)
        Output times, monotone in the direction of integration
        (forward or backward).
    q : float or ndarray (N,)
        Charge-to-mass ratios.
    tol : float
        Accuracy target. Dormand-Prince 5(4) steps are accepted when the
        mixed relative/absolute local error is below ``0.1 * tol``.

    Returns
    -------
    X, V : ndarray, shape (N, M, 3)

    Raises
    ------
    IntegrationError
        On step-size underflow, an exhausted step budget or non-finite values.
    """
    X0 = np.atleast_2d(np.asarray(X0, float))
    V0 = np.atleast_2d(np.asarray(V0, float))
    N = X0.shape[0]
    targets = np.atleast_1d(np.asarray(targets, float))
    s0 = np.ascontiguousarray(np.broadcast_to(np.asarray(s0, float), (N,)))
    qv = np.ascontiguousarray(np.broadcast_to(np.asarray(q, float), (N,)))
    if np.any(targets < 0) or np.any(s0 < 0):
        raise ValueError("characteristic times must be non-negative")
    Y0 = np.ascontiguousarray(np.concatenate([X0, V0], 1))
    if N == 0 or field.is_zero:
        out = np.repeat(Y0[:, None, :], targets.size, axis=1)
        return out[..., :3], out[..., 3:]
    kern = _backend.get(backend)
    bump = isinstance(field, BumpField)
    rtol = atol = CONTROLLER_SAFETY * float(tol)

    def work(a, b):
        if bump:
            return kern.integrate_bump(Y0[a:b], s0[a:b], targets, qv[a:b], field.amplitude,
                                       field.k, field.dE, field.dB, rtol, atol, 1e-2,
                                       max_steps, False)
        return _generic(field, Y0[a:b], s0[a:b], targets, qv[a:b], rtol, atol, max_steps)

    parts = map_chunks(work, N, size=chunk)
    out = np.concatenate([p[0] for p in parts], 0)
    status = np.concatenate([p[1] for p in parts], 0)
    bad = np.nonzero(status != pk.STATUS_OK)[0]
    if bad.size:
        i = int(bad[0])
        why = {pk.STATUS_UNDERFLOW: "step-size underflow", pk.STATUS_MAXSTEPS: "step budget exhausted",
               pk.STATUS_NONFINITE: "non-finite state"}.get(int(status[i]), "failure")
        raise IntegrationError(f"characteristic {i} failed: {why} ({bad.size} members affected)",
                               i, Y0[i].copy(), float(s0[i]))
    return out[..., :3], out[..., 3:]


# ---------------------------------------------------------------- a-priori bounds

@dataclass(frozen=True)
class SupportBounds:
    """A-priori bounds on the support of g: ``|v| <= v_max`` and ``|x| <= x_max(t)``.

    ``x_max`` is tabulated on ``t_grid`` (monotone) and interpolated.
    """

    v_max: float
    t_grid: np.ndarray
    x_grid: np.ndarray

    def x_max(self, t):
        return np.interp(t, self.t_grid, self.x_grid, right=self.x_grid[-1])


def apriori_bounds(species_data, field: FieldEvaluator, t_end: float, n: int = 256) -> SupportBounds:
    """Bounds on the support of g over ``[0, t_end]`` from the field's decay budget.

    Along a characteristic of speed at most ``b`` the position obeys
    ``|X_f| <= b s + k``, so the field budget gives
    ``|L| <= 2 C0 / ((s + 2k)((1 - b) s + k))``. The momentum bound is a
    fixed point of ``beta = v0 + |q| int |L| ds``; the shifted position then
    grows at most by ``|q| int s |L| ds``.
    """
    prof = species_data.unit_profile
    q = abs(species_data.species.charge_to_mass)
    v0, x0 = prof.v_extent(), prof.x_extent()
    t_grid = np.linspace(0.0, max(float(t_end), 1e-12), n)
    if field.is_zero or q == 0:
        return SupportBounds(v0, t_grid, np.full(n, x0))
    C0, k = field.budget.C0, field.budget.k

    def lorentz(s, b):
        return 2.0 * C0 / ((s + 2 * k) * ((1 - b) * s + k))

    beta = v0
    for _ in range(200):
        b = speed_of(beta)
        dv = q * quad(lorentz, 0.0, t_grid[-1], args=(b,), limit=200)[0]
        new = v0 + dv
        if abs(new - beta) <= 1e-12 * max(1.0, new):
            beta = new
            break
        beta = new
    else:
        raise RuntimeError("momentum bootstrap did not converge; the field budget is too large")
    b = speed_of(beta)
    grow = [0.0]
    for a, c in zip(t_grid[:-1], t_grid[1:]):
        grow.append(grow[-1] + q * quad(lambda s: s * lorentz(s, b), a, c)[0])
    return SupportBounds(beta, t_grid, x0 + np.asarray(grow))


# ---------------------------------------------------------------- g

def evaluate_g(t, x, v, field: FieldEvaluator, species_data, tol=DEFAULT_TOL,
               bounds: Optional[SupportBounds] = None, backend=None):
    """``g(t, x, v)``: follow the characteristic back to ``s = 0`` and read ``f0``.

    ``x`` and ``v`` (unit-mass momentum) have shape ``(N, 3)`` or ``(3,)``.
    Points outside the a-priori bounds inflated by 1% return 0 without
    integration.
    """
    x = np.asarray(x, float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    v = np.atleast_2d(np.asarray(v, float))
    if t < 0:
        raise ValueError("g is only defined for t >= 0")
    prof = species_data.unit_profile
    out = np.zeros(x.shape[0])
    if t == 0 or field.is_zero:
        out = prof.value(x, v)
        return float(out[0]) if single else out
    if bounds is None:
        bounds = apriori_bounds(species_data, field, t)
    live = ((np.linalg.norm(v, axis=1) <= INFLATE * bounds.v_max)
            & (np.linalg.norm(x, axis=1) <= INFLATE * bounds.x_max(t)))
    if np.any(live):
        X, V = integrate_char(x[live], v[live], float(t), [0.0], field,
                              species_data.species.charge_to_mass, tol, backend=backend)
        out[live] = prof.value(X[:, 0], V[:, 0])
    return float(out[0]) if single else out


@dataclass
class GradientResult:
    grad_x: np.ndarray
    grad_v: np.ndarray
    flagged: np.ndarray  # Richardson pair inconsistent


def flow_gradients(t, x, v, field: FieldEvaluator, species_data, rel_step=1e-4,
                   tol=DEFAULT_TOL, backend=None) -> GradientResult:
    """Central-difference gradients of g, checked against a doubled step.

    Steps are ``rel_step * max(1, |x|)`` in x and ``rel_step * max(1, |v|)``
    in v. A component is flagged when the two estimates differ by more
    than 50% of the larger one (and by more than the integrator noise).
    """
    x = np.atleast_2d(np.asarray(x, float))
    v = np.atleast_2d(np.asarray(v, float))
    N = x.shape[0]
    hx = rel_step * np.maximum(1.0, np.linalg.norm(x, axis=1))
    hv = rel_step * np.maximum(1.0, np.linalg.norm(v, axis=1))
    eye = np.eye(3)
    px, pv = [], []
    for scale in (1.0, 2.0):
        for sgn in (1.0, -1.0):
            for j in range(3):
                px.append((x + sgn * scale * hx[:, None] * eye[j], v))
                pv.append((x, v + sgn * scale * hv[:, None] * eye[j]))
    allx = np.concatenate([p[0] for p in px + pv], 0)
    allv = np.concatenate([p[1] for p in px + pv], 0)
    bounds = apriori_bounds(species_data, field, t) if t > 0 and not field.is_zero else None
    g = evaluate_g(t, allx, allv, field, species_data, tol, bounds, backend)
    g = g.reshape(2, 12, N)  # (x|v family, scale*sign*j, N)

    def central(fam, scale_idx, h):
        blk = g[fam, 6 * scale_idx: 6 * scale_idx + 6]
        return ((blk[:3] - blk[3:6]) / (2.0 * (scale_idx + 1) * h[None, :])).T

    gx1, gx2 = central(0, 0, hx), central(0, 1, hx)
    gv1, gv2 = central(1, 0, hv), central(1, 1, hv)
    noise = 10 * tol / rel_step

    def bad(a, b):
        big = np.maximum(np.abs(a), np.abs(b))
        return (np.abs(a - b) > 0.5 * big) & (big > noise)

    flagged = np.any(bad(gx1, gx2), 1) | np.any(bad(gv1, gv2), 1)
    if np.any(flagged):
        logger.warning("%d of %d gradient points failed the Richardson check", flagged.sum(), N)
    return GradientResult(gx1, gv1, flagged)
