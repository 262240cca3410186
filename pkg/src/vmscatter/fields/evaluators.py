"""Field evaluators: the (t, x) -> (E, B, grad E, grad B) contract.

All evaluators are vectorized: ``values(t, x)`` and ``evaluate(t, x)``
accept ``x`` of shape ``(N, 3)`` with ``t`` scalar or of shape ``(N,)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import _pykernels as pk

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FieldSample:
    E: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class FieldGradSample:
    dE: np.ndarray
    dB: np.ndarray


@dataclass(frozen=True)
class DecayBudget:
    """Constants of the field decay hypothesis."""

    C0: float
    k: float

    def __post_init__(self):
        if not (self.C0 > 0 and self.k > 0):
            raise ValueError("decay budget constants must be positive")


class FieldEvaluator:
    """Base class; subclasses implement ``_eval(t, x, grad)``."""

    kind = "generic"

    def __init__(self, budget: DecayBudget):
        self.budget = budget

    @property
    def is_zero(self) -> bool:
        return False

    def _eval(self, t, x, grad):
        raise NotImplementedError

    @staticmethod
    def _prep(t, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        if np.any(t < 0):
            raise ValueError("fields are only defined for t >= 0")
        return t, x, single

    def values(self, t, x):
        t, x, single = self._prep(t, x)
        E, B = self._eval(t, x, False)
        return (E[0], B[0]) if single else (E, B)

    def evaluate(self, t, x):
        t, x, single = self._prep(t, x)
        E, B, dE, dB = self._eval(t, x, True)
        if single:
            return FieldSample(E[0], B[0]), FieldGradSample(dE[0], dB[0])
        return FieldSample(E, B), FieldGradSample(dE, dB)

    def __call__(self, t, x):
        return self.evaluate(t, x)

    def in_support(self, t, x):
        x = np.atleast_2d(np.asarray(x, float))
        return np.linalg.norm(x, axis=1) <= np.asarray(t, float) + self.budget.k


class ZeroField(FieldEvaluator):
    kind = "zero"

    def __init__(self, k: float = 1.0):
        super().__init__(DecayBudget(1.0, k))

    @property
    def is_zero(self):
        return True

    def _eval(self, t, x, grad):
        n = x.shape[0]
        if grad:
            return np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3, 3)), np.zeros((n, 3, 3))
        return np.zeros((n, 3)), np.zeros((n, 3))


def _unit(d):
    d = np.asarray(d, dtype=float)
    n = np.linalg.norm(d)
    if not np.isfinite(n) or n == 0:
        raise ValueError("field direction must be a nonzero finite vector")
    return d / n


class BumpField(FieldEvaluator):
    """``E = A chi(|x|/(t+k)) d_E / ((t+|x|+2k)(t-|x|+2k))``, B alike along ``d_B``.

    ``chi`` is a C^infinity cutoff, 1 on [0, 1/2] and 0 on [1, inf), so the
    characteristic right-hand side is smooth and integrators keep their order.
    The attached budget constant is measured once by a dense scan of both
    audit ratios (inflated by 1%), so the field passes its own audit.
    """

    kind = "bump"

    def __init__(self, amplitude: float, k: float = 1.0, dir_E=(1, 0, 0), dir_B=(0, 1, 0)):
        self.amplitude = float(amplitude)
        self.k = float(k)
        self.dE = _unit(dir_E)
        self.dB = _unit(dir_B)
        if abs(self.dE @ self.dB) > 1e-12:
            raise ValueError("the electric and magnetic directions must be orthogonal")
        c = max(abs(self.amplitude), 1e-300) * bump_budget_constant(self.k)
        super().__init__(DecayBudget(c, self.k))

    @property
    def is_zero(self):
        return self.amplitude == 0.0

    def _eval(self, t, x, grad):
        return pk.bump_field(t, x, self.amplitude, self.k, self.dE, self.dB, grad)

    def ray_limit(self, v):
        """``lim t^2 (E, B)(t, x + t vhat)`` for unit-mass momenta ``v`` (N,3)."""
        v = np.atleast_2d(np.asarray(v, float))
        v2 = np.einsum("ij,ij->i", v, v)
        sp = np.sqrt(v2 / (1.0 + v2))
        chi, _ = pk.smooth_cutoff(sp)
        a = self.amplitude * chi * (1.0 + v2)
        return a[:, None] * self.dE, a[:, None] * self.dB

    def scaled(self, factor: float) -> "BumpField":
        """Same field multiplied by ``factor`` but keeping the original budget."""
        out = BumpField(self.amplitude * factor, self.k, self.dE, self.dB)
        out.budget = self.budget
        return out


_BUDGET_CACHE: dict = {}


def _ratios(field: FieldEvaluator, t, x, C0, k):
    S, G = field.evaluate(t, x)
    r = np.linalg.norm(x, axis=1)
    a = t + r + 2 * k
    b = t - r + 2 * k
    val = np.sqrt(np.sum(S.E ** 2, 1) + np.sum(S.B ** 2, 1))
    gra = np.sqrt(np.sum(G.dE ** 2, (1, 2)) + np.sum(G.dB ** 2, (1, 2)))
    lg = np.maximum(np.log(a), np.log(2.0))
    return val * a * b / C0, gra * a * b * b / (C0 * lg)


def bump_budget_constant(k: float) -> float:
    """Sup of both audit ratios for the unit-amplitude bump, times 1.01."""
    key = round(float(k), 12)
    if key in _BUDGET_CACHE:
        return _BUDGET_CACHE[key]
    unit = FieldEvaluator.__new__(BumpField)
    unit.amplitude, unit.k = 1.0, float(k)
    unit.dE, unit.dB = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    ts = np.concatenate([np.linspace(0, 5, 101), np.geomspace(5, 2000, 200)])
    s = np.linspace(0.0, 1.0, 801)
    T, S = np.meshgrid(ts, s, indexing="ij")
    t = T.ravel()
    x = np.zeros((t.size, 3))
    x[:, 0] = S.ravel() * (t + k)
    rv, rg = _ratios(unit, t, x, 1.0, k)
    c = 1.01 * max(rv.max(), rg.max())
    _BUDGET_CACHE[key] = c
    return c


# ---------------------------------------------------------------- tabulated

class TabulatedField(FieldEvaluator):
    """Space-time table of (E, B): trilinear in space, linear in time.

    ``data`` has shape ``(n_t, n, n, n, 6)`` on the cube ``[-L, L]^3``;
    values outside the cube are zero. Gradients are those of the
    piecewise-trilinear interpolant.
    """

    kind = "tabulated"

    def __init__(self, times, half_width, data, budget: DecayBudget, meta=None):
        self.times = np.asarray(times, dtype=float)
        self.L = float(half_width)
        self.data = np.ascontiguousarray(data, dtype=float)
        if self.data.ndim != 5 or self.data.shape[-1] != 6 or self.data.shape[0] != self.times.size:
            raise ValueError("tabulated data must have shape (n_t, n, n, n, 6)")
        self.n = self.data.shape[1]
        self.h = 2 * self.L / (self.n - 1)
        self.meta = dict(meta or {})
        super().__init__(budget)

    @property
    def is_zero(self):
        return not np.any(self.data)

    def grid_axis(self):
        return np.linspace(-self.L, self.L, self.n)

    def _spatial(self, ti, x, grad):
        g = (x + self.L) / self.h
        inside = np.all((g >= 0) & (g <= self.n - 1), axis=1)
        i0 = np.clip(np.floor(g).astype(np.int64), 0, self.n - 2)
        f = np.clip(g - i0, 0.0, 1.0)
        ti = np.broadcast_to(np.asarray(ti, np.int64), (x.shape[0],))
        val = np.zeros((x.shape[0], 6))
        dval = np.zeros((x.shape[0], 6, 3))
        for cx in (0, 1):
            wx = f[:, 0] if cx else 1 - f[:, 0]
            dwx = (1.0 if cx else -1.0) / self.h
            for cy in (0, 1):
                wy = f[:, 1] if cy else 1 - f[:, 1]
                dwy = (1.0 if cy else -1.0) / self.h
                for cz in (0, 1):
                    wz = f[:, 2] if cz else 1 - f[:, 2]
                    dwz = (1.0 if cz else -1.0) / self.h
                    c = self.data[ti, i0[:, 0] + cx, i0[:, 1] + cy, i0[:, 2] + cz]
                    val += (wx * wy * wz)[:, None] * c
                    if grad:
                        dval[:, :, 0] += (dwx * wy * wz)[:, None] * c
                        dval[:, :, 1] += (wx * dwy * wz)[:, None] * c
                        dval[:, :, 2] += (wx * wy * dwz)[:, None] * c
        val[~inside] = 0.0
        dval[~inside] = 0.0
        return val, dval

    def _eval(self, t, x, grad):
        tt = np.clip(t, self.times[0], self.times[-1])
        j = np.clip(np.searchsorted(self.times, tt, side="right") - 1, 0, max(self.times.size - 2, 0))
        if self.times.size == 1:
            v, dv = self._spatial(np.zeros(x.shape[0], np.int64), x, grad)
        else:
            lam = (tt - self.times[j]) / (self.times[j + 1] - self.times[j])
            v0, d0 = self._spatial(j, x, grad)
            v1, d1 = self._spatial(j + 1, x, grad)
            v = (1 - lam)[:, None] * v0 + lam[:, None] * v1
            dv = (1 - lam)[:, None, None] * d0 + lam[:, None, None] * d1
        if grad:
            return v[:, :3], v[:, 3:], dv[:, :3], dv[:, 3:]
        return v[:, :3], v[:, 3:]


def prescribed_field(preset: str, **params) -> FieldEvaluator:
    """Build a prescribed field evaluator: ``zero`` or ``bump``."""
    if preset == "zero":
        return ZeroField(params.get("k", 1.0))
    if preset == "bump":
        amp = params.get("amplitude", params.get("C0", 1.0))
        return BumpField(amp, params.get("k", 1.0), params.get("dir_E", (1, 0, 0)),
                         params.get("dir_B", (0, 1, 0)))
    raise ValueError(f"unknown field preset {preset!r}")


# ---------------------------------------------------------------- audit

@dataclass
class HypothesisReport:
    max_ratio_value: float
    max_ratio_grad: float
    passed: bool
    n_points: int


def audit_grid(T=100.0, k=1.0, n_t=100, n_r=100, seed=0):
    """Deterministic (t, x) audit points with ``|x| <= t + k``; ``n_t * n_r`` points.

    Radii are uniform in ``[0, t + k]``, directions follow a fixed
    golden-angle spiral so that anisotropic fields are probed too.
    """
    ts = np.linspace(0.0, T, n_t)
    fr = np.linspace(0.0, 1.0, n_r)
    tt, ff = np.meshgrid(ts, fr, indexing="ij")
    tt, ff = tt.ravel(), ff.ravel()
    i = np.arange(tt.size)
    z = 1.0 - 2.0 * ((i * 0.6180339887498949 + 0.5 * seed) % 1.0)
    ph = i * 2.399963229728653
    st = np.sqrt(1 - z * z)
    dirs = np.stack([st * np.cos(ph), st * np.sin(ph), z], 1)
    x = dirs * (ff * (tt + k))[:, None]
    return tt, x


def verify_hypothesis(field: FieldEvaluator, audit=None, budget: DecayBudget | None = None) -> HypothesisReport:
    """Audit the decay hypothesis: both normalized ratios must stay <= 1."""
    budget = budget or field.budget
    if audit is None:
        audit = audit_grid(k=budget.k)
    t, x = audit
    rv, rg = _ratios(field, np.asarray(t, float), np.asarray(x, float), budget.C0, budget.k)
    mv, mg = float(np.max(rv, initial=0.0)), float(np.max(rg, initial=0.0))
    return HypothesisReport(mv, mg, bool(mv <= 1.0 and mg <= 1.0), int(np.size(t)))


def fitted_budget(field: FieldEvaluator, audit, k=None) -> DecayBudget:
    """Smallest constant for which ``field`` passes the audit (at least tiny positive)."""
    k = field.budget.k if k is None else k
    t, x = audit
    rv, rg = _ratios(field, np.asarray(t, float), np.asarray(x, float), 1.0, k)
    return DecayBudget(max(float(max(rv.max(initial=0), rg.max(initial=0))), 1e-300), k)
