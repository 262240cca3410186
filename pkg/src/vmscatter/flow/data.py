"""Closed-form initial data: polynomial bump profiles per species."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import beta as beta_fn

from ..relkin import SpeciesParams, speed_of

logger = logging.getLogger(__name__)


def bump_shape(s, power):
    """``(1 - s^2)^p`` on ``[0, 1)``, zero beyond."""
    s = np.asarray(s, dtype=float)
    out = np.clip(1.0 - s * s, 0.0, None)
    return out ** power


def bump_ball_integral(power: int) -> float:
    """Integral of ``bump_shape(|z|)`` over the unit ball of R^3."""
    return 2.0 * np.pi * beta_fn(1.5, power + 1.0)


@dataclass(frozen=True)
class BumpProfile:
    """Separable bump ``a * b(|x-xc|/Rx) * b(|v-vc|/Rv)`` in physical momentum.

    With ``power >= 2`` the profile is C^1 with compact support; the
    default ``power=4`` vanishes to fourth order at the boundary, which
    keeps product quadratures convergent at high order.
    """

    amplitude: float
    x_center: tuple = (0.0, 0.0, 0.0)
    x_radius: float = 1.0
    v_center: tuple = (0.0, 0.0, 0.0)
    v_radius: float = 1.0
    power: int = 4

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("profile amplitude must be non-negative")
        if self.x_radius <= 0 or self.v_radius <= 0:
            raise ValueError("profile radii must be positive")
        if int(self.power) != self.power or self.power < 2:
            raise ValueError("power must be an integer >= 2 for a C^1 profile")

    @property
    def xc(self):
        return np.asarray(self.x_center, dtype=float)

    @property
    def vc(self):
        return np.asarray(self.v_center, dtype=float)

    def value(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        sx = np.linalg.norm(x - self.xc, axis=-1) / self.x_radius
        sv = np.linalg.norm(v - self.vc, axis=-1) / self.v_radius
        return self.amplitude * bump_shape(sx, self.power) * bump_shape(sv, self.power)

    def grad(self, x, v):
        """Analytic ``(grad_x f, grad_v f)``."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        p = self.power
        dx = (x - self.xc) / self.x_radius
        dv = (v - self.vc) / self.v_radius
        ax = np.clip(1.0 - np.einsum("...i,...i->...", dx, dx), 0.0, None)
        av = np.clip(1.0 - np.einsum("...i,...i->...", dv, dv), 0.0, None)
        bx, bv = ax ** p, av ** p
        # d/dz (1-|z|^2)^p = -2p z (1-|z|^2)^(p-1)
        gx = (-2.0 * p * ax ** (p - 1) / self.x_radius)[..., None] * dx
        gv = (-2.0 * p * av ** (p - 1) / self.v_radius)[..., None] * dv
        a = self.amplitude
        return a * gx * bv[..., None], a * bx[..., None] * gv

    def rescaled(self, mass: float) -> "BumpProfile":
        """Profile of ``f^alpha(x, u) = f_alpha(x, m u)``."""
        return BumpProfile(self.amplitude, self.x_center, self.x_radius,
                           tuple(self.vc / mass), self.v_radius / mass, self.power)

    def total_mass(self) -> float:
        """``int int f dx dv`` in physical momentum."""
        ib = bump_ball_integral(self.power)
        return self.amplitude * ib * ib * self.x_radius ** 3 * self.v_radius ** 3

    def spatial_marginal(self, v):
        """``int f(x, v) dx`` as a function of physical momentum."""
        ib = bump_ball_integral(self.power)
        sv = np.linalg.norm(np.asarray(v, float) - self.vc, axis=-1) / self.v_radius
        return self.amplitude * ib * self.x_radius ** 3 * bump_shape(sv, self.power)

    def x_extent(self) -> float:
        return float(np.linalg.norm(self.xc) + self.x_radius)

    def v_extent(self) -> float:
        return float(np.linalg.norm(self.vc) + self.v_radius)

    def speed_ball(self, n: int = 64):
        """Bounding ball ``(c_hat, rho_hat)`` of ``{vhat(u) : u in momentum support}``.

        Uses unit mass. ``vhat`` is 1-Lipschitz and the extreme points lie on
        the boundary sphere, which is scanned densely (radius inflated by 1%).
        """
        vc, rv = self.vc, self.v_radius
        ch = vc / np.sqrt(1.0 + vc @ vc)
        mu = np.cos(np.linspace(0.0, np.pi, n))
        ph = np.linspace(0.0, 2.0 * np.pi, 2 * n, endpoint=False)
        st = np.sqrt(1.0 - mu ** 2)
        dirs = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)),
                         np.repeat(mu[:, None], ph.size, 1)], -1).reshape(-1, 3)
        u = vc + rv * dirs
        uh = u / np.sqrt(1.0 + np.einsum("ij,ij->i", u, u))[:, None]
        rho = np.max(np.linalg.norm(uh - ch, axis=1))
        return ch, min(1.01 * rho, float(rv))


@dataclass
class SpeciesData:
    species: SpeciesParams
    profile: BumpProfile

    @property
    def unit_profile(self) -> BumpProfile:
        """Profile in rescaled momentum ``u = v / m``."""
        return self.profile.rescaled(self.species.mass)

    @property
    def beta_hat(self) -> float:
        """A-priori speed bound of the initial momentum support."""
        return speed_of(self.unit_profile.v_extent())


@dataclass
class InitialData:
    """Per-species bump profiles with optional initial fields.

    ``E0``, ``B0`` and their derivatives are vectorized callables of
    ``y`` with shape ``(..., 3)``; ``None`` means identically zero.
    """

    species: Sequence[SpeciesData]
    E0: Optional[Callable] = None
    B0: Optional[Callable] = None
    gradE0: Optional[Callable] = None
    gradB0: Optional[Callable] = None
    curlE0: Optional[Callable] = None
    curlB0: Optional[Callable] = None
    neutrality_tol: float = 1e-8
    require_neutral: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.species = list(self.species)
        for sd in self.species:
            k = sd.species.support_radius
            if sd.profile.x_extent() > k * (1 + 1e-12) or sd.profile.v_extent() > k * (1 + 1e-12):
                raise ValueError(f"profile of {sd.species.label} exceeds support radius {k}")
        q = self.net_charge()
        scale = max(1.0, sum(abs(sd.species.charge) * sd.profile.total_mass() for sd in self.species))
        if self.require_neutral and abs(q) > self.neutrality_tol * scale:
            raise ValueError(f"initial data is not neutral: net charge {q:.3e}")

    def net_charge(self) -> float:
        return float(sum(sd.species.charge * sd.profile.total_mass() for sd in self.species))

    @property
    def has_fields(self) -> bool:
        return self.E0 is not None or self.B0 is not None

    @property
    def k(self) -> float:
        return max(sd.species.support_radius for sd in self.species) if self.species else 1.0

    @property
    def beta_hat_max(self) -> float:
        return max((sd.beta_hat for sd in self.species), default=0.0)


def default_initial_data(amplitude=1.0, drift=0.3, v_radius=0.6, x_radius=1.0,
                         k=1.0, power=4, mass=1.0, charge=1.0) -> InitialData:
    """Two opposite-charge species with identical spatial bumps.

    The momentum bumps are mirrored (``+drift`` and ``-drift`` along e1), so
    the charge density vanishes pointwise while the current does not.
    """
    d = np.array([drift, 0.0, 0.0])
    out = []
    for sign, label in ((1.0, "positive"), (-1.0, "negative")):
        sp = SpeciesParams(mass=mass, charge=sign * charge, support_radius=k, label=label)
        prof = BumpProfile(amplitude, (0.0, 0.0, 0.0), x_radius, tuple(sign * d), v_radius, power)
        out.append(SpeciesData(sp, prof))
    return InitialData(out)
