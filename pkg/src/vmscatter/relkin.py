"""Relativistic kinematics in natural units.

Momenta are handled either per particle (shape ``(3,)``) or in batches
(shape ``(..., 3)``); every function broadcasts over the leading axes.
A species of mass ``m`` is mapped to unit mass by ``v -> v / m`` so that
``vhat_alpha(p) = vhat(p / m)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class KinematicsDomainError(ValueError):
    """Raised when an argument lies outside the domain of a map."""


@dataclass(frozen=True)
class SpeciesParams:
    """Mass, charge and initial support radius of one plasma species."""

    mass: float
    charge: float
    support_radius: float
    label: str = "species"

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not np.isfinite(self.charge) or self.charge == 0:
            raise ValueError(f"charge must be nonzero, got {self.charge}")
        if not (np.isfinite(self.support_radius) and self.support_radius > 0):
            raise ValueError(f"support_radius must be positive, got {self.support_radius}")

    @property
    def charge_to_mass(self) -> float:
        return self.charge / self.mass

    @property
    def rescaled_support(self) -> float:
        """Momentum support radius of the rescaled density, ``k / m``."""
        return self.support_radius / self.mass


@dataclass(frozen=True)
class KinematicPoint:
    v: np.ndarray
    v0: np.ndarray
    vhat: np.ndarray


def _finite(v, name="v"):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (3,):
        raise ValueError(f"{name} must have a trailing axis of length 3, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise KinematicsDomainError(f"{name} contains non-finite components")
    return v


def energy(v, mass=1.0):
    """``sqrt(m^2 + |v|^2)``; equals ``<v>`` for unit mass."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(mass * mass + np.einsum("...i,...i->...", v, v))


def vhat(v, mass=1.0):
    """Relativistic speed ``v / sqrt(m^2 + |v|^2)``."""
    v = np.asarray(v, dtype=float)
    return v / energy(v, mass)[..., None]


def kinematics(v) -> KinematicPoint:
    v = _finite(v)
    v0 = energy(v)
    return KinematicPoint(v=v, v0=v0, vhat=v / v0[..., None])


def check_map(u):
    """Inverse of ``vhat`` on the open unit ball: ``u / sqrt(1 - |u|^2)``.

    The square-root form is the one for which ``vhat(check_map(u)) == u``.
    """
    u = _finite(u, "u")
    u2 = np.einsum("...i,...i->...", u, u)
    if np.any(u2 >= 1.0):
        raise KinematicsDomainError("check_map is only defined for |u| < 1")
    return u / np.sqrt(1.0 - u2)[..., None]


def jacobian_hat(v):
    """Differential of ``v -> vhat(v)`` and its determinant.

    ``d vhat_i / d v_j = (delta_ij - vhat_i vhat_j) / <v>``, whose
    determinant is ``<v>^-5``.
    """
    v = _finite(v)
    v0 = energy(v)
    u = v / v0[..., None]
    eye = np.broadcast_to(np.eye(3), u.shape[:-1] + (3, 3))
    mat = (eye - u[..., :, None] * u[..., None, :]) / v0[..., None, None]
    return mat, v0 ** -5.0


def species_rescale(species: SpeciesParams, v, inverse: bool = False):
    """Map a unit-mass momentum to the physical one (``m v``), or back."""
    v = _finite(v)
    return v / species.mass if inverse else v * species.mass


def speed_of(radius: float) -> float:
    """``|vhat|`` for a momentum of the given norm."""
    return radius / np.sqrt(1.0 + radius * radius)
