"""Envelope constants for decay series ``y(t) <~ C log^p(2+t) / (2+t)^q``.

The envelope checks verify upper bounds, so a series is accepted when
its constant does not grow along the series: the stability ratio
``C(first half) / C(second half)`` must not fall below the lower end of
the configured band. A ratio above the upper end means the measured
series decays faster than the envelope (a non-sharp bound) and is
reported, not failed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ("check_name", "p", "q", "C", "stability_ratio", "n_points")


def envelope(t, p, q):
    t = np.asarray(t, float)
    return np.log(2.0 + t) ** p / (2.0 + t) ** q


@dataclass
class RateFit:
    p: float
    q: float
    C: float
    residual: float
    stability_ratio: float
    n_points: int
    mode: str = "envelope"
    C_first: float = 0.0
    C_second: float = 0.0
    name: str = ""

    def stable(self, lo: float, hi: float | None = None) -> bool:
        """Constant does not grow by more than ``1/lo``; also bounded by ``hi`` if given."""
        ok = self.stability_ratio >= lo
        if hi is not None:
            ok = ok and self.stability_ratio <= hi
        return bool(ok)

    def sharp(self, lo: float, hi: float) -> bool:
        return lo <= self.stability_ratio <= hi

    def as_row(self):
        return [self.name, repr(float(self.p)), repr(float(self.q)), repr(float(self.C)),
                repr(float(self.stability_ratio)), str(int(self.n_points))]


def _constant(t, y, p, q, mode):
    e = envelope(t, p, q)
    if mode == "envelope":
        return float(np.max(y / e)), e
    if mode == "fit":
        return float(np.sum(y * e) / np.sum(e * e)), e
    raise ValueError(f"unknown rate-fit mode {mode!r}")


def rate_fit(t, y, p: float, q: float, mode: str = "envelope", name: str = "") -> RateFit:
    """Constant of ``y ~ C log^p(2+t)/(2+t)^q`` and its stability across the series.

    ``mode='envelope'`` takes ``C = max_j y_j / env(t_j)``; ``mode='fit'``
    is the least-squares constant. The residual is
    ``||y - C env|| / ||y||``. The series is split into a first and a
    second half (sharing the middle point for odd lengths).
    """
    t = np.asarray(t, float)
    y = np.abs(np.asarray(y, float))
    if t.ndim != 1 or t.shape != y.shape:
        raise ValueError("t and y must be 1-D arrays of equal length")
    if t.size < 3:
        raise ValueError("a rate fit needs at least 3 points")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be increasing")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    C, e = _constant(t, y, p, q, mode)
    ny = np.linalg.norm(y)
    resid = float(np.linalg.norm(y - C * e) / ny) if ny > 0 else 0.0
    n = t.size
    a, b = slice(0, (n + 1) // 2), slice(n // 2, n)
    c1, _ = _constant(t[a], y[a], p, q, mode)
    c2, _ = _constant(t[b], y[b], p, q, mode)
    if c2 > 0:
        ratio = c1 / c2
    else:
        ratio = 1.0 if c1 == 0 else np.inf
    return RateFit(float(p), float(q), C, resid, float(ratio), int(n), mode, c1, c2, name)


def write_rate_csv(fits, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for f in fits:
            w.writerow(f.as_row())


def read_rate_csv(path):
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r)) != CSV_COLUMNS:
            raise ValueError("unexpected rate CSV columns")
        for row in r:
            out.append(dict(check_name=row[0], p=float(row[1]), q=float(row[2]), C=float(row[3]),
                            stability_ratio=float(row[4]), n_points=int(row[5])))
    return out

