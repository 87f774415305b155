"""Log-polar coordinate geometry.

Conventions used throughout the package (defined here, once):

* Cartesian points are ``(x, y)`` in source-image pixels: ``x`` indexes
  columns, ``y`` indexes rows, and the y-axis points *down* the image.
  ``atan2`` is taken of ``(y - y_c, x - x_c)``, so angles grow in the
  row-increasing ("clockwise on screen") direction.
* Log-polar points are ``(phi, rho)``: ``phi`` in radians, normalised to
  ``[0, 2*pi)``; ``rho`` is the natural log of the radius in pixels.
* Log-polar rasters put ``phi`` on rows and ``rho`` on columns, so the
  leftmost column of a patch is the fovea (``r = r_min``) and the
  rightmost column the periphery (``r = r_max``).
* All public angles are radians; degrees appear only in test fixtures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


class CartesianPoint(NamedTuple):
    x: float
    y: float


class LogPolarPoint(NamedTuple):
    phi: float
    rho: float


@dataclass(frozen=True)
class GridSpec:
    """Destination raster of a log-polar patch.

    ``h_prime`` rows sweep the angle, ``w_prime`` columns sweep the log
    radius from ``log(r_min)`` to ``log(r_max)`` inclusive.
    """

    h_prime: int
    w_prime: int
    r_min: float
    r_max: float

    def __post_init__(self) -> None:
        if self.h_prime < 1:
            raise ValueError(f"h_prime must be >= 1, got {self.h_prime}")
        if self.w_prime < 2:
            raise ValueError(f"w_prime must be >= 2, got {self.w_prime}")
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError(
                f"need 0 < r_min < r_max, got r_min={self.r_min}, r_max={self.r_max}"
            )


def wrap_angle(phi: float) -> float:
    """Normalise an angle to ``[0, 2*pi)``."""
    phi = phi % TWO_PI
    # Negative inputs a hair below zero can round the modulo up to 2*pi.
    if phi >= TWO_PI:
        phi = 0.0
    return phi


def to_log_polar(p: CartesianPoint, pole: CartesianPoint) -> LogPolarPoint:
    """Map a Cartesian point to (phi, rho) about ``pole``.

    Raises ValueError at the pole itself, where the log radius diverges.
    """
    dx = p[0] - pole[0]
    dy = p[1] - pole[1]
    r = math.hypot(dx, dy)
    if r == 0.0:
        raise ValueError("log-polar transform is undefined at the pole (r = 0)")
    return LogPolarPoint(wrap_angle(math.atan2(dy, dx)), math.log(r))


def from_log_polar(q: LogPolarPoint, pole: CartesianPoint) -> CartesianPoint:
    """Inverse of :func:`to_log_polar`: ``pole + e^rho * (cos phi, sin phi)``."""
    phi, rho = q
    if not (math.isfinite(phi) and math.isfinite(rho)):
        raise ValueError(f"non-finite log-polar point ({phi}, {rho})")
    r = math.exp(rho)
    return CartesianPoint(r * math.cos(phi) + pole[0], r * math.sin(phi) + pole[1])


def grid_axes(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Row angles and column log-radii of the sampling raster.

    Returns ``(phi, rho)`` with shapes ``(h_prime,)`` and ``(w_prime,)``:
    ``phi[i] = i * 2*pi / h_prime`` and ``rho`` uniform from ``log(r_min)``
    to ``log(r_max)`` with both endpoints hit exactly.
    """
    phi = np.arange(spec.h_prime, dtype=np.float64) * (TWO_PI / spec.h_prime)
    rho = np.linspace(math.log(spec.r_min), math.log(spec.r_max), spec.w_prime)
    return phi, rho


def make_grid(spec: GridSpec) -> List[List[LogPolarPoint]]:
    """The destination grid as nested rows of (phi, rho) points."""
    phi, rho = grid_axes(spec)
    return [[LogPolarPoint(p, r) for r in rho] for p in phi]


def rotate_point(p: CartesianPoint, pole: CartesianPoint, angle: float) -> CartesianPoint:
    """Rotate ``p`` about ``pole`` by ``angle`` radians (phi-increasing sense)."""
    dx = p[0] - pole[0]
    dy = p[1] - pole[1]
    c = math.cos(angle)
    s = math.sin(angle)
    return CartesianPoint(pole[0] + dx * c - dy * s, pole[1] + dx * s + dy * c)


def scale_point(p: CartesianPoint, pole: CartesianPoint, c: float) -> CartesianPoint:
    """Scale ``p`` about ``pole`` by factor ``c > 0``."""
    if not c > 0.0:
        raise ValueError(f"scale factor must be > 0, got {c}")
    return CartesianPoint(pole[0] + c * (p[0] - pole[0]), pole[1] + c * (p[1] - pole[1]))
