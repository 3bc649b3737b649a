"""Equirectangular grid geometry and spherical/Cartesian conversions.

Axis convention: y is up, latitude ``theta`` is measured from +y, longitude
``phi`` is measured from +z towards +x::

    x = r sin(phi) sin(theta)
    y = r cos(theta)
    z = r cos(phi) sin(theta)

Pixel ``(u, v)`` has its center at ``phi = (u + 0.5) * 2pi / w`` and
``theta = (v + 0.5) * pi / h``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


class Placement(str, enum.Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"


@dataclass(frozen=True)
class ErpGrid:
    """Full-sphere equirectangular raster of ``width x height`` pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"grid must be at least 2 pixels per axis, got {self.width}x{self.height}")
        if self.width != 2 * self.height:
            raise ValueError(f"ERP grid requires width == 2*height, got {self.width}x{self.height}")

    @classmethod
    def from_string(cls, text: str) -> "ErpGrid":
        """Parse ``"WxH"``."""
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError as exc:
            raise ValueError(f"bad grid spec {text!r}: {exc}") from None

    def __str__(self):
        return f"{self.width}x{self.height}"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def ang_res_lon(self) -> float:
        return TWO_PI / self.width

    @property
    def ang_res_lat(self) -> float:
        return np.pi / self.height

    @property
    def theta_min(self) -> float:
        # clamp bound for latitudes that leave the grid; keeps 1/sin(theta) bounded
        return self.ang_res_lat / 4.0

    @cached_property
    def lon(self) -> np.ndarray:
        """Pixel-center longitudes, shape ``(w,)``."""
        return (np.arange(self.width) + 0.5) * self.ang_res_lon

    @cached_property
    def lat(self) -> np.ndarray:
        """Pixel-center latitudes, shape ``(h,)``."""
        return (np.arange(self.height) + 0.5) * self.ang_res_lat

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel ``(phi, theta)`` rasters of shape ``(h, w)``."""
        phi, theta = np.meshgrid(self.lon, self.lat)
        return phi, theta

    def directions(self) -> np.ndarray:
        """Unit ray directions for every pixel center, shape ``(h, w, 3)`` (read-only)."""
        return self._directions

    @cached_property
    def _directions(self) -> np.ndarray:
        phi, theta = self.angles()
        out = np.stack(sph_to_cart(1.0, phi, theta), axis=-1)
        out.setflags(write=False)
        return out

    def clamp_lat(self, theta):
        return np.clip(theta, self.theta_min, np.pi - self.theta_min)


def wrap_lon(phi):
    """Normalize longitude into ``[0, 2pi)``."""
    out = np.mod(phi, TWO_PI)
    # np.mod can round up to exactly 2pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def pix_to_sph(u, v, grid: ErpGrid):
    """Map fractional pixel coordinates to ``(phi, theta)``.

    ``u`` wraps modulo the width; ``v`` must lie in ``[0, h)``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or np.any(v >= grid.height):
        raise ValueError(f"row coordinate outside [0, {grid.height})")
    u = np.mod(u, grid.width)
    phi = wrap_lon((u + 0.5) * grid.ang_res_lon)
    theta = (v + 0.5) * grid.ang_res_lat
    return phi, theta


def sph_to_pix(phi, theta, grid: ErpGrid):
    """Inverse of :func:`pix_to_sph`; ``u`` lands in ``[-0.5, w - 0.5)``."""
    u = np.asarray(phi, dtype=np.float64) / grid.ang_res_lon - 0.5
    v = np.asarray(theta, dtype=np.float64) / grid.ang_res_lat - 0.5
    u = np.where(u < -0.5, u + grid.width, u)
    return u, v


def sph_to_cart(r, phi, theta):
    r, phi, theta = (np.asarray(a, dtype=np.float64) for a in (r, phi, theta))
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(phi)) and np.all(np.isfinite(theta))):
        raise ValueError("non-finite spherical coordinate")
    st = np.sin(theta)
    return r * np.sin(phi) * st, r * np.cos(theta), r * np.cos(phi) * st


def cart_to_sph(x, y, z):
    """Return ``(r, phi, theta)``; longitude is 0 on the y axis by convention."""
    x, y, z = (np.asarray(a, dtype=np.float64) for a in (x, y, z))
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0) or not np.all(np.isfinite(r)):
        raise ValueError("cannot convert zero-length or non-finite vector")
    phi = wrap_lon(np.arctan2(x, z))
    theta = np.arccos(np.clip(y / r, -1.0, 1.0))
    return r, phi, theta


def coord_feature_maps(grid: ErpGrid) -> tuple[np.ndarray, np.ndarray]:
    """CoordConv-style grid coordinate maps normalized to ``[-1, 1]``."""
    u = np.linspace(-1.0, 1.0, grid.width)
    v = np.linspace(-1.0, 1.0, grid.height)
    return np.broadcast_to(u, grid.shape).copy(), np.broadcast_to(v[:, None], grid.shape).copy()


@dataclass(frozen=True)
class AttentionMask:
    grid: ErpGrid
    values: np.ndarray
    placement: Placement

    @property
    def complement(self) -> np.ndarray:
        return 1.0 - self.values


def attention_mask(grid: ErpGrid, placement) -> AttentionMask:
    """Spherical attention weights that vanish towards the stereo singularities.

    Vertical rigs use ``|sin theta|``; horizontal rigs use
    ``|sin phi| * |sin theta|``.
    """
    placement = Placement(placement)
    phi, theta = grid.angles()
    values = np.abs(np.sin(theta))
    if placement is Placement.HORIZONTAL:
        values = np.abs(np.sin(phi)) * values
    values.setflags(write=False)
    return AttentionMask(grid, values, placement)
