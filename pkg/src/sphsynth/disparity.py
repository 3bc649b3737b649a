"""First-order spherical disparity for horizontal (x) and vertical (y) baselines."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .sphere import ErpGrid, Placement, wrap_lon


class Axis(str, enum.Enum):
    X = "x"
    Y = "y"

    @property
    def placement(self) -> Placement:
        return Placement.HORIZONTAL if self is Axis.X else Placement.VERTICAL


@dataclass(frozen=True)
class BaselineSpec:
    """Stereo offset along one axis.

    ``length`` is the signed position of the target camera relative to the
    source camera, so the up view of a rig with spacing ``b`` is
    ``BaselineSpec("y", b)`` and the right view is ``BaselineSpec("x", b)``.
    """

    axis: Axis
    length: float

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        if not np.isfinite(self.length):
            raise ValueError("baseline length must be finite")

    def vector(self) -> np.ndarray:
        out = np.zeros(3)
        out[0 if self.axis is Axis.X else 1] = self.length
        return out

    def negated(self) -> "BaselineSpec":
        return BaselineSpec(self.axis, -self.length)


@dataclass(frozen=True)
class DisparityField:
    grid: ErpGrid
    lon: np.ndarray
    lat: np.ndarray


def _check_lat(theta, grid: ErpGrid | None):
    lo = grid.theta_min if grid is not None else 0.0
    theta = np.asarray(theta)
    if np.any(theta < lo) or np.any(theta > np.pi - lo) or np.any(np.sin(theta) <= 0):
        raise ValueError("latitude outside the clamp range; clamp before differentiating")


def spherical_jacobian(phi, theta, r, grid: ErpGrid | None = None) -> np.ndarray:
    """Partials of ``(r, phi, theta)`` with respect to ``(x, y, z)``.

    Returns an array of shape ``broadcast_shape + (3, 3)``; row index is the
    spherical coordinate, column index the Cartesian one.
    """
    phi, theta, r = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (phi, theta, r)))
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    _check_lat(theta, grid)
    sp, cp = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    J = np.empty(phi.shape + (3, 3))
    J[..., 0, 0] = sp * st
    J[..., 0, 1] = ct
    J[..., 0, 2] = cp * st
    J[..., 1, 0] = cp / (r * st)
    J[..., 1, 1] = 0.0
    J[..., 1, 2] = -sp / (r * st)
    J[..., 2, 0] = sp * ct / r
    J[..., 2, 1] = -st / r
    J[..., 2, 2] = cp * ct / r
    return J


def disparity(r, phi, theta, baseline: BaselineSpec, grid: ErpGrid | None = None):
    """Angular disparity ``(gamma_lon, gamma_lat)`` of points at depth ``r``.

    The target-view angles follow as ``(phi, theta) - gamma`` (see :func:`displace`).
    """
    r, phi, theta = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (r, phi, theta)))
    if np.any(r <= 0):
        raise ValueError("depth must be positive")
    _check_lat(theta, grid)
    b = baseline.length
    if baseline.axis is Axis.X:
        st = np.sin(theta)
        return b * np.cos(phi) / (r * st), b * np.sin(phi) * np.cos(theta) / r
    return np.zeros_like(r), -b * np.sin(theta) / r


def displace(phi, theta, gamma_lon, gamma_lat, grid: ErpGrid):
    """Apply a disparity: longitude wraps, latitude clamps to the grid band."""
    return wrap_lon(phi - gamma_lon), grid.clamp_lat(theta - gamma_lat)


def disparity_field(depth: np.ndarray, baseline: BaselineSpec, grid: ErpGrid | None = None) -> DisparityField:
    depth = np.asarray(depth, dtype=np.float64)
    if grid is None:
        grid = ErpGrid(depth.shape[1], depth.shape[0])
    if depth.shape != grid.shape:
        raise ValueError(f"depth shape {depth.shape} does not match grid {grid}")
    bad = np.argwhere(~(depth > 0))
    if len(bad):
        listed = ", ".join(f"({i},{j})" for i, j in bad[:10])
        more = f" and {len(bad) - 10} more" if len(bad) > 10 else ""
        raise ValueError(f"non-positive depth at (row,col) {listed}{more}")
    phi, theta = grid.angles()
    g_lon, g_lat = disparity(depth, phi, theta, baseline)
    return DisparityField(grid, g_lon, g_lat)

