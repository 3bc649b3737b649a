"""Depth evaluation that accounts for equirectangular distortion.

Error metrics weight every pixel by ``sin(theta)`` (its share of the sphere);
the delta accuracies are evaluated on a near-uniform spiral point set
instead of the raster.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .sphere import ErpGrid, cart_to_sph

CSV_FIELDS = ("abs_rel", "sq_rel", "rmse", "rmsle", "d1", "d2", "d3", "n_valid", "n_spiral")
SPIRAL_FRACTION = 0.25


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmsle: float
    d1: float
    d2: float
    d3: float
    n_valid: int
    n_spiral: int

    def csv_header(self) -> str:
        return ",".join(f.name for f in fields(self))

    def csv_row(self) -> str:
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in astuple(self))

    def to_csv(self) -> str:
        return self.csv_header() + "\n" + self.csv_row() + "\n"

    def table(self) -> str:
        width = max(len(n) for n in CSV_FIELDS)
        lines = []
        for name, value in zip(CSV_FIELDS, astuple(self)):
            text = f"{value:.6f}" if isinstance(value, float) else str(value)
            lines.append(f"{name:<{width}}  {text:>12}")
        return "\n".join(lines)


@dataclass(frozen=True)
class SpiralSet:
    points: np.ndarray  # (N, 3) unit vectors

    @property
    def count(self) -> int:
        return len(self.points)


def spiral_count(grid: ErpGrid) -> int:
    return int(round(SPIRAL_FRACTION * grid.width * grid.height))


def spiral_points(n: int) -> SpiralSet:
    """Generalized spiral on the sphere (Saff & Kuijlaars).

    ``h_k`` climbs linearly from -1 to 1; longitude advances by
    ``3.6 / sqrt(N) / sqrt(1 - h_k^2)`` per step.  The first point is at
    theta = pi and the last at theta = 0 (the y axis is up).
    """
    if n < 2:
        raise ValueError("spiral needs at least 2 points")
    k = np.arange(n)
    hk = -1.0 + 2.0 * k / (n - 1)
    theta = np.arccos(np.clip(hk, -1.0, 1.0))
    step = np.zeros(n)
    inner = slice(1, n - 1)
    step[inner] = 3.6 / np.sqrt(n) / np.sqrt(1.0 - hk[inner] ** 2)
    phi = np.mod(np.cumsum(step), 2 * np.pi)
    phi[0] = phi[-1] = 0.0
    st = np.sin(theta)
    st[0] = st[-1] = 0.0
    pts = np.stack([np.sin(phi) * st, np.cos(theta), np.cos(phi) * st], axis=1)
    pts[0] = (0.0, -1.0, 0.0)
    pts[-1] = (0.0, 1.0, 0.0)
    return SpiralSet(pts)


def _validate(pred, gt, valid):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"grid mismatch: {pred.shape} vs {gt.shape}")
    ok = np.isfinite(gt) & (gt > 0) & np.isfinite(pred) & (pred > 0)
    if valid is not None:
        valid = np.asarray(valid, bool)
        if valid.shape != gt.shape:
            raise ValueError("valid mask does not match the depth grid")
        ok &= valid
    return pred, gt, ok


def weighted_errors(pred, gt, valid=None):
    """Return ``(abs_rel, sq_rel, rmse, rmsle)`` as sin(theta)-weighted means."""
    pred, gt, ok = _validate(pred, gt, valid)
    if not ok.any():
        raise ValueError("no valid pixels to evaluate")
    grid = ErpGrid(gt.shape[1], gt.shape[0])
    wts = np.broadcast_to(np.sin(grid.lat)[:, None], gt.shape)[ok]
    p, d = pred[ok], gt[ok]
    err = p - d
    total = wts.sum()

    def wmean(x):
        return float((wts * x).sum() / total)

    abs_rel = wmean(np.abs(err) / d)
    sq_rel = wmean(err * err / d)
    rmse = np.sqrt(wmean(err * err))
    rmsle = np.sqrt(wmean((np.log(d) - np.log(p)) ** 2))
    return abs_rel, sq_rel, float(rmse), float(rmsle)


def spiral_pixels(spiral: SpiralSet, grid: ErpGrid) -> tuple[np.ndarray, np.ndarray]:
    """Nearest pixel (row, col) of each spiral point."""
    _, phi, theta = cart_to_sph(*spiral.points.T)
    col = np.minimum(np.floor(phi / grid.ang_res_lon).astype(np.int64), grid.width - 1)
    row = np.minimum(np.floor(theta / grid.ang_res_lat).astype(np.int64), grid.height - 1)
    return row, col


def delta_accuracies(pred, gt, spiral: SpiralSet, valid=None):
    """Fractions of spiral samples with ``max(d/p, p/d) < 1.25**i`` for i = 1, 2, 3."""
    pred, gt, ok = _validate(pred, gt, valid)
    grid = ErpGrid(gt.shape[1], gt.shape[0])
    row, col = spiral_pixels(spiral, grid)
    keep = ok[row, col]
    if not keep.any():
        raise ValueError("every spiral sample hits an invalid pixel")
    p, d = pred[row, col][keep], gt[row, col][keep]
    ratio = np.maximum(p / d, d / p)
    return tuple(float(np.mean(ratio < 1.25**i)) for i in (1, 2, 3))


def evaluate(pred, gt, valid=None) -> MetricsReport:
    pred, gt, ok = _validate(pred, gt, valid)
    grid = ErpGrid(gt.shape[1], gt.shape[0])
    spiral = spiral_points(spiral_count(grid))
    abs_rel, sq_rel, rmse, rmsle = weighted_errors(pred, gt, ok)
    d1, d2, d3 = delta_accuracies(pred, gt, spiral, ok)
    return MetricsReport(abs_rel, sq_rel, rmse, rmsle, d1, d2, d3, int(ok.sum()), spiral.count)
