"""Depth-image-based rendering on the equirectangular grid.

Forward splatting pushes every source pixel to its displaced position and
deposits bilinear, depth-attenuated weights on the four surrounding target
pixels.  Overlapping splats are blended by weight (a soft z-buffer, nearer
pixels dominate) and the canvas is normalized by the accumulated weights.
Pixels that received (almost) nothing are reported in ``mask``.

Inverse warping is provided as the gather-style baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import map_bands
from .disparity import BaselineSpec, disparity
from .sphere import ErpGrid, wrap_lon


@dataclass(frozen=True)
class SplatConfig:
    d_max: float = 10.0
    eps_norm: float = 1e-8
    eps_mask: float = 1e-3

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not 0 < self.eps_norm <= self.eps_mask:
            raise ValueError("need 0 < eps_norm <= eps_mask")


@dataclass(frozen=True)
class SplatResult:
    color: np.ndarray
    """Normalized synthesized view, ``(h, w, C)``; zero where ``mask`` is set."""
    weights: np.ndarray
    """Accumulated splat weights, ``(h, w)``."""
    mask: np.ndarray
    """True where the canvas is empty (weight below ``eps_mask``)."""

    @property
    def valid(self) -> np.ndarray:
        return ~self.mask


@dataclass
class Footprint:
    """Where each source pixel lands and how its weights depend on depth.

    Arrays are flattened over source pixels in raster order; the last axis
    of the ``(N, 4)`` arrays enumerates the neighbors tl, tr, bl, br.
    """

    targets: np.ndarray  # (N, 4) flat target indices
    beta: np.ndarray  # (N, 4) bilinear weights
    alpha: np.ndarray  # (N,) depth attenuation
    dbeta_ddepth: np.ndarray  # (N, 4)


def _as_rasters(color, depth, grid: ErpGrid | None):
    depth = np.asarray(depth, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    if color.ndim == 2:
        color = color[..., None]
    if grid is None:
        grid = ErpGrid(depth.shape[1], depth.shape[0])
    if depth.shape != grid.shape or color.shape[:2] != grid.shape:
        raise ValueError(f"grid mismatch: color {color.shape[:2]}, depth {depth.shape}, grid {grid}")
    if not np.all(depth > 0):
        raise ValueError("depth must be positive everywhere")
    return color, depth, grid


def _landing(depth, rows: slice, baseline: BaselineSpec, grid: ErpGrid):
    """Continuous target pixel coordinates for a band of source rows and their depth slopes."""
    phi = grid.lon[None, :]
    theta = grid.lat[rows, None]
    g_lon, g_lat = disparity(depth, phi, theta, baseline)
    phi_t = wrap_lon(phi - g_lon)
    theta_raw = theta - g_lat
    theta_t = grid.clamp_lat(theta_raw)
    u = phi_t / grid.ang_res_lon - 0.5
    v = theta_t / grid.ang_res_lat - 0.5
    # disparity scales as 1/depth, so d(gamma)/d(depth) = -gamma/depth
    du = g_lon / depth / grid.ang_res_lon
    dv = np.where(theta_t == theta_raw, g_lat / depth / grid.ang_res_lat, 0.0)
    return u, v, du, dv


def footprint(depth, baseline: BaselineSpec, grid: ErpGrid, d_max: float, threads=None) -> Footprint:
    depth = np.asarray(depth, dtype=np.float64)
    h, w = grid.shape

    def band(rows):
        d = depth[rows]
        u, v, du, dv = _landing(d, rows, baseline, grid)
        u0 = np.floor(u)
        v0 = np.floor(v)
        fu = (u - u0).ravel()
        fv = (v - v0).ravel()
        c0 = np.mod(u0.astype(np.int64), w).ravel()
        c1 = np.mod(c0 + 1, w)
        r0 = np.clip(v0.astype(np.int64), 0, h - 1).ravel()
        r1 = np.clip(v0.astype(np.int64) + 1, 0, h - 1).ravel()
        targets = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1], axis=1)
        gu, gv = 1.0 - fu, 1.0 - fv
        beta = np.stack([gu * gv, fu * gv, gu * fv, fu * fv], axis=1)
        dfu = np.stack([-gv, gv, -fv, fv], axis=1)
        dfv = np.stack([-gu, -fu, gu, fu], axis=1)
        dbeta = dfu * du.ravel()[:, None] + dfv * dv.ravel()[:, None]
        return targets, beta, dbeta

    parts = map_bands(band, h, threads)
    targets, beta, dbeta = (np.concatenate(p) for p in zip(*parts))
    alpha = np.exp(-depth.ravel() / d_max)
    return Footprint(targets, beta, alpha, dbeta)


def accumulate(targets, values, size, sources=None, slots=None) -> np.ndarray:
    """Scatter-add ``values`` into a flat canvas of ``size`` entries.

    Every canvas entry sums its contributions in (source, slot) order.  When
    ``sources`` is given the contributions are put into that order first, so
    the canvas is bitwise independent of the order they were produced in;
    without it they are assumed to be in raster order already.
    """
    targets = np.asarray(targets).ravel()
    values = np.asarray(values, dtype=np.float64).ravel()
    if sources is not None:
        sources = np.asarray(sources).ravel()
        slots = np.zeros_like(sources) if slots is None else np.asarray(slots).ravel()
        order = np.lexsort((slots, sources))
        targets, values = targets[order], values[order]
    return np.bincount(targets, weights=values, minlength=size)


def _canvases(fp: Footprint, color: np.ndarray, size: int):
    wts = fp.alpha[:, None] * fp.beta
    flat_t = fp.targets.ravel()
    weight = accumulate(flat_t, wts, size)
    col = color.reshape(-1, color.shape[-1])
    canvas = np.stack([accumulate(flat_t, wts * col[:, c : c + 1], size) for c in range(col.shape[1])], axis=-1)
    return canvas, weight


def _normalize(canvas, weight, grid: ErpGrid, cfg: SplatConfig) -> SplatResult:
    h, w = grid.shape
    mask = weight < cfg.eps_mask
    color = canvas / (weight + cfg.eps_norm)[:, None]
    color[mask] = 0.0
    return SplatResult(color.reshape(h, w, -1), weight.reshape(h, w), mask.reshape(h, w))


@dataclass
class SplatTape:
    """State kept from a forward splat for the depth backward pass."""

    result: SplatResult
    footprint: Footprint
    color: np.ndarray  # (N, C) source colors
    weight: np.ndarray  # flat accumulated weights
    cfg: SplatConfig


def splat_forward(src_color, src_depth, baseline: BaselineSpec, cfg: SplatConfig = SplatConfig(),
                  grid: ErpGrid | None = None, threads=None) -> SplatTape:
    color, depth, grid = _as_rasters(src_color, src_depth, grid)
    fp = footprint(depth, baseline, grid, cfg.d_max, threads)
    canvas, weight = _canvases(fp, color, depth.size)
    return SplatTape(_normalize(canvas, weight, grid, cfg), fp, color.reshape(depth.size, -1), weight, cfg)


def splat_backward(tape: SplatTape, upstream_grad) -> np.ndarray:
    """Gradient of ``<upstream_grad, tape.result.color>`` with respect to source depth.

    The gradient follows the bilinear weights, the depth attenuation and the
    weight normalization; the floor/ceil switches and the empty-canvas mask
    are treated as locally constant.
    """
    res, fp, cfg = tape.result, tape.footprint, tape.cfg
    n = tape.weight.size
    g = np.asarray(upstream_grad, dtype=np.float64).reshape(n, -1)
    valid = ~res.mask.ravel()
    denom = tape.weight + cfg.eps_norm
    g_canvas = np.where(valid[:, None], g / denom[:, None], 0.0)
    g_weight = -(g_canvas * res.color.reshape(n, -1)).sum(axis=1)
    # dL/dw for each (source, neighbor) contribution
    q = np.einsum("nkc,nc->nk", g_canvas[fp.targets], tape.color) + g_weight[fp.targets]
    dw = fp.alpha[:, None] * (fp.dbeta_ddepth - fp.beta / cfg.d_max)
    return (q * dw).sum(axis=1).reshape(res.weights.shape)


def splat_render(src_color, src_depth, baseline: BaselineSpec, cfg: SplatConfig = SplatConfig(),
                 grid: ErpGrid | None = None, threads=None) -> SplatResult:
    """Synthesize the view from a camera displaced by ``baseline``."""
    return splat_forward(src_color, src_depth, baseline, cfg, grid, threads).result


def splat_render_with_grad(src_color, src_depth, baseline: BaselineSpec, cfg: SplatConfig,
                           upstream_grad, grid: ErpGrid | None = None, threads=None):
    """Forward splat plus the gradient of ``<upstream_grad, color>`` w.r.t. source depth."""
    tape = splat_forward(src_color, src_depth, baseline, cfg, grid, threads)
    return tape.result, splat_backward(tape, upstream_grad)


def bilinear_sample(image, u, v, grid: ErpGrid) -> np.ndarray:
    """Sample at continuous pixel coordinates; columns wrap, rows clamp."""
    image = np.asarray(image, dtype=np.float64)
    h, w = grid.shape
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = (u - u0)[..., None]
    fv = (v - v0)[..., None]
    c0 = np.mod(u0.astype(np.int64), w)
    c1 = np.mod(c0 + 1, w)
    r0 = np.clip(v0.astype(np.int64), 0, h - 1)
    r1 = np.clip(v0.astype(np.int64) + 1, 0, h - 1)
    img = image if image.ndim == 3 else image[..., None]
    out = ((1 - fu) * (1 - fv) * img[r0, c0] + fu * (1 - fv) * img[r0, c1]
           + (1 - fu) * fv * img[r1, c0] + fu * fv * img[r1, c1])
    return out if image.ndim == 3 else out[..., 0]


def inverse_warp(tgt_color, src_depth, baseline: BaselineSpec, grid: ErpGrid | None = None) -> np.ndarray:
    """Reconstruct the source view by sampling the target view at the displaced angles."""
    color, depth, grid = _as_rasters(tgt_color, src_depth, grid)
    u, v, _, _ = _landing(depth, slice(None), baseline, grid)
    out = bilinear_sample(color, u, v, grid)
    return out if np.asarray(tgt_color).ndim == 3 else out[..., 0]
