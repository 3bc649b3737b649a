"""Per-pixel depth recovery by descending the view-synthesis loss.

This stands in for training a depth network: instead of network weights the
depth map itself is the free variable, and the loss is the same
self-supervised objective (attention-weighted photometric reconstruction of
the displaced views plus Cartesian smoothness).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .disparity import BaselineSpec
from .metrics import weighted_errors
from .renderer import splat_backward, splat_forward
from .scenegen import StereoRig
from .sphere import ErpGrid, Placement, attention_mask
from .supervision import (
    LossConfig,
    box_filter,
    photometric,
    reconstruction_loss,
    reconstruction_loss_grad,
    smoothness_loss,
    smoothness_loss_grad,
)

log = logging.getLogger(__name__)

ARMIJO = 1e-4  # sufficient-decrease constant of the line search


class Mode(str, enum.Enum):
    UD = "ud"  # reconstruct the up view
    LR = "lr"  # reconstruct the right view
    TC = "tc"  # blend both by lambda_ratio


class Parameterization(str, enum.Enum):
    DEPTH = "depth"
    LOG_DEPTH = "log-depth"


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 300
    step_size: float = 0.05
    init_depth: float = 2.0
    parameterization: Parameterization = Parameterization.LOG_DEPTH
    loss: LossConfig = field(default_factory=LossConfig)
    mode: Mode = Mode.UD
    max_backtracks: int = 12
    smooth_kernel: int = 9
    smooth_passes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.init_depth > 0:
            raise ValueError("init_depth must be positive")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.smooth_kernel < 1 or self.smooth_kernel % 2 == 0 or self.smooth_passes < 0:
            raise ValueError("smooth_kernel must be odd and positive, smooth_passes >= 0")


def _view_loss(depth, rig: StereoRig, cfg: LossConfig, view: str, want_grad: bool):
    grid = rig.grid
    if view == "up":
        baseline, placement, target = BaselineSpec("y", rig.baseline), Placement.VERTICAL, rig.up[0]
    else:
        baseline, placement, target = BaselineSpec("x", rig.baseline), Placement.HORIZONTAL, rig.right[0]
    src = rig.center[0]
    attn = attention_mask(grid, placement)
    tape = splat_forward(src, depth, baseline, cfg.splat, grid)
    res = tape.result
    recon_attn = attn if cfg.use_attention else None
    if not want_grad:
        photo = photometric(target, res.color, res.valid, cfg.eta, cfg.ssim_kernel)
        recon = reconstruction_loss(photo, res.valid, recon_attn)
        smooth = smoothness_loss(depth, src, attn, cfg.edge_sign)
        return cfg.lambda_recon * recon + cfg.lambda_smooth * smooth, None
    recon, g_synth = reconstruction_loss_grad(target, res.color, res.valid, recon_attn, cfg.eta, cfg.ssim_kernel)
    smooth, g_smooth = smoothness_loss_grad(depth, src, attn, cfg.edge_sign)
    loss = cfg.lambda_recon * recon + cfg.lambda_smooth * smooth
    grad = cfg.lambda_recon * splat_backward(tape, g_synth) + cfg.lambda_smooth * g_smooth
    return loss, grad


def loss_gradient(depth, rig: StereoRig, cfg: LossConfig, mode=Mode.UD, want_grad: bool = True):
    """Total self-supervised loss of ``depth`` for the rig's center view and its depth gradient."""
    mode = Mode(mode)
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != rig.grid.shape:
        raise ValueError(f"depth shape {depth.shape} does not match rig grid {rig.grid}")
    if not np.all(depth > 0):
        raise ValueError("depth must be positive")
    ratio = cfg.lambda_ratio
    if mode is Mode.UD or (mode is Mode.TC and ratio == 1.0):
        return _view_loss(depth, rig, cfg, "up", want_grad)
    if mode is Mode.LR or (mode is Mode.TC and ratio == 0.0):
        return _view_loss(depth, rig, cfg, "right", want_grad)
    l_ud, g_ud = _view_loss(depth, rig, cfg, "up", want_grad)
    l_lr, g_lr = _view_loss(depth, rig, cfg, "right", want_grad)
    loss = ratio * l_ud + (1.0 - ratio) * l_lr
    return loss, (ratio * g_ud + (1.0 - ratio) * g_lr if want_grad else None)


def _views(mode: Mode, ratio: float):
    if mode is Mode.UD or (mode is Mode.TC and ratio == 1.0):
        return ("up",)
    if mode is Mode.LR or (mode is Mode.TC and ratio == 0.0):
        return ("right",)
    return ("up", "right")


def mask_guard(depth, rig: StereoRig, cfg: LossConfig, mode=Mode.UD, factor: float = 4.0) -> np.ndarray:
    """Source pixels whose splat footprint touches a nearly empty target pixel.

    Moving such a pixel can flip a target across the mask threshold, which
    makes the loss jump.  Returns a boolean raster over the source grid.
    """
    guard = np.zeros(depth.size, dtype=bool)
    for view in _views(Mode(mode), cfg.lambda_ratio):
        baseline = BaselineSpec("y" if view == "up" else "x", rig.baseline)
        tape = splat_forward(rig.center[0], depth, baseline, cfg.splat, rig.grid)
        near = tape.weight < factor * cfg.splat.eps_mask
        guard |= near[tape.footprint.targets].any(axis=1)
    return guard.reshape(depth.shape)


def fd_gradient(depth, rig: StereoRig, cfg: LossConfig, mode=Mode.UD, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient with a per-pixel step of ``step * depth``."""
    depth = np.asarray(depth, dtype=np.float64)
    grad = np.zeros_like(depth)
    for idx in np.ndindex(depth.shape):
        h = step * depth[idx]
        up, dn = depth.copy(), depth.copy()
        up[idx] += h
        dn[idx] -= h
        grad[idx] = (loss_gradient(up, rig, cfg, mode, False)[0] - loss_gradient(dn, rig, cfg, mode, False)[0]) / (2 * h)
    return grad


def smoothed_gradient(grad, kernel: int = 9, passes: int = 3) -> np.ndarray:
    """Descent direction in a smoothed (Sobolev-like) metric, scaled to unit max-norm.

    Repeated box filtering is a symmetric positive semi-definite operator, so
    the result still has a non-negative inner product with ``grad``.  It lets
    coherent regions move together instead of each pixel settling into the
    nearest texture-scale minimum.
    """
    direction = np.asarray(grad, dtype=np.float64)
    for _ in range(passes):
        direction = box_filter(direction[..., None], kernel)[..., 0]
    peak = np.abs(direction).max()
    return direction / peak if peak > 0 else direction


def _line_search(evaluate, x, loss, grad, direction, step, cfg):
    """Backtrack until the Armijo condition holds; returns ``(x_new or None, step)``.

    Steps shorter than ``step_size / 2**max_backtracks`` count as failure so
    the caller can change the direction instead of creeping along.
    """
    slope = float((grad * direction).sum())
    floor = cfg.step_size * 0.5**cfg.max_backtracks
    if not slope > 0:
        return None, step
    for _ in range(cfg.max_backtracks):
        if step < floor:
            break
        x_new = x - step * direction
        loss_new, _ = evaluate(x_new, want_grad=False)
        if np.isfinite(loss_new) and loss_new <= loss - ARMIJO * step * slope:
            return x_new, step
        step *= 0.5
    return None, step


@dataclass
class TraceRow:
    step: int
    loss: float
    abs_rel: float | None = None


def optimize_depth(rig: StereoRig, cfg: OptimConfig = OptimConfig(), gt=None, init=None):
    """Gradient descent with backtracking from a constant depth map.

    The search direction is the gradient smoothed by ``smooth_passes`` box
    filters (see :func:`smoothed_gradient`), scaled so the largest per-pixel
    change equals the step length.  Steps must satisfy the Armijo condition;
    the length is halved up to ``max_backtracks`` times.  When that fails the
    step is retried with pixels bordering empty canvas frozen, and then with
    one smoothing pass fewer, down to the raw gradient.  Rejected steps keep
    the iterate, so the loss trace never increases.

    Returns ``(depth, trace)`` where trace row 0 is the initial state.
    """
    grid: ErpGrid = rig.grid
    log_param = cfg.parameterization is Parameterization.LOG_DEPTH
    depth = np.full(grid.shape, cfg.init_depth) if init is None else np.asarray(init, dtype=np.float64).copy()
    x = np.log(depth) if log_param else depth

    def to_depth(x):
        return np.exp(x) if log_param else x

    def evaluate(x, want_grad=True):
        d = to_depth(x)
        if not np.all(d > 0):
            return np.inf, None
        loss, g = loss_gradient(d, rig, cfg.loss, cfg.mode, want_grad)
        if want_grad and log_param:
            g = g * d
        return loss, g

    def score(x):
        return None if gt is None else weighted_errors(to_depth(x), gt)[0]

    loss, grad = evaluate(x)
    trace = [TraceRow(0, loss, score(x))]
    if not np.isfinite(loss):
        raise DivergenceError("initial loss is not finite", trace)
    step = cfg.step_size
    passes = cfg.smooth_passes
    for it in range(1, cfg.steps + 1):
        if not np.all(np.isfinite(grad)) or not np.abs(grad).max() > 0:
            trace.append(TraceRow(it, loss, trace[-1].abs_rel))
            continue
        while True:
            direction = smoothed_gradient(grad, cfg.smooth_kernel, passes)
            x_new, step = _line_search(evaluate, x, loss, grad, direction, step, cfg)
            if x_new is None:
                # blocked by a mask flip: retry with the pixels next to empty canvas held still
                frozen = mask_guard(to_depth(x), rig, cfg.loss, cfg.mode)
                guarded = np.where(frozen, 0.0, direction)
                if np.abs(guarded).max() > 0:
                    guarded /= np.abs(guarded).max()
                    x_new, step = _line_search(evaluate, x, loss, grad, guarded, cfg.step_size, cfg)
            if x_new is not None or passes == 0:
                break
            # the smoothed direction has stalled; refine it
            passes -= 1
            step = cfg.step_size
        if x_new is not None:
            x = x_new
            loss, grad = evaluate(x)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at step {it}", trace)
            step = min(step * 1.5, cfg.step_size * 4)
        else:
            step = cfg.step_size
        trace.append(TraceRow(it, loss, score(x)))
        if it % 50 == 0:
            log.debug("step %d loss %.6g step %.3g", it, loss, step)
    return to_depth(x), trace
