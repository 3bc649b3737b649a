"""Self-supervision objectives for spherical view synthesis.

Rasters are ``(h, w)`` or ``(h, w, C)`` float arrays.  ``valid`` masks are
boolean rasters that are True where a synthesized pixel exists (the
complement of :attr:`SplatResult.mask`).  Functions that feed the optimizer
come in pairs: a value function and a ``*_grad`` variant returning the
value together with its gradient.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .renderer import SplatConfig
from .sphere import AttentionMask, ErpGrid

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class EmptyMaskWarning(RuntimeWarning):
    """A loss was asked to average over zero valid pixels."""


class EdgeSign(str, enum.Enum):
    EDGE_AWARE = "edge-aware"  # exp(-|grad I|): relax smoothing across color edges
    EDGE_BOOST = "edge-boost"  # exp(+|grad I|): strengthen smoothing across color edges


@dataclass(frozen=True)
class LossConfig:
    lambda_recon: float = 0.95
    lambda_smooth: float = 0.05
    eta: float = 0.85
    ssim_kernel: int = 5
    lambda_ratio: float = 0.6
    edge_sign: EdgeSign = EdgeSign.EDGE_AWARE
    use_attention: bool = True
    splat: SplatConfig = field(default_factory=SplatConfig)

    def __post_init__(self):
        object.__setattr__(self, "edge_sign", EdgeSign(self.edge_sign))
        if not math.isclose(self.lambda_recon + self.lambda_smooth, 1.0, abs_tol=1e-12):
            raise ValueError("lambda_recon + lambda_smooth must equal 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if not 0.0 <= self.lambda_ratio <= 1.0:
            raise ValueError("lambda_ratio must lie in [0, 1]")
        if self.ssim_kernel < 1 or self.ssim_kernel % 2 == 0:
            raise ValueError("ssim_kernel must be a positive odd integer")


_CONFIG_KEYS = {
    "lambda_recon": float,
    "lambda_smooth": float,
    "eta": float,
    "ssim_kernel": int,
    "lambda_ratio": float,
    "d_max": float,
    "epsilon_norm": float,
    "epsilon_mask": float,
    "edge_sign": str,
    "use_attention": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}
_SPLAT_KEYS = {"d_max": "d_max", "epsilon_norm": "eps_norm", "epsilon_mask": "eps_mask"}


def parse_loss_config(text: str, base: LossConfig | None = None) -> LossConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) over ``base``."""
    loss_kw, splat_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _CONFIG_KEYS[key](value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad value {value!r} for {key}") from None
        if key in _SPLAT_KEYS:
            splat_kw[_SPLAT_KEYS[key]] = parsed
        else:
            loss_kw[key] = parsed
    base = base or LossConfig()
    if "lambda_recon" in loss_kw and "lambda_smooth" not in loss_kw:
        loss_kw["lambda_smooth"] = 1.0 - loss_kw["lambda_recon"]
    elif "lambda_smooth" in loss_kw and "lambda_recon" not in loss_kw:
        loss_kw["lambda_recon"] = 1.0 - loss_kw["lambda_smooth"]
    return replace(base, splat=replace(base.splat, **splat_kw), **loss_kw)


def format_loss_config(cfg: LossConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg) if f.name not in ("splat", "edge_sign")]
    lines.append(f"edge_sign = {cfg.edge_sign.value}")
    lines += [f"d_max = {cfg.splat.d_max}", f"epsilon_norm = {cfg.splat.eps_norm}", f"epsilon_mask = {cfg.splat.eps_mask}"]
    return "\n".join(lines) + "\n"


def _channels(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape} vs {b.shape}")


# -- box filtering: longitude wraps, latitude clamps ---------------------------

def box_filter(x: np.ndarray, kernel: int) -> np.ndarray:
    h, w = x.shape[:2]
    r = kernel // 2
    rest = [(0, 0)] * (x.ndim - 2)
    xp = np.pad(x, [(r, r), (0, 0)] + rest, mode="edge")
    acc = xp[0:h].copy()
    for o in range(1, kernel):
        acc += xp[o : o + h]
    xp = np.pad(acc, [(0, 0), (r, r)] + rest, mode="wrap")
    out = xp[:, 0:w].copy()
    for o in range(1, kernel):
        out += xp[:, o : o + w]
    return out / (kernel * kernel)


def box_filter_adjoint(y: np.ndarray, kernel: int) -> np.ndarray:
    h, w = y.shape[:2]
    r = kernel // 2
    z = np.zeros((h, w + 2 * r) + y.shape[2:])
    for o in range(kernel):
        z[:, o : o + w] += y
    acc = z[:, r : r + w].copy()
    acc[:, w - r :] += z[:, :r]
    acc[:, :r] += z[:, w + r :]
    z = np.zeros((h + 2 * r,) + acc.shape[1:])
    for o in range(kernel):
        z[o : o + h] += acc
    out = z[r : r + h].copy()
    out[0] += z[:r].sum(axis=0)
    out[-1] += z[h + r :].sum(axis=0)
    return out / (kernel * kernel)


def _ssim_terms(a, b, kernel):
    mu_a, mu_b = box_filter(a, kernel), box_filter(b, kernel)
    var_a = box_filter(a * a, kernel) - mu_a * mu_a
    var_b = box_filter(b * b, kernel) - mu_b * mu_b
    cov = box_filter(a * b, kernel) - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, n1, n2, d1, d2


def dssim(a, b, kernel: int = 5) -> np.ndarray:
    """Per-pixel, per-channel structural dissimilarity ``(1 - SSIM) / 2``."""
    a, b = _channels(a), _channels(b)
    _check_same(a, b)
    _, _, n1, n2, d1, d2 = _ssim_terms(a, b, kernel)
    return np.clip((1.0 - n1 * n2 / (d1 * d2)) / 2.0, 0.0, 1.0)


def dssim_grad_b(a, b, upstream, kernel: int = 5) -> np.ndarray:
    """Gradient of ``sum(upstream * dssim(a, b))`` with respect to ``b``."""
    a, b, upstream = _channels(a), _channels(b), _channels(upstream)
    mu_a, mu_b, n1, n2, d1, d2 = _ssim_terms(a, b, kernel)
    dd = d1 * d2
    s = n1 * n2 / dd
    g_s = -0.5 * upstream
    g_n1 = g_s * n2 / dd
    g_n2 = g_s * n1 / dd
    g_d1 = -g_s * s / d1
    g_d2 = -g_s * s / d2
    g_mu_b = 2 * mu_a * (g_n1 - g_n2) + 2 * mu_b * (g_d1 - g_d2)
    return (box_filter_adjoint(g_mu_b, kernel) + 2 * b * box_filter_adjoint(g_d2, kernel)
            + 2 * a * box_filter_adjoint(g_n2, kernel))


# -- photometric / reconstruction ----------------------------------------------

def photometric(tgt, synth, valid, eta: float = 0.85, kernel: int = 5) -> np.ndarray:
    """Per-pixel blend of DSSIM and L1, averaged over channels.

    Both images are zeroed outside ``valid`` before comparison.
    """
    tgt, synth = _channels(tgt), _channels(synth)
    _check_same(tgt, synth)
    m = np.asarray(valid, dtype=np.float64)[..., None]
    t, s = tgt * m, synth * m
    l1 = np.abs(t - s).mean(axis=-1)
    if eta == 0.0:
        return (1.0 - eta) * l1
    return eta * dssim(t, s, kernel).mean(axis=-1) + (1.0 - eta) * l1


def photometric_grad(tgt, synth, valid, upstream, eta: float = 0.85, kernel: int = 5) -> np.ndarray:
    """Gradient of ``sum(upstream * photometric(...))`` with respect to ``synth``."""
    tgt, synth = _channels(tgt), _channels(synth)
    m = np.asarray(valid, dtype=np.float64)[..., None]
    t, s = tgt * m, synth * m
    n_ch = t.shape[-1]
    up = np.asarray(upstream, dtype=np.float64)[..., None] / n_ch
    grad = (1.0 - eta) * up * np.sign(s - t)
    if eta != 0.0:
        grad = grad + eta * dssim_grad_b(t, s, np.broadcast_to(up, s.shape), kernel)
    return grad * m


def reconstruction_loss(photo, valid, attn: AttentionMask | np.ndarray | None) -> float:
    """Attention-weighted photometric error summed over valid pixels, divided by their count."""
    value, _ = _recon(photo, valid, attn)
    return value


def _recon(photo, valid, attn):
    photo = np.asarray(photo, dtype=np.float64)
    m = np.asarray(valid, dtype=np.float64)
    a = np.ones_like(photo) if attn is None else np.asarray(getattr(attn, "values", attn), dtype=np.float64)
    if photo.shape != m.shape or a.shape != photo.shape:
        raise ValueError("grid mismatch in reconstruction loss")
    count = m.sum()
    if count == 0:
        warnings.warn("no valid pixels; reconstruction loss set to 0", EmptyMaskWarning, stacklevel=3)
        return 0.0, np.zeros_like(photo)
    weight = a * m / count
    return float((weight * photo).sum()), weight


def reconstruction_loss_grad(tgt, synth, valid, attn, eta=0.85, kernel=5):
    """Reconstruction loss and its gradient with respect to the synthesized image."""
    photo = photometric(tgt, synth, valid, eta, kernel)
    value, weight = _recon(photo, valid, attn)
    return value, photometric_grad(tgt, synth, valid, weight, eta, kernel)


# -- smoothness on deprojected points ------------------------------------------

def _central_diff(x, axis):
    """Central difference; axis 1 (longitude) wraps, axis 0 clamps at the poles."""
    if axis == 1:
        return (np.roll(x, -1, axis=1) - np.roll(x, 1, axis=1)) / 2.0
    h = x.shape[0]
    rows = np.arange(h)
    return (x[np.minimum(rows + 1, h - 1)] - x[np.maximum(rows - 1, 0)]) / 2.0


def _central_diff_adjoint(g, axis):
    if axis == 1:
        return (np.roll(g, 1, axis=1) - np.roll(g, -1, axis=1)) / 2.0
    h = g.shape[0]
    rows = np.arange(h)
    out = np.zeros_like(g)
    np.add.at(out, np.minimum(rows + 1, h - 1), g / 2.0)
    np.add.at(out, np.maximum(rows - 1, 0), -g / 2.0)
    return out


def color_guidance(color, edge_sign=EdgeSign.EDGE_AWARE) -> np.ndarray:
    c = _channels(color)
    grad_sq = (_central_diff(c, 1) ** 2 + _central_diff(c, 0) ** 2).sum(axis=-1)
    sign = 1.0 if EdgeSign(edge_sign) is EdgeSign.EDGE_BOOST else -1.0
    return np.exp(sign * np.sqrt(grad_sq))


def _smoothness(depth, color, attn, edge_sign, want_grad):
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise ValueError("depth must be positive")
    if _channels(color).shape[:2] != depth.shape:
        raise ValueError("grid mismatch between depth and color")
    dirs = ErpGrid(depth.shape[1], depth.shape[0]).directions()
    # without an attention mask every pixel gets full smoothing weight
    a = np.zeros_like(depth) if attn is None else np.asarray(getattr(attn, "values", attn), dtype=np.float64)
    k = (1.0 - a) * color_guidance(color, edge_sign)
    pts = depth[..., None] * dirs
    du = _central_diff(pts, 1)
    dv = _central_diff(pts, 0)
    mag = np.sqrt((du * du).sum(-1) + (dv * dv).sum(-1))
    n = depth.size
    value = float((k * mag).sum() / n)
    if not want_grad:
        return value, None
    coef = np.divide(k, n * mag, out=np.zeros_like(mag), where=mag > 0)[..., None]
    g_pts = _central_diff_adjoint(coef * du, 1) + _central_diff_adjoint(coef * dv, 0)
    return value, (g_pts * dirs).sum(-1)


def smoothness_loss(depth, color, attn=None, edge_sign=EdgeSign.EDGE_AWARE) -> float:
    """Color-guided total variation of the deprojected 3D points, weighted by ``1 - A``."""
    return _smoothness(depth, color, attn, edge_sign, False)[0]


def smoothness_loss_grad(depth, color, attn=None, edge_sign=EdgeSign.EDGE_AWARE):
    return _smoothness(depth, color, attn, edge_sign, True)


# -- combinations ----------------------------------------------------------------

def total_loss(recon: float, smooth: float, cfg: LossConfig) -> float:
    return cfg.lambda_recon * recon + cfg.lambda_smooth * smooth


def trinocular_blend(l_ud, l_lr, lambda_ratio: float):
    if not 0.0 <= lambda_ratio <= 1.0:
        raise ValueError("lambda_ratio must lie in [0, 1]")
    return lambda_ratio * l_ud + (1.0 - lambda_ratio) * l_lr


def berhu(pred, gt, valid=None, threshold_scale: float = 0.2) -> float:
    """Reverse Huber loss; the L1/L2 switch sits at ``0.2 * max|error|``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_same(pred, gt)
    m = np.ones(pred.shape, bool) if valid is None else np.asarray(valid, bool)
    if not m.any():
        warnings.warn("empty mask; BerHu loss set to 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    err = np.abs(pred - gt)[m]
    c = threshold_scale * err.max()
    if c == 0:
        return 0.0
    per = np.where(err <= c, err, (err * err + c * c) / (2 * c))
    return float(per.mean())
