"""Spherical view synthesis, disparity and depth-from-self-supervision on ERP grids."""
from .disparity import Axis, BaselineSpec, disparity, disparity_field, spherical_jacobian
from .metrics import MetricsReport, evaluate, spiral_points
from .optim import Mode, OptimConfig, optimize_depth
from .renderer import SplatConfig, SplatResult, inverse_warp, splat_render, splat_render_with_grad
from .scenegen import default_scene, make_rig, parse_scene, render_scene
from .sphere import ErpGrid, Placement, attention_mask, cart_to_sph, sph_to_cart
from .supervision import LossConfig, parse_loss_config

__version__ = "0.1.0"

__all__ = [
    "Axis", "BaselineSpec", "ErpGrid", "LossConfig", "MetricsReport", "Mode", "OptimConfig",
    "Placement", "SplatConfig", "SplatResult", "attention_mask", "cart_to_sph", "default_scene",
    "disparity", "disparity_field", "evaluate", "inverse_warp", "make_rig", "optimize_depth",
    "parse_loss_config", "parse_scene", "render_scene", "sph_to_cart", "spherical_jacobian",
    "splat_render", "splat_render_with_grad", "spiral_points",
]
