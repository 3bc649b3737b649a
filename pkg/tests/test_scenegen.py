import numpy as np
import pytest
from oracles import ray_march

from sphsynth.disparity import BaselineSpec
from sphsynth.renderer import splat_render
from sphsynth.scenegen import (
    Box,
    Scene,
    Sphere,
    Texture,
    default_scene,
    make_rig,
    parse_scene,
    render_scene,
)
from sphsynth.sphere import ErpGrid

SHELL = Scene((Sphere((0, 0, 0), 3.0, Texture("noise", 0.4, 2, 7)),))


def test_sphere_shell_depth_is_constant():
    _, depth = render_scene(SHELL, (0, 0, 0), ErpGrid(64, 32))
    assert np.abs(depth - 3.0).max() < 1e-12


def test_unit_box_forward_axis():
    grid = ErpGrid(512, 256)
    room = Scene((Box((0, 0, 0), (1.0, 1.0, 1.0), Texture("flat")),))
    _, depth = render_scene(room, (0, 0, 0), grid)
    # phi = 0 sits between columns 511 and 0; both are within half a pixel of the +z axis
    exact = 1.0 / np.cos(grid.ang_res_lon / 2) / np.cos(grid.ang_res_lat / 2)
    assert depth[127, 0] == pytest.approx(exact, rel=1e-12)
    assert depth[127, 0] == pytest.approx(1.0, abs=1e-4)


def test_depth_matches_ray_marching():
    grid = ErpGrid(128, 64)
    scene = default_scene(0)
    _, depth = render_scene(scene, (0, 0, 0), grid)
    idx = np.random.default_rng(0).choice(depth.size, 1000, replace=False)
    dirs = grid.directions().reshape(-1, 3)[idx]
    marched = ray_march(scene.primitives, (0, 0, 0), dirs, step=1e-4, t_max=float(depth.max()) + 0.1)
    assert np.abs(marched - depth.ravel()[idx]).max() < 1e-3


@pytest.mark.parametrize("origin", [(0, 0, 0), (0.3, -0.2, 0.5)])
def test_depth_lies_on_a_surface(origin):
    grid = ErpGrid(128, 64)
    scene = default_scene(3)
    _, depth, ids = render_scene(scene, origin, grid, return_ids=True)
    pts = np.asarray(origin) + depth[..., None] * grid.directions()
    for k, prim in enumerate(scene.primitives):
        sel = ids == k
        if sel.any():
            assert np.abs(prim.implicit(pts[sel])).max() < 1e-6


def test_rendering_is_deterministic():
    grid = ErpGrid(64, 32)
    a = render_scene(default_scene(4), (0, 0, 0), grid, supersample=2)
    b = render_scene(default_scene(4), (0, 0, 0), grid, supersample=2, threads=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = render_scene(default_scene(5), (0, 0, 0), grid)
    assert not np.array_equal(a[0], c[0])


def test_zero_baseline_rig_has_identical_views():
    rig = make_rig(default_scene(0), (0, 0, 0), 0.0, ErpGrid(64, 32))
    for view in (rig.up, rig.right):
        assert np.array_equal(view[0], rig.center[0]) and np.array_equal(view[1], rig.center[1])


def test_shell_up_view_depth_closed_form():
    grid = ErpGrid(128, 64)
    b, radius = 0.26, 3.0
    rig = make_rig(SHELL, (0, 0, 0), b, grid)
    _, theta = grid.angles()
    # ray from (0, b, 0): |b*y_hat + t*d| = R  =>  t = -b cos(theta) + sqrt(R^2 - b^2 sin^2(theta))
    expected = -b * np.cos(theta) + np.sqrt(radius**2 - b**2 * np.sin(theta) ** 2)
    assert np.abs(rig.up[1] - expected).max() < 1e-12
    phi, _ = grid.angles()
    expected = -b * np.sin(phi) * np.sin(theta) + np.sqrt(radius**2 - b**2 * (1 - (np.sin(phi) * np.sin(theta)) ** 2))
    assert np.abs(rig.right[1] - expected).max() < 1e-12


@pytest.mark.parametrize("view,axis", [("up", "y"), ("right", "x")])
def test_splatting_ground_truth_reproduces_rendered_view(view, axis):
    grid = ErpGrid(256, 128)
    rig = make_rig(default_scene(0), (0, 0, 0), 0.26, grid, supersample=2)
    color, depth = rig.center
    res = splat_render(color, depth, BaselineSpec(axis, rig.baseline))
    target = getattr(rig, view)[0]
    band = np.zeros(grid.shape, bool)
    band[4:-4] = True
    valid = res.valid & band
    err = (res.color - target)[valid]
    psnr = 10 * np.log10(1 / np.mean(err**2))
    assert psnr > 30.0
    # the wrong direction is much worse, which pins down the baseline sign
    wrong = splat_render(color, depth, BaselineSpec(axis, -rig.baseline))
    err = (wrong.color - target)[wrong.valid & band]
    assert 10 * np.log10(1 / np.mean(err**2)) < psnr - 5.0


def test_origin_outside_shell_is_rejected():
    with pytest.raises(ValueError, match="inside"):
        render_scene(SHELL, (5, 0, 0), ErpGrid(16, 8))


def test_textures():
    pts = np.random.default_rng(0).uniform(-3, 3, (500, 3))
    flat = Texture("flat", albedo=(0.2, 0.4, 0.6))(pts)
    assert np.array_equal(flat, np.broadcast_to([0.2, 0.4, 0.6], flat.shape))
    checker = Texture("checker", 0.5, contrast=0.8)(pts)
    assert set(np.round(np.unique(checker), 12)) <= {0.2, 1.0}
    noise = Texture("noise", 0.5, 3, seed=1)(pts)
    assert noise.min() >= 0.2 - 1e-12 and noise.max() <= 1.0 + 1e-12
    assert np.array_equal(noise, Texture("noise", 0.5, 3, seed=1)(pts))
    with pytest.raises(ValueError):
        Texture("marble")
    with pytest.raises(ValueError):
        Texture("noise", 0.0)


def test_parse_scene():
    scene = parse_scene(
        "# room\n"
        "box center=0,0,0 half=2,1.5,3 texture=noise scale=0.3 seed=1\n"
        "\n"
        "sphere center=1,0,1 radius=0.4 texture=checker scale=0.15 albedo=0.9,0.5,0.4\n"
        "plane center=0,0,2 axis=z half=0.5,0.5 texture=flat  # a poster\n"
    )
    box, sphere, plane = scene.primitives
    assert box == Box((0.0, 0.0, 0.0), (2.0, 1.5, 3.0), Texture("noise", 0.3, 3, 1))
    assert sphere.radius == 0.4 and sphere.texture.albedo == (0.9, 0.5, 0.4)
    assert plane.axis == "z" and plane.half == (0.5, 0.5)
    assert sphere.texture.seed == 4  # defaults to seed + line number


@pytest.mark.parametrize("text,match", [
    ("box center=0,0,0 half=1,1,1\ncone center=0,0,0\n", "line 2: unknown primitive"),
    ("box center=0,0,0\n", "line 1: missing field 'half'"),
    ("\n\nsphere center=0,0 radius=1\n", "line 3"),
    ("box center=0,0,0 half=1,1,1 colour=red\n", "line 1: unknown fields"),
    ("plane center=0,0,1 axis=w half=1,1\n", "line 1: axis"),
    ("box center=0,0,0 half=1,1,1 junk\n", "line 1"),
])
def test_parse_scene_errors(text, match):
    with pytest.raises(ValueError, match=match):
        parse_scene(text)


def test_default_scene_depth_range():
    _, depth = render_scene(default_scene(0), (0, 0, 0), ErpGrid(128, 64))
    assert depth.min() > 1.5 and depth.max() < 10.0
