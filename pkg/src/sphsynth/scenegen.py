"""Analytic equirectangular raycaster for synthetic stereo rigs.

Scenes are built from an enclosing shell (an axis-aligned box or a sphere
around the camera), spheres and finite axis-aligned rectangles.  Surfaces
carry solid (3D) procedural textures, so a point has the same color from
every viewpoint and photometric consistency holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_bands
from .sphere import ErpGrid

RIG_BASELINE = 0.26
_AXES = {"x": 0, "y": 1, "z": 2}


# -- textures -------------------------------------------------------------------

@dataclass(frozen=True)
class Texture:
    """Solid texture evaluated at 3D points.

    ``kind`` is ``"flat"``, ``"checker"`` (cell size ``scale``) or
    ``"noise"`` (value noise with cells of ``scale`` meters and ``octaves``
    octaves, one independent lattice per color channel).
    """

    kind: str = "noise"
    scale: float = 0.25
    octaves: int = 3
    seed: int = 0
    albedo: tuple = (1.0, 1.0, 1.0)
    contrast: float = 0.8

    def __post_init__(self):
        if self.kind not in ("flat", "checker", "noise"):
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("texture scale must be positive")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        albedo = np.asarray(self.albedo, dtype=np.float64)
        if self.kind == "flat":
            return np.broadcast_to(albedo, pts.shape[:-1] + (3,)).copy()
        if self.kind == "checker":
            # offset keeps axis-aligned faces away from cell boundaries
            cells = np.floor(pts / self.scale + 0.1234).astype(np.int64).sum(-1)
            level = np.where(cells % 2 == 0, 1.0, 1.0 - self.contrast)
            return level[..., None] * albedo
        noise = _value_noise(pts / self.scale, self.octaves, self.seed)
        return (1.0 - self.contrast + self.contrast * noise) * albedo


def _lattice(seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    return np.concatenate([perm, perm]), rng.random((3, 256))


def _value_noise(p: np.ndarray, octaves: int, seed: int) -> np.ndarray:
    perm, values = _lattice(seed)
    out = np.zeros(p.shape[:-1] + (3,))
    amp, total = 1.0, 0.0
    for octave in range(octaves):
        q = p * (2.0**octave) + 17.0 * octave
        i0 = np.floor(q).astype(np.int64)
        f = q - i0
        f = f * f * (3.0 - 2.0 * f)
        acc = 0.0
        for corner in np.ndindex(2, 2, 2):
            c = np.asarray(corner)
            idx = i0 + c
            hsh = perm[(perm[(perm[idx[..., 0] & 255] + idx[..., 1]) & 255] + idx[..., 2]) & 255]
            wgt = np.prod(np.where(c == 1, f, 1.0 - f), axis=-1)
            acc = acc + wgt[..., None] * values[:, hsh].transpose(*range(1, hsh.ndim + 1), 0)
        out += amp * acc
        total += amp
        amp *= 0.5
    return out / total


# -- primitives -------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box seen from the inside (a room shell)."""

    center: tuple
    half: tuple
    texture: Texture = field(default_factory=Texture)

    def contains(self, p) -> bool:
        return bool(np.all(np.abs(np.asarray(p) - self.center) < self.half))

    def intersect(self, o, d):
        c, hf = np.asarray(self.center), np.asarray(self.half)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(d > 0, (c + hf - o) / d, np.where(d < 0, (c - hf - o) / d, np.inf))
        t = t_hi.min(axis=-1)
        return np.where(t > 0, t, np.inf)

    def implicit(self, p):
        return (np.abs(p - np.asarray(self.center)) - np.asarray(self.half)).max(axis=-1)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture = field(default_factory=Texture)

    def contains(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p) - self.center)) < self.radius

    def intersect(self, o, d):
        oc = o - np.asarray(self.center)
        b = (oc * d).sum(-1)
        c = (oc * oc).sum(-1) - self.radius**2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        near, far = -b - root, -b + root
        t = np.where(near > 0, near, far)
        return np.where((disc >= 0) & (t > 0), t, np.inf)

    def implicit(self, p):
        return np.linalg.norm(p - np.asarray(self.center), axis=-1) - self.radius


@dataclass(frozen=True)
class Rect:
    """Finite rectangle perpendicular to ``axis`` with half extents along the other two axes."""

    center: tuple
    axis: str
    half: tuple
    texture: Texture = field(default_factory=Texture)

    def contains(self, p) -> bool:
        return False

    def _frame(self):
        n = _AXES[self.axis]
        return n, [a for a in range(3) if a != n]

    def intersect(self, o, d):
        n, others = self._frame()
        c = np.asarray(self.center)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (c[n] - o[..., n]) / d[..., n]
        hit = o + np.where(np.isfinite(t), t, 0.0)[..., None] * d
        inside = np.ones(t.shape, bool)
        for a, hf in zip(others, self.half):
            inside &= np.abs(hit[..., a] - c[a]) <= hf
        return np.where(np.isfinite(t) & (t > 0) & inside, t, np.inf)

    def implicit(self, p):
        n, _ = self._frame()
        return p[..., n] - self.center[n]


@dataclass(frozen=True)
class Scene:
    primitives: tuple

    def contains(self, p) -> bool:
        """True when ``p`` lies inside at least one enclosing box or sphere."""
        return any(q.contains(p) for q in self.primitives)


# -- rendering --------------------------------------------------------------------

def trace(scene: Scene, origin, dirs: np.ndarray):
    """Nearest hit distance and primitive index for unit ray directions ``dirs``."""
    o = np.asarray(origin, dtype=np.float64)
    ts = np.stack([prim.intersect(o, dirs) for prim in scene.primitives], axis=-1)
    ids = np.argmin(ts, axis=-1)
    t = np.take_along_axis(ts, ids[..., None], axis=-1)[..., 0]
    return t, ids


def shade(scene: Scene, pts: np.ndarray, ids: np.ndarray) -> np.ndarray:
    color = np.zeros(pts.shape[:-1] + (3,))
    for k, prim in enumerate(scene.primitives):
        sel = ids == k
        if sel.any():
            color[sel] = prim.texture(pts[sel])
    return np.clip(color, 0.0, 1.0)


def render_scene(scene: Scene, origin, grid: ErpGrid, supersample: int = 1, threads=None,
                 return_ids: bool = False):
    """Render ``(color, depth)`` from ``origin``; depth is the Euclidean hit distance.

    With ``supersample > 1`` color averages an ``s x s`` grid of sub-pixel
    rays while depth stays that of the pixel-center ray.
    """
    origin = np.asarray(origin, dtype=np.float64)
    if not scene.contains(origin):
        raise ValueError(f"origin {origin.tolist()} is not inside the scene shell")
    h, w = grid.shape
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5

    def band(rows):
        v = np.arange(h)[rows].astype(np.float64)
        u = np.arange(w, dtype=np.float64)
        phi = (u[None, :] + 0.5) * grid.ang_res_lon
        theta = (v[:, None] + 0.5) * grid.ang_res_lat
        depth, ids = _cast(scene, origin, phi, theta)
        if supersample == 1:
            color = shade(scene, origin + depth[..., None] * _dirs(phi, theta), ids)
        else:
            color = np.zeros(depth.shape + (3,))
            for du in offsets:
                for dv in offsets:
                    p = phi + du * grid.ang_res_lon
                    t = theta + dv * grid.ang_res_lat
                    dd, ii = _cast(scene, origin, p, t)
                    color += shade(scene, origin + dd[..., None] * _dirs(p, t), ii)
            color /= supersample**2
        return color, depth, ids

    parts = map_bands(band, h, threads)
    color, depth, ids = (np.concatenate(p) for p in zip(*parts))
    if return_ids:
        return color, depth, ids
    return color, depth


def _dirs(phi, theta):
    st = np.sin(theta)
    return np.stack(np.broadcast_arrays(np.sin(phi) * st, np.cos(theta), np.cos(phi) * st), axis=-1)


def _cast(scene, origin, phi, theta):
    depth, ids = trace(scene, origin, _dirs(phi, theta))
    if not np.all(np.isfinite(depth)):
        raise ValueError("a ray escaped every primitive; the scene shell is not closed")
    return depth, ids


# -- rigs ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StereoRig:
    """Center view plus views displaced by ``baseline`` along +y (up) and +x (right)."""

    grid: ErpGrid
    baseline: float
    center: tuple  # (color, depth)
    up: tuple
    right: tuple
    center_pos: tuple = (0.0, 0.0, 0.0)


def make_rig(scene: Scene, center, baseline: float, grid: ErpGrid, supersample: int = 1, threads=None) -> StereoRig:
    c = np.asarray(center, dtype=np.float64)
    views = {}
    for name, offset in (("center", (0, 0, 0)), ("up", (0, baseline, 0)), ("right", (baseline, 0, 0))):
        views[name] = render_scene(scene, c + np.asarray(offset), grid, supersample, threads)
    return StereoRig(grid, float(baseline), views["center"], views["up"], views["right"], tuple(c.tolist()))


# -- scene descriptions -------------------------------------------------------------

def default_scene(seed: int = 0) -> Scene:
    """Textured room with a few occluders; the camera sits near (0, 0, 0).

    Surfaces lie 2 to 7 m from the origin.  The rect at +x sits on the
    horizontal rig's epipole.
    """
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(6)]
    return Scene((
        Box((0.0, 0.5, 0.0), (4.0, 2.5, 5.0), Texture("noise", 1.6, 2, seeds[0], (0.95, 0.85, 0.75))),
        Sphere((1.6, -0.6, 2.6), 0.7, Texture("noise", 0.5, 2, seeds[1], (0.9, 0.5, 0.4))),
        Sphere((-2.0, 0.4, -2.2), 0.8, Texture("checker", 0.4, seed=seeds[2], albedo=(0.5, 0.7, 0.95))),
        Rect((-1.2, -0.3, 3.4), "z", (0.9, 1.0), Texture("noise", 0.6, 2, seeds[3], (0.6, 0.9, 0.6))),
        Rect((2.8, 0.0, 0.0), "x", (1.0, 0.9), Texture("noise", 0.6, 2, seeds[4], (0.9, 0.9, 0.5))),
    ))


def _vec(text, n=3):
    vals = tuple(float(x) for x in text.split(","))
    if len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def parse_scene(text: str, seed: int = 0) -> Scene:
    """Parse a plain-text scene.

    One primitive per line: a keyword (``box``, ``sphere``, ``plane``)
    followed by ``key=value`` fields, e.g.::

        box    center=0,0,0 half=2,1.5,3 texture=noise scale=0.3 seed=1
        sphere center=1,0,1 radius=0.4 texture=checker scale=0.15 albedo=0.9,0.5,0.4
        plane  center=0,0,2 axis=z half=0.5,0.5 texture=flat

    Texture seeds default to ``seed`` plus the line number.
    """
    prims = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *items = line.split()
        try:
            kv = dict(item.split("=", 1) for item in items)
        except ValueError:
            raise ValueError(f"line {lineno}: fields must look like key=value") from None
        try:
            tex = Texture(
                kv.pop("texture", "noise"),
                float(kv.pop("scale", 0.25)),
                int(kv.pop("octaves", 3)),
                int(kv.pop("seed", seed + lineno)),
                _vec(kv.pop("albedo", "1,1,1")),
                float(kv.pop("contrast", 0.8)),
            )
            if kind == "box":
                prim = Box(_vec(kv.pop("center")), _vec(kv.pop("half")), tex)
            elif kind == "sphere":
                prim = Sphere(_vec(kv.pop("center")), float(kv.pop("radius")), tex)
            elif kind == "plane":
                axis = kv.pop("axis")
                if axis not in _AXES:
                    raise ValueError(f"axis must be x, y or z, got {axis!r}")
                prim = Rect(_vec(kv.pop("center")), axis, _vec(kv.pop("half"), 2), tex)
            else:
                raise ValueError(f"unknown primitive {kind!r}")
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if kv:
            raise ValueError(f"line {lineno}: unknown fields {sorted(kv)}")
        prims.append(prim)
    if not prims:
        raise ValueError("scene has no primitives")
    return Scene(tuple(prims))
