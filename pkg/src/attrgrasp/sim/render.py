"""Top-down RGB-D heightmap rendering with optional visual jitter."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

TABLE_RGB = (0.45, 0.42, 0.40)
NUM_BACKGROUNDS = 8


@dataclass
class Heightmap:
    rgb: np.ndarray    # H x W x 3 in [0, 1]
    depth: np.ndarray  # H x W, height above table
    resolution: float  # workspace units per pixel

    @property
    def shape(self):
        return self.depth.shape

    def stacked(self) -> np.ndarray:
        """H x W x 4 float32 array (rgb then depth)."""
        return np.concatenate([self.rgb, self.depth[..., None]], axis=-1).astype(np.float32)

    @classmethod
    def from_stacked(cls, arr, resolution=None):
        arr = np.asarray(arr)
        res = resolution if resolution is not None else 1.0 / arr.shape[1]
        return cls(arr[..., :3], arr[..., 3], res)

    def astype(self, dtype) -> "Heightmap":
        return Heightmap(self.rgb.astype(dtype), self.depth.astype(dtype), self.resolution)

    def equals(self, other: "Heightmap") -> bool:
        return np.array_equal(self.rgb, other.rgb) and np.array_equal(self.depth, other.depth)


@dataclass(frozen=True)
class Jitter:
    """Visual randomization applied on top of a clean render.

    ``color`` is the half-width of the brightness/contrast/saturation
    factor range; ``depth_sigma`` the std of additive depth noise;
    ``background_texture`` swaps the table for one of the procedural
    textures picked by the scene's background seed.
    """

    color: float = 0.0
    depth_sigma: float = 0.0
    background_texture: bool = False
    seed: int = 0

    @property
    def active(self) -> bool:
        return self.color > 0 or self.depth_sigma > 0 or self.background_texture

    def reseed(self, seed: int) -> "Jitter":
        return replace(self, seed=int(seed))


NO_JITTER = Jitter()
DEFAULT_JITTER = Jitter(color=0.2, depth_sigma=0.01, background_texture=True)


def pixel_centers(size: int):
    """World (x, y) grids of pixel centers for a size x size heightmap."""
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="xy")


@lru_cache(maxsize=32)
def _pixel_grid(size: int):
    x, y = pixel_centers(size)
    x.setflags(write=False)
    y.setflags(write=False)
    return x, y


@lru_cache(maxsize=64)
def background_texture(index: int, size: int) -> np.ndarray:
    """One of the procedural table textures (index modulo NUM_BACKGROUNDS)."""
    index = index % NUM_BACKGROUNDS
    rng = np.random.default_rng(1000 + index)
    x, y = _pixel_grid(size)
    base = rng.uniform(0.2, 0.8, 3)
    alt = np.clip(base + rng.uniform(-0.35, 0.35, 3), 0, 1)
    kind = index % 4
    if kind == 0:  # stripes
        theta = rng.uniform(0, np.pi)
        f = rng.uniform(6, 14)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * f * (np.cos(theta) * x + np.sin(theta) * y))
    elif kind == 1:  # checker
        f = int(rng.integers(4, 10))
        t = ((np.floor(x * f) + np.floor(y * f)) % 2).astype(float)
    elif kind == 2:  # smooth blobs
        t = np.zeros_like(x)
        for _ in range(6):
            cx, cy, s = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.25)
            t += np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
        t = t / t.max()
    else:  # wood grain
        f = rng.uniform(10, 25)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * f * (y + 0.05 * np.sin(2 * np.pi * 3 * x)))
    tex = base[None, None, :] * (1 - t[..., None]) + alt[None, None, :] * t[..., None]
    tex = tex.astype(np.float64)
    tex.setflags(write=False)
    return tex


def _object_texture(obj, x, y):
    rng = np.random.default_rng(obj.texture_seed)
    u, v = obj.to_local(x, y)
    theta = rng.uniform(0, np.pi)
    f = rng.uniform(25, 45)
    return 0.75 + 0.25 * np.sign(np.sin(2 * np.pi * f * (np.cos(theta) * u + np.sin(theta) * v)))


def clean_layers(scene, size: int):
    """Rasterize a scene: rgb, depth and per-pixel object index (-1 = table)."""
    x, y = _pixel_grid(size)
    depth = np.zeros((size, size))
    owner = np.full((size, size), -1, dtype=np.int64)
    rgb = np.empty((size, size, 3))
    rgb[:] = table_rgb(scene.background_seed)
    for k, obj in enumerate(scene.objects):
        r = obj.radius + 1.5 / size
        px, py, _ = obj.pose
        c0, c1 = max(int((px - r) * size), 0), min(int(np.ceil((px + r) * size)), size)
        r0, r1 = max(int((py - r) * size), 0), min(int(np.ceil((py + r) * size)), size)
        if c0 >= c1 or r0 >= r1:
            continue
        xs, ys = x[r0:r1, c0:c1], y[r0:r1, c0:c1]
        h, top = obj.surface(xs, ys)
        win = h > depth[r0:r1, c0:c1]
        if not win.any():
            continue
        colors = np.stack([np.asarray(p.rgb, dtype=np.float64) for p in obj.parts])
        col = colors[np.maximum(top, 0)]
        if obj.texture_seed:
            col = col * _object_texture(obj, xs, ys)[..., None]
        # height shading makes domes read as domes in rgb as well
        hmax = max(p.size[2] for p in obj.parts)
        col = col * (0.8 + 0.2 * np.clip(h / hmax, 0, 1))[..., None]
        depth[r0:r1, c0:c1] = np.where(win, h, depth[r0:r1, c0:c1])
        owner[r0:r1, c0:c1] = np.where(win, k, owner[r0:r1, c0:c1])
        rgb[r0:r1, c0:c1] = np.where(win[..., None], col, rgb[r0:r1, c0:c1])
    return rgb, depth, owner


def table_rgb(background_seed: int) -> np.ndarray:
    """Plain table color with a small per-scene tint (training randomization)."""
    if background_seed == 0:
        return np.asarray(TABLE_RGB)
    rng = np.random.default_rng(background_seed)
    return np.clip(np.asarray(TABLE_RGB) + rng.uniform(-0.06, 0.06, 3), 0, 1)


def _color_jitter(rgb, amount, rng):
    # contrast pivots on a fixed gray so jitter stays pixel-local
    b, c, s = rng.uniform(1 - amount, 1 + amount, 3)
    out = rgb * b
    out = (out - 0.5) * c + 0.5
    lum = out @ np.array([0.299, 0.587, 0.114])
    out = lum[..., None] + (out - lum[..., None]) * s
    return np.clip(out, 0.0, 1.0)


def render(scene, jitter: Jitter = NO_JITTER, size: int = 96):
    """Render ``scene`` to a heightmap plus boolean background mask.

    The mask is computed from the clean depth, so it never contains object
    pixels even when depth noise is on.
    """
    rgb, depth, owner = clean_layers(scene, size)
    mask = depth == 0
    if jitter.active:
        rng = np.random.default_rng([int(jitter.seed), int(scene.rng_seed)])
        if jitter.background_texture:
            tex = background_texture(scene.background_seed, size)
            rgb = np.where(mask[..., None], tex, rgb)
        rgb, depth = perturb(rgb, depth, jitter, rng)
    hm = Heightmap(rgb.astype(np.float32), depth.astype(np.float32), 1.0 / size)
    return hm, mask


def perturb(rgb, depth, jitter: Jitter, rng: np.random.Generator):
    """Color jitter then clipped Gaussian depth noise, as configured."""
    if jitter.color > 0:
        rgb = _color_jitter(rgb, jitter.color, rng)
    if jitter.depth_sigma > 0:
        noise = rng.normal(0.0, jitter.depth_sigma, depth.shape)
        depth = np.maximum(depth + noise, 0.0)
    return rgb, depth


def footprint_mask(obj, size: int = 96) -> np.ndarray:
    x, y = _pixel_grid(size)
    return obj.contains(x, y)
