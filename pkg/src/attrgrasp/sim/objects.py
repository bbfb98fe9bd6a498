"""Scene objects: basic blocks and procedurally composed novel objects.

World frame: unit-square workspace, x to the right (image column), y down
(image row), yaw measured from +x toward +y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..attributes import COLORS, SHAPES, Vocabulary, label_of_text

PRIMITIVES = ("cube", "cuboid", "cylinder", "sphere")

CANONICAL_RGB = {
    "red": (0.85, 0.12, 0.10),
    "green": (0.15, 0.70, 0.20),
    "blue": (0.12, 0.25, 0.85),
    "yellow": (0.95, 0.85, 0.10),
    "black": (0.08, 0.08, 0.08),
}

_BASIC_VOCAB = Vocabulary.basic()


@dataclass(frozen=True)
class Part:
    """One primitive of an object, placed in the object's local frame."""

    shape: str
    rgb: tuple
    size: tuple  # (length, width, height)
    offset: tuple = (0.0, 0.0)
    yaw: float = 0.0
    color: str | None = None

    @property
    def radius(self) -> float:
        l, w, _ = self.size
        if self.shape in ("cylinder", "sphere"):
            return l / 2
        return 0.5 * math.hypot(l, w)

    @property
    def area(self) -> float:
        l, w, _ = self.size
        if self.shape in ("cylinder", "sphere"):
            return math.pi * (l / 2) ** 2
        return l * w

    def local(self, u, v):
        """Object-frame coordinates into this part's frame."""
        du, dv = u - self.offset[0], v - self.offset[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * du + s * dv, -s * du + c * dv

    def contains_local(self, a, b):
        l, w, _ = self.size
        if self.shape in ("cylinder", "sphere"):
            return a * a + b * b <= (l / 2) ** 2
        return (np.abs(a) <= l / 2) & (np.abs(b) <= w / 2)

    def height_local(self, a, b):
        l, w, h = self.size
        inside = self.contains_local(a, b)
        if self.shape == "sphere":
            r = l / 2
            d2 = np.minimum(a * a + b * b, r * r)
            z = (h / 2) + (h / 2) * np.sqrt(1.0 - d2 / (r * r))
            return np.where(inside, z, 0.0)
        return np.where(inside, h, 0.0)


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    rgb: tuple
    size: tuple
    pose: tuple = (0.5, 0.5, 0.0)
    texture_seed: int = 0
    parts: tuple = ()
    name: str | None = None
    uid: int = 0

    def __post_init__(self):
        if not self.parts:
            part = Part(self.shape, tuple(self.rgb), tuple(self.size), color=self.color)
            object.__setattr__(self, "parts", (part,))
        l, w, h = self.size
        if h <= 0:
            raise ValueError("object height must be positive")
        if self.shape == "cuboid" and math.isclose(l, w):
            raise ValueError("cuboid needs length != width")
        if self.shape in ("cube", "cylinder", "sphere") and not math.isclose(l, w):
            raise ValueError(f"{self.shape} needs length == width")

    @property
    def attr_label(self) -> np.ndarray:
        return label_of_text(f"{self.color} {self.shape}", _BASIC_VOCAB, 2)

    def label(self, vocab: Vocabulary, n: int = 2) -> np.ndarray:
        lab = label_of_text(f"{self.color} {self.shape}", vocab, n)
        if n > 2 and self.name is not None and self.name in vocab:
            lab[2] = vocab.id(self.name)
        return lab

    @property
    def text(self) -> str:
        return f"{self.color} {self.shape}"

    @property
    def radius(self) -> float:
        return max(math.hypot(*p.offset) + p.radius for p in self.parts)

    @property
    def area(self) -> float:
        return sum(p.area for p in self.parts)

    def at(self, x: float, y: float, yaw: float, uid: int | None = None) -> "SceneObject":
        return replace(self, pose=(float(x), float(y), float(yaw)), uid=self.uid if uid is None else uid)

    def to_local(self, x, y):
        px, py, yaw = self.pose
        dx, dy = x - px, y - py
        c, s = math.cos(yaw), math.sin(yaw)
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, x, y) -> np.ndarray:
        u, v = self.to_local(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        out = np.zeros(np.shape(u), dtype=bool)
        for p in self.parts:
            out |= p.contains_local(*p.local(u, v))
        return out

    def surface(self, x, y):
        """Height and top-part index at world points (-1 where outside)."""
        u, v = self.to_local(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        height = np.zeros(np.shape(u))
        top = np.full(np.shape(u), -1, dtype=np.int64)
        for i, p in enumerate(self.parts):
            h = p.height_local(*p.local(u, v))
            better = h > height
            height = np.where(better, h, height)
            top = np.where(better, i, top)
        return height, top


def basic_object(color: str, shape: str, size, rgb=None, texture_seed: int = 0) -> SceneObject:
    if color not in COLORS or shape not in SHAPES:
        raise ValueError(f"not a basic object: {color} {shape}")
    rgb = CANONICAL_RGB[color] if rgb is None else tuple(float(c) for c in rgb)
    return SceneObject(shape, color, tuple(rgb), tuple(float(s) for s in size), texture_seed=texture_seed)


def compose_novel_object(parts: Sequence[Part], rng_seed: int = 0, name: str | None = None,
                         texture_seed: int = 0) -> SceneObject:
    """Composite object; dominant color/shape come from the largest-area part.

    Ties keep the earliest part. ``rng_seed`` only perturbs part rgb when
    positive, so seed 0 reproduces the part colors exactly.
    """
    if not 1 <= len(parts) <= 3:
        raise ValueError("composite objects take 1-3 parts")
    parts = list(parts)
    if rng_seed:
        rng = np.random.default_rng(rng_seed)
        parts = [replace(p, rgb=tuple(np.clip(np.asarray(p.rgb) + rng.uniform(-0.05, 0.05, 3), 0, 1)))
                 for p in parts]
    dom = max(range(len(parts)), key=lambda i: (parts[i].area, -i))
    dominant = parts[dom]
    color = dominant.color
    if color is None:
        raise ValueError("dominant part needs a named color")
    height = max(p.size[2] for p in parts)
    return SceneObject(
        shape=dominant.shape, color=color, rgb=tuple(dominant.rgb),
        size=(dominant.size[0], dominant.size[1], height), texture_seed=texture_seed,
        parts=tuple(parts), name=name,
    )


def _p(shape, rgb, l, w, h, off=(0.0, 0.0), yaw=0.0, color=None):
    return Part(shape, tuple(rgb), (l, w, h), tuple(off), yaw, color)


# Twelve composites standing in for household objects; each label is unique.
NOVEL_TEMPLATES: dict[str, list[Part]] = {
    "apple": [_p("sphere", (0.78, 0.14, 0.12), 0.11, 0.11, 0.11, color="red"),
              _p("cylinder", (0.40, 0.25, 0.10), 0.025, 0.025, 0.125)],
    "banana": [_p("cuboid", (0.93, 0.82, 0.25), 0.19, 0.055, 0.04, color="yellow"),
               _p("cube", (0.20, 0.15, 0.05), 0.025, 0.025, 0.04, off=(0.1, 0.0))],
    "soupcan": [_p("cylinder", (0.72, 0.10, 0.16), 0.10, 0.10, 0.10, color="red"),
                _p("cylinder", (0.90, 0.90, 0.85), 0.06, 0.06, 0.101)],
    "mustard": [_p("cylinder", (0.88, 0.72, 0.05), 0.09, 0.09, 0.12, color="yellow"),
                _p("cylinder", (0.80, 0.15, 0.10), 0.03, 0.03, 0.14, off=(0.025, 0.0))],
    "mug": [_p("cylinder", (0.18, 0.32, 0.70), 0.10, 0.10, 0.09, color="blue"),
            _p("cuboid", (0.12, 0.22, 0.55), 0.035, 0.02, 0.07, off=(0.065, 0.0))],
    "sponge": [_p("cuboid", (0.25, 0.62, 0.28), 0.16, 0.08, 0.04, color="green"),
               _p("cuboid", (0.92, 0.86, 0.30), 0.16, 0.035, 0.04, off=(0.0, 0.0575))],
    "tennisball": [_p("sphere", (0.62, 0.80, 0.22), 0.09, 0.09, 0.09, color="green")],
    "rubik": [_p("cuboid", CANONICAL_RGB["red"], 0.10, 0.05, 0.1, off=(0.0, -0.025), color="red"),
              _p("cube", CANONICAL_RGB["green"], 0.05, 0.05, 0.1, off=(-0.025, 0.025), color="green"),
              _p("cube", CANONICAL_RGB["yellow"], 0.05, 0.05, 0.1, off=(0.025, 0.025), color="yellow")],
    "marker": [_p("cuboid", (0.12, 0.12, 0.14), 0.15, 0.032, 0.032, color="black"),
               _p("cuboid", (0.15, 0.30, 0.80), 0.04, 0.036, 0.036, off=(0.09, 0.0))],
    "plum": [_p("sphere", (0.38, 0.16, 0.55), 0.09, 0.09, 0.09, color="blue")],
    "cup": [_p("cylinder", (0.10, 0.50, 0.38), 0.085, 0.085, 0.10, color="green"),
            _p("cylinder", (0.85, 0.85, 0.80), 0.05, 0.05, 0.101)],
    "lego": [_p("cube", (0.20, 0.35, 0.80), 0.10, 0.10, 0.06, color="blue"),
             _p("cylinder", (0.30, 0.45, 0.90), 0.03, 0.03, 0.075, off=(-0.025, 0.0)),
             _p("cylinder", (0.30, 0.45, 0.90), 0.03, 0.03, 0.075, off=(0.025, 0.0))],
}


def novel_object(name: str) -> SceneObject:
    return compose_novel_object(NOVEL_TEMPLATES[name], name=name)


@dataclass(frozen=True)
class BasicPool:
    """Randomized basic blocks (color, shape, size, rgb and texture)."""

    colors: tuple = COLORS
    shapes: tuple = SHAPES
    rgb_jitter: float = 0.08
    texture_prob: float = 0.2
    cube_side: tuple = (0.07, 0.10)
    cuboid_length: tuple = (0.14, 0.19)
    cuboid_width: tuple = (0.05, 0.08)
    round_diameter: tuple = (0.07, 0.11)
    height: tuple = (0.04, 0.12)

    def sample(self, rng: np.random.Generator, color: str | None = None, shape: str | None = None) -> SceneObject:
        color = color or self.colors[rng.integers(len(self.colors))]
        shape = shape or self.shapes[rng.integers(len(self.shapes))]
        if shape == "cube":
            s = rng.uniform(*self.cube_side)
            size = (s, s, s)
        elif shape == "cuboid":
            size = (rng.uniform(*self.cuboid_length), rng.uniform(*self.cuboid_width), rng.uniform(*self.height))
        elif shape == "cylinder":
            d = rng.uniform(*self.round_diameter)
            size = (d, d, rng.uniform(*self.height))
        else:
            d = rng.uniform(*self.round_diameter)
            size = (d, d, d)
        base = np.asarray(CANONICAL_RGB[color])
        rgb = np.clip(base + rng.uniform(-self.rgb_jitter, self.rgb_jitter, 3), 0.0, 1.0)
        tex = int(rng.integers(1, 2**31 - 1)) if rng.random() < self.texture_prob else 0
        return basic_object(color, shape, size, rgb, tex)

    def labels(self):
        return [(c, s) for c in self.colors for s in self.shapes]


@dataclass(frozen=True)
class NovelPool:
    names: tuple = tuple(NOVEL_TEMPLATES)
    scale: tuple = (0.95, 1.05)
    objects: dict = field(default_factory=dict, compare=False, hash=False)

    def sample(self, rng: np.random.Generator, name: str | None = None) -> SceneObject:
        name = name or self.names[rng.integers(len(self.names))]
        k = rng.uniform(*self.scale)
        parts = [replace(p, size=tuple(x * k for x in p.size), offset=tuple(o * k for o in p.offset))
                 for p in NOVEL_TEMPLATES[name]]
        return compose_novel_object(parts, name=name)

    def labels(self):
        return [(novel_object(n).color, novel_object(n).shape) for n in self.names]


@dataclass(frozen=True)
class FixedPool:
    """Always yields copies of the given objects, cycling in order."""

    items: tuple

    def sample(self, rng: np.random.Generator, index: int | None = None) -> SceneObject:
        if index is None:
            index = int(rng.integers(len(self.items)))
        return self.items[index % len(self.items)]


def make_pool(spec) -> BasicPool | NovelPool | FixedPool:
    if isinstance(spec, (BasicPool, NovelPool, FixedPool)):
        return spec
    if spec == "basic":
        return BasicPool()
    if spec == "novel":
        return NovelPool()
    if isinstance(spec, (list, tuple)):
        if all(isinstance(s, str) for s in spec):
            return NovelPool(names=tuple(spec))
        return FixedPool(tuple(spec))
    raise ValueError(f"unknown object pool: {spec!r}")
