from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .objects import SceneObject, make_pool

# objects stay inside the disk inscribed in the workspace, so rotating the
# image about its center never pushes an object out of frame
WORKSPACE_RADIUS = 0.5


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scene:
    objects: tuple = ()
    background_seed: int = 0
    rng_seed: int = 0

    def without(self, uid: int) -> "Scene":
        return replace(self, objects=tuple(o for o in self.objects if o.uid != uid))

    def get(self, uid: int) -> SceneObject:
        for o in self.objects:
            if o.uid == uid:
                return o
        raise KeyError(uid)

    def labels(self) -> list[tuple]:
        return [(o.color, o.shape) for o in self.objects]


def fits_workspace(obj: SceneObject, margin: float = 0.01) -> bool:
    x, y, _ = obj.pose
    return math.hypot(x - 0.5, y - 0.5) + obj.radius <= WORKSPACE_RADIUS - margin


def _place(obj, placed, rng, margin, gap, max_attempts):
    reach = WORKSPACE_RADIUS - margin - obj.radius
    if reach < 0:
        raise PlacementError("object larger than workspace")
    for _ in range(max_attempts):
        r = reach * math.sqrt(rng.random())
        phi = rng.uniform(0, 2 * math.pi)
        x, y = 0.5 + r * math.cos(phi), 0.5 + r * math.sin(phi)
        if all(math.hypot(x - o.pose[0], y - o.pose[1]) >= obj.radius + o.radius + gap for o in placed):
            return x, y, rng.uniform(0, 2 * math.pi)
    return None


def sample_scene(num_objects: int, pool="basic", rng_seed: int = 0, unique_attributes: bool = True,
                 max_attempts: int = 200, margin: float = 0.01, gap: float = 0.0,
                 background_seed: int | None = None, objects=None) -> Scene:
    """Drop ``num_objects`` objects from ``pool`` at random non-overlapping poses.

    Overlap is tested on bounding circles, which is conservative. With
    ``unique_attributes`` no two objects share a (color, shape) label.
    Pass ``objects`` to force the first few objects (e.g. an eval target).
    """
    if num_objects < 1:
        raise ValueError("num_objects must be >= 1")
    pool = make_pool(pool)
    rng = np.random.default_rng(rng_seed)
    if background_seed is None:
        background_seed = int(rng.integers(1, 2**31 - 1))
    forced = list(objects or [])
    placed: list[SceneObject] = []
    seen = set()
    for i in range(num_objects):
        for _ in range(max_attempts):
            obj = forced[i] if i < len(forced) else pool.sample(rng)
            if unique_attributes and (obj.color, obj.shape) in seen:
                if i < len(forced):
                    raise ValueError("forced objects share attributes")
                continue
            break
        else:
            raise PlacementError("could not draw an object with unique attributes")
        pose = _place(obj, placed, rng, margin, gap, max_attempts)
        if pose is None:
            raise PlacementError(f"no free placement for object {i} after {max_attempts} attempts")
        placed.append(obj.at(*pose, uid=i + 1))
        seen.add((obj.color, obj.shape))
    return Scene(tuple(placed), background_seed, int(rng_seed))


def single_object_scene(obj: SceneObject, rng_seed: int = 0, background_seed: int | None = None,
                        center: bool = False) -> Scene:
    rng = np.random.default_rng(rng_seed)
    if background_seed is None:
        background_seed = int(rng.integers(1, 2**31 - 1))
    if center:
        pose = (0.5, 0.5, rng.uniform(0, 2 * math.pi))
    else:
        pose = _place(obj, [], rng, 0.01, 0.0, 10)
    return Scene((obj.at(*pose, uid=1),), background_seed, int(rng_seed))
