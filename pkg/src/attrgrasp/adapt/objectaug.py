"""Object-level augmentation: cut objects out of single-object images and
recompose them into synthetic cluttered scenes for adversarial adaptation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..sim import NO_JITTER, Heightmap, Jitter, PlacementError, perturb


class EmptyMask(ValueError):
    pass


class MultipleObjects(ValueError):
    pass


@dataclass
class ObjectCrop:
    rgb: np.ndarray    # h x w x 3
    depth: np.ndarray  # h x w
    mask: np.ndarray   # h x w bool, tight to its bounding box
    provenance: int = 0

    def __post_init__(self):
        if not self.mask.any():
            raise EmptyMask("crop mask is empty")


@dataclass
class AugmentedImageSet:
    images: list
    seed: int
    crop_ids: list = field(default_factory=list)    # per image, provenance ids of the pasted crops
    placements: list = field(default_factory=list)  # per image, (row, col, mask) of each crop
    domain: str = "target"

    def __len__(self):
        return len(self.images)


def _bbox(mask):
    rows, cols = np.nonzero(mask)
    return rows.min(), rows.max() + 1, cols.min(), cols.max() + 1


def extract_objects(images, masks=None, threshold: float = 0.0) -> list[ObjectCrop]:
    """One crop per single-object image.

    The object mask is depth > ``threshold`` unless background masks are
    given (e.g. the simulator's clean-depth mask for noisy renders).
    """
    crops = []
    for i, hm in enumerate(images):
        if masks is not None:
            obj = ~np.asarray(masks[i], dtype=bool)
        else:
            obj = np.asarray(hm.depth) > threshold
        if not obj.any():
            raise EmptyMask(f"image {i} has no pixels above the background")
        _, n = ndimage.label(obj, structure=np.ones((3, 3)))
        if n > 1:
            raise MultipleObjects(f"image {i} holds {n} separate objects")
        r0, r1, c0, c1 = _bbox(obj)
        m = obj[r0:r1, c0:c1]
        rgb = np.where(m[..., None], np.asarray(hm.rgb, dtype=np.float64)[r0:r1, c0:c1], 0.0)
        depth = np.where(m, np.asarray(hm.depth, dtype=np.float64)[r0:r1, c0:c1], 0.0)
        crops.append(ObjectCrop(rgb, depth, m, i))
    return crops


def transform_crop(crop: ObjectCrop, scale: float = 1.0, flip: bool = False, angle: float = 0.0) -> ObjectCrop:
    """Scale, mirror (left-right) and rotate a crop; nearest-neighbor sampling keeps the mask crisp."""
    if scale == 1.0 and not flip and angle == 0.0:
        return crop
    rgb, depth, mask = crop.rgb, crop.depth, crop.mask
    if flip:
        rgb, depth, mask = rgb[:, ::-1], depth[:, ::-1], mask[:, ::-1]
    h, w = mask.shape
    c, s = math.cos(angle), math.sin(angle)
    # output extent of the rotated, scaled box
    ow = int(math.ceil(scale * (abs(c) * w + abs(s) * h))) + 2
    oh = int(math.ceil(scale * (abs(s) * w + abs(c) * h))) + 2
    # matching parity puts output pixel centers on source centers for quarter turns
    ow += (ow - (w if abs(c) >= abs(s) else h)) % 2
    oh += (oh - (h if abs(c) >= abs(s) else w)) % 2
    rr, cc = np.meshgrid(np.arange(oh) + 0.5 - oh / 2, np.arange(ow) + 0.5 - ow / 2, indexing="ij")
    # inverse map: output offset -> source offset
    sx = (c * cc + s * rr) / scale + w / 2 - 0.5
    sy = (-s * cc + c * rr) / scale + h / 2 - 0.5
    # snap float noise so exact-grid samples are not dropped at the crop border
    coords = np.round(np.stack([sy, sx]), 9)
    m = ndimage.map_coordinates(mask.astype(np.float64), coords, order=0, mode="constant", cval=0.0) > 0.5
    if not m.any():
        raise EmptyMask("transform left no object pixels")
    d = ndimage.map_coordinates(depth, coords, order=0, mode="constant")
    col = np.stack([ndimage.map_coordinates(rgb[..., k], coords, order=0, mode="constant") for k in range(3)], -1)
    r0, r1, c0, c1 = _bbox(m)
    m = m[r0:r1, c0:c1]
    return ObjectCrop(np.where(m[..., None], col[r0:r1, c0:c1], 0.0), np.where(m, d[r0:r1, c0:c1], 0.0), m,
                      crop.provenance)


def mask_iou(a, b) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def _paste_mask(shape, r, c, m):
    full = np.zeros(shape, dtype=bool)
    full[r:r + m.shape[0], c:c + m.shape[1]] = m
    return full


def object_aug(crops, count: int, rng: np.random.Generator, backgrounds=None, jitter: Jitter = NO_JITTER,
               iou_max: float = 0.05, scale=(0.8, 1.2), objects_per_image=(1, 5), mode: str = "aug",
               max_retries: int = 50, size: int = 96, seed: int = 0) -> AugmentedImageSet:
    """Synthesize ``count`` target-domain images from object crops.

    ``mode`` selects the augmentation variant: "aug" (scale, flip, rotate,
    shift, overlay), "overlay" (shift and overlay only). Backgrounds are
    heightmaps of empty workspaces; a plain table is used when none are
    given. ``jitter`` perturbs each composed image.
    """
    if not crops:
        raise ValueError("need at least one crop")
    if count < 1:
        raise ValueError("count must be >= 1")
    if mode not in ("aug", "overlay"):
        raise ValueError(f"unknown mode {mode!r}")
    images, ids, places = [], [], []
    lo, hi = objects_per_image
    for _ in range(count):
        if backgrounds:
            bg = backgrounds[int(rng.integers(len(backgrounds)))]
            rgb = np.array(bg.rgb, dtype=np.float64)
            depth = np.array(bg.depth, dtype=np.float64)
        else:
            from ..sim.render import TABLE_RGB
            rgb = np.empty((size, size, 3))
            rgb[:] = TABLE_RGB
            depth = np.zeros((size, size))
        k = int(rng.integers(lo, hi + 1))
        placed, used = [], []
        for _ in range(k):
            crop = crops[int(rng.integers(len(crops)))]
            for _ in range(max_retries):
                if mode == "aug":
                    try:
                        t = transform_crop(crop, float(rng.uniform(*scale)), bool(rng.random() < 0.5),
                                           float(rng.uniform(0, 2 * math.pi)))
                    except EmptyMask:
                        # a sliver-thin crop can miss every sample point; draw another transform
                        continue
                else:
                    t = crop
                h, w = t.mask.shape
                if h > size or w > size:
                    continue
                r = int(rng.integers(0, size - h + 1))
                c = int(rng.integers(0, size - w + 1))
                full = _paste_mask((size, size), r, c, t.mask)
                if all(mask_iou(full, _paste_mask((size, size), *p)) <= iou_max for p in placed):
                    break
            else:
                raise PlacementError(f"could not place crop {crop.provenance} within IoU {iou_max}")
            win = t.mask
            rgb[r:r + h, c:c + w] = np.where(win[..., None], t.rgb, rgb[r:r + h, c:c + w])
            depth[r:r + h, c:c + w] = np.where(win, t.depth, depth[r:r + h, c:c + w])
            placed.append((r, c, t.mask))
            used.append(crop.provenance)
        if jitter.active:
            rgb, depth = perturb(rgb, depth, jitter, rng)
        images.append(Heightmap(rgb.astype(np.float32), depth.astype(np.float32), 1.0 / size))
        ids.append(used)
        places.append(placed)
    return AugmentedImageSet(images, seed, ids, places)


def raw_object_set(images, count: int, rng: np.random.Generator, seed: int = 0) -> AugmentedImageSet:
    """The "Objects" ablation: the single-object images themselves, resampled to ``count``."""
    idx = rng.integers(len(images), size=count)
    return AugmentedImageSet([images[int(i)] for i in idx], seed, [[int(i)] for i in idx], [[] for _ in idx])
