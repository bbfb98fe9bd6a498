"""Recognition, attention and instance-grasping metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..net import GraspNet, select_action
from ..sim import DEFAULT_JITTER, NO_JITTER, Gripper, Jitter, footprint_mask, grasp_oracle, render, sample_scene

ENVIRONMENTS = {
    "basic": ("basic", NO_JITTER),
    "basic_jitter": ("basic", DEFAULT_JITTER),
    "novel": ("novel", NO_JITTER),
    "novel_jitter": ("novel", DEFAULT_JITTER),
}


def environment(name: str, jitter_seed: int = 0):
    if name not in ENVIRONMENTS:
        raise KeyError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    pool, jitter = ENVIRONMENTS[name]
    return pool, jitter.reseed(jitter_seed) if jitter.active else jitter


@dataclass
class EvalCase:
    scene: object
    query: str
    target_uid: int
    seed: int

    def __post_init__(self):
        self.scene.get(self.target_uid)  # raises KeyError if absent

    @property
    def target(self):
        return self.scene.get(self.target_uid)


def make_cases(n: int, pool="basic", seed: int = 0, num_objects: int = 4, target=None, query=None) -> list[EvalCase]:
    """Held-out evaluation cases with unique attributes per scene.

    ``target`` forces a specific object into every scene (placed at a
    random pose) and ``query`` overrides the generated query text.
    """
    cases = []
    for i in range(n):
        s = seed * 100003 + i
        scene = sample_scene(num_objects, pool, rng_seed=s, objects=[target] if target is not None else None)
        rng = np.random.default_rng([seed, i, 7])
        obj = scene.objects[0] if target is not None else scene.objects[int(rng.integers(len(scene.objects)))]
        cases.append(EvalCase(scene, query or obj.text, obj.uid, s))
    return cases


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    d = 1 + z * z / n
    c = (p + z * z / (2 * n)) / d
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / d
    return max(0.0, c - h), min(1.0, c + h)


@dataclass
class MetricsReport:
    n: int
    recognition: float
    attention: float
    grasp_success: float
    per_object: dict = field(default_factory=dict)   # query -> [successes, count]
    counts: dict = field(default_factory=dict)

    def ci(self, metric: str):
        return wilson_interval(self.counts[metric], self.n)

    def as_row(self) -> dict:
        row = {"n": self.n}
        for m in ("recognition", "attention", "grasp_success"):
            lo, hi = self.ci(m)
            row[m] = f"{getattr(self, m):.4f}"
            row[f"{m}_ci_lo"] = f"{lo:.4f}"
            row[f"{m}_ci_hi"] = f"{hi:.4f}"
        return row


def attention_target_mask(target_mask, stride: int, min_fraction: float = 0.25):
    """Downsample a pixel mask to feature cells covered at least ``min_fraction`` by the target."""
    h, w = target_mask.shape
    frac = target_mask.reshape(h // stride, stride, w // stride, stride).mean(axis=(1, 3))
    return frac >= min_fraction


def evaluate(model: GraspNet, cases, jitter: Jitter = NO_JITTER, gripper: Gripper | None = None,
             batch: int = 8) -> MetricsReport:
    """One greedy grasp per case; every case counted exactly once."""
    if not cases:
        raise ValueError("no evaluation cases")
    gripper = gripper or Gripper(num_angles=model.config.num_angles)
    size = model.config.image_size
    rec = att = succ = 0
    per_object: dict = {}
    model.eval()
    for s in range(0, len(cases), batch):
        chunk = cases[s:s + batch]
        hms = [render(c.scene, jitter, size)[0] for c in chunk]
        with torch.no_grad():
            x = model.image_tensor(hms)
            texts = [c.query for c in chunk]
            maps = model(x, texts)
            heat = model.attention_heatmap(x, texts) if model.config.text_mode != "none" else None
        for j, c in enumerate(chunk):
            tmask = footprint_mask(c.target, size)
            a = select_action(maps[j], 0.0, None)
            hit = bool(tmask[a.row, a.col])
            o = grasp_oracle(c.scene, a, gripper, size)
            ok = o.success and o.grasped.uid == c.target_uid
            if heat is not None:
                cell = np.unravel_index(int(torch.argmax(heat[j])), heat[j].shape)
                att += bool(attention_target_mask(tmask, model.config.stride)[cell])
            rec += hit
            succ += ok
            key = c.target.name or c.target.text
            po = per_object.setdefault(key, [0, 0])
            po[0] += ok
            po[1] += 1
    n = len(cases)
    return MetricsReport(n, rec / n, att / n, succ / n, per_object,
                         {"recognition": rec, "attention": att, "grasp_success": succ})


def eval_recognition(model, cases, jitter: Jitter = NO_JITTER) -> float:
    return evaluate(model, cases, jitter).recognition


def eval_grasping(model, cases, jitter: Jitter = NO_JITTER) -> float:
    return evaluate(model, cases, jitter).grasp_success


def affordance_confusion(model: GraspNet, scene, queries, jitter: Jitter = NO_JITTER) -> np.ndarray:
    """Rows = queries, cols = scene objects; max affordance inside each object's mask."""
    size = model.config.image_size
    hm, _ = render(scene, jitter, size)
    with torch.no_grad():
        maps = model(model.image_tensor([hm] * len(queries)), list(queries)).max(dim=1).values.numpy()
    masks = [footprint_mask(o, size) for o in scene.objects]
    out = np.zeros((len(queries), len(masks)))
    for i in range(len(queries)):
        for j, m in enumerate(masks):
            out[i, j] = maps[i][m].max() if m.any() else 0.0
    return out


def confusion_from_maps(maps, masks) -> np.ndarray:
    """Same reduction on precomputed (Q, N, H, W) maps, for testing."""
    maps = np.asarray(maps).max(axis=1)
    return np.array([[m[k].max() if k.any() else 0.0 for k in masks] for m in maps])
