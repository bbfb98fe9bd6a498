"""One-grasp adaptation: collect a single successful grasp of a new object,
rotate it into N samples, add the object's name token and fine-tune."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from scipy import ndimage

from ..attributes import tokenize
from ..learn.data import EpisodeRecord
from ..learn.train import grasp_loss, make_optimizer
from ..net import GraspNet, select_action
from ..sim import NO_JITTER, GraspAction, Gripper, Heightmap, Jitter, grasp_oracle, render, single_object_scene

log = logging.getLogger(__name__)


class NoSuccessfulGrasp(RuntimeError):
    pass


class RotatedOutOfBounds(ValueError):
    pass


@dataclass
class OneGraspSample:
    v_pre: Heightmap
    t: str
    M: np.ndarray
    a: GraspAction
    q_label: float = 1.0
    rotation: int = 0
    trials: int = 1

    def record(self) -> EpisodeRecord:
        return EpisodeRecord(self.v_pre, self.t, self.M, self.a, self.q_label, domain="target")


def one_grasp_collect(model: GraspNet, obj, query: str, rng: np.random.Generator, max_trials: int = 20,
                      jitter: Jitter = NO_JITTER, gripper: Gripper = Gripper(), size: int = 96) -> OneGraspSample:
    """Drop ``obj`` alone at random poses and run the greedy policy until one grasp works."""
    model.eval()
    for trial in range(1, max_trials + 1):
        scene = single_object_scene(obj, rng_seed=int(rng.integers(2**31 - 1)))
        hm, mask = render(scene, jitter, size)
        with torch.no_grad():
            maps = model(model.image_tensor(hm), [query])[0]
        a = select_action(maps, 0.0, rng)
        if grasp_oracle(scene, a, gripper, size).success:
            return OneGraspSample(hm, query, mask, a, 1.0, 0, trial)
    raise NoSuccessfulGrasp(f"no successful grasp of {query!r} in {max_trials} trials")


def _rotate_array(arr, k: int, num_angles: int, order: int):
    """Rotate an H x W (x C) array about the image center by k * 180/N degrees.

    Rotation is counterclockwise in workspace (x = col, y = row) coordinates,
    matching the grasp-angle convention. Multiples of 90 degrees are done
    by exact index arithmetic.
    """
    k = k % (2 * num_angles)
    deg = k * 180.0 / num_angles
    if deg == 0:
        return arr.copy()
    if deg == 180:
        return arr[::-1, ::-1].copy()
    if deg == 90:
        return np.swapaxes(arr, 0, 1)[:, ::-1].copy()
    if deg == 270:
        return np.swapaxes(arr, 0, 1)[::-1].copy()
    theta = math.radians(deg)
    h, w = arr.shape[:2]
    rr, cc = np.meshgrid(np.arange(h) + 0.5 - h / 2, np.arange(w) + 0.5 - w / 2, indexing="ij")
    c, s = math.cos(theta), math.sin(theta)
    # source = R(-theta) * output offset
    sx = c * cc + s * rr + w / 2 - 0.5
    sy = -s * cc + c * rr + h / 2 - 0.5
    coords = np.stack([sy, sx])
    if arr.ndim == 2:
        return ndimage.map_coordinates(arr, coords, order=order, mode="nearest")
    return np.stack([ndimage.map_coordinates(arr[..., j], coords, order=order, mode="nearest")
                     for j in range(arr.shape[2])], -1)


def rotate_pixel(row: int, col: int, k: int, num_angles: int, size: int) -> tuple[int, int]:
    theta = k * math.pi / num_angles
    x, y = col + 0.5 - size / 2, row + 0.5 - size / 2
    c, s = math.cos(theta), math.sin(theta)
    nx, ny = c * x - s * y, s * x + c * y
    r = int(math.floor(ny + size / 2))
    cc = int(math.floor(nx + size / 2))
    return r, cc


def rotate_action(a: GraspAction, k: int, num_angles: int, size: int) -> GraspAction:
    r, c = rotate_pixel(a.row, a.col, k, num_angles, size)
    if not (0 <= r < size and 0 <= c < size):
        raise RotatedOutOfBounds(f"grasp pixel {(a.row, a.col)} leaves the image under rotation {k}")
    return GraspAction(r, c, (a.angle_index + k) % num_angles)


def rotate_sample(sample: OneGraspSample, k: int, num_angles: int) -> OneGraspSample:
    size = sample.M.shape[0]
    a = rotate_action(sample.a, k, num_angles, size)
    rgb = _rotate_array(np.asarray(sample.v_pre.rgb), k, num_angles, 1).astype(np.float32)
    depth = _rotate_array(np.asarray(sample.v_pre.depth), k, num_angles, 1).astype(np.float32)
    m = _rotate_array(sample.M.astype(np.uint8), k, num_angles, 0).astype(bool)
    return replace(sample, v_pre=Heightmap(rgb, depth, sample.v_pre.resolution), M=m, a=a, rotation=k)


def one_grasp_aug(sample: OneGraspSample, num_angles: int = 6, mode: str = "aug") -> list[OneGraspSample]:
    """N training samples from one grasp.

    "aug" rotates by k * 180/N for k = 0..N-1; "rpt" repeats the raw sample
    N times; "single" returns the raw sample alone.
    """
    if sample.q_label != 1.0:
        raise ValueError("one-grasp augmentation needs a successful grasp")
    if mode == "aug":
        return [rotate_sample(sample, k, num_angles) for k in range(num_angles)]
    if mode == "rpt":
        return [replace(sample) for _ in range(num_angles)]
    if mode == "single":
        return [sample]
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class OneGraspConfig:
    steps: int = 200
    optimizer: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 2e-5
    lambda_m: float = 0.1
    early_stop: float = 1e-3
    source_replay: float = 0.0   # fraction of each batch drawn from source records
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def named_query(name: str, base_query: str) -> str:
    return f"{name}, {base_query}"


def add_name_token(model: GraspNet, name: str, base_query: str):
    """Append ``name`` to the vocabulary with the mean embedding of the query's tokens.

    The bag-of-words mean of "name, base query" then equals the mean of the
    base query, so the text vector is unchanged before fine-tuning.
    """
    ids = [model.vocab.id(t) for t in tokenize(base_query)]
    init = model.text.embedding.detach()[ids].mean(0)
    return model.add_token(name, init)


def one_grasp_adapt(model: GraspNet, samples, name: str, base_query: str, cfg: OneGraspConfig = OneGraspConfig(),
                    source_records=None, in_place: bool = False):
    """Fine-tune a copy of ``model`` on the one-grasp samples; returns (model, vocab)."""
    if not in_place:
        model = copy.deepcopy(model)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if model.config.text_mode == "cbow":
        add_name_token(model, name, base_query)
        query = named_query(name, base_query)
    else:
        query = base_query
    records = [replace(s, t=query).record() for s in samples]
    params = [p for n, p in model.named_parameters() if not n.startswith("domain.")]
    opt = make_optimizer(params, cfg)
    n_src = int(round(cfg.source_replay * len(records))) if source_records else 0
    model.eval()
    for step in range(cfg.steps):
        batch = list(records)
        if n_src:
            idx = rng.choice(len(source_records), size=n_src, replace=False)
            batch += [source_records[int(i)] for i in idx]
        opt.zero_grad()
        loss = grasp_loss(model, batch, cfg.lambda_m)
        loss.backward()
        opt.step()
        if loss.item() < cfg.early_stop:
            log.info("one-grasp early stop at step %d (loss %.2e)", step, loss.item())
            break
    return model, model.vocab
