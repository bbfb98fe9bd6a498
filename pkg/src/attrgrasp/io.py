"""On-disk dataset format.

A dataset is a directory with ``manifest.tsv`` (one record per line) and
raw tensor files: three little-endian uint32 (H, W, C) followed by
H*W*C little-endian float32 values.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .learn.data import EpisodeRecord
from .sim import GraspAction, Heightmap

COLUMNS = ("id", "query", "action", "label", "domain", "her", "grasped", "target", "rgb", "depth", "mask",
           "post_rgb", "post_depth")


class DatasetFormatError(ValueError):
    pass


def write_tensor(path, arr):
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"expected H x W x C, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DatasetFormatError(f"{path}: truncated header")
    shape = tuple(int(v) for v in np.frombuffer(raw[:12], dtype="<u4"))
    data = np.frombuffer(raw[12:], dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise DatasetFormatError(f"{path}: expected {np.prod(shape)} values, found {data.size}")
    return data.reshape(shape).copy()


def _pair(x):
    return "-" if x is None else f"{x[0]}:{x[1]}"


def _unpair(s):
    return None if s == "-" else tuple(s.split(":"))


def save_dataset(records, directory) -> Path:
    """Write EpisodeRecords (or bare heightmaps, stored as unlabeled target images)."""
    d = Path(directory)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(COLUMNS)]
    for i, r in enumerate(records):
        rid = f"{i:06d}"
        if isinstance(r, Heightmap):
            r = EpisodeRecord(r, "", np.zeros(r.shape, dtype=bool), None, 0.0, domain="target")
            action = label = "-"
        else:
            action = f"{r.a.row},{r.a.col},{r.a.angle_index}"
            label = f"{r.q_label:.6f}"
        paths = {}
        for key, arr in (("rgb", r.v_pre.rgb), ("depth", r.v_pre.depth), ("mask", r.M)):
            paths[key] = f"tensors/{rid}_{key}.bin"
            write_tensor(d / paths[key], arr)
        if r.v_post is not None:
            for key, arr in (("post_rgb", r.v_post.rgb), ("post_depth", r.v_post.depth)):
                paths[key] = f"tensors/{rid}_{key}.bin"
                write_tensor(d / paths[key], arr)
        row = [rid, r.t.replace("\t", " ") or "-", action, label, r.domain, str(int(r.her_origin)),
               _pair(r.grasped_label), _pair(r.target_label)]
        row += [paths.get(k, "-") for k in COLUMNS[8:]]
        lines.append("\t".join(row))
    (d / "manifest.tsv").write_text("\n".join(lines) + "\n")
    return d


def load_dataset(directory, dtype=np.float32) -> list:
    """Inverse of save_dataset; unlabeled rows come back as Heightmaps.

    ``dtype`` sets the in-memory precision of the images (float16 halves the
    footprint of large source datasets).
    """
    d = Path(directory)
    manifest = d / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no dataset manifest in {d}")
    rows = manifest.read_text().splitlines()
    if not rows or tuple(rows[0].split("\t")) != COLUMNS:
        raise DatasetFormatError(f"{manifest}: unexpected header")
    out = []
    for line in rows[1:]:
        f = dict(zip(COLUMNS, line.split("\t")))
        rgb = read_tensor(d / f["rgb"])
        depth = read_tensor(d / f["depth"])[..., 0]
        v_pre = Heightmap(rgb.astype(dtype, copy=False), depth.astype(dtype, copy=False), 1.0 / depth.shape[1])
        if f["action"] == "-":
            out.append(v_pre)
            continue
        mask = read_tensor(d / f["mask"])[..., 0] > 0.5
        row, col, k = (int(v) for v in f["action"].split(","))
        v_post = None
        if f["post_rgb"] != "-":
            pd = read_tensor(d / f["post_depth"])[..., 0]
            v_post = Heightmap(read_tensor(d / f["post_rgb"]).astype(dtype, copy=False), pd.astype(dtype, copy=False),
                               1.0 / pd.shape[1])
        out.append(EpisodeRecord(v_pre, "" if f["query"] == "-" else f["query"], mask, GraspAction(row, col, k),
                                 float(f["label"]), v_post, f["domain"], bool(int(f["her"])),
                                 _unpair(f["grasped"]), _unpair(f["target"])))
    return out
