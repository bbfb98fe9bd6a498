"""Heatmap images: input, affordance maps and attention, as plain PNG files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

from ..sim import render


def colorize(values, vmin=None, vmax=None, cmap: str = "jet") -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo = v.min() if vmin is None else vmin
    hi = v.max() if vmax is None else vmax
    t = np.clip((v - lo) / (hi - lo), 0, 1) if hi > lo else np.zeros_like(v)
    return (colormaps[cmap](t)[..., :3] * 255).astype(np.uint8)


def _upsample(a, size):
    k = size // a.shape[0]
    return np.kron(a, np.ones((k, k)))


def case_panel(model, hm, query: str) -> np.ndarray:
    """Row of [rgb | depth | max affordance | attention] images for one case."""
    size = model.config.image_size
    with torch.no_grad():
        x = model.image_tensor(hm)
        maps = model(x, [query])[0].numpy()
        heat = model.attention_heatmap(x, [query])[0].numpy() if model.config.text_mode != "none" else None
    rgb = (np.clip(hm.rgb, 0, 1) * 255).astype(np.uint8)
    depth = colorize(hm.depth, 0.0, 0.15, "viridis")
    aff = (0.5 * colorize(maps.max(0), 0.0, 1.0) + 0.5 * rgb).astype(np.uint8)
    panels = [rgb, depth, aff]
    if heat is not None:
        panels.append((0.5 * colorize(_upsample(heat, size)) + 0.5 * rgb).astype(np.uint8))
    return np.concatenate(panels, axis=1)


def save_case_figures(model, cases, jitter, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, c in enumerate(cases):
        hm, _ = render(c.scene, jitter, model.config.image_size)
        img = case_panel(model, hm, c.query)
        p = out_dir / f"case_{i:03d}_{c.query.replace(',', '').replace(' ', '_')}.png"
        Image.fromarray(img).save(p)
        files.append(p)
    return files
