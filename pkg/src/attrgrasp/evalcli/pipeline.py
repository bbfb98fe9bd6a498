"""The pipeline stages behind each CLI verb.

Every stage takes a parsed config dict, a seed and an output directory,
writes its artifacts there and returns a JSON-serializable report.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch
import yaml

from ..adapt import (AdversarialConfig, OneGraspConfig, adversarial_adapt, domain_accuracy, extract_objects,
                     named_query, object_aug, one_grasp_adapt, one_grasp_aug, one_grasp_collect, raw_object_set)
from ..adapt.onegrasp import OneGraspSample
from ..io import load_dataset, save_dataset
from ..learn import TrainConfig, collect_and_train
from ..learn.train import MetricsLog
from ..net import GraspNet, ModelConfig, load_checkpoint, save_checkpoint
from ..sim import Jitter, Scene, make_pool, novel_object, render, sample_scene, single_object_scene
from .evaluate import ENVIRONMENTS, environment, evaluate, make_cases

log = logging.getLogger(__name__)


class MissingCheckpoint(FileNotFoundError):
    pass


class ConfigError(ValueError):
    pass


# -- config -------------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = yaml.safe_load(path.read_text()) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg["_dir"] = str(path.parent.resolve())
    return cfg


def resolve(cfg: dict, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_dir", ".")) / p


def section(cfg: dict, name: str) -> dict:
    s = cfg.get(name) or {}
    if not isinstance(s, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return dict(s)


def required_path(cfg: dict, key: str) -> Path:
    paths = section(cfg, "paths")
    if key not in paths:
        raise ConfigError(f"paths.{key} is required for this command")
    return resolve(cfg, paths[key])


def load_model(cfg: dict, key: str = "checkpoint"):
    path = required_path(cfg, key)
    if not (path / "manifest.json").exists():
        raise MissingCheckpoint(f"no checkpoint at {path}")
    model, meta = load_checkpoint(path)
    model.eval()
    return model, meta


def write_report(out_dir, name: str, report: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / name
    p.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return p


def _round(x, nd=6):
    return float(round(float(x), nd))


# -- generic training -----------------------------------------------------------

def run_collect_train(cfg: dict, seed: int, out_dir) -> dict:
    out_dir = Path(out_dir)
    torch.set_num_threads(1)
    tc = TrainConfig.from_dict({**section(cfg, "train"), "seed": seed})
    mc = ModelConfig.from_dict({"num_angles": tc.num_angles, "image_size": tc.image_size, **section(cfg, "model")})
    if (out_dir / "metrics.csv").exists():
        (out_dir / "metrics.csv").unlink()
    model, dataset, metrics = collect_and_train(tc, out_dir=out_dir, model_config=mc)
    if cfg.get("save_dataset", True):
        save_dataset(dataset, out_dir / "dataset")
    collect = [r for r in metrics.rows if r[1] == "collect"]
    report = {
        "command": "collect-train",
        "seed": seed,
        "records": len(dataset),
        "her_records": sum(r.her_origin for r in dataset),
        "collection_success_rate": _round(np.mean([int(r[4]) for r in collect])) if collect else 0.0,
        "final_L_grasp": float(metrics.rows[-1][2]) if metrics.rows else 0.0,
        "final_L_attr": float(metrics.rows[-1][3]) if metrics.rows else 0.0,
        "checkpoint": "checkpoint",
    }
    write_report(out_dir, "report.json", report)
    return report


# -- object-level augmentation -----------------------------------------------

def single_object_images(env: str, seed: int, objects=None, views: int = 3, size: int = 96):
    """Renders of each candidate object alone in the environment, with clean background masks."""
    pool_name, jitter = environment(env, seed)
    rng = np.random.default_rng([seed, 11])
    if objects:
        items = [novel_object(n) for n in objects]
    elif pool_name == "novel":
        items = [novel_object(n) for n in make_pool("novel").names]
    else:
        pool = make_pool("basic")
        items = [pool.sample(rng, color=c, shape=s) for c, s in pool.labels()]
    images, masks = [], []
    for obj in items:
        for _ in range(views):
            scene = single_object_scene(obj, rng_seed=int(rng.integers(2**31 - 1)))
            hm, m = render(scene, jitter, size)
            images.append(hm)
            masks.append(m)
    return images, masks


def background_images(env: str, seed: int, n: int = 32, size: int = 96):
    _, jitter = environment(env, seed)
    bg_only = Jitter(background_texture=jitter.background_texture, seed=seed)
    rng = np.random.default_rng([seed, 13])
    out = []
    for _ in range(n):
        b = int(rng.integers(1, 2**31 - 1))
        out.append(render(Scene((), b, b), bg_only, size)[0])
    return out


def build_target_set(aug: dict, seed: int):
    """Target-domain image set for adversarial adaptation per the ``augment`` section."""
    env = aug.get("env", "novel_jitter")
    size = int(aug.get("size", 96))
    mode = aug.get("mode", "aug")
    count = int(aug.get("count", 5000))
    images, masks = single_object_images(env, seed, aug.get("objects"), int(aug.get("views", 3)), size)
    rng = np.random.default_rng([seed, 17])
    if mode == "objects":
        return raw_object_set(images, count, rng, seed)
    _, jitter = environment(env, seed)
    crops = extract_objects(images, masks)
    perturb_only = Jitter(color=jitter.color, depth_sigma=jitter.depth_sigma, seed=seed)
    return object_aug(crops, count, rng, background_images(env, seed, size=size), perturb_only,
                      iou_max=float(aug.get("iou_max", 0.05)), scale=tuple(aug.get("scale", (0.8, 1.2))),
                      objects_per_image=tuple(aug.get("objects_per_image", (1, 5))),
                      mode=mode, size=size, seed=seed)


def run_augment_objects(cfg: dict, seed: int, out_dir) -> dict:
    aug = section(cfg, "augment")
    target = build_target_set(aug, seed)
    save_dataset(target.images, Path(out_dir) / "target")
    from ..adapt import mask_iou
    from ..adapt.objectaug import _paste_mask
    worst = 0.0
    for placed in target.placements:
        full = [_paste_mask(target.images[0].depth.shape, *p) for p in placed]
        for i in range(len(full)):
            for j in range(i):
                worst = max(worst, mask_iou(full[i], full[j]))
    report = {
        "command": "augment-objects",
        "seed": seed,
        "env": aug.get("env", "novel_jitter"),
        "mode": aug.get("mode", "aug"),
        "images": len(target),
        "crops_per_image": _round(np.mean([len(c) for c in target.crop_ids])),
        "max_pairwise_iou": _round(worst),
        "checksum": _round(sum(float(np.asarray(h.depth, dtype=np.float64).sum()) for h in target.images), 3),
    }
    write_report(out_dir, "report.json", report)
    return report


# -- adversarial adaptation ---------------------------------------------------

def heldout_domain_images(env: str, n: int, seed: int, size: int = 96):
    """Fresh source-domain and target-environment scenes for the domain-classifier check."""
    pool, jitter = environment(env, seed + 1)
    src = [render(sample_scene(4, "basic", rng_seed=10**7 + seed * 1000 + i), Jitter(), size)[0] for i in range(n)]
    tgt = [render(sample_scene(4, pool, rng_seed=2 * 10**7 + seed * 1000 + i), jitter, size)[0] for i in range(n)]
    return src, tgt


def adversarial_stage(model, source, target_images, cfg: dict, seed: int, metrics=None):
    tc = TrainConfig.from_dict({k: v for k, v in section(cfg, "train").items()})
    ac = AdversarialConfig.from_dict({**section(cfg, "adversarial"), "seed": seed})
    return adversarial_adapt(model, source, target_images, tc, ac, metrics)


def run_adapt_adversarial(cfg: dict, seed: int, out_dir) -> dict:
    out_dir = Path(out_dir)
    torch.set_num_threads(1)
    model, meta = load_model(cfg)
    source = load_dataset(required_path(cfg, "dataset"), np.float16)
    source = [r for r in source if not hasattr(r, "rgb")]
    target = load_dataset(required_path(cfg, "target"), np.float16)
    if (out_dir / "metrics.csv").exists():
        (out_dir / "metrics.csv").unlink()
    metrics = MetricsLog(out_dir / "metrics.csv")
    adapted = adversarial_stage(model, source, target, cfg, seed, metrics)
    metrics.close()
    save_checkpoint(adapted, out_dir / "checkpoint", {**meta, "phase": "adversarial"})
    env = section(cfg, "augment").get("env", "novel_jitter")
    src, tgt = heldout_domain_images(env, int(section(cfg, "adversarial_eval").get("images", 100)), seed,
                                     model.config.image_size)
    report = {
        "command": "adapt-adversarial",
        "seed": seed,
        "source_records": len(source),
        "target_images": len(target),
        "heldout_domain_accuracy": _round(domain_accuracy(adapted, src, tgt)),
        "checkpoint": "checkpoint",
    }
    write_report(out_dir, "report.json", report)
    return report


# -- one-grasp adaptation -------------------------------------------------------

def grasp_collect(model, name: str, seed: int, env: str = "novel", max_trials: int = 20):
    obj = novel_object(name)
    _, jitter = environment(env, seed)
    rng = np.random.default_rng([seed, 19])
    return one_grasp_collect(model, obj, obj.text, rng, max_trials, jitter, size=model.config.image_size)


def run_grasp_collect(cfg: dict, seed: int, out_dir) -> dict:
    model, _ = load_model(cfg)
    og = section(cfg, "onegrasp")
    if "object" not in og:
        raise ConfigError("onegrasp.object is required")
    sample = grasp_collect(model, og["object"], seed, og.get("env", "novel"), int(og.get("max_trials", 20)))
    save_dataset([sample.record()], Path(out_dir) / "sample")
    report = {
        "command": "grasp-collect",
        "seed": seed,
        "object": og["object"],
        "query": sample.t,
        "trials": sample.trials,
        "action": [sample.a.row, sample.a.col, sample.a.angle_index],
    }
    write_report(out_dir, "report.json", report)
    return report


def onegrasp_stage(model, sample: OneGraspSample, name: str, cfg: dict, seed: int, source=None):
    og = section(cfg, "onegrasp")
    mode = og.get("mode", "aug")
    samples = one_grasp_aug(sample, model.config.num_angles, mode)
    known = {f for f in OneGraspConfig.__dataclass_fields__}
    oc = OneGraspConfig.from_dict({**{k: v for k, v in og.items() if k in known}, "seed": seed})
    base = sample.t.split(",")[-1].strip()
    return one_grasp_adapt(model, samples, name, base, oc, source_records=source)[0]


def run_adapt_onegrasp(cfg: dict, seed: int, out_dir) -> dict:
    torch.set_num_threads(1)
    model, meta = load_model(cfg)
    og = section(cfg, "onegrasp")
    if "object" not in og:
        raise ConfigError("onegrasp.object is required")
    rec = load_dataset(required_path(cfg, "sample"))[0]
    sample = OneGraspSample(rec.v_pre, rec.t, rec.M, rec.a)
    source = None
    if og.get("source_replay", 0) and "dataset" in section(cfg, "paths"):
        source = load_dataset(required_path(cfg, "dataset"))
    adapted = onegrasp_stage(model, sample, og["object"], cfg, seed, source)
    save_checkpoint(adapted, Path(out_dir) / "checkpoint", {**meta, "phase": "one-grasp", "object": og["object"]})
    report = {
        "command": "adapt-onegrasp",
        "seed": seed,
        "object": og["object"],
        "mode": og.get("mode", "aug"),
        "query": named_query(og["object"], sample.t),
        "vocabulary_size": len(adapted.vocab),
        "checkpoint": "checkpoint",
    }
    write_report(out_dir, "report.json", report)
    return report


# -- evaluation -------------------------------------------------------------------

def eval_cases_for(env: str, n: int, seed: int, obj_name: str | None = None, model: GraspNet | None = None):
    pool, _ = environment(env, seed)
    if obj_name is None:
        return make_cases(n, pool, seed)
    obj = novel_object(obj_name)
    query = obj.text
    if model is not None and obj_name in model.vocab:
        query = named_query(obj_name, obj.text)
    return make_cases(n, pool, seed, target=obj, query=query)


def evaluate_env(model, env: str, n: int, seed: int, obj_name: str | None = None):
    _, jitter = environment(env, seed)
    return evaluate(model, eval_cases_for(env, n, seed, obj_name, model), jitter)


def run_eval(cfg: dict, seed: int, out_dir) -> dict:
    torch.set_num_threads(1)
    model, meta = load_model(cfg)
    ev = section(cfg, "eval")
    env = ev.get("env", "basic")
    rep = evaluate_env(model, env, int(ev.get("cases", 200)), seed, ev.get("object"))
    report = {"command": "eval", "seed": seed, "env": env, "object": ev.get("object"),
              "phase": meta.get("phase", ""), **rep.as_row(),
              "per_object": {k: v for k, v in sorted(rep.per_object.items())}}
    write_report(out_dir, "report.json", report)
    return report


def run_benchmark(cfg: dict, seed: int, out_dir) -> dict:
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    bm = section(cfg, "benchmark")
    methods = bm.get("methods") or {}
    if not methods:
        raise ConfigError("benchmark.methods must map names to checkpoint directories")
    envs = bm.get("envs", list(ENVIRONMENTS))
    n = int(bm.get("cases", 200))
    models = {}
    for name, path in methods.items():
        p = resolve(cfg, path)
        if not (p / "manifest.json").exists():
            raise MissingCheckpoint(f"method {name!r}: no checkpoint at {p}")
        models[name] = load_checkpoint(p)[0].eval()
    rows = []
    for name, model in models.items():
        for env in envs:
            rep = evaluate_env(model, env, n, seed, bm.get("object"))
            rows.append({"method": name, "env": env, **rep.as_row()})
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "benchmark.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    # success-rate table: methods x environments
    with open(out_dir / "grasp_success_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *envs])
        for name in models:
            w.writerow([name, *[r["grasp_success"] for r in rows if r["method"] == name]])
    if bm.get("heatmaps", True):
        from .viz import save_case_figures
        for name, model in models.items():
            env = envs[0]
            cases = eval_cases_for(env, int(bm.get("heatmap_cases", 2)), seed, bm.get("object"), model)
            save_case_figures(model, cases, environment(env, seed)[1], out_dir / "heatmaps" / name)
    report = {"command": "benchmark", "seed": seed, "cases": n, "rows": rows}
    write_report(out_dir, "report.json", report)
    return report


def run_viz(cfg: dict, seed: int, out_dir) -> dict:
    from .viz import save_case_figures
    model, _ = load_model(cfg)
    vz = section(cfg, "viz")
    env = vz.get("env", "basic")
    cases = eval_cases_for(env, int(vz.get("cases", 4)), seed, vz.get("object"), model)
    if vz.get("query"):
        for c in cases:
            c.query = vz["query"]
    files = save_case_figures(model, cases, environment(env, seed)[1], Path(out_dir))
    report = {"command": "viz", "seed": seed, "env": env, "files": [f.name for f in files]}
    write_report(out_dir, "report.json", report)
    return report
