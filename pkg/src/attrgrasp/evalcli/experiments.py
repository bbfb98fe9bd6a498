"""Cached end-to-end runs shared by the acceptance suite and the benchmark configs.

Each stage runs a pipeline command on an in-code config, writes it under
``<root>/<name>`` and stamps the directory with a hash of (command, config,
seed). A stage whose stamp matches is reused instead of recomputed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import yaml

from ..adapt import NoSuccessfulGrasp
from . import pipeline

log = logging.getLogger(__name__)

DEFAULT_ROOT = Path(os.environ.get("ATTRGRASP_ARTIFACTS", Path(__file__).resolve().parents[3] / "artifacts"))

GENERIC_TRAIN = {"optimizer": "adam", "lr": 1e-3, "iterations": 5000, "replay_epochs": 10}

GENERIC = {"train": GENERIC_TRAIN}
NOMETRIC = {"train": {**GENERIC_TRAIN, "lambda_a": 0.0}}

ADVERSARIAL = {"steps": 1500, "batch_size": 8, "target_batch_size": 8, "lambda_r": 1.0, "optimizer": "adam",
               "lr": 1e-4, "domain_lr": 1e-3}
TARGET_COUNT = 2000
ONEGRASP = {"steps": 200, "optimizer": "adam", "lr": 1e-4, "max_trials": 20}

# composites held out for one-grasp adaptation: every other template, fixed before any run
HELDOUT = ("apple", "soupcan", "mug", "tennisball", "marker", "cup")

EVAL_SEED = 1          # evaluation scenes never overlap training scenes (different seed streams)
EVAL_CASES = 200
OBJECT_CASES = 20      # random poses per held-out object
STACK_CASES = 50       # per object for the stacked comparison on novel_jitter


def _stamp(command: str, cfg: dict, seed: int) -> str:
    blob = json.dumps({"command": command, "config": cfg, "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def stage(name: str, command: str, cfg: dict, seed: int = 0, root=None) -> dict:
    """Run ``command`` on ``cfg`` into root/name unless an identical run is already there."""
    root = Path(root or DEFAULT_ROOT)
    out = root / name
    key = _stamp(command, cfg, seed)
    stamp, report = out / "stamp", out / "report.json"
    if stamp.exists() and report.exists() and stamp.read_text().strip() == key:
        return json.loads(report.read_text())
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))
    fn = {
        "collect-train": pipeline.run_collect_train,
        "augment-objects": pipeline.run_augment_objects,
        "adapt-adversarial": pipeline.run_adapt_adversarial,
        "grasp-collect": pipeline.run_grasp_collect,
        "adapt-onegrasp": pipeline.run_adapt_onegrasp,
        "eval": pipeline.run_eval,
        "benchmark": pipeline.run_benchmark,
    }[command]
    log.info("running %s -> %s", command, out)
    rep = fn({**cfg, "_dir": str(root)}, seed, out)
    stamp.write_text(key + "\n")
    return rep


# -- training ---------------------------------------------------------------------

def generic(root=None) -> dict:
    return stage("generic", "collect-train", GENERIC, 0, root)


def nometric(root=None) -> dict:
    return stage("nometric", "collect-train", NOMETRIC, 0, root)


def evaluation(ckpt: str, env: str, cases: int = EVAL_CASES, obj: str | None = None, root=None) -> dict:
    name = f"eval/{ckpt.replace('/', '_')}__{env}" + (f"__{obj}_{cases}" if obj else "")
    cfg = {"paths": {"checkpoint": f"{ckpt}/checkpoint"}, "eval": {"env": env, "cases": cases, "object": obj}}
    return stage(name, "eval", cfg, EVAL_SEED, root)


# -- adversarial adaptation ----------------------------------------------------

def target_set(env: str, mode: str = "aug", root=None) -> str:
    name = f"target_{env}_{mode}"
    stage(name, "augment-objects", {"augment": {"env": env, "mode": mode, "count": TARGET_COUNT}}, 0, root)
    return name


def adversarial(env: str, mode: str = "aug", root=None) -> tuple[str, dict]:
    generic(root)
    tgt = target_set(env, mode, root)
    name = f"adv_{env}_{mode}"
    cfg = {"train": GENERIC_TRAIN, "adversarial": ADVERSARIAL, "augment": {"env": env},
           "adversarial_eval": {"images": 100},
           "paths": {"checkpoint": "generic/checkpoint", "dataset": "generic/dataset", "target": f"{tgt}/target"}}
    return name, stage(name, "adapt-adversarial", cfg, 0, root)


# -- one-grasp adaptation --------------------------------------------------------

def one_grasp(base: str, obj: str, env: str = "novel", mode: str = "aug", root=None) -> str:
    """Collect one grasp of ``obj`` with ``base`` in ``env`` and fine-tune; returns the run name."""
    og = {**ONEGRASP, "object": obj, "env": env}
    gc = f"gc_{base}_{env}_{obj}"
    try:
        stage(gc, "grasp-collect", {"paths": {"checkpoint": f"{base}/checkpoint"}, "onegrasp": og}, 0, root)
    except NoSuccessfulGrasp:
        # nothing to adapt on: the method falls back to its base model for this object
        log.warning("no successful grasp of %s with %s in %s", obj, base, env)
        return base
    name = f"og_{base}_{env}_{mode}_{obj}"
    cfg = {"paths": {"checkpoint": f"{base}/checkpoint", "sample": f"{gc}/sample"}, "onegrasp": {**og, "mode": mode}}
    stage(name, "adapt-onegrasp", cfg, 0, root)
    return name


def _success(rep) -> float:
    return float(rep["grasp_success"])


def per_object_success(method, env: str, cases: int, root=None) -> dict:
    """``method(obj) -> run name``; success rate of that run on scenes holding ``obj``."""
    return {o: _success(evaluation(method(o), env, cases, o, root)) for o in HELDOUT}


# -- criteria ------------------------------------------------------------------------

def generic_results(root=None) -> dict:
    generic(root)
    rep = evaluation("generic", "basic", root=root)
    return {"grasp_success": _success(rep), "recognition": float(rep["recognition"]),
            "attention": float(rep["attention"])}


def nometric_results(root=None) -> dict:
    generic(root)
    nometric(root)
    return {"full": float(evaluation("generic", "novel", root=root)["recognition"]),
            "nometric": float(evaluation("nometric", "novel", root=root)["recognition"])}


def adversarial_results(root=None) -> dict:
    name, rep = adversarial("basic_jitter", "aug", root)
    return {
        "domain_accuracy": float(rep["heldout_domain_accuracy"]),
        "generic_jitter": _success(evaluation("generic", "basic_jitter", root=root)),
        "adapted_jitter": _success(evaluation(name, "basic_jitter", root=root)),
        "generic_basic": _success(evaluation("generic", "basic", root=root)),
        "adapted_basic": _success(evaluation(name, "basic", root=root)),
    }


def onegrasp_results(root=None) -> dict:
    generic(root)
    return {
        "generic": per_object_success(lambda o: "generic", "novel", OBJECT_CASES, root),
        "aug": per_object_success(lambda o: one_grasp("generic", o, "novel", "aug", root), "novel", OBJECT_CASES, root),
        "rpt": per_object_success(lambda o: one_grasp("generic", o, "novel", "rpt", root), "novel", OBJECT_CASES, root),
    }


def augmentation_results(root=None) -> dict:
    out = {}
    for mode in ("aug", "overlay", "objects"):
        name, _ = adversarial("novel_jitter", mode, root)
        out[mode] = _success(evaluation(name, "novel_jitter", root=root))
    out["generic"] = _success(evaluation("generic", "novel_jitter", root=root))
    return out


def stacked_results(root=None) -> dict:
    adv, _ = adversarial("novel_jitter", "aug", root)
    env = "novel_jitter"
    res = {
        "adversarial": per_object_success(lambda o: adv, env, STACK_CASES, root),
        "onegrasp": per_object_success(lambda o: one_grasp("generic", o, env, "aug", root), env, STACK_CASES, root),
        "stacked": per_object_success(lambda o: one_grasp(adv, o, env, "aug", root), env, STACK_CASES, root),
    }
    return {k: {"per_object": v, "mean": sum(v.values()) / len(v)} for k, v in res.items()}


ALL = ("generic_results", "nometric_results", "adversarial_results", "onegrasp_results", "augmentation_results",
       "stacked_results")


if __name__ == "__main__":
    import sys
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in sys.argv[1:] or ALL:
        print(name, json.dumps(globals()[name](), indent=1, sort_keys=True), flush=True)
