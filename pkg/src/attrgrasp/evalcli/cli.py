"""Command-line entry point: ``attrgrasp <verb> CONFIG --seed S --out-dir DIR``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline

VERBS = {
    "collect-train": (pipeline.run_collect_train, "collect grasps in simulation and train the generic model"),
    "augment-objects": (pipeline.run_augment_objects, "synthesize target-domain images from object crops"),
    "adapt-adversarial": (pipeline.run_adapt_adversarial, "adversarially adapt the image encoder"),
    "grasp-collect": (pipeline.run_grasp_collect, "collect one successful grasp of a novel object"),
    "adapt-onegrasp": (pipeline.run_adapt_onegrasp, "fine-tune on one rotated-augmented grasp"),
    "eval": (pipeline.run_eval, "evaluate a checkpoint in one environment"),
    "benchmark": (pipeline.run_benchmark, "evaluate several checkpoints across environments"),
    "viz": (pipeline.run_viz, "write affordance and attention heatmaps"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrgrasp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, (_, help_text) in VERBS.items():
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("config", help="YAML config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    fn, _ = VERBS[args.verb]
    try:
        cfg = pipeline.load_config(args.config)
        report = fn(cfg, args.seed, Path(args.out_dir))
    except (pipeline.ConfigError, pipeline.MissingCheckpoint, FileNotFoundError, KeyError, ValueError,
            RuntimeError) as exc:
        print(f"attrgrasp {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    print(f"attrgrasp {args.verb}: wrote {Path(args.out_dir) / 'report.json'}")
    return 0 if report is not None else 1


if __name__ == "__main__":
    sys.exit(main())
