"""Adversarial adaptation of the image encoder through a gradient reversal layer."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch

from ..learn.losses import adversarial_loss
from ..learn.train import MetricsLog, TrainConfig, make_optimizer, train_loss
from ..net import GraspNet

log = logging.getLogger(__name__)


@dataclass
class AdversarialConfig:
    steps: int = 1500
    batch_size: int = 8
    target_batch_size: int = 8
    lambda_r: float = 1.0
    lambda_adv: float = 1.0      # weight on the adversarial term; the GRL constant is lambda_r
    optimizer: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 2e-5
    domain_lr: float | None = None  # classifier learning rate, defaults to lr
    reset_classifier: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _images(items):
    return [getattr(r, "v_pre", r) for r in items]


def adversarial_adapt(model: GraspNet, source, target, train_cfg: TrainConfig, cfg: AdversarialConfig = AdversarialConfig(),
                      metrics: MetricsLog | None = None, in_place: bool = False) -> GraspNet:
    """Minimize L_train on source records plus the GRL domain loss on source and target images.

    ``source`` is a list of EpisodeRecord; ``target`` a list of heightmaps
    (or an AugmentedImageSet). Only the encoder sees reversed gradients; the
    text encoder and decoder are driven by L_train alone. With an empty
    target set this is plain fine-tuning on the source data.
    """
    if not in_place:
        model = copy.deepcopy(model)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    rng_t = np.random.default_rng([cfg.seed, 1])
    target = list(getattr(target, "images", target) or [])
    shapes = {np.asarray(h.depth).shape for h in _images(source[:1]) + target[:1]}
    if len(shapes) > 1:
        raise ValueError(f"source and target image sizes differ: {sorted(shapes)}")
    if cfg.reset_classifier:
        model.domain.reset(cfg.seed)
    main = [p for n, p in model.named_parameters() if not n.startswith("domain.")]
    groups = [{"params": main}, {"params": list(model.domain.parameters()), "lr": cfg.domain_lr or cfg.lr}]
    opt = make_optimizer(groups, cfg)
    model.eval()
    for step in range(cfg.steps):
        idx = rng.choice(len(source), size=min(cfg.batch_size, len(source)), replace=False)
        batch = [source[int(i)] for i in idx]
        opt.zero_grad()
        total, lg, la = train_loss(model, batch, train_cfg, rng)
        adv = torch.zeros(())
        if target:
            tid = rng_t.choice(len(target), size=min(cfg.target_batch_size, len(target)), replace=False)
            adv, _, _ = adversarial_loss(model, _images(batch), [target[int(i)] for i in tid],
                                         cfg.lambda_r, reduction="mean")
            total = total + cfg.lambda_adv * adv
        total.backward()
        opt.step()
        if metrics is not None:
            metrics.write(step, "adversarial", float(lg.detach()), float(la.detach()))
        if (step + 1) % 250 == 0:
            log.info("adversarial step %d  L_grasp %.4f  L_attr %.4f  L_adv %.4f", step + 1, float(lg), float(la),
                     float(adv))
    return model


@torch.no_grad()
def domain_accuracy(model: GraspNet, source_images, target_images, batch: int = 32) -> float:
    """Accuracy of the model's domain classifier on held-out images (threshold 0.5)."""
    correct = total = 0
    for imgs, label in ((list(source_images), 0), (list(target_images), 1)):
        for s in range(0, len(imgs), batch):
            x = model.image_tensor(_images(imgs[s:s + batch]))
            pred = (model.classify_domain(model.visual_vector(x)) > 0).long()
            correct += int((pred == label).sum())
            total += len(pred)
    return correct / max(total, 1)
