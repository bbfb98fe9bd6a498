"""Losses, replay data structures and the training loop."""
from .data import EpisodeRecord, PreconditionError, ReplayBuffer, Triplet, her_relabel, mine_triplets
from .losses import adversarial_loss, domain_bce, grl, metric_loss, motion_loss, motion_loss_batch
from .train import (Collector, MetricsLog, TrainConfig, attribute_loss, collect_and_train, collect_step,
                    grasp_loss, make_optimizer, optimize_step, replay, train_loss)

__all__ = [
    "Collector", "EpisodeRecord", "MetricsLog", "PreconditionError", "ReplayBuffer", "TrainConfig", "Triplet",
    "adversarial_loss", "attribute_loss", "collect_and_train", "collect_step", "domain_bce", "grasp_loss", "grl",
    "her_relabel", "make_optimizer", "metric_loss", "mine_triplets", "motion_loss", "motion_loss_batch",
    "optimize_step", "replay", "train_loss",
]
