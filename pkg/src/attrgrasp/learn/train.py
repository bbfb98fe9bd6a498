"""Self-supervised collection loop and the optimization driver."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from ..attributes import label_of_text, similarity
from ..net import GraspNet, ModelConfig, save_checkpoint, select_action
from ..sim import NO_JITTER, Gripper, Jitter, execute_and_diff, render, sample_scene
from .data import EpisodeRecord, ReplayBuffer, her_relabel, mine_triplets
from .losses import metric_loss, motion_loss_batch

log = logging.getLogger(__name__)

METRIC_FIELDS = ("iteration", "phase", "L_grasp", "L_attr", "success", "q_label")


@dataclass
class TrainConfig:
    alpha: float = 0.5
    lambda_a: float = 1.0
    lambda_m: float = 0.1
    lambda_r: float = 1.0
    eps_start: float = 0.5
    eps_end: float = 0.1
    eps_decay_frac: float = 0.5   # fraction of collection over which eps decays linearly
    optimizer: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 2e-5
    iterations: int = 5000
    replay_epochs: int = 100
    batch_size: int = 8
    num_angles: int = 6
    capacity: int = 10000
    max_triplets: int = 16
    # scene generation during collection
    num_objects: int = 4
    pool: str = "basic"
    reset_after_failures: int = 5
    query_mix: tuple = (0.6, 0.2, 0.2)   # full / color-only / shape-only
    her: bool = True
    mask_all_angles: bool = False
    image_size: int = 96
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("alpha", "lambda_a", "lambda_m", "lambda_r", "lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        self.query_mix = tuple(self.query_mix)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def epsilon(self, it: int) -> float:
        span = max(int(self.iterations * self.eps_decay_frac), 1)
        frac = min(it / span, 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def query_for(obj, rng, mix=(0.6, 0.2, 0.2)) -> str:
    kind = rng.choice(3, p=np.asarray(mix) / np.sum(mix))
    return (f"{obj.color} {obj.shape}", obj.color, obj.shape)[kind]


def _stack(heightmaps) -> torch.Tensor:
    arr = np.stack([h.stacked() for h in heightmaps])
    return torch.from_numpy(arr).permute(0, 3, 1, 2)


def _grasped_ids(record: EpisodeRecord, vocab):
    color, shape = record.grasped_label
    return [vocab.id(color), vocab.id(shape)]


def grasp_loss(model: GraspNet, records, lambda_m: float = 0.1, phi_v=None, mask_all_angles=False):
    """Mean motion loss over ``records``, evaluated only at executed angles."""
    if phi_v is None:
        phi_v = model.encoder(model.image_tensor(_stack([r.v_pre for r in records])))
    texts = [r.t for r in records]
    f_att = phi_v if model.config.text_mode == "none" else model.fuse(phi_v, model.encode_text(texts))
    angles = torch.tensor([r.a.angle_index for r in records])
    q = torch.sigmoid(model.decode_logits(f_att, angles))
    masks = np.stack([r.M for r in records])
    losses = motion_loss_batch(q, [r.a.row for r in records], [r.a.col for r in records],
                               [r.q_label for r in records], masks, lambda_m)
    if mask_all_angles:
        # penalize the background on every angle map, not only the executed one
        maps = model.decode_affordances(f_att)
        m = torch.as_tensor(masks, dtype=maps.dtype)[:, None]
        q_exec = (q ** 2 * m[:, 0]).sum(dim=(1, 2))
        losses = losses + lambda_m * ((maps ** 2 * m).sum(dim=(1, 2, 3)) - q_exec)
    return losses.mean()


def attribute_loss(model: GraspNet, records, rng, alpha=0.5, max_triplets=16, phi_v=None):
    """Triplet loss over visual-difference and text vectors of a batch."""
    if model.config.text_mode == "none":
        return torch.zeros(()), 0
    vocab = model.vocab
    ok = [i for i, r in enumerate(records) if r.v_post is not None and r.grasped_label is not None]
    vecs, labels, sources = [], [], []
    if ok:
        if phi_v is not None:
            pre = phi_v[ok].mean(dim=(2, 3))
        else:
            pre = model.visual_vector(model.image_tensor(_stack([records[i].v_pre for i in ok])))
        post = model.visual_vector(model.image_tensor(_stack([records[i].v_post for i in ok])))
        vecs.append(pre - post)
        labels += [_grasped_ids(records[i], vocab) for i in ok]
        sources += ["visual"] * len(ok)
    texts = sorted({r.t for r in records})
    vecs.append(model.encode_text(texts))
    labels += [list(label_of_text(t, vocab, 2)) for t in texts]
    sources += ["text"] * len(texts)
    trips = mine_triplets(np.asarray(labels), rng, max_triplets, sources=sources)
    if not trips:
        return torch.zeros(()), 0
    pool = torch.cat(vecs, 0)
    a = pool[[t.anchor for t in trips]]
    p = pool[[t.positive for t in trips]]
    n = pool[[t.negative for t in trips]]
    return metric_loss(a, p, n, alpha, reduction="mean"), len(trips)


def train_loss(model: GraspNet, records, cfg: TrainConfig, rng):
    """L_train = L_grasp + lambda_a * L_attr on one batch; returns (total, L_grasp, L_attr)."""
    phi_v = model.encoder(model.image_tensor(_stack([r.v_pre for r in records])))
    lg = grasp_loss(model, records, cfg.lambda_m, phi_v, cfg.mask_all_angles)
    if cfg.lambda_a > 0:
        la, _ = attribute_loss(model, records, rng, cfg.alpha, cfg.max_triplets, phi_v)
    else:
        la = torch.zeros(())
    return lg + cfg.lambda_a * la, lg, la


class MetricsLog:
    """Append-only CSV of per-iteration training metrics."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            new = not self.path.exists()
            self._fh = open(self.path, "a", newline="")
            self._w = csv.writer(self._fh)
            if new:
                self._w.writerow(METRIC_FIELDS)

    def write(self, iteration, phase, lg, la, success="", q=""):
        row = (iteration, phase, f"{lg:.6f}", f"{la:.6f}", success if success == "" else int(success),
               q if q == "" else f"{q:.4f}")
        self.rows.append(row)
        if self.path is not None:
            self._w.writerow(row)

    def close(self):
        if self.path is not None:
            self._fh.close()


@dataclass
class Collector:
    """Keeps a tabletop alive across grasps; resets when empty or stuck."""

    cfg: TrainConfig
    rng: np.random.Generator
    jitter: Jitter = NO_JITTER
    gripper: Gripper = field(default_factory=Gripper)
    scene: object = None
    failures: int = 0
    resets: int = 0

    def reset(self):
        seed = int(self.rng.integers(2**31 - 1))
        self.scene = sample_scene(self.cfg.num_objects, self.cfg.pool, rng_seed=seed)
        self.failures = 0
        self.resets += 1

    def observe(self):
        if self.scene is None or not self.scene.objects or self.failures >= self.cfg.reset_after_failures:
            self.reset()
        return render(self.scene, self.jitter, self.cfg.image_size)


def collect_step(model: GraspNet, col: Collector, epsilon: float, rng, vocab=None):
    """One environment interaction; returns the list of records it produced."""
    cfg = col.cfg
    vocab = vocab or model.vocab
    v_pre, mask = col.observe()
    scene = col.scene
    target = scene.objects[int(rng.integers(len(scene.objects)))]
    t = query_for(target, rng, cfg.query_mix)
    with torch.no_grad():
        maps = model(model.image_tensor(v_pre), [t])[0]
    action = select_action(maps, epsilon, rng, foreground=~mask)
    outcome, v_post = execute_and_diff(scene, action, col.jitter, col.gripper, cfg.image_size, v_pre=v_pre)
    small = v_pre.astype(np.float16)
    if outcome.success:
        g = outcome.grasped
        q = similarity(label_of_text(t, vocab, 2), label_of_text(f"{g.color} {g.shape}", vocab, 2))
        rec = EpisodeRecord(small, t, mask, action, q, v_post.astype(np.float16),
                            grasped_label=(g.color, g.shape), target_label=(target.color, target.shape))
        col.scene = scene.without(g.uid)
        col.failures = 0
    else:
        rec = EpisodeRecord(small, t, mask, action, 0.0, None, target_label=(target.color, target.shape))
        col.failures += 1
    out = [rec]
    if cfg.her and rec.success and rec.q_label < 1.0:
        out.append(her_relabel(rec, outcome.grasped, vocab))
    return out, outcome


def optimize_step(model, opt, records, cfg, rng):
    model.train()
    opt.zero_grad()
    total, lg, la = train_loss(model, records, cfg, rng)
    total.backward()
    opt.step()
    model.eval()
    return float(lg.detach()), float(la.detach())


def replay(model, opt, dataset, cfg: TrainConfig, rng, epochs: int, metrics: MetricsLog | None = None,
           start_iteration: int = 0):
    """Shuffle the whole dataset each epoch and take one step per batch."""
    it = start_iteration
    n = len(dataset)
    for ep in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            batch = [dataset[int(i)] for i in order[s:s + cfg.batch_size]]
            lg, la = optimize_step(model, opt, batch, cfg, rng)
            if metrics is not None:
                metrics.write(it, "replay", lg, la)
            it += 1
        log.info("replay epoch %d/%d done", ep + 1, epochs)
    return it


def collect_and_train(cfg: TrainConfig, model: GraspNet | None = None, out_dir=None, jitter: Jitter = NO_JITTER,
                      model_config: ModelConfig | None = None):
    """Collect ``cfg.iterations`` grasps while training, then replay the data.

    Returns (model, dataset, metrics) where dataset is the list of every
    record produced (HER rows included).
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = GraspNet(model_config or ModelConfig(num_angles=cfg.num_angles, image_size=cfg.image_size))
    model.eval()
    opt = make_optimizer([p for n, p in model.named_parameters() if not n.startswith("domain.")], cfg)
    out_dir = Path(out_dir) if out_dir else None
    metrics = MetricsLog(out_dir / "metrics.csv" if out_dir else None)
    buffer = ReplayBuffer(cfg.capacity, seed=cfg.seed + 1)
    dataset: list[EpisodeRecord] = []
    col = Collector(cfg, np.random.default_rng(cfg.seed + 2), jitter, Gripper(num_angles=cfg.num_angles))
    successes = 0
    for it in range(cfg.iterations):
        recs, outcome = collect_step(model, col, cfg.epsilon(it), rng)
        for r in recs:
            buffer.add(r)
            dataset.append(r)
        successes += outcome.success
        lg = la = 0.0
        if len(buffer) >= cfg.batch_size:
            lg, la = optimize_step(model, opt, buffer.sample(cfg.batch_size), cfg, rng)
        metrics.write(it, "collect", lg, la, outcome.success, recs[0].q_label)
        if (it + 1) % 250 == 0:
            log.info("iter %d  success %.3f  L_grasp %.4f  L_attr %.4f", it + 1, successes / (it + 1), lg, la)
        if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"ckpt_{it + 1:06d}", {"phase": "collect", "iteration": it + 1})
    replay(model, opt, dataset, cfg, rng, cfg.replay_epochs, metrics, cfg.iterations)
    metrics.close()
    if out_dir:
        save_checkpoint(model, out_dir / "checkpoint", {"phase": "generic", "train_config": _jsonable(cfg)})
    return model, dataset, metrics


def _jsonable(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
