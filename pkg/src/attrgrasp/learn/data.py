"""Episode records, the bounded replay buffer, HER relabeling and triplet mining."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from ..attributes import label_of_text, similarity_matrix, text_of_label


@dataclass
class EpisodeRecord:
    v_pre: object          # Heightmap
    t: str
    M: np.ndarray          # background mask (H, W) bool
    a: object              # GraspAction
    q_label: float
    v_post: object = None  # Heightmap, present iff the grasp succeeded
    domain: str = "source"
    her_origin: bool = False
    grasped_label: tuple | None = None  # (color, shape) of the grasped object
    target_label: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.q_label <= 1.0:
            raise ValueError(f"label {self.q_label} outside [0, 1]")

    @property
    def success(self) -> bool:
        return self.v_post is not None


class PreconditionError(RuntimeError):
    pass


def her_relabel(record: EpisodeRecord, grasped, vocab, v_post=None) -> EpisodeRecord:
    """Turn a successful non-target grasp into a positive for what was grasped."""
    v_post = v_post if v_post is not None else record.v_post
    if grasped is None or v_post is None:
        raise PreconditionError("hindsight relabeling needs a successful grasp")
    text = text_of_label(grasped.label(vocab, 2), vocab)
    return replace(record, t=text, q_label=1.0, v_post=v_post, her_origin=True,
                   target_label=(grasped.color, grasped.shape))


class ReplayBuffer:
    """Bounded FIFO of episode records with seeded uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self.rng = np.random.default_rng(seed)
        self.total_added = 0

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def add(self, record: EpisodeRecord):
        self._items.append(record)
        self.total_added += 1

    def sample(self, batch_size: int) -> list[EpisodeRecord]:
        n = min(batch_size, len(self._items))
        idx = self.rng.choice(len(self._items), size=n, replace=False)
        return [self._items[int(i)] for i in idx]


@dataclass
class Triplet:
    anchor: int
    positive: int
    negative: int


def mine_triplets(labels, rng: np.random.Generator, max_triplets: int = 16, max_tries: int = 200,
                  sources=None) -> list[Triplet]:
    """Random triplets (indices into the pool) with s(a, a+) > s(a, a-).

    ``labels`` is a (P, n) array of attribute labels for the pooled vectors;
    ``sources`` optionally tags each entry ('visual' or 'text') and when
    given, each anchor is paired with a positive from the other modality
    if one qualifies.
    """
    labels = np.asarray(labels)
    p = len(labels)
    if p < 3:
        return []
    sim = similarity_matrix(labels, labels)
    out: list[Triplet] = []
    for _ in range(max_tries):
        if len(out) >= max_triplets:
            break
        a = int(rng.integers(p))
        others = np.array([j for j in range(p) if j != a])
        s = sim[a, others]
        if s.max() == s.min():
            continue
        pos_pool = others[s > s.min()]
        if sources is not None:
            cross = [j for j in pos_pool if sources[j] != sources[a]]
            if cross:
                pos_pool = np.asarray(cross)
        pos = int(pos_pool[rng.integers(len(pos_pool))])
        neg_pool = others[sim[a, others] < sim[a, pos]]
        neg = int(neg_pool[rng.integers(len(neg_pool))])
        out.append(Triplet(a, pos, neg))
    return out


def record_label(record: EpisodeRecord, vocab, n: int = 2) -> np.ndarray:
    return label_of_text(record.t, vocab, n)
