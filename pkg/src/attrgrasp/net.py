"""Encoder-decoder grasp affordance network with gated text attention."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attributes import SLOTS, Vocabulary, tokenize


class ShapeError(ValueError):
    pass


@dataclass
class ModelConfig:
    image_size: int = 96
    embed_dim: int = 128
    token_dim: int = 128
    num_angles: int = 6
    enc_channels: tuple = (32, 64, 128)
    dec_channels: int = 64
    res_blocks: int = 3
    domain_hidden: int = 64
    # "cbow" (mean token embedding), "attr_id" (one-hot slots) or "none" (indiscriminate)
    text_mode: str = "cbow"

    @property
    def stride(self) -> int:
        return 2 ** len(self.enc_channels)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "enc_channels" in d:
            d["enc_channels"] = tuple(d["enc_channels"])
        return cls(**d)


def _gn(c):
    return nn.GroupNorm(min(8, c), c)


class VisualEncoder(nn.Module):
    """Strided conv stack: 4-channel heightmap -> (D, H/s, W/s)."""

    def __init__(self, channels=(32, 64, 128), out_dim=128):
        super().__init__()
        layers = []
        c_in = 4
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), _gn(c), nn.ReLU()]
            c_in = c
        layers += [nn.Conv2d(c_in, out_dim, 3, padding=1)]
        self.net = nn.Sequential(*layers)
        self.register_buffer("scale", torch.tensor([1.0, 1.0, 1.0, 10.0]).view(1, 4, 1, 1))
        self.register_buffer("shift", torch.tensor([0.5, 0.5, 0.5, 0.0]).view(1, 4, 1, 1))

    def forward(self, x):
        return self.net((x - self.shift) * self.scale)


class TextEncoder(nn.Module):
    """Deep averaging network: mean token embedding -> 3-layer MLP."""

    def __init__(self, vocab_size, token_dim=128, out_dim=128, mode="cbow", num_slots=len(SLOTS)):
        super().__init__()
        self.mode = mode
        self.num_slots = num_slots
        self.embedding = nn.Parameter(torch.randn(vocab_size, token_dim) * 0.5)
        in_dim = token_dim if mode == "cbow" else vocab_size * num_slots
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, out_dim), nn.ReLU(),
            nn.Linear(out_dim, out_dim), nn.ReLU(),
            nn.Linear(out_dim, out_dim),
        )

    def bag(self, token_ids):
        """Mean token embedding per query; token_ids is a list of id lists."""
        flat = torch.tensor([i for ids in token_ids for i in ids], dtype=torch.long)
        seg = torch.tensor([b for b, ids in enumerate(token_ids) for _ in ids], dtype=torch.long)
        counts = torch.tensor([len(ids) for ids in token_ids], dtype=self.embedding.dtype)
        out = torch.zeros(len(token_ids), self.embedding.shape[1], dtype=self.embedding.dtype)
        out = out.index_add(0, seg, self.embedding[flat])
        return out / counts[:, None]

    def one_hot(self, slot_ids):
        """slot_ids: (B, num_slots) label ids -> concatenated one-hots (id 0 -> zeros)."""
        v = self.embedding.shape[0]
        lab = torch.as_tensor(np.asarray(slot_ids), dtype=torch.long)
        oh = F.one_hot(lab, v).to(self.embedding.dtype)
        oh[..., 0] = 0
        pad = self.num_slots - oh.shape[1]
        if pad > 0:
            oh = torch.cat([oh, oh.new_zeros(oh.shape[0], pad, v)], 1)
        return oh.reshape(oh.shape[0], -1)

    def forward(self, token_ids=None, slot_ids=None):
        if self.mode == "attr_id":
            return self.mlp(self.one_hot(slot_ids))
        return self.mlp(self.bag(token_ids))

    def extend(self, init: torch.Tensor):
        """Append one token row (used when a name token joins the vocabulary)."""
        if self.mode == "attr_id":
            raise NotImplementedError("one-hot text input has a fixed vocabulary")
        with torch.no_grad():
            rows = torch.cat([self.embedding.data, init.reshape(1, -1).to(self.embedding.dtype)], 0)
        self.embedding = nn.Parameter(rows)


class ResBlock(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.norm1 = _gn(c)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.norm2 = _gn(c)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(x + y)


class AffordanceDecoder(nn.Module):
    """Residual conv blocks + bilinear upsampling back to image size; emits logits."""

    def __init__(self, in_dim=128, channels=64, blocks=3, stride=8):
        super().__init__()
        self.inp = nn.Conv2d(in_dim, channels, 1)
        self.blocks = nn.Sequential(*[ResBlock(channels) for _ in range(blocks)])
        first = min(4, stride)
        self.ups = (first, stride // first)
        # channels shrink before each upsampling; interpolation dominates CPU time
        self.squeeze = nn.Conv2d(channels, 32, 1)
        self.mid = nn.Conv2d(32, 16, 3, padding=1)
        self.head = nn.Conv2d(16, 1, 1)

    def forward(self, x):
        x = self.blocks(F.relu(self.inp(x)))
        x = F.relu(self.squeeze(x))
        x = F.interpolate(x, scale_factor=self.ups[0], mode="bilinear", align_corners=False)
        x = F.relu(self.mid(x))
        if self.ups[1] > 1:
            x = F.interpolate(x, scale_factor=self.ups[1], mode="bilinear", align_corners=False)
        return self.head(x)[:, 0]


class DomainClassifier(nn.Module):
    def __init__(self, in_dim=128, hidden=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, v):
        return self.net(v)[..., 0]

    def reset(self, seed: int = 0):
        g = torch.Generator().manual_seed(seed)
        for m in self.net:
            if isinstance(m, nn.Linear):
                bound = 1 / math.sqrt(m.in_features)
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=g)
                    m.bias.uniform_(-bound, bound, generator=g)


def _rotation_matrices(angles, dtype):
    """2x3 affine matrices rotating by ``angles`` (radians), snapped at right angles."""
    cos = torch.cos(angles.to(torch.float64))
    sin = torch.sin(angles.to(torch.float64))
    cos = torch.where(cos.abs() < 1e-12, torch.zeros_like(cos), cos)
    sin = torch.where(sin.abs() < 1e-12, torch.zeros_like(sin), sin)
    zero = torch.zeros_like(cos)
    theta = torch.stack([torch.stack([cos, -sin, zero], -1), torch.stack([sin, cos, zero], -1)], -2)
    return theta.to(dtype)


def rotate(x, angles, padding_mode="zeros"):
    """Resample each image of ``x`` (B, C, H, W) so that the world direction at
    ``angles[b]`` (from +x toward +y) lines up with +x of the output.

    ``rotate(rotate(x, a), -a)`` is the identity up to interpolation.
    """
    angles = torch.as_tensor(angles, dtype=torch.float64).reshape(-1)
    if angles.numel() == 1 and x.shape[0] > 1:
        angles = angles.expand(x.shape[0])
    theta = _rotation_matrices(angles, x.dtype)
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode=padding_mode, align_corners=False)


def angle_of(k, num_angles):
    return torch.as_tensor(k, dtype=torch.float64) * (math.pi / num_angles)


class GraspNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None, vocab: Vocabulary | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.vocab = vocab or Vocabulary.basic(self.config.token_dim)
        c = self.config
        self.encoder = VisualEncoder(c.enc_channels, c.embed_dim)
        self.text = TextEncoder(len(self.vocab), c.token_dim, c.embed_dim, c.text_mode)
        self.decoder = AffordanceDecoder(c.embed_dim, c.dec_channels, c.res_blocks, c.stride)
        self.domain = DomainClassifier(c.embed_dim, c.domain_hidden)

    # -- inputs ----------------------------------------------------------
    def image_tensor(self, heightmaps) -> torch.Tensor:
        """Heightmap objects or (B, H, W, 4) arrays -> (B, 4, H, W) tensor."""
        if isinstance(heightmaps, torch.Tensor):
            x = heightmaps
        else:
            if not isinstance(heightmaps, (list, tuple)):
                heightmaps = [heightmaps]
            arr = np.stack([h.stacked() if hasattr(h, "stacked") else np.asarray(h, dtype=np.float32)
                            for h in heightmaps])
            x = torch.from_numpy(arr).permute(0, 3, 1, 2)
        x = x.to(self.encoder.scale.dtype)
        if x.dim() != 4 or x.shape[1] != 4 or x.shape[2] % self.config.stride or x.shape[3] % self.config.stride:
            raise ShapeError(f"expected (B, 4, H, W) with H, W divisible by {self.config.stride}, got {tuple(x.shape)}")
        return x

    def token_ids(self, texts):
        if isinstance(texts, str):
            texts = [texts]
        return [[self.vocab.id(t) for t in tokenize(q)] for q in texts]

    def slot_ids(self, texts):
        from .attributes import label_of_text
        if isinstance(texts, str):
            texts = [texts]
        return np.stack([label_of_text(q, self.vocab, len(SLOTS)) for q in texts])

    # -- operations -------------------------------------------------------
    def encode_image(self, x):
        return self.encoder(self.image_tensor(x))

    def encode_text(self, texts):
        if self.config.text_mode == "attr_id":
            return self.text(slot_ids=self.slot_ids(texts))
        return self.text(token_ids=self.token_ids(texts))

    def visual_vector(self, x):
        return self.encode_image(x).mean(dim=(2, 3))

    @staticmethod
    def fuse(phi_v, phi_t):
        if phi_v.shape[1] != phi_t.shape[-1]:
            from .attributes import DimensionMismatch
            raise DimensionMismatch(f"visual channels {phi_v.shape[1]} vs text dim {phi_t.shape[-1]}")
        return phi_v * phi_t[:, :, None, None]

    def fusion(self, x, texts):
        phi_v = self.encode_image(x)
        if self.config.text_mode == "none":
            return phi_v
        return self.fuse(phi_v, self.encode_text(texts))

    def decode_logits(self, f_att, angle_index):
        """Logits of the map for one angle per sample, in the workspace frame."""
        theta = angle_of(angle_index, self.config.num_angles).reshape(-1)
        if theta.numel() == 1:
            theta = theta.expand(f_att.shape[0])
        rotated = rotate(f_att, theta, "zeros")
        logits = self.decoder(rotated)
        return rotate(logits[:, None], -theta, "border")[:, 0]

    def decode_affordances(self, f_att):
        """All N maps, shape (B, N, H, W), values in (0, 1)."""
        b, n = f_att.shape[0], self.config.num_angles
        rep = f_att.repeat_interleave(n, dim=0)
        ks = torch.arange(n).repeat(b)
        logits = self.decode_logits(rep, ks)
        return torch.sigmoid(logits).reshape(b, n, *logits.shape[-2:])

    def forward(self, x, texts):
        return self.decode_affordances(self.fusion(x, texts))

    def attention_heatmap(self, x, texts):
        """Per-cell dot product between spatial visual features and the text vector."""
        phi_v = self.encode_image(x)
        phi_t = self.encode_text(texts)
        return torch.einsum("bchw,bc->bhw", phi_v, phi_t)

    def classify_domain(self, v_vec):
        return self.domain(v_vec)

    # -- vocabulary ------------------------------------------------------
    def add_token(self, token: str, init=None):
        """Extend vocabulary and embedding table; returns the new vocabulary."""
        new_vocab = self.vocab.extend(token)
        if init is None:
            init = torch.zeros(self.config.token_dim)
        self.text.extend(torch.as_tensor(init))
        self.vocab = new_vocab
        return new_vocab

    # -- groups ----------------------------------------------------------
    def parameter_groups(self):
        return {
            "encoder": list(self.encoder.parameters()),
            "text": list(self.text.parameters()),
            "decoder": list(self.decoder.parameters()),
            "domain": list(self.domain.parameters()),
        }


def select_action(maps, epsilon: float, rng: np.random.Generator, foreground=None):
    """epsilon-greedy grasp choice over (N, H, W) affordance maps.

    Greedy ties resolve to the lowest (angle, row, col); exploration picks a
    uniform foreground pixel (any pixel when none is given) and angle.
    """
    from .sim.grasp import GraspAction
    maps = np.asarray(maps.detach().cpu() if isinstance(maps, torch.Tensor) else maps)
    n, h, w = maps.shape
    if epsilon > 0 and rng.random() < epsilon:
        if foreground is not None and np.any(foreground):
            rows, cols = np.nonzero(foreground)
            i = int(rng.integers(len(rows)))
            r, c = int(rows[i]), int(cols[i])
        else:
            r, c = int(rng.integers(h)), int(rng.integers(w))
        return GraspAction(r, c, int(rng.integers(n)))
    k, r, c = np.unravel_index(int(np.argmax(maps)), maps.shape)
    return GraspAction(int(r), int(c), int(k))


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(model: GraspNet, path, meta: dict | None = None):
    """Directory with manifest.json and params.bin (little-endian float32)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(path / "params.bin", "wb") as fh:
        for name, t in model.state_dict().items():
            arr = t.detach().cpu().numpy().astype("<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    cfg = asdict(model.config)
    cfg["enc_channels"] = list(cfg["enc_channels"])
    manifest = {
        "format": "attrgrasp-checkpoint/1",
        "config": cfg,
        "vocabulary": [[tok, idx, model.vocab.token_slot.get(tok, "-")]
                       for tok, idx in sorted(model.vocab.token_to_id.items(), key=lambda kv: kv[1])],
        "tensors": entries,
        "meta": meta or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[GraspNet, dict]:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    manifest = json.loads((path / "manifest.json").read_text())
    config = ModelConfig.from_dict(manifest["config"])
    t2i = {tok: idx for tok, idx, _ in manifest["vocabulary"]}
    slots = {tok: slot for tok, _, slot in manifest["vocabulary"] if slot != "-"}
    vocab = Vocabulary(t2i, slots, config.token_dim)
    model = GraspNet(config, vocab)
    flat = np.fromfile(path / "params.bin", dtype="<f4")
    state = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = torch.from_numpy(flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy())
    model.load_state_dict(state)
    return model, manifest.get("meta", {})
