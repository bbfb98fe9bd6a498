"""Motion, metric and adversarial losses plus the gradient reversal layer."""
from __future__ import annotations

import torch
import torch.nn.functional as F


def motion_loss(maps, action, q_label, mask, lambda_m: float = 0.1):
    """Squared error at the executed pixel plus a background penalty.

    ``maps`` is (N, H, W) for one record (or already the executed-angle map,
    (H, W)); the penalty sums q^2 over ``mask`` on the executed-angle map.
    """
    maps = torch.as_tensor(maps)
    q_map = maps[action.angle_index] if maps.dim() == 3 else maps
    q_e = q_map[action.row, action.col]
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.shape != q_map.shape:
        raise IndexError(f"mask {tuple(mask.shape)} does not match map {tuple(q_map.shape)}")
    return (q_e - float(q_label)) ** 2 + lambda_m * (q_map[mask] ** 2).sum()


def motion_loss_batch(q_maps, rows, cols, q_labels, masks, lambda_m: float = 0.1):
    """Per-record motion losses for a batch of executed-angle maps (B, H, W)."""
    b = q_maps.shape[0]
    idx = torch.arange(b)
    q_e = q_maps[idx, torch.as_tensor(rows), torch.as_tensor(cols)]
    q_bar = torch.as_tensor(q_labels, dtype=q_maps.dtype)
    bg = (q_maps ** 2 * torch.as_tensor(masks, dtype=q_maps.dtype)).sum(dim=(1, 2))
    return (q_e - q_bar) ** 2 + lambda_m * bg


def metric_loss(anchor, positive, negative, alpha: float = 0.5, reduction: str = "sum"):
    """Triplet hinge on squared distances; rows are triplets."""
    if alpha < 0:
        raise ValueError("margin must be nonnegative")
    if anchor.shape[0] == 0:
        return anchor.new_zeros(())
    d_pos = ((anchor - positive) ** 2).sum(-1)
    d_neg = ((anchor - negative) ** 2).sum(-1)
    losses = torch.clamp(d_pos - d_neg + alpha, min=0.0)
    return losses.sum() if reduction == "sum" else losses.mean()


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lambd):
        ctx.lambd = lambd
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.lambd * grad, None


def grl(x, lambda_r: float = 1.0):
    """Identity forward; multiplies the incoming gradient by -lambda_r."""
    return _GradReverse.apply(x, float(lambda_r))


def domain_bce(logits, domains, reduction: str = "sum"):
    """Binary cross-entropy of domain logits against labels (1 = target)."""
    d = torch.as_tensor(domains, dtype=logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, d, reduction=reduction)


def adversarial_loss(model, source_images, target_images, lambda_r: float = 1.0, reduction: str = "sum"):
    """Domain-classification loss through the gradient reversal layer.

    Minimizing it trains the classifier to separate the domains while the
    reversed gradient pushes the encoder toward domain-invariant features.
    Returns (loss, logits, labels).
    """
    if len(source_images) == 0 or len(target_images) == 0:
        raise ValueError("both domains need at least one image")
    xs = model.image_tensor(source_images)
    xt = model.image_tensor(target_images)
    v = model.visual_vector(torch.cat([xs, xt], 0))
    logits = model.classify_domain(grl(v, lambda_r))
    labels = torch.cat([torch.zeros(xs.shape[0]), torch.ones(xt.shape[0])]).to(logits.dtype)
    return domain_bce(logits, labels, reduction), logits, labels
