"""Per-pixel classification and regression losses for training the blocks.

All classification losses operate on a score map that is either a
2-channel (background, foreground) pair or a single foreground channel.
With ``from_logits=True`` scores go through a channel softmax (2-channel)
or a sigmoid (1-channel); otherwise the foreground channel is read as a
probability directly.  Probabilities are clipped to [1e-7, 1 - 1e-7]
before logs so losses stay finite.

Each loss has a ``*_grad`` companion returning ``(value, d value / d pred)``
so the trainer can seed the morphology backward pass; the two are kept in
lockstep and cross-checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maps import check_binary_map, check_feature_map

EPS = 1e-7
DEFAULT_WEIGHTS = (1.0, 2.0, 1.0, 1.0, 1.0)


def _foreground_prob(pred, from_logits):
    """Foreground probability and the jacobian hooks needed for gradients.

    Returns (p, mode) where mode is one of "softmax", "sigmoid", "direct".
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[None]
    if pred.ndim != 3 or pred.shape[0] not in (1, 2):
        raise ValueError(f"prediction must have 1 or 2 channels, got shape {pred.shape}")
    if pred.shape[0] == 2:
        if from_logits:
            z = pred[1] - pred[0]
            p = 1.0 / (1.0 + np.exp(-z))
            return pred, p, "softmax"
        return pred, pred[1], "direct"
    if from_logits:
        p = 1.0 / (1.0 + np.exp(-pred[0]))
        return pred, p, "sigmoid"
    return pred, pred[0], "direct"


def _pixel_ce(p, target):
    pc = np.clip(p, EPS, 1.0 - EPS)
    t = target.astype(np.float64)
    loss = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))
    dloss_dp = -t / pc + (1.0 - t) / (1.0 - pc)
    return loss, dloss_dp


def _chain_to_pred(dloss_dp, p, pred, mode):
    """Push a per-pixel d/dp back to the prediction channels."""
    grad = np.zeros_like(pred)
    if mode == "softmax":
        dz = dloss_dp * p * (1.0 - p)
        grad[1] = dz
        grad[0] = -dz
    elif mode == "sigmoid":
        grad[0] = dloss_dp * p * (1.0 - p)
    else:
        if pred.shape[0] == 2:
            grad[1] = dloss_dp
        else:
            grad[0] = dloss_dp
    return grad


def _ohem_selection(loss, target, neg_ratio, fallback_cap):
    """Boolean mask of pixels kept by hard-example mining.

    Keeps every positive and the ``neg_ratio`` x positives hardest
    negatives (all of them when fewer exist); with zero positives keeps
    the hardest min(fallback_cap, total) negatives.
    """
    pos = target.astype(bool)
    neg = ~pos
    n_pos = int(pos.sum())
    keep = pos.copy()
    neg_losses = loss[neg]
    budget = neg_ratio * n_pos if n_pos > 0 else min(fallback_cap, neg_losses.size)
    if budget >= neg_losses.size:
        keep |= neg
        return keep
    if budget > 0:
        cutoff = np.sort(neg_losses)[::-1][budget - 1]
        hard = neg & (loss > cutoff)
        # Fill remaining slots on the cutoff value in scan order.
        remaining = budget - int(hard.sum())
        if remaining > 0:
            at_cut = np.flatnonzero((neg & (loss == cutoff)).ravel())[:remaining]
            hard.ravel()[at_cut] = True
        keep |= hard
    return keep


def ohem_cross_entropy(pred, target, neg_ratio=3, from_logits=False, fallback_cap=100):
    """Cross-entropy over positives plus the hardest mined negatives."""
    return ohem_cross_entropy_grad(pred, target, neg_ratio, from_logits, fallback_cap)[0]


def ohem_cross_entropy_grad(pred, target, neg_ratio=3, from_logits=False, fallback_cap=100):
    target = check_binary_map(target, "target")
    pred, p, mode = _foreground_prob(pred, from_logits)
    if p.shape != target.shape:
        raise ValueError(f"prediction {p.shape} and target {target.shape} disagree")
    loss, dloss_dp = _pixel_ce(p, target)
    keep = _ohem_selection(loss, target, neg_ratio, fallback_cap)
    n_keep = int(keep.sum())
    if n_keep == 0:
        return 0.0, np.zeros_like(pred)
    value = float(loss[keep].mean())
    dp = np.where(keep, dloss_dp, 0.0) / n_keep
    return value, _chain_to_pred(dp, p, pred, mode)


def balanced_cross_entropy(pred, target, pos_weight=0.75, from_logits=False):
    """Class-balanced cross-entropy: weighted sum of per-class means.

    ``pos_weight`` scales the positive-class mean and ``1 - pos_weight``
    the negative-class mean, countering the text/background imbalance.
    """
    return balanced_cross_entropy_grad(pred, target, pos_weight, from_logits)[0]


def balanced_cross_entropy_grad(pred, target, pos_weight=0.75, from_logits=False):
    target = check_binary_map(target, "target")
    pred, p, mode = _foreground_prob(pred, from_logits)
    if p.shape != target.shape:
        raise ValueError(f"prediction {p.shape} and target {target.shape} disagree")
    loss, dloss_dp = _pixel_ce(p, target)
    pos = target.astype(bool)
    neg = ~pos
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    value = 0.0
    dp = np.zeros_like(p)
    if n_pos:
        value += pos_weight * float(loss[pos].mean())
        dp[pos] = pos_weight * dloss_dp[pos] / n_pos
    if n_neg:
        value += (1.0 - pos_weight) * float(loss[neg].mean())
        dp[neg] = (1.0 - pos_weight) * dloss_dp[neg] / n_neg
    return value, _chain_to_pred(dp, p, pred, mode)


def smooth_l1(pred, target, mask):
    """Masked smoothed-L1: mean of 0.5 d^2 for |d| < 1 else |d| - 0.5."""
    return smooth_l1_grad(pred, target, mask)[0]


def smooth_l1_grad(pred, target, mask):
    pred = check_feature_map(pred, "prediction")
    target = check_feature_map(target, "target")
    mask = check_binary_map(mask, "mask")
    if pred.shape != target.shape or pred.shape[1:] != mask.shape:
        raise ValueError(
            f"shapes disagree: pred {pred.shape}, target {target.shape}, mask {mask.shape}"
        )
    inside = mask.astype(bool)
    n = int(inside.sum()) * pred.shape[0]
    grad = np.zeros_like(pred, dtype=np.float64)
    if n == 0:
        return 0.0, grad
    d = (pred - target).astype(np.float64)
    small = np.abs(d) < 1.0
    pixel = np.where(small, 0.5 * d * d, np.abs(d) - 0.5)
    pixel *= inside[None]
    value = float(pixel.sum() / n)
    grad = np.where(small, d, np.sign(d)) * inside[None] / n
    return value, grad


@dataclass
class LossBundle:
    """The five weighted objective components and their total.

    Components: region/center classification, height/angle regression,
    and the post-morphology segment-map classification.  Default weights
    are (1, 2, 1, 1, 1).
    """

    region: float = 0.0
    center: float = 0.0
    height: float = 0.0
    angle: float = 0.0
    morph: float = 0.0
    weights: tuple = field(default=DEFAULT_WEIGHTS)

    @property
    def total(self):
        w = self.weights
        return (
            w[0] * self.region
            + w[1] * self.center
            + w[2] * self.height
            + w[3] * self.angle
            + w[4] * self.morph
        )

    def components(self):
        return (self.region, self.center, self.height, self.angle, self.morph)


def total_loss(region=0.0, center=0.0, height=0.0, angle=0.0, morph=0.0, weights=DEFAULT_WEIGHTS):
    """Bundle components into the weighted objective; rejects non-finite terms."""
    parts = (region, center, height, angle, morph)
    if not all(np.isfinite(parts)):
        raise ValueError(f"non-finite loss component in {parts}")
    if len(weights) != 5:
        raise ValueError("expected five component weights")
    return LossBundle(region, center, height, angle, morph, tuple(float(w) for w in weights))
