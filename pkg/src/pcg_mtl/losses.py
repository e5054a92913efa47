"""Classification losses (asymmetric and class-weighted BCE), the masked
segmentation loss, and their multi-task sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .model import ModelOutput
from .tensor import Tensor

N_SEG_STATES = 4  # S1, systole, S2, diastole; state 0 is "unannotated"


@dataclass(frozen=True)
class LossWeights:
    murmur: Tuple[float, float, float] = (5.0, 3.0, 1.0)  # Present, Unknown, Absent
    outcome: Tuple[float, float] = (5.0, 1.0)  # Abnormal, Normal
    lambda_murmur: float = 1.0
    lambda_outcome: float = 1.0
    lambda_seg: float = 1.0

    def __post_init__(self):
        values = list(self.murmur) + list(self.outcome)
        if any(v <= 0 for v in values):
            raise ValueError("class weights must be positive")
        if min(self.lambda_murmur, self.lambda_outcome, self.lambda_seg) < 0:
            raise ValueError("task mixing coefficients must be non-negative")


@dataclass(frozen=True)
class AslParams:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing exponents must be non-negative")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError(f"probability margin must lie in [0, 1), got {self.margin}")


def _one_hot(target, k: int) -> np.ndarray:
    target = np.asarray(target)
    if target.ndim != 1:
        raise ValueError(f"targets must be 1-D class indices, got shape {target.shape}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target class index out of range [0, {k})")
    y = np.zeros((target.size, k))
    y[np.arange(target.size), target.astype(int)] = 1.0
    return y


def loss_b(logits: Tensor, target, weights: Optional[Sequence[float]] = None) -> Tensor:
    """One-vs-rest BCE; the positive term of class k is scaled by ``weights[k]``.

    Averaged over batch and classes.
    """
    n, k = logits.shape
    y = _one_hot(target, k)
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"expected {k} class weights, got {w.shape}")
    pos = T.neg(T.log_sigmoid(logits))
    neg = T.neg(T.log_sigmoid(T.neg(logits)))
    per = pos * (y * w) + neg * (1.0 - y)
    return T.scale(per.sum(), 1.0 / (n * k))


def loss_a(logits: Tensor, target, params: AslParams = AslParams(), eps: float = 1e-8) -> Tensor:
    """Asymmetric loss: focusing on both terms, hard-thresholded negatives."""
    n, k = logits.shape
    y = _one_hot(target, k)
    # positive term: -(1 - p)^gamma_pos * log p
    pos = T.neg(T.log_sigmoid(logits))
    if params.gamma_pos:
        pos = pos * T.power(T.sigmoid(T.neg(logits)), params.gamma_pos)
    # negative term on the shifted probability p_m = max(p - m, 0)
    m = params.margin
    if m == 0.0:
        log_neg = T.log_sigmoid(T.neg(logits))
        p_m = T.sigmoid(logits)
    else:
        p_m = T.clamp_min(T.sigmoid(logits) - m, 0.0)
        log_neg = T.log(T.clamp_min(1.0 - p_m, eps))
    neg = T.neg(log_neg)
    if params.gamma_neg:
        neg = neg * T.power(p_m, params.gamma_neg)
    per = pos * y + neg * (1.0 - y)
    return T.scale(per.sum(), 1.0 / (n * k))


def frame_targets(states: np.ndarray, stride: int) -> np.ndarray:
    """Majority-vote downsampling of per-sample states (N, L) to frames (N, L // stride).

    Ties go to the state that appears first within the frame.
    """
    states = np.asarray(states, dtype=np.int64)
    n, length = states.shape
    frames = states[:, : (length // stride) * stride].reshape(n, -1, stride)
    counts = np.stack([(frames == s).sum(axis=-1) for s in range(N_SEG_STATES + 1)], axis=-1)
    own_count = np.take_along_axis(counts, frames, axis=-1)
    is_winner = own_count == counts.max(axis=-1, keepdims=True)
    first = is_winner.argmax(axis=-1)
    return np.take_along_axis(frames, first[..., None], axis=-1)[..., 0]


def loss_seg(seg_logits: Tensor, targets) -> Tensor:
    """Cross entropy over the four heart-cycle states; unannotated frames are masked."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c, length = seg_logits.shape
    if targets.shape != (n, length):
        raise ValueError(f"shape mismatch: seg logits {seg_logits.shape} vs targets {targets.shape}")
    mask = targets > 0
    count = int(mask.sum())
    if count == 0:
        return Tensor(0.0)
    onehot = np.zeros((n, N_SEG_STATES, length))
    nn_, ll = np.nonzero(mask)
    onehot[nn_, targets[mask] - 1, ll] = 1.0
    logp = T.log_softmax(seg_logits[:, 1:, :], axis=1)
    return T.scale((logp * onehot).sum(), -1.0 / count)


@dataclass
class MtlTargets:
    murmur: np.ndarray
    outcome: np.ndarray
    seg_frames: Optional[np.ndarray] = None


def mtl_loss(
    out: ModelOutput,
    targets: MtlTargets,
    weights: LossWeights = LossWeights(),
    which: str = "B",
    asl: AslParams = AslParams(),
) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted sum of the task losses; returns the total and its components."""
    if which == "B":
        l_m = loss_b(out.murmur_logits, targets.murmur, weights.murmur)
        l_o = loss_b(out.outcome_logits, targets.outcome, weights.outcome)
    elif which == "A":
        l_m = loss_a(out.murmur_logits, targets.murmur, asl)
        l_o = loss_a(out.outcome_logits, targets.outcome, asl)
    else:
        raise ValueError(f"unknown loss {which!r}; expected 'A' or 'B'")
    total = T.scale(l_m, weights.lambda_murmur) + T.scale(l_o, weights.lambda_outcome)
    parts = {"murmur": l_m.item(), "outcome": l_o.item(), "seg": 0.0}
    if out.seg_logits is not None and targets.seg_frames is not None and weights.lambda_seg > 0:
        l_s = loss_seg(out.seg_logits, targets.seg_frames)
        total = total + T.scale(l_s, weights.lambda_seg)
        parts["seg"] = l_s.item()
    parts["total"] = total.item()
    return total, parts
