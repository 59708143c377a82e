"""The four training objectives and their exact input-side gradients.

Each loss returns its scalar value together with the gradient w.r.t. the
quantity it consumes (logits, features, or critic outputs); composing
those with the network backward pass yields exact parameter gradients.
"""

from dataclasses import dataclass

import numpy as np

from clusteralign.kernels import pairwise_margin_loss
from clusteralign.network import GradientSet

_EPS = 1e-12

# Counts how often a probability had to be clamped before a log. Purely a
# monitoring aid; reset at will.
_clamp_events = 0


def clamp_events() -> int:
    return _clamp_events


def reset_clamp_events() -> None:
    global _clamp_events
    _clamp_events = 0


def _note_clamped(count):
    global _clamp_events
    if count:
        _clamp_events += int(count)


@dataclass(frozen=True)
class PseudoLabeledBatch:
    """Features with per-sample class labels and label confidences.

    Labels are ground truth for source batches (confidence 1.0) and
    teacher-assigned for target batches.
    """

    features: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.features.shape[0] != labels.shape[0]:
            raise ValueError("one label per feature row required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")


@dataclass(frozen=True)
class LossBundle:
    """Scalar losses plus the gradients applied in one training step."""

    l_y: float
    l_c: float
    l_a: float
    l_d: float
    d_logits_source: np.ndarray
    d_features_source: np.ndarray
    d_features_target: np.ndarray
    critic_grads: GradientSet
    selection_count: int


def cross_entropy(probabilities, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    d_logits = (p - onehot(y)) / N, the exact gradient through the
    softmax. Probabilities below 1e-12 are clamped before the log and
    counted via clamp_events().
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = p.shape[0]
    picked = p[np.arange(n), y]
    clamped = picked < _EPS
    _note_clamped(clamped.sum())
    loss = -np.log(np.maximum(picked, _EPS)).mean()
    d_logits = p.copy()
    d_logits[np.arange(n), y] -= 1.0
    return float(loss), d_logits / n


def clustering_loss(batch: PseudoLabeledBatch, margin: float, metric: str = "sq_euclidean"):
    """Pull same-label features together, push different labels past the margin.

    Averages over all ordered sample pairs (self-pairs contribute zero):
    same-label pairs add their distance, different-label pairs add
    max(0, margin - distance). Returns (loss, d_features).
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    if metric not in ("sq_euclidean", "euclidean"):
        raise ValueError(f"unknown metric {metric!r}")
    loss, grad = pairwise_margin_loss(
        batch.features, batch.labels, margin, squared=metric == "sq_euclidean"
    )
    return float(loss), grad


def alignment_loss(source: PseudoLabeledBatch, target: PseudoLabeledBatch):
    """Squared distance between per-class feature means, averaged over the
    classes present in both batches.

    Classes missing from either batch contribute nothing (their term is
    removed and the mean runs over the remainder). Returns
    (loss, d_features_source, d_features_target).
    """
    if source.num_classes != target.num_classes:
        raise ValueError("batches must share the class count")
    d_src = np.zeros_like(source.features)
    d_tgt = np.zeros_like(target.features)
    present = []
    for k in range(source.num_classes):
        src_mask = source.labels == k
        tgt_mask = target.labels == k
        if src_mask.any() and tgt_mask.any():
            present.append((k, src_mask, tgt_mask))
    if not present:
        return 0.0, d_src, d_tgt

    inv_classes = 1.0 / len(present)
    loss = 0.0
    for _, src_mask, tgt_mask in present:
        gap = source.features[src_mask].mean(axis=0) - target.features[tgt_mask].mean(axis=0)
        loss += float(gap @ gap)
        d_src[src_mask] += (2.0 * inv_classes / src_mask.sum()) * gap
        d_tgt[tgt_mask] -= (2.0 * inv_classes / tgt_mask.sum()) * gap
    return loss * inv_classes, d_src, d_tgt


def domain_adversarial_loss(source_critic_out, target_critic_out, target_confidences,
                            threshold: float):
    """Confidence-thresholded domain discrepancy.

    loss = mean(log c(source)) + mean over selected targets of
    log(1 - c(target)), where a target is selected when its teacher
    confidence strictly exceeds the threshold. The critic ascends this
    value while the feature extractor descends it. Returns
    (loss, d_source_out, d_target_out, selection_count); the gradients
    are w.r.t. the critic outputs. An empty selection zeroes the target
    term.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    c_src = np.clip(np.asarray(source_critic_out, np.float64), _EPS, 1.0 - _EPS)
    c_tgt = np.clip(np.asarray(target_critic_out, np.float64), _EPS, 1.0 - _EPS)
    conf = np.asarray(target_confidences, dtype=np.float64)
    selected = conf > threshold
    n_sel = int(selected.sum())

    n_src = c_src.shape[0]
    loss = float(np.log(c_src).mean())
    d_src = 1.0 / (n_src * c_src)
    d_tgt = np.zeros_like(c_tgt)
    if n_sel:
        loss += float(np.log(1.0 - c_tgt[selected]).sum() / n_sel)
        d_tgt[selected] = -1.0 / (n_sel * (1.0 - c_tgt[selected]))
    return loss, d_src, d_tgt, n_sel


def total_objective(l_y, l_c, l_a, l_d, alpha: float, lam: float) -> float:
    """The scalar the student descends: l_y + alpha*(l_c + l_a) + lam*l_d.

    The adversarial term carries a positive sign here because the student
    minimizes the discrepancy while the critic maximizes it; reporting
    only, gradient composition lives in the trainer.
    """
    if alpha < 0 or lam < 0:
        raise ValueError("alpha and lam must be nonnegative")
    return float(l_y + alpha * (l_c + l_a) + lam * l_d)
