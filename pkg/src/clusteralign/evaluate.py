"""Evaluation and monitoring: accuracies, k-means probes, divergence proxy.

Everything here works on snapshots in eval mode and is deterministic for
a given seed; this module is the only reader of the hidden target labels.
"""

from dataclasses import dataclass

import numpy as np

from clusteralign.kernels import kmeans_assign
from clusteralign.losses import (
    PseudoLabeledBatch,
    alignment_loss,
    clustering_loss,
    cross_entropy,
    domain_adversarial_loss,
)
from clusteralign.network import Network, forward
from clusteralign.seeding import derive_seed, seeded_rng
from clusteralign.teacher import TeacherState, pi_predict, pseudo_labels


@dataclass(frozen=True)
class RunMetrics:
    """One evaluation point of a training run."""

    iteration: int
    target_accuracy: float
    source_accuracy: float
    clustering_accuracy: float
    jsd_proxy: float
    selection_rate: float
    l_y: float
    l_c: float
    l_a: float
    l_d: float


def accuracy(net: Network, x, y) -> float:
    """Fraction of eval-mode argmax predictions matching y."""
    probs = forward(net, x, mode="eval").probabilities
    predicted = np.argmax(probs, axis=1)
    return float(np.mean(predicted == np.asarray(y)))


def _kmeans_pp_centers(features, k, rng):
    n = features.shape[0]
    centers = np.empty((k, features.shape[1]))
    centers[0] = features[rng.integers(n)]
    d2 = ((features - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = features[idx]
        d2 = np.minimum(d2, ((features - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(features, k, seed, max_iters):
    rng = seeded_rng(seed)
    centers = _kmeans_pp_centers(features, k, rng)
    assignments, inertia = kmeans_assign(features, centers)
    for _ in range(max_iters):
        new_centers = centers.copy()
        for c in range(k):
            members = assignments == c
            if members.any():
                new_centers[c] = features[members].mean(axis=0)
            else:
                # Re-seed an empty cluster at the point farthest from its center.
                dist = ((features - new_centers[assignments]) ** 2).sum(axis=1)
                new_centers[c] = features[int(np.argmax(dist))]
        new_assignments, new_inertia = kmeans_assign(features, new_centers)
        if new_inertia > inertia + 1e-9:
            raise AssertionError("k-means inertia increased")
        centers = new_centers
        if np.array_equal(new_assignments, assignments):
            assignments, inertia = new_assignments, new_inertia
            break
        assignments, inertia = new_assignments, new_inertia
    return assignments, inertia


def kmeans(features, k: int, seed: int, max_iters: int = 100):
    """Lloyd's algorithm with k-means++ seeding; returns assignments."""
    features = np.asarray(features, dtype=np.float64)
    if k < 1 or k > features.shape[0]:
        raise ValueError("k must lie in [1, number of points]")
    assignments, _ = _lloyd(features, k, seed, max_iters)
    return assignments


def kmeans_best(features, k: int, seed: int, restarts: int = 5, max_iters: int = 100):
    """Lowest-inertia assignments over several seeded restarts."""
    features = np.asarray(features, dtype=np.float64)
    best = None
    best_inertia = np.inf
    for r in range(restarts):
        assignments, inertia = _lloyd(features, k, derive_seed(seed, r), max_iters)
        if inertia < best_inertia:
            best, best_inertia = assignments, inertia
    return best


def cluster_accuracy(assignments, true_labels) -> float:
    """Label each cluster by its most frequent true label (ties toward the
    smallest label), then score the fraction of matching points."""
    assignments = np.asarray(assignments)
    true_labels = np.asarray(true_labels)
    if assignments.shape != true_labels.shape:
        raise ValueError("assignments and labels must have the same length")
    correct = 0
    for c in np.unique(assignments):
        members = true_labels[assignments == c]
        counts = np.bincount(members)
        correct += counts[int(np.argmax(counts))]
    return float(correct) / len(true_labels)


def jsd_proxy(l_d: float) -> float:
    """Divergence estimate 0.5 * l_d + ln 2 (zero for an uninformative critic)."""
    return 0.5 * l_d + float(np.log(2.0))


def selection_rate(confidences, threshold: float) -> float:
    """Fraction of confidences strictly above the threshold."""
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.size == 0:
        return 0.0
    return float(np.mean(conf > threshold))


def clustering_report(source_features, target_features, source_labels, target_labels,
                      k: int, seed: int):
    """Clustering accuracy on combined features and per domain."""
    combined = np.vstack([source_features, target_features])
    labels = np.concatenate([source_labels, target_labels])
    return {
        "combined": cluster_accuracy(kmeans_best(combined, k, derive_seed(seed, 0)), labels),
        "source": cluster_accuracy(kmeans_best(source_features, k, derive_seed(seed, 1)), source_labels),
        "target": cluster_accuracy(kmeans_best(target_features, k, derive_seed(seed, 2)), target_labels),
    }


def teacher_view(student, teacher: TeacherState, target_x, self_teacher: bool, seed: int):
    """Full-target-set teacher labels and confidences for an eval point."""
    if self_teacher:
        probs = forward(student, target_x, mode="eval").probabilities
        return pseudo_labels(probs)
    if teacher.mode == "pi":
        return pseudo_labels(pi_predict(student, target_x, seed))
    return pseudo_labels(teacher)


def snapshot(iteration, student, critic, teacher, ds, threshold, margin, metric,
             self_teacher, seed) -> RunMetrics:
    """Evaluate one training state on the full dataset.

    The logged l_d applies the current confidence selection; the JSD
    proxy is computed from a separate all-selected pass so the monitor
    stays comparable across training.
    """
    trace_src = forward(student, ds.source_x, mode="eval")
    trace_tgt = forward(student, ds.target_x, mode="eval")

    src_acc = float(np.mean(np.argmax(trace_src.probabilities, axis=1) == ds.source_y))
    tgt_acc = float(np.mean(np.argmax(trace_tgt.probabilities, axis=1) == ds.target_y_hidden))

    labels, confidences = teacher_view(
        student, teacher, ds.target_x, self_teacher, derive_seed(seed, 23, iteration)
    )

    l_y, _ = cross_entropy(trace_src.probabilities, ds.source_y)
    src_batch = PseudoLabeledBatch(
        trace_src.features, ds.source_y, np.ones(len(ds.source_y)), ds.num_classes
    )
    tgt_batch = PseudoLabeledBatch(trace_tgt.features, labels, confidences, ds.num_classes)
    l_c_src, _ = clustering_loss(src_batch, margin, metric)
    l_c_tgt, _ = clustering_loss(tgt_batch, margin, metric)
    l_a, _, _ = alignment_loss(src_batch, tgt_batch)

    c_src = forward(critic, trace_src.features, mode="eval").probabilities[:, 0]
    c_tgt = forward(critic, trace_tgt.features, mode="eval").probabilities[:, 0]
    l_d, _, _, _ = domain_adversarial_loss(c_src, c_tgt, confidences, threshold)
    l_d_all, _, _, _ = domain_adversarial_loss(c_src, c_tgt, np.ones_like(c_tgt), 0.0)

    combined = np.vstack([trace_src.features, trace_tgt.features])
    true_labels = np.concatenate([ds.source_y, ds.target_y_hidden])
    assignments = kmeans_best(combined, ds.num_classes, derive_seed(seed, 29, iteration))
    cluster_acc = cluster_accuracy(assignments, true_labels)

    return RunMetrics(
        iteration=int(iteration),
        target_accuracy=tgt_acc,
        source_accuracy=src_acc,
        clustering_accuracy=cluster_acc,
        jsd_proxy=jsd_proxy(l_d_all),
        selection_rate=selection_rate(confidences, threshold),
        l_y=l_y,
        l_c=l_c_src + l_c_tgt,
        l_a=l_a,
        l_d=l_d,
    )
