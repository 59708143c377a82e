"""Shared test utilities: kink-avoiding samplers and brute-force oracles."""

import numpy as np

from clusteralign.network import NetworkSpec, forward, init_network
from clusteralign.seeding import seeded_rng


def min_abs_preactivation(net, x, noise_seed):
    trace = forward(net, x, mode="train", noise_seed=noise_seed)
    return min(float(np.abs(z).min()) for z in trace.pre_activations)


def kink_free_instance(seed, sizes=(3, 6, 4, 2), batch=8, dropout=0.0,
                       activation="relu", feature_tap="logits", head="softmax",
                       guard=1e-3):
    """A (net, x, noise_seed) triple whose forward pass stays clear of relu
    kinks, so central differences are trustworthy."""
    keys = list(seed) if isinstance(seed, tuple) else [seed]
    for attempt in range(200):
        rng = seeded_rng(*keys, attempt)
        spec = NetworkSpec(sizes, activation=activation, dropout_rate=dropout,
                           feature_tap=feature_tap, head=head)
        net = init_network(spec, int(rng.integers(2**31)))
        x = rng.normal(scale=1.2, size=(batch, sizes[0]))
        noise_seed = int(rng.integers(2**31))
        if activation != "relu" or min_abs_preactivation(net, x, noise_seed) > guard:
            return net, x, noise_seed
    raise AssertionError("could not sample a kink-free instance")


def margin_safe_labels(features, rng, num_classes, margin, squared, guard=1e-2):
    """Labels whose cross-class pair distances stay away from the hinge."""
    n = features.shape[0]
    for _ in range(200):
        labels = rng.integers(num_classes, size=n)
        diff = features[:, None, :] - features[None, :, :]
        d = (diff ** 2).sum(-1)
        if not squared:
            d = np.sqrt(d)
        cross = labels[:, None] != labels[None, :]
        if not np.any(cross & (np.abs(d - margin) < guard)):
            return labels.astype(np.int64)
    raise AssertionError("could not sample margin-safe labels")


def brute_force_clustering(features, labels, margin, squared=True):
    """Literal double loop over all ordered pairs; the loss oracle."""
    n = features.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            diff = features[i] - features[j]
            d = float(diff @ diff)
            if not squared:
                d = float(np.sqrt(d))
            if labels[i] == labels[j]:
                total += d
            else:
                total += max(0.0, margin - d)
    return total / (n * n)


def brute_force_alignment(src_feats, src_labels, tgt_feats, tgt_labels, num_classes):
    """Per-class mean gaps recomputed by hand; the alignment oracle."""
    terms = []
    for k in range(num_classes):
        src = src_feats[src_labels == k]
        tgt = tgt_feats[tgt_labels == k]
        if len(src) and len(tgt):
            gap = src.mean(axis=0) - tgt.mean(axis=0)
            terms.append(float(gap @ gap))
    return sum(terms) / len(terms) if terms else 0.0


def ewma_oracle(predictions, decay):
    """Direct exponentially-weighted sum with bias correction.

    After t updates: sum_{j<=t} decay^(t-j) (1-decay) p_j / (1 - decay^t).
    """
    t = len(predictions)
    acc = np.zeros_like(predictions[0])
    for j, p in enumerate(predictions, start=1):
        acc += decay ** (t - j) * (1.0 - decay) * p
    return acc / (1.0 - decay ** t)
