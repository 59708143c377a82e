"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

The backend is fixed at import time from the CLUSTERALIGN_BACKEND
environment variable:

    auto   - use numba when importable, numpy otherwise (default)
    numba  - require the jitted kernels, fail if numba is missing
    numpy  - force the vectorized fallbacks

Both backends compute the same quantities; summation order differs, so
results may disagree in the last few ulps. Within one backend everything
is bit-reproducible.
"""

import os

import numpy as np

_CHOICE = os.environ.get("CLUSTERALIGN_BACKEND", "auto").lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        "CLUSTERALIGN_BACKEND must be one of auto, numba, numpy; got %r" % _CHOICE
    )

if _CHOICE in ("auto", "numba"):
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _CHOICE == "numba":
            raise
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False

BACKEND = "numba" if _HAVE_NUMBA else "numpy"

# Keeps the (chunk x n x d) temporaries of the numpy fallback around 30 MB.
_CHUNK_BUDGET = 2_000_000


def _pairwise_margin_numpy(features, labels, margin, squared):
    """Pairwise pull/push loss over all ordered pairs, vectorized."""
    n, d = features.shape
    loss = 0.0
    grad = np.zeros_like(features)
    chunk = max(1, _CHUNK_BUDGET // max(n * d, 1))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = features[start:stop, None, :] - features[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        same = labels[start:stop, None] == labels[None, :]
        if squared:
            dist = sq
            ddist = 2.0 * diff
        else:
            dist = np.sqrt(sq)
            safe = np.where(dist > 0.0, dist, 1.0)
            ddist = diff / safe[:, :, None]
        active = (~same) & (dist < margin)
        loss += dist[same].sum() + (margin - dist[active]).sum()
        # coef is d(term)/d(dist): +1 on same-class pairs, -1 on active margins.
        coef = same.astype(np.float64) - active.astype(np.float64)
        contrib = coef[:, :, None] * ddist
        grad[start:stop] += contrib.sum(axis=1)
        grad -= contrib.sum(axis=0)
    inv = 1.0 / float(n * n)
    return loss * inv, grad * inv


def _kmeans_assign_numpy(points, centers):
    """Nearest-center assignment and total squared distance."""
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1).astype(np.int64)
    inertia = float(d2[np.arange(points.shape[0]), assign].sum())
    return assign, inertia


if _HAVE_NUMBA:

    @njit(cache=True)
    def _pairwise_margin_numba(features, labels, margin, squared):
        n, d = features.shape
        loss = 0.0
        grad = np.zeros((n, d))
        for i in range(n):
            for j in range(n):
                sq = 0.0
                for k in range(d):
                    t = features[i, k] - features[j, k]
                    sq += t * t
                if squared:
                    dist = sq
                else:
                    dist = np.sqrt(sq)
                if labels[i] == labels[j]:
                    coef = 1.0
                    loss += dist
                elif dist < margin:
                    coef = -1.0
                    loss += margin - dist
                else:
                    continue
                if squared:
                    scale = 2.0 * coef
                elif dist > 0.0:
                    scale = coef / dist
                else:
                    scale = 0.0
                for k in range(d):
                    g = scale * (features[i, k] - features[j, k])
                    grad[i, k] += g
                    grad[j, k] -= g
        inv = 1.0 / (n * n)
        return loss * inv, grad * inv

    @njit(cache=True)
    def _kmeans_assign_numba(points, centers):
        n, d = points.shape
        k = centers.shape[0]
        assign = np.zeros(n, dtype=np.int64)
        inertia = 0.0
        for i in range(n):
            best = 0
            best_d2 = np.inf
            for c in range(k):
                d2 = 0.0
                for j in range(d):
                    t = points[i, j] - centers[c, j]
                    d2 += t * t
                if d2 < best_d2:
                    best_d2 = d2
                    best = c
            assign[i] = best
            inertia += best_d2
        return assign, inertia


IMPLEMENTATIONS = {"numpy": (_pairwise_margin_numpy, _kmeans_assign_numpy)}
if _HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = (_pairwise_margin_numba, _kmeans_assign_numba)

_pairwise_impl, _assign_impl = IMPLEMENTATIONS[BACKEND]


def pairwise_margin_loss(features, labels, margin, squared=True):
    """Mean over all ordered pairs of: distance for same-label pairs,
    hinge max(0, margin - distance) for different-label pairs.

    Returns (loss, gradient w.r.t. features). The hinge contributes
    nothing at distance == margin (inactive subgradient).
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _pairwise_impl(features, labels, float(margin), bool(squared))


def kmeans_assign(points, centers):
    """Assign each point to its nearest center (ties to the lowest index).

    Returns (assignments, inertia) where inertia is the summed squared
    distance to the assigned centers.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return _assign_impl(points, centers)
