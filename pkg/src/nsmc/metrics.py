"""Relative errors, the pairwise clustering-error metric, k-means, and
top singular-direction coordinates of embedding matrices."""

import numpy as np

from .model import theta as model_theta


def rel_error_matrix(est, truth):
    """||est - truth||_F / ||truth||_F."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("truth matrix has zero Frobenius norm")
    return float(np.linalg.norm(est - truth) / denom)


def rel_error_theta(est_weights, truth_weights, a1, a2, test_pairs,
                    est_a1=None, est_a2=None):
    """Relative test error of the proximity over a list of (x, z) pairs:
    sqrt(sum (theta_hat - theta_true)^2 / sum theta_true^2).

    The estimate is scored with its own activations when est_a1/est_a2 are
    given (identity-activation baselines); they default to (a1, a2).
    """
    est_a1 = a1 if est_a1 is None else est_a1
    est_a2 = a2 if est_a2 is None else est_a2
    num = 0.0
    den = 0.0
    for x, z in test_pairs:
        t_true = model_theta(truth_weights, a1, a2, x, z)
        t_est = model_theta(est_weights, est_a1, est_a2, x, z)
        num += (t_est - t_true) ** 2
        den += t_true**2
    if den == 0:
        raise ValueError("true proximity is zero on the whole test set")
    return float(np.sqrt(num / den))


def clustering_error(pred, truth):
    """Fraction of item pairs on which the two clusterings disagree:
    same-truth pairs split by pred plus different-truth pairs merged,
    normalized by n(n-1)/2. Invariant to relabeling of either side."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    n = pred.size
    if truth.size != n:
        raise ValueError("pred and truth must have equal length")
    if n < 2:
        raise ValueError("need at least 2 items")
    same_pred = pred[:, None] == pred[None, :]
    same_truth = truth[:, None] == truth[None, :]
    disagree = np.triu(same_pred != same_truth, k=1)
    return float(2.0 * disagree.sum() / (n * (n - 1)))


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centers[c] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))
    return centers


def _lloyd(points, centers, max_iter, tol):
    k = centers.shape[0]
    prev = np.inf
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        # empty-cluster repair: reseed with the point farthest from its center
        for c in range(k):
            if not np.any(labels == c):
                worst = int(np.argmax(d2[np.arange(points.shape[0]), labels]))
                labels[worst] = c
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
        wcss = float(((points - centers[labels]) ** 2).sum())
        if prev - wcss <= tol * max(abs(prev), 1.0):
            break
        prev = wcss
    return labels, wcss


def kmeans(points, k, restarts=20, seed=0, max_iter=300, tol=1e-9):
    """Lloyd's algorithm, best of `restarts` k-means++ starts by
    within-cluster sum of squares; ties keep the lowest restart index.
    Returns labels in 1..k."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if k == 1:
        return np.ones(n, dtype=int)
    root = np.random.SeedSequence(entropy=int(seed))
    best_labels, best_wcss = None, np.inf
    for child in root.spawn(restarts):
        rng = np.random.default_rng(child)
        centers = _kmeans_pp_init(points, k, rng)
        labels, wcss = _lloyd(points, centers.copy(), max_iter, tol)
        if wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    return best_labels + 1


def kmeans_wcss(points, labels):
    """Within-cluster sum of squares of a given labeling."""
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    total = 0.0
    for lab in np.unique(labels):
        member = points[labels == lab]
        total += float(((member - member.mean(axis=0)) ** 2).sum())
    return total


def top_r_left_singular(embeddings, r_keep):
    """Per-item coordinates in the leading left singular directions of an
    items-by-features embedding matrix."""
    M = np.asarray(embeddings, dtype=float)
    if r_keep > min(M.shape):
        raise ValueError(f"r_keep={r_keep} exceeds min shape {min(M.shape)}")
    left, _, _ = np.linalg.svd(M, full_matrices=False)
    return left[:, :r_keep]
