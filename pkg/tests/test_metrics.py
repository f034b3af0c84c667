import numpy as np
import pytest

from nsmc.activations import ActivationKind as K
from nsmc.metrics import (clustering_error, kmeans, kmeans_wcss, rel_error_matrix,
                          rel_error_theta, top_r_left_singular)
from nsmc.model import WeightPair, theta


def test_rel_error_matrix_basic():
    rng = np.random.default_rng(0)
    truth = rng.standard_normal((5, 3))
    assert rel_error_matrix(truth, truth) == 0.0
    assert abs(rel_error_matrix(2 * truth, truth) - 1.0) < 1e-15
    assert abs(rel_error_matrix(np.zeros_like(truth), truth) - 1.0) < 1e-15
    with pytest.raises(ValueError):
        rel_error_matrix(truth, np.zeros_like(truth))
    with pytest.raises(ValueError):
        rel_error_matrix(truth, truth[:, :2])


def test_rel_error_matrix_scale_covariance():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((6, 2))
    for c in (-1.0, 0.25, 1.5, 3.0):
        assert abs(rel_error_matrix(c * truth, truth) - abs(c - 1)) < 1e-12


def test_rel_error_theta():
    rng = np.random.default_rng(2)
    w = WeightPair(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)))
    pairs = [(rng.standard_normal(4), rng.standard_normal(3)) for _ in range(6)]
    assert rel_error_theta(w, w, K.TANH, K.SIGMOID, pairs) == 0.0
    # single pair with true proximity 2 and estimate 1 -> error 0.5
    w1 = WeightPair(np.array([[1.0]]), np.array([[1.0]]))
    w2 = WeightPair(np.array([[2.0]]), np.array([[1.0]]))
    one = [(np.array([1.0]), np.array([1.0]))]
    assert abs(rel_error_theta(w1, w2, K.RELU, K.RELU, one) - 0.5) < 1e-15


def test_rel_error_theta_matches_scalar_loop():
    rng = np.random.default_rng(3)
    est = WeightPair(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)))
    tru = WeightPair(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)))
    pairs = [(rng.standard_normal(4), rng.standard_normal(3)) for _ in range(8)]
    got = rel_error_theta(est, tru, K.SIGMOID, K.TANH, pairs)
    num = sum((theta(est, K.SIGMOID, K.TANH, x, z) - theta(tru, K.SIGMOID, K.TANH, x, z)) ** 2
              for x, z in pairs)
    den = sum(theta(tru, K.SIGMOID, K.TANH, x, z) ** 2 for x, z in pairs)
    assert abs(got - np.sqrt(num / den)) < 1e-12


def test_rel_error_theta_estimator_activations():
    rng = np.random.default_rng(4)
    est = WeightPair(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)))
    tru = WeightPair(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)))
    pairs = [(rng.standard_normal(4), rng.standard_normal(3)) for _ in range(5)]
    mixed = rel_error_theta(est, tru, K.RELU, K.RELU, pairs,
                            est_a1=K.IDENTITY, est_a2=K.IDENTITY)
    same = rel_error_theta(est, tru, K.RELU, K.RELU, pairs)
    assert mixed != same


def test_clustering_error_enumerated_cases():
    # pairs: (1,2) split, (1,3) agree, (2,3) merged -> 2 of 3 disagree
    assert abs(clustering_error([1, 2, 2], [1, 1, 2]) - 2 / 3) < 1e-15
    assert clustering_error([1, 1, 1, 1], [1, 2, 3, 4]) == 1.0
    assert clustering_error([2, 2, 1], [1, 1, 2]) == 0.0  # relabeling
    with pytest.raises(ValueError):
        clustering_error([1], [1])


def test_clustering_error_invariances():
    rng = np.random.default_rng(5)
    labels = rng.integers(1, 5, size=40)
    assert clustering_error(labels, labels) == 0.0
    perm = rng.permutation(10) + 1
    relabeled = perm[labels - 1]
    other = rng.integers(1, 4, size=40)
    assert clustering_error(relabeled, other) == clustering_error(labels, other)
    assert clustering_error(other, relabeled) == clustering_error(other, labels)


def test_clustering_error_matches_pair_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(25):
        n = int(rng.integers(2, 30))
        pred = rng.integers(1, 6, size=n)
        truth = rng.integers(1, 5, size=n)
        count = 0
        for i in range(n):
            for j in range(i + 1, n):
                same_t = truth[i] == truth[j]
                same_p = pred[i] == pred[j]
                count += int(same_t != same_p)
        expected = 2.0 * count / (n * (n - 1))
        assert clustering_error(pred, truth) == expected


def test_kmeans_basics():
    rng = np.random.default_rng(7)
    pts = rng.standard_normal((20, 3))
    assert np.all(kmeans(pts, 1) == 1)
    # two well separated clouds
    a = rng.standard_normal((30, 2))
    b = rng.standard_normal((25, 2)) + 50.0
    pts = np.vstack([a, b])
    labels = kmeans(pts, 2, restarts=5, seed=8)
    truth = np.array([1] * 30 + [2] * 25)
    assert clustering_error(labels, truth) == 0.0
    again = kmeans(pts, 2, restarts=5, seed=8)
    assert np.array_equal(labels, again)
    with pytest.raises(ValueError):
        kmeans(pts[:1], 2)


def test_kmeans_improves_on_planted_labels():
    rng = np.random.default_rng(9)
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    labels_true = rng.integers(0, 3, size=90)
    pts = centers[labels_true] + 0.8 * rng.standard_normal((90, 2))
    pred = kmeans(pts, 3, restarts=10, seed=10)
    assert kmeans_wcss(pts, pred) <= kmeans_wcss(pts, labels_true + 1) + 1e-9


def test_top_r_left_singular():
    rng = np.random.default_rng(11)
    a = rng.standard_normal(12)
    b = rng.standard_normal(4)
    M = np.outer(a, b)
    lead = top_r_left_singular(M, 1)[:, 0]
    direction = a / np.linalg.norm(a)
    assert min(np.linalg.norm(lead - direction), np.linalg.norm(lead + direction)) < 1e-10
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    out = top_r_left_singular(Q, 6)
    assert np.abs(out.T @ out - np.eye(6)).max() < 1e-10
    with pytest.raises(ValueError):
        top_r_left_singular(M, 5)


def test_top_r_left_singular_matches_gram_eigendecomposition():
    rng = np.random.default_rng(12)
    M = rng.standard_normal((15, 4))
    out = top_r_left_singular(M, 3)
    vals, vecs = np.linalg.eigh(M @ M.T)
    gram_lead = vecs[:, ::-1][:, :3]
    # compare the spanned subspaces via projector difference
    P1 = out @ out.T
    P2 = gram_lead @ gram_lead.T
    assert np.abs(P1 - P2).max() < 1e-8
