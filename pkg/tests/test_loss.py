import math

import numpy as np
import pytest

import nsmc.loss as loss_mod
from nsmc.activations import ActivationKind as K
from nsmc.datagen import EdgeSampleSet
from nsmc.loss import (loss_grad, loss_hessian, loss_hessian_parts, loss_value,
                       pair_scalars)
from nsmc.model import FeaturePool, WeightPair, theta
from nsmc.verification import fd_gradient


def _tiny_instance(seed, m=5, d1=3, d2=3, r=2, n=8):
    rng = np.random.default_rng(seed)
    pool = FeaturePool(rng.standard_normal((n, d1)), rng.standard_normal((n, d2)))
    pool_p = FeaturePool(rng.standard_normal((n, d1)), rng.standard_normal((n, d2)))
    omega = EdgeSampleSet(rng.integers(0, n, m), rng.integers(0, n, m), rng.normal(0, 2, m))
    omega_p = EdgeSampleSet(rng.integers(0, n, m), rng.integers(0, n, m), rng.normal(0, 2, m))
    w = WeightPair(rng.standard_normal((d1, r)), rng.standard_normal((d2, r)))
    return w, omega, omega_p, pool, pool_p


def test_pair_scalars_trivial():
    ps = pair_scalars(1.0, 1.0, 0.3, -0.2)
    assert ps.hess_weight == 0.0 and ps.grad_weight == 0.0
    ps = pair_scalars(2.0, 0.0, 0.5, 0.5)  # u = 0
    assert abs(ps.hess_weight - 1.0) < 1e-15
    assert abs(ps.grad_weight - 1.0) < 1e-15


def test_pair_scalars_saturated_tail():
    # dy = 3, dt = 10 -> u = 30; grad weight = 3 * sigmoid(-30)
    ps = pair_scalars(3.0, 0.0, 10.0, 0.0)
    expected = 3.0 * math.exp(-30.0) / (1.0 + math.exp(-30.0))
    assert abs(ps.grad_weight - expected) < 1e-10 * expected
    assert np.isfinite(ps.hess_weight)


def test_pair_scalars_no_overflow():
    for u_sign in (1.0, -1.0):
        ps = pair_scalars(7.0, 0.0, u_sign * 100.0, 0.0)  # |u| = 700
        assert np.isfinite(ps.grad_weight) and np.isfinite(ps.hess_weight)
    ps = pair_scalars(1e10, 0.0, 1e5, 0.0)
    assert np.isfinite(ps.grad_weight) and ps.grad_weight == 0.0


def test_loss_value_log2_cases():
    rng = np.random.default_rng(0)
    w = WeightPair(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
    m, n = 4, 6
    zero_pool = FeaturePool(np.zeros((n, 3)), np.zeros((n, 3)))
    omega = EdgeSampleSet(rng.integers(0, n, m), rng.integers(0, n, m), rng.normal(size=m))
    omega_p = EdgeSampleSet(rng.integers(0, n, m), rng.integers(0, n, m), rng.normal(size=m))
    # all proximities equal (sigmoid embeddings of zero features)
    val = loss_value(w, K.SIGMOID, K.SIGMOID, omega, omega_p, zero_pool, zero_pool)
    assert abs(val - math.log(2.0)) < 1e-15
    # constant responses
    pool = FeaturePool(rng.standard_normal((n, 3)), rng.standard_normal((n, 3)))
    omega_c = EdgeSampleSet(omega.row_idx, omega.col_idx, np.full(m, 1.5))
    omega_cp = EdgeSampleSet(omega_p.row_idx, omega_p.col_idx, np.full(m, 1.5))
    val = loss_value(w, K.TANH, K.RELU, omega_c, omega_cp, pool, pool)
    assert abs(val - math.log(2.0)) < 1e-15


def test_loss_value_matches_naive_double_loop():
    w, omega, omega_p, pool, pool_p = _tiny_instance(1)
    got = loss_value(w, K.TANH, K.SIGMOID, omega, omega_p, pool, pool_p)
    total = 0.0
    for k in range(omega.m):
        tk = theta(w, K.TANH, K.SIGMOID, pool.X[omega.row_idx[k]], pool.Z[omega.col_idx[k]])
        for l in range(omega_p.m):
            tl = theta(w, K.TANH, K.SIGMOID, pool_p.X[omega_p.row_idx[l]],
                       pool_p.Z[omega_p.col_idx[l]])
            arg = -(omega.y[k] - omega_p.y[l]) * (tk - tl)
            total += math.log1p(math.exp(-abs(arg))) + max(arg, 0.0)
    assert abs(got - total / (omega.m * omega_p.m)) < 1e-12


def test_grad_zero_when_responses_constant():
    w, omega, omega_p, pool, pool_p = _tiny_instance(2)
    omega = EdgeSampleSet(omega.row_idx, omega.col_idx, np.full(omega.m, 2.0))
    omega_p = EdgeSampleSet(omega_p.row_idx, omega_p.col_idx, np.full(omega_p.m, 2.0))
    rep = loss_grad(w, K.SIGMOID, K.TANH, omega, omega_p, pool, pool_p)
    assert np.all(rep.grad_u == 0.0) and np.all(rep.grad_v == 0.0)


def test_mirrored_pair_terms_are_equal_not_cancelling():
    # With omega' identical to omega, the (k,l) and (l,k) contributions
    # coincide (both factors flip sign), so the gradient is generally
    # nonzero and must still agree with finite differences of the value.
    w, omega, _, pool, _ = _tiny_instance(3)
    rep = loss_grad(w, K.SIGMOID, K.TANH, omega, omega, pool, pool)
    assert rep.grad_norm() > 1e-6

    def value_of(vec):
        wp = WeightPair.unpack(vec, w.d1, w.d2, w.r)
        return loss_value(wp, K.SIGMOID, K.TANH, omega, omega, pool, pool)

    fd = fd_gradient(value_of, w.pack())
    assert np.max(np.abs(rep.pack_grad() - fd)) < 1e-7


def test_grad_matches_fd_mixed_activations():
    for seed, (a1, a2) in enumerate([(K.TANH, K.SIGMOID), (K.RELU, K.TANH),
                                     (K.SIGMOID, K.SIGMOID)]):
        w, omega, omega_p, pool, pool_p = _tiny_instance(10 + seed, m=6, d1=4, d2=3)

        def value_of(vec):
            wp = WeightPair.unpack(vec, w.d1, w.d2, w.r)
            return loss_value(wp, a1, a2, omega, omega_p, pool, pool_p)

        rep = loss_grad(w, a1, a2, omega, omega_p, pool, pool_p)
        fd = fd_gradient(value_of, w.pack())
        scale = max(np.abs(fd).max(), 1e-12)
        assert np.abs(rep.pack_grad() - fd).max() / scale < 1e-5


def test_tied_mode_gradient():
    rng = np.random.default_rng(4)
    d, r, m, n = 4, 2, 6, 8
    pool = FeaturePool(rng.standard_normal((n, d)), rng.standard_normal((n, d)))
    pool_p = FeaturePool(rng.standard_normal((n, d)), rng.standard_normal((n, d)))
    omega = EdgeSampleSet(rng.integers(0, n, m), rng.integers(0, n, m), rng.normal(size=m))
    omega_p = EdgeSampleSet(rng.integers(0, n, m), rng.integers(0, n, m), rng.normal(size=m))
    U = rng.standard_normal((d, r))
    w = WeightPair(U, U)
    rep = loss_grad(w, K.TANH, K.TANH, omega, omega_p, pool, pool_p, tied=True)
    assert np.array_equal(rep.grad_u, rep.grad_v)

    def value_of_shared(vec):
        M = vec.reshape(d, r, order="F")
        return loss_value(WeightPair(M, M), K.TANH, K.TANH, omega, omega_p, pool, pool_p)

    fd = fd_gradient(value_of_shared, U.ravel(order="F"))
    assert np.abs(rep.grad_u.ravel(order="F") - fd).max() < 1e-7
    with pytest.raises(ValueError):
        bad = WeightPair(rng.standard_normal((4, 2)), rng.standard_normal((5, 2)))
        loss_grad(bad, K.TANH, K.TANH, omega, omega_p, pool, pool_p, tied=True)


def test_fix_first_row_zeroes_gradient_row():
    w, omega, omega_p, pool, pool_p = _tiny_instance(5)
    free = loss_grad(w, K.RELU, K.SIGMOID, omega, omega_p, pool, pool_p)
    fixed = loss_grad(w, K.RELU, K.SIGMOID, omega, omega_p, pool, pool_p, fix_first_row=True)
    assert np.all(fixed.grad_u[0, :] == 0.0)
    assert np.array_equal(fixed.grad_u[1:, :], free.grad_u[1:, :])
    assert np.array_equal(fixed.grad_v, free.grad_v)


def test_hessian_matches_fd_of_gradient():
    w, omega, omega_p, pool, pool_p = _tiny_instance(6, m=4, d1=3, d2=2, r=1)
    a1 = a2 = K.TANH
    H = loss_hessian(w, a1, a2, omega, omega_p, pool, pool_p)
    assert np.abs(H - H.T).max() < 1e-9 * max(np.abs(H).max(), 1.0)
    dim = w.r * (w.d1 + w.d2)
    h = 1e-5
    fd = np.empty((dim, dim))
    w0 = w.pack()
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h
        gp = loss_grad(WeightPair.unpack(w0 + e, w.d1, w.d2, w.r), a1, a2,
                       omega, omega_p, pool, pool_p).pack_grad()
        gm = loss_grad(WeightPair.unpack(w0 - e, w.d1, w.d2, w.r), a1, a2,
                       omega, omega_p, pool, pool_p).pack_grad()
        fd[:, j] = (gp - gm) / (2 * h)
    scale = max(np.abs(fd).max(), 1e-12)
    assert np.abs(H - fd).max() / scale < 1e-4


def test_hessian_relu_block_term_is_pure_cross():
    # with relu on both sides the second derivatives vanish, so the block
    # term keeps only the x z^T blocks
    w, omega, omega_p, pool, pool_p = _tiny_instance(7, m=5, d1=3, d2=3, r=2)
    a_term, b_term = loss_hessian_parts(w, K.RELU, K.RELU, omega, omega_p, pool, pool_p)
    d1, d2, r = w.d1, w.d2, w.r
    for i in range(r):
        assert np.all(b_term[i * d1:(i + 1) * d1, i * d1:(i + 1) * d1] == 0.0)
        v0 = r * d1 + i * d2
        assert np.all(b_term[v0:v0 + d2, v0:v0 + d2] == 0.0)
    assert np.abs(b_term).max() > 0.0


def test_hessian_rank_one_term_is_psd():
    for seed in range(3):
        w, omega, omega_p, pool, pool_p = _tiny_instance(20 + seed, m=5)
        a_term, _ = loss_hessian_parts(w, K.SIGMOID, K.TANH, omega, omega_p, pool, pool_p)
        eigs = np.linalg.eigvalsh(0.5 * (a_term + a_term.T))
        assert eigs.min() >= -1e-8


def test_hessian_caps():
    w, omega, omega_p, pool, pool_p = _tiny_instance(8)
    with pytest.raises(ValueError, match="cap"):
        big = WeightPair(np.eye(600)[:, :540] + 0.01, np.eye(600)[:, :540] + 0.01)
        loss_hessian(big, K.TANH, K.TANH, omega, omega_p, pool, pool_p)


def test_pair_subsample_full_grid_matches_exact():
    w, omega, omega_p, pool, pool_p = _tiny_instance(9)
    exact = loss_value(w, K.TANH, K.TANH, omega, omega_p, pool, pool_p)
    total = omega.m * omega_p.m
    sub = loss_value(w, K.TANH, K.TANH, omega, omega_p, pool, pool_p,
                     pair_subsample=total, subsample_seed=1)
    assert abs(sub - exact) < 1e-12


def test_pair_subsample_is_unbiased():
    w, omega, omega_p, pool, pool_p = _tiny_instance(10, m=20)
    exact = loss_value(w, K.TANH, K.SIGMOID, omega, omega_p, pool, pool_p)
    vals = [loss_value(w, K.TANH, K.SIGMOID, omega, omega_p, pool, pool_p,
                       pair_subsample=100, subsample_seed=s) for s in range(200)]
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - exact) < 4 * se


def test_debug_flip_hook_breaks_gradient_only():
    w, omega, omega_p, pool, pool_p = _tiny_instance(11)
    clean = loss_grad(w, K.TANH, K.TANH, omega, omega_p, pool, pool_p)
    loss_mod.DEBUG_FLIP_GRAD_WEIGHT = True
    try:
        flipped = loss_grad(w, K.TANH, K.TANH, omega, omega_p, pool, pool_p)
    finally:
        loss_mod.DEBUG_FLIP_GRAD_WEIGHT = False
    assert flipped.value == clean.value
    assert np.allclose(flipped.grad_u, -clean.grad_u)


def test_non_finite_proximity_raises():
    w, omega, omega_p, pool, pool_p = _tiny_instance(12)
    huge = WeightPair(w.U * 1e200, w.V * 1e200)
    with pytest.raises(FloatingPointError):
        loss_grad(huge, K.RELU, K.RELU, omega, omega_p, pool, pool_p)
