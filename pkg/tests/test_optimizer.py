import numpy as np
import pytest

from nsmc.loss import LossReport
from nsmc.model import WeightPair
from nsmc.optimizer import (DivergenceError, GdConfig, GdTrace, estimate_step,
                            fit_contraction_rate, gd_minimize, init_near_truth,
                            preplateau_prefix)


def _quadratic_objective(target, scale_u=1.0, scale_v=1.0):
    """f(W) = scale_u ||U - U0||_F^2 + scale_v ||V - V0||_F^2."""

    def objective(w):
        du = w.U - target.U
        dv = w.V - target.V
        value = scale_u * np.sum(du * du) + scale_v * np.sum(dv * dv)
        return LossReport(value=value, grad_u=2 * scale_u * du, grad_v=2 * scale_v * dv)

    return objective


def _rand_pair(seed, d1=3, d2=2, r=1):
    rng = np.random.default_rng(seed)
    return WeightPair(rng.standard_normal((d1, r)), rng.standard_normal((d2, r)))


def test_init_near_truth_exact_radius():
    truth = _rand_pair(0, d1=6, d2=5, r=2)
    start = init_near_truth(truth, 1.0, seed=1)
    assert abs(start.dist_sq(truth) - 1.0) < 1e-10
    tiny = init_near_truth(truth, 1e-28, seed=1)
    assert np.max(np.abs(tiny.U - truth.U)) < 1e-13
    fixed = init_near_truth(truth, 1.0, fix_first_row=True, seed=2)
    assert np.array_equal(fixed.U[0, :], truth.U[0, :])
    assert abs(fixed.dist_sq(truth) - 1.0) < 1e-10
    with pytest.raises(ValueError):
        init_near_truth(truth, 0.0)


def test_gd_stops_immediately_at_zero_gradient():
    target = _rand_pair(3)
    obj = _quadratic_objective(target)
    W, trace = gd_minimize(obj, target, GdConfig(step=0.1, max_iters=50))
    assert len(trace) == 1
    assert np.array_equal(W.U, target.U)


def test_gd_quadratic_contraction_is_exact():
    target = _rand_pair(4)
    start = init_near_truth(target, 4.0, seed=5)
    obj = _quadratic_objective(target)
    cfg = GdConfig(step=0.25, max_iters=30, grad_tol=0.0, trace_truth=target)
    _, trace = gd_minimize(obj, start, cfg)
    d = np.array(trace.dist_sq)
    # iterate map is W - W0 <- (1 - 2 eta)(W - W0); squared distance shrinks 4x
    ratios = d[1:] / d[:-1]
    assert np.allclose(ratios, 0.25, rtol=1e-12)


def test_gd_trace_records_and_max_iters():
    target = _rand_pair(6)
    start = init_near_truth(target, 1.0, seed=7)
    _, trace = gd_minimize(_quadratic_objective(target), start,
                           GdConfig(step=0.01, max_iters=17, grad_tol=0.0))
    assert len(trace) == 18  # start + 17 iterates
    assert trace.iters[0] == 0 and trace.iters[-1] == 17


def test_gd_divergence_carries_trace():
    target = _rand_pair(8)
    start = init_near_truth(target, 1.0, seed=9)
    with pytest.raises(DivergenceError) as err:
        gd_minimize(_quadratic_objective(target), start,
                    GdConfig(step=50.0, max_iters=5000, grad_tol=0.0))
    assert len(err.value.trace) >= 1


def test_estimate_step_known_hessians():
    target = _rand_pair(10)
    # f = ||W - W0||^2 has Hessian 2I
    got = estimate_step(_quadratic_objective(target), init_near_truth(target, 1.0, seed=11))
    assert abs(got - 0.5) < 0.01
    # distinct curvatures 1 and 4 -> step 1/4
    got = estimate_step(_quadratic_objective(target, scale_u=0.5, scale_v=2.0),
                        init_near_truth(target, 1.0, seed=12))
    assert abs(got - 0.25) < 0.005


def test_gd_fix_first_row_and_tied_invariants():
    target = _rand_pair(13, d1=4, d2=4, r=2)

    def proj_objective(w):
        rep = _quadratic_objective(target)(w)
        g = rep.grad_u.copy()
        g[0, :] = 0.0
        return LossReport(rep.value, g, rep.grad_v)

    start = init_near_truth(target, 1.0, fix_first_row=True, seed=14)
    W, _ = gd_minimize(proj_objective, start, GdConfig(step=0.1, max_iters=40, grad_tol=0.0))
    assert np.array_equal(W.U[0, :], start.U[0, :])

    def tied_objective(w):
        rep = _quadratic_objective(target)(w)
        shared = rep.grad_u + rep.grad_v
        return LossReport(rep.value, shared, shared)

    U0 = start.U
    tied_start = WeightPair(U0, U0)
    W, _ = gd_minimize(tied_objective, tied_start, GdConfig(step=0.05, max_iters=25, grad_tol=0.0))
    assert np.array_equal(W.U, W.V)


def test_fit_contraction_rate_geometric():
    trace = GdTrace()
    for t in range(30):
        trace.append(t, 0.0, 1.0, 0.9**t)
    rho = fit_contraction_rate(trace)
    assert abs(rho - 0.9) < 1e-6
    flat = GdTrace()
    for t in range(15):
        flat.append(t, 0.0, 1.0, 0.5)
    assert abs(fit_contraction_rate(flat) - 1.0) < 1e-12


def test_fit_contraction_rate_positive_prefix():
    trace = GdTrace()
    for t in range(12):
        trace.append(t, 0.0, 1.0, 0.5**t)
    trace.append(12, 0.0, 1.0, 0.0)  # exact convergence afterwards
    rho = fit_contraction_rate(trace)
    assert abs(rho - 0.5) < 1e-6
    short = GdTrace()
    short.append(0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        fit_contraction_rate(short)


def test_preplateau_prefix_cuts_floor():
    trace = GdTrace()
    for t in range(40):
        trace.append(t, 0.0, 1.0, max(0.5**t, 1e-4))
    sub = preplateau_prefix(trace)
    assert len(sub) < 20
    rho, r2 = fit_contraction_rate(sub, return_r2=True)
    assert abs(rho - 0.5) < 0.02
    assert r2 > 0.99


def test_trace_csv(tmp_path):
    trace = GdTrace()
    trace.append(0, 1.0, 0.5, 2.0)
    trace.append(1, 0.5, 0.25, 1.0)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = open(path).read().splitlines()
    assert lines[0] == "iter,loss,grad_norm,dist_sq"
    assert lines[1] == "0,1.0,0.5,2.0"


def test_bad_configs():
    with pytest.raises(ValueError):
        GdConfig(step=-1.0)
    with pytest.raises(ValueError):
        GdConfig(step=0.0)


def test_desk_scale_trace_is_affine_in_log():
    # full-protocol desk run: log squared-distance decreasing and close to
    # affine over the first 80% of the budget (exact curve is seed-dependent)
    from nsmc.experiments import _converge_cell, resolve_config

    cfg = dict(resolve_config("converge"), max_iters=30)
    out = _converge_cell({"cfg": cfg, "law": "gaussian", "phi2": "relu", "seed": 1})
    d = np.array(out["trace"][3])
    head = d[: int(0.8 * (len(d) - 1))]
    assert np.all(np.diff(head) < 1e-12)
    logd = np.log(head)
    it = np.arange(head.size)
    slope, intercept = np.polyfit(it, logd, 1)
    resid = logd - (slope * it + intercept)
    r2 = 1.0 - resid @ resid / ((logd - logd.mean()) @ (logd - logd.mean()))
    assert r2 > 0.95, f"R2={r2}"


def test_loss_monotone_at_estimated_step():
    # at the exact step returned by estimate_step the loss may wiggle by the
    # estimator's own convergence tolerance (the power iteration stops at
    # 1e-2 relative change, so 1/lambda_hat can slightly exceed 1/lambda_max);
    # safely below it the descent is strictly monotone
    from nsmc.activations import ActivationKind as K
    from nsmc.datagen import GenerativeSpec, ResponseLaw, gen_ground_truth, split_samples
    from nsmc.loss import make_objective

    pairs = [(K.SIGMOID, K.TANH), (K.TANH, K.TANH), (K.SIGMOID, K.SIGMOID),
             (K.RELU, K.TANH), (K.TANH, K.SIGMOID)]
    for inst in range(10):
        a1, a2 = pairs[inst % len(pairs)]
        truth = gen_ground_truth(6, 5, 2, seed=200 + inst)
        spec = GenerativeSpec(truth, a1, a2, ResponseLaw.gaussian(1.0),
                              30, 30, 40, seed=300 + inst)
        split = split_samples(spec)
        obj = make_objective(a1, a2, split.omega, split.omega_prime,
                             split.pool, split.pool_prime)
        start = init_near_truth(truth, 0.5, seed=400 + inst)
        step = estimate_step(obj, start)
        _, trace = gd_minimize(obj, start, GdConfig(step=step, max_iters=60, grad_tol=0.0))
        rel_inc = np.diff(trace.loss) / np.maximum(np.abs(trace.loss[:-1]), 1.0)
        assert rel_inc.max() < 2e-3, f"instance {inst}: increase {rel_inc.max():.3e}"
        _, trace = gd_minimize(obj, start, GdConfig(step=0.5 * step, max_iters=60,
                                                    grad_tol=0.0))
        rel_inc = np.diff(trace.loss) / np.maximum(np.abs(trace.loss[:-1]), 1.0)
        assert rel_inc.max() <= 1e-10, f"instance {inst}: increase {rel_inc.max():.3e}"
