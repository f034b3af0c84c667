"""Monte-Carlo verification of the estimator's claimed properties at desk
scale: zero conditional mean of the pair score, stationarity of the truth,
positive local curvature, linear convergence of gradient descent, plus
finite-difference audits of the analytic gradient and Hessian.

Checks are deterministic given (spec, seed) and report their raw statistics
so failures are diagnosable.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind
from .baselines import nimc_loss_grad
from .datagen import split_samples, union_samples
from .loss import loss_grad, loss_hessian, loss_value
from .model import WeightPair, theta as model_theta
from .optimizer import (GdConfig, fit_contraction_rate, gd_minimize,
                        init_near_truth, preplateau_prefix)

HESSIAN_ASYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class McCheckResult:
    name: str
    statistic: float
    standard_error: float
    n_draws: int
    passed: bool
    description: str


def _draw_seed(root_seed, draw):
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(1000 + draw,))
    return int(seq.generate_state(1, np.uint64)[0])


def _draw_split(spec, draw):
    return split_samples(dataclasses.replace(spec, seed=_draw_seed(spec.seed, draw)))


def cond_product(W):
    """Product of singular-value ratios sigma_p / sigma_r; equals 1 when all
    singular values coincide. Conditioning diagnostic, always >= 1."""
    sv = np.linalg.svd(np.asarray(W, dtype=float), compute_uv=False)
    smallest = sv[-1]
    if smallest <= 1e-12 * sv[0]:
        raise ValueError("matrix is rank deficient")
    return float(np.prod(sv / smallest))


def check_score_mean_zero(spec, n_draws, perturb_theta=0.0):
    """Freeze one covariate quadruple, redraw the two responses n_draws
    times, and test that the pair score averages to zero within 3 standard
    errors. `perturb_theta` shifts the first proximity (negative control)."""
    if n_draws < 100:
        raise ValueError("need n_draws >= 100")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(spec.seed)))
    w = spec.weights
    x = rng.standard_normal(w.d1)
    z = rng.standard_normal(w.d2)
    xp = rng.standard_normal(w.d1)
    zp = rng.standard_normal(w.d2)
    t_k = model_theta(w, spec.a1, spec.a2, x, z)
    t_l = model_theta(w, spec.a1, spec.a2, xp, zp)
    y_k = spec.law.sample(np.full(n_draws, t_k), np.random.default_rng(
        np.random.SeedSequence(entropy=int(spec.seed), spawn_key=(1,))))
    y_l = spec.law.sample(np.full(n_draws, t_l), np.random.default_rng(
        np.random.SeedSequence(entropy=int(spec.seed), spawn_key=(2,))))
    dy = y_k - y_l
    u = dy * (t_k + perturb_theta - t_l)
    z_exp = np.exp(-np.abs(u))
    s_neg = np.where(u >= 0, z_exp / (1.0 + z_exp), 1.0 / (1.0 + z_exp))
    score = dy * s_neg
    mean = float(score.mean())
    se = float(score.std(ddof=1) / np.sqrt(n_draws))
    passed = abs(mean) < 3 * se if se > 0 else mean == 0.0
    return McCheckResult(
        name="score_mean_zero",
        statistic=mean,
        standard_error=se,
        n_draws=n_draws,
        passed=passed,
        description=f"pass iff |mean pair score| < 3*SE; mean={mean:.3e}, SE={se:.3e}",
    )


def _gradient_at_truth(spec, draw, fix_first_row, objective):
    split = _draw_split(spec, draw)
    if objective == "pairwise":
        rep = loss_grad(
            spec.weights, spec.a1, spec.a2, split.omega, split.omega_prime,
            split.pool, split.pool_prime, fix_first_row=fix_first_row,
        )
    elif objective == "squared":
        samples, pool = union_samples(split)
        rep = nimc_loss_grad(
            spec.weights, spec.a1, spec.a2, samples, pool,
            fix_first_row=fix_first_row,
        )
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return rep.pack_grad()


def check_stationarity(spec, n_draws, m_grid=None, fix_first_row=False,
                       objective="pairwise"):
    """Average the empirical gradient at the truth over independent data
    draws. Passes iff every coordinate mean is within 3 standard errors of
    zero at every grid size and the mean-gradient norm shrinks as the
    sample count grows."""
    if n_draws < 20:
        raise ValueError("need n_draws >= 20")
    if m_grid is None:
        m_grid = (spec.m, 2 * spec.m)
    norms, coord_ok, se_norms = [], [], []
    for m in m_grid:
        spec_m = dataclasses.replace(spec, m=int(m))
        grads = np.array([
            _gradient_at_truth(spec_m, j, fix_first_row, objective)
            for j in range(n_draws)
        ])
        mean = grads.mean(axis=0)
        se = grads.std(axis=0, ddof=1) / np.sqrt(n_draws)
        active = se > 0  # constrained coordinates carry zero spread
        coord_ok.append(bool(np.all(np.abs(mean[active]) < 3 * se[active])
                             and np.all(mean[~active] == 0)))
        norms.append(float(np.linalg.norm(mean)))
        se_norms.append(float(np.sqrt(np.sum(se**2))))
    shrinks = all(norms[i + 1] < norms[i] for i in range(len(norms) - 1))
    passed = all(coord_ok) and shrinks
    desc = (
        "pass iff all coordinate |mean| < 3*SE at each m and ||mean|| decreases; "
        f"m_grid={tuple(int(m) for m in m_grid)}, norms={[f'{v:.3e}' for v in norms]}, "
        f"coord_ok={coord_ok}"
    )
    return McCheckResult(
        name="stationarity",
        statistic=norms[-1],
        standard_error=se_norms[-1],
        n_draws=n_draws,
        passed=passed,
        description=desc,
    )


def averaged_hessian_at_truth(spec, n_draws):
    """Mean empirical Hessian at the truth over independent draws,
    symmetrized after checking the asymmetry is within tolerance."""
    acc = None
    quad_dir = None
    hessians = []
    for j in range(n_draws):
        split = _draw_split(spec, j)
        H = loss_hessian(
            spec.weights, spec.a1, spec.a2, split.omega, split.omega_prime,
            split.pool, split.pool_prime,
        )
        hessians.append(H)
        acc = H if acc is None else acc + H
    H_avg = acc / n_draws
    scale = max(float(np.abs(H_avg).max()), 1e-300)
    asym = float(np.abs(H_avg - H_avg.T).max()) / scale
    if asym >= HESSIAN_ASYMMETRY_TOL:
        raise ValueError(f"averaged Hessian asymmetry {asym:.2e} exceeds tolerance")
    return 0.5 * (H_avg + H_avg.T), hessians


def _first_row_mask(d1, d2, r):
    """Packed-coordinate mask that drops the first row of U."""
    keep = np.ones(r * (d1 + d2), dtype=bool)
    keep[[i * d1 for i in range(r)]] = False
    return keep


def check_curvature(spec, n_draws, restrict_first_row=None):
    """Smallest eigenvalue of the draw-averaged Hessian at the truth; it
    must be positive. When either activation is relu (or on request) the
    Hessian is restricted to the subspace with the first U-row removed."""
    if n_draws < 20:
        raise ValueError("need n_draws >= 20")
    dim = spec.weights.r * (spec.weights.d1 + spec.weights.d2)
    if dim > 200:
        raise ValueError(f"Hessian dimension {dim} exceeds the check cap 200")
    if restrict_first_row is None:
        restrict_first_row = ActivationKind.RELU in (spec.a1, spec.a2)
    H_avg, hessians = averaged_hessian_at_truth(spec, n_draws)
    if restrict_first_row:
        keep = _first_row_mask(spec.weights.d1, spec.weights.d2, spec.weights.r)
        H_avg = H_avg[np.ix_(keep, keep)]
        hessians = [H[np.ix_(keep, keep)] for H in hessians]
    eigvals, eigvecs = np.linalg.eigh(H_avg)
    lam_min = float(eigvals[0])
    vmin = eigvecs[:, 0]
    quads = np.array([float(vmin @ H @ vmin) for H in hessians])
    se = float(quads.std(ddof=1) / np.sqrt(n_draws))
    passed = lam_min > 0
    return McCheckResult(
        name="curvature",
        statistic=lam_min,
        standard_error=se,
        n_draws=n_draws,
        passed=passed,
        description=(
            "pass iff lambda_min of the averaged Hessian > 0 "
            f"(restricted={restrict_first_row}); lambda_min={lam_min:.3e}, "
            f"lambda_max={float(eigvals[-1]):.3e}"
        ),
    )


def degenerate_direction(truth):
    """Exactly flat direction of the identity-activation objective, from a
    nilpotent column mixing: move column 1 of U into column 2 while moving
    the negated column 2 of V into column 1. Along this line the bilinear
    proximity is constant, so the quadratic form of any empirical Hessian
    vanishes. Requires r >= 2."""
    if truth.r < 2:
        raise ValueError("degenerate direction needs r >= 2")
    dU = np.zeros_like(truth.U)
    dV = np.zeros_like(truth.V)
    dU[:, 1] = truth.U[:, 0]
    dV[:, 0] = -truth.V[:, 1]
    w = np.concatenate([dU.ravel(order="F"), dV.ravel(order="F")])
    return w / np.linalg.norm(w)


def check_curvature_degenerate(spec, n_draws, tol_ratio=1e-6):
    """Identity-activation control: a constructed flat direction must have
    (near-)zero quadratic form against the averaged Hessian, exhibiting the
    indefiniteness that the nonlinear activations remove."""
    if ActivationKind.IDENTITY not in (spec.a1, spec.a2):
        raise ValueError("degeneracy check expects identity activations")
    H_avg, _ = averaged_hessian_at_truth(spec, n_draws)
    w = degenerate_direction(spec.weights)
    quad = float(w @ H_avg @ w)
    lam_max = float(np.linalg.eigvalsh(H_avg)[-1])
    passed = abs(quad) < tol_ratio * lam_max
    return McCheckResult(
        name="curvature_degenerate",
        statistic=quad,
        standard_error=float("nan"),
        n_draws=n_draws,
        passed=passed,
        description=(
            f"pass iff |quadratic form along flat direction| < {tol_ratio:g} * "
            f"lambda_max; quad={quad:.3e}, lambda_max={lam_max:.3e}"
        ),
    )


def check_linear_convergence(spec, cfg=None, radius_sq=1.0, fix_first_row=False,
                             r2_threshold=0.9, step_scale=0.5):
    """Run gradient descent from a fixed-radius perturbation of the truth
    and fit the contraction of the squared distance before its plateau.
    Passes iff the fitted rate is below 1 with a good linear fit.

    An "auto" step is step_scale times the start-point curvature estimate;
    curvature grows toward the minimizer, so the bare estimate overshoots.
    """
    split = split_samples(spec)
    if cfg is None:
        cfg = GdConfig(step="auto", max_iters=300, grad_tol=1e-10)
    cfg = dataclasses.replace(cfg, trace_truth=spec.weights)

    def objective(wp):
        return loss_grad(
            wp, spec.a1, spec.a2, split.omega, split.omega_prime,
            split.pool, split.pool_prime, fix_first_row=fix_first_row,
        )

    start = init_near_truth(
        spec.weights, radius_sq, fix_first_row=fix_first_row,
        seed=_draw_seed(spec.seed, 0),
    )
    if cfg.step == "auto":
        from .optimizer import estimate_step

        cfg = dataclasses.replace(cfg, step=step_scale * estimate_step(objective, start))
    _, trace = gd_minimize(objective, start, cfg)
    prefix = preplateau_prefix(trace)
    rho, r2 = fit_contraction_rate(prefix, return_r2=True)
    passed = rho < 1.0 and r2 > r2_threshold
    return McCheckResult(
        name="convergence",
        statistic=rho,
        standard_error=float("nan"),
        n_draws=1,
        passed=passed,
        description=(
            f"pass iff fitted rate < 1 and linear-fit R^2 > {r2_threshold}; "
            f"rate={rho:.4f}, R2={r2:.4f}, iters={len(trace) - 1}, step={trace.step:.3e}"
        ),
    )


def _fd_instance(pair_index, instance, a1, a2, m=6, d1=4, d2=3, r=2):
    """Small random instance for the finite-difference audits. Instances
    with a relu side are redrawn until every pre-activation clears the kink
    by 1e-3 so the difference quotient never straddles it."""
    from .datagen import EdgeSampleSet
    from .model import FeaturePool

    base = np.random.SeedSequence(entropy=2024, spawn_key=(pair_index, instance))
    for attempt, child in enumerate(base.spawn(50)):
        rng = np.random.default_rng(child)
        n1, n2 = m + 2, m + 1
        pool = FeaturePool(rng.standard_normal((n1, d1)), rng.standard_normal((n2, d2)))
        pool_p = FeaturePool(rng.standard_normal((n1, d1)), rng.standard_normal((n2, d2)))
        omega = EdgeSampleSet(rng.integers(0, n1, m), rng.integers(0, n2, m),
                              rng.normal(0, 2, m))
        omega_p = EdgeSampleSet(rng.integers(0, n1, m), rng.integers(0, n2, m),
                                rng.normal(0, 2, m))
        weights = WeightPair(rng.standard_normal((d1, r)), rng.standard_normal((d2, r)))
        clear = True
        for side, kind in ((0, a1), (1, a2)):
            if kind != ActivationKind.RELU:
                continue
            if side == 0:
                pre = np.vstack([pool.X, pool_p.X]) @ weights.U
            else:
                pre = np.vstack([pool.Z, pool_p.Z]) @ weights.V
            clear &= bool(np.min(np.abs(pre)) >= 1e-3)
        if clear:
            return weights, omega, omega_p, pool, pool_p
    raise RuntimeError("could not draw a kink-clear relu instance")


def fd_gradient(fun, w0, h=1e-5):
    """Central finite differences of a scalar function of a packed vector."""
    g = np.empty(w0.size)
    for j in range(w0.size):
        e = np.zeros(w0.size)
        e[j] = h
        g[j] = (fun(w0 + e) - fun(w0 - e)) / (2 * h)
    return g


_ALL_PAIRS = [
    (a1, a2)
    for a1 in (ActivationKind.SIGMOID, ActivationKind.TANH, ActivationKind.RELU)
    for a2 in (ActivationKind.SIGMOID, ActivationKind.TANH, ActivationKind.RELU)
]


def check_grad_fd(n_instances=20, tol=1e-4, h=1e-5):
    """Analytic gradient versus central differences of the value on random
    small instances, all nine activation pairs."""
    worst = 0.0
    for p_idx, (a1, a2) in enumerate(_ALL_PAIRS):
        for inst in range(n_instances):
            weights, omega, omega_p, pool, pool_p = _fd_instance(p_idx, inst, a1, a2)
            d1, d2, r = weights.d1, weights.d2, weights.r

            def value_of(vec):
                wp = WeightPair.unpack(vec, d1, d2, r)
                return loss_value(wp, a1, a2, omega, omega_p, pool, pool_p)

            rep = loss_grad(weights, a1, a2, omega, omega_p, pool, pool_p)
            fd = fd_gradient(value_of, weights.pack(), h=h)
            scale = max(float(np.abs(fd).max()), 1e-12)
            worst = max(worst, float(np.abs(rep.pack_grad() - fd).max()) / scale)
    return McCheckResult(
        name="grad_fd",
        statistic=worst,
        standard_error=float("nan"),
        n_draws=n_instances * len(_ALL_PAIRS),
        passed=worst < tol,
        description=f"pass iff max relative gradient error < {tol:g}; worst={worst:.3e}",
    )


def check_hessian_fd(n_instances=20, tol=1e-3, h=1e-5):
    """Analytic Hessian versus central differences of the gradient."""
    worst = 0.0
    for p_idx, (a1, a2) in enumerate(_ALL_PAIRS):
        for inst in range(n_instances):
            weights, omega, omega_p, pool, pool_p = _fd_instance(p_idx, inst, a1, a2)
            d1, d2, r = weights.d1, weights.d2, weights.r
            dim = r * (d1 + d2)

            def grad_of(vec):
                wp = WeightPair.unpack(vec, d1, d2, r)
                return loss_grad(wp, a1, a2, omega, omega_p, pool, pool_p).pack_grad()

            H = loss_hessian(weights, a1, a2, omega, omega_p, pool, pool_p)
            fd = np.empty((dim, dim))
            w0 = weights.pack()
            for j in range(dim):
                e = np.zeros(dim)
                e[j] = h
                fd[:, j] = (grad_of(w0 + e) - grad_of(w0 - e)) / (2 * h)
            scale = max(float(np.abs(fd).max()), 1e-12)
            worst = max(worst, float(np.abs(H - fd).max()) / scale)
    return McCheckResult(
        name="hessian_fd",
        statistic=worst,
        standard_error=float("nan"),
        n_draws=n_instances * len(_ALL_PAIRS),
        passed=worst < tol,
        description=f"pass iff max relative Hessian error < {tol:g}; worst={worst:.3e}",
    )


def append_check_csv(result, path):
    """One CSV row per check: name, statistic, SE, draws, pass."""
    import os

    write_header = not os.path.exists(path)
    with open(path, "a") as fh:
        if write_header:
            fh.write("check,statistic,standard_error,n_draws,pass\n")
        fh.write(
            f"{result.name},{result.statistic!r},{result.standard_error!r},"
            f"{result.n_draws},{int(result.passed)}\n"
        )
