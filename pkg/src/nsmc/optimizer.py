"""Constant-step gradient descent over a weight pair, with near-truth
initialization, automatic step estimation and iterate-error tracing.

Constraints (zeroed first row, tied matrices) live inside the objective's
gradient, so the iteration itself is the bare update W <- W - step * grad.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .model import WeightPair

_DIVERGENCE_CAP = 1e15


class DivergenceError(RuntimeError):
    """Raised when an iterate produces a non-finite or exploding objective;
    carries the trace recorded so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class GdConfig:
    step: Union[float, str] = "auto"
    max_iters: int = 2000
    grad_tol: float = 1e-8
    trace_truth: Optional[WeightPair] = None

    def __post_init__(self):
        if self.step != "auto" and not float(self.step) > 0:
            raise ValueError("explicit step must be positive")


@dataclass
class GdTrace:
    iters: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    dist_sq: list = field(default_factory=list)
    step: float = float("nan")

    def append(self, it, value, gnorm, dsq):
        self.iters.append(int(it))
        self.loss.append(float(value))
        self.grad_norm.append(float(gnorm))
        self.dist_sq.append(float(dsq))

    def __len__(self):
        return len(self.iters)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,loss,grad_norm,dist_sq\n")
            for row in zip(self.iters, self.loss, self.grad_norm, self.dist_sq):
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")


def init_near_truth(truth, radius_sq, fix_first_row=False, seed=0):
    """Gaussian perturbation of the truth rescaled so the joint squared
    Frobenius distance equals radius_sq exactly."""
    if not radius_sq > 0:
        raise ValueError("radius_sq must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    dU = rng.standard_normal(truth.U.shape)
    dV = rng.standard_normal(truth.V.shape)
    if fix_first_row:
        dU[0, :] = 0.0
    scale = np.sqrt(radius_sq / (np.sum(dU * dU) + np.sum(dV * dV)))
    return WeightPair(truth.U + scale * dU, truth.V + scale * dV)


def _dist_sq(weights, truth):
    return weights.dist_sq(truth) if truth is not None else float("nan")


def gd_minimize(objective, start, cfg):
    """Minimize by W^{t+1} = W^t - step * grad(W^t).

    Stops at max_iters or when the gradient Frobenius norm drops below
    grad_tol. Returns (final weights, trace). A non-finite or exploding
    iterate raises DivergenceError carrying the partial trace.
    """
    step = estimate_step(objective, start) if cfg.step == "auto" else float(cfg.step)
    trace = GdTrace(step=step)
    W = start
    try:
        rep = objective(W)
    except FloatingPointError as exc:
        raise DivergenceError(f"objective failed at the start point: {exc}", trace)
    gnorm = rep.grad_norm()
    trace.append(0, rep.value, gnorm, _dist_sq(W, cfg.trace_truth))
    for it in range(1, cfg.max_iters + 1):
        if gnorm < cfg.grad_tol:
            break
        W = WeightPair(W.U - step * rep.grad_u, W.V - step * rep.grad_v)
        try:
            rep = objective(W)
        except FloatingPointError as exc:
            raise DivergenceError(f"diverged at iteration {it}: {exc}", trace)
        gnorm = rep.grad_norm()
        if not (np.isfinite(rep.value) and np.isfinite(gnorm)):
            raise DivergenceError(f"non-finite objective at iteration {it}", trace)
        if abs(rep.value) > _DIVERGENCE_CAP or gnorm > _DIVERGENCE_CAP:
            raise DivergenceError(f"diverging trace at iteration {it}", trace)
        trace.append(it, rep.value, gnorm, _dist_sq(W, cfg.trace_truth))
    return W, trace


def dominant_curvature(objective, start, fd_step=1e-5, iters=30, tol=1e-2):
    """Signed power-iteration estimate of the dominant-magnitude Hessian
    eigenvalue at `start`, with Hessian-vector products taken by forward
    differences of the gradient."""
    base = objective(start).pack_grad()
    dim = base.size
    d1, d2, r = start.d1, start.d2, start.r
    rng = np.random.default_rng(np.random.SeedSequence(entropy=0x5EED))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    w0 = start.pack()
    lam = None
    for _ in range(iters):
        probe = WeightPair.unpack(w0 + fd_step * v, d1, d2, r)
        hv = (objective(probe).pack_grad() - base) / fd_step
        hv_norm = np.linalg.norm(hv)
        if hv_norm == 0.0:
            raise ValueError("zero curvature along probe direction; pass an explicit step")
        lam_new = float(v @ hv)
        rel_change = abs(lam_new - lam) / max(abs(lam_new), 1e-300) if lam is not None else np.inf
        lam = lam_new
        v = hv / hv_norm
        if rel_change < 1e-9:
            break
    if rel_change > tol:
        raise ValueError(
            f"power iteration did not converge (relative change {rel_change:.2e}); "
            "pass an explicit step"
        )
    return lam


def estimate_step(objective, start, fd_step=1e-5, iters=30, tol=1e-2):
    """1 over the power-iteration estimate of the largest Hessian eigenvalue
    at `start`. Refuses when the dominant curvature is not positive (then no
    inverse-curvature step makes sense; pass an explicit one)."""
    lam = dominant_curvature(objective, start, fd_step=fd_step, iters=iters, tol=tol)
    if lam <= 0:
        raise ValueError("estimated top curvature is not positive; pass an explicit step")
    return 1.0 / lam


def fit_contraction_rate(trace, return_r2=False):
    """exp(slope) of the least-squares line of log squared-distance versus
    iteration; fitted on the longest positive prefix of the trace."""
    d = np.asarray(trace.dist_sq, dtype=float)
    it = np.asarray(trace.iters, dtype=float)
    bad = ~(np.isfinite(d) & (d > 0))
    cut = int(np.argmax(bad)) if bad.any() else d.size
    d, it = d[:cut], it[:cut]
    if d.size < 2:
        raise ValueError("need at least 2 positive distance records to fit a rate")
    logd = np.log(d)
    slope, intercept = np.polyfit(it, logd, 1)
    rho = float(np.exp(slope))
    if not return_r2:
        return rho
    pred = slope * it + intercept
    ss_res = float(np.sum((logd - pred) ** 2))
    ss_tot = float(np.sum((logd - logd.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return rho, r2


def preplateau_prefix(trace, factor=2.0, min_len=10):
    """Trace truncated where the squared distance first comes within
    `factor` of its floor; used to fit the contraction before the
    statistical plateau."""
    d = np.asarray(trace.dist_sq, dtype=float)
    pos = np.isfinite(d) & (d > 0)
    cut = int(np.argmax(~pos)) if (~pos).any() else d.size
    d = d[:cut]
    if d.size == 0:
        raise ValueError("trace has no positive distance records")
    floor = float(d.min())
    below = d <= factor * floor
    end = int(np.argmax(below)) + 1 if below.any() else d.size
    end = max(end, min(min_len, d.size))
    sub = GdTrace(step=trace.step)
    for k in range(end):
        sub.append(trace.iters[k], trace.loss[k], trace.grad_norm[k], trace.dist_sq[k])
    return sub
