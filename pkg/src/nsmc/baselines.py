"""Baseline estimators and their preprocessing transforms.

NIMC minimizes the mean squared residual (y - theta)^2 over one observed
sample set. SMC and IMC are the pairwise objective and the squared loss
with the nonlinearity stripped (identity activations). Under binomial or
Poisson data the squared-loss baselines consume variance-stabilized
responses.
"""

import numpy as np

from .activations import ActivationKind
from .loss import LossReport, _SampleTerms, loss_grad


def nimc_loss_grad(weights, a1, a2, samples, pool, tied=False, fix_first_row=False):
    """Mean squared residual and its gradient over one sample set."""
    if samples.m < 1:
        raise ValueError("need a nonempty sample set")
    if tied:
        if weights.d1 != weights.d2:
            raise ValueError("tied mode requires d1 == d2")
        U, V = weights.U, weights.U
    else:
        U, V = weights.U, weights.V
    t = _SampleTerms(U, V, a1, a2, samples, pool)
    resid = samples.y - t.theta
    n = samples.m
    value = float(resid @ resid) / n
    grad_u = -(2.0 / n) * (t.x.T @ (t.du_coeff * resid[:, None]))
    grad_v = -(2.0 / n) * (t.z.T @ (t.dv_coeff * resid[:, None]))
    if tied:
        shared = grad_u + grad_v
        grad_u = grad_v = shared
    if fix_first_row:
        grad_u = grad_u.copy()
        grad_u[0, :] = 0.0
    if not (np.isfinite(value) and np.all(np.isfinite(grad_u))
            and np.all(np.isfinite(grad_v))):
        raise FloatingPointError("non-finite loss or gradient")
    return LossReport(value=value, grad_u=grad_u, grad_v=grad_v)


def variance_stabilize(law_tag, y, n_binom=None):
    """Response transform applied before the squared-loss baselines.

    law_tag "binomial_arcsin" maps y to arcsin(y / n_binom); "poisson_sqrt"
    maps y to sqrt(y). The binomial form is used as written, without the
    conventional square root inside the arcsin.
    """
    y = np.asarray(y, dtype=float)
    if law_tag == "binomial_arcsin":
        if n_binom is None or n_binom < 1:
            raise ValueError("binomial_arcsin needs n_binom >= 1")
        if np.any(y < 0) or np.any(y > n_binom):
            raise ValueError(f"binomial responses must lie in [0, {n_binom}]")
        return np.arcsin(y / n_binom)
    if law_tag == "poisson_sqrt":
        if np.any(y < 0):
            raise ValueError("poisson responses must be nonnegative")
        return np.sqrt(y)
    raise ValueError(f"unknown transform tag: {law_tag!r}")


def smc_loss_grad(weights, samples, samples_p, pool, pool_p, tied=False,
                  fix_first_row=False):
    """Pairwise objective with identity activations (theta = x^T U V^T z)."""
    return loss_grad(
        weights, ActivationKind.IDENTITY, ActivationKind.IDENTITY,
        samples, samples_p, pool, pool_p, tied=tied, fix_first_row=fix_first_row,
    )


def imc_loss_grad(weights, samples, pool, tied=False, fix_first_row=False):
    """Squared loss with identity activations."""
    return nimc_loss_grad(
        weights, ActivationKind.IDENTITY, ActivationKind.IDENTITY,
        samples, pool, tied=tied, fix_first_row=fix_first_row,
    )


def make_nimc_objective(a1, a2, samples, pool, tied=False, fix_first_row=False):
    def objective(weights):
        return nimc_loss_grad(
            weights, a1, a2, samples, pool, tied=tied, fix_first_row=fix_first_row
        )

    return objective
