"""Pairwise rank-comparison loss over all m^2 cross pairs of two sample sets.

For samples k in omega and l in omega', with dy = y_k - y'_l and
dt = theta_k - theta'_l, each pair contributes softplus(-dy * dt) and the
whole loss is the mean over the m^2 pairs. The per-pair gradient weight is
grad_w = dy * sigmoid(-dy * dt) and the per-pair Hessian weight is
hess_w = dy^2 * sigmoid(dy * dt) * sigmoid(-dy * dt).

Evaluation precomputes per-sample embeddings, derivatives and proximities in
O(m r d), then reduces over pairs touching only scalars; the pair reduction
runs in fixed k-major blocks so results do not depend on worker count.
"""

import math
from dataclasses import dataclass

import numpy as np

from .activations import d2phi, dphi, phi

# Debug hook for mutation-testing the finite-difference harness: flips the
# sign of the per-pair gradient weight inside loss_grad only.
DEBUG_FLIP_GRAD_WEIGHT = False

_BLOCK = 1024

# caps for the dense Hessian (verification scale)
HESSIAN_DIM_CAP = 2000
HESSIAN_PAIR_CAP = 10**6


@dataclass(frozen=True)
class PairScalars:
    """Per-pair scalars: hess_weight >= 0 multiplies the rank-one Hessian
    term, grad_weight multiplies the gradient term; both vanish when the
    two responses are equal."""

    hess_weight: float
    grad_weight: float


@dataclass(frozen=True)
class LossReport:
    """Objective value with a gradient shaped like the weight pair."""

    value: float
    grad_u: np.ndarray
    grad_v: np.ndarray

    def grad_norm(self):
        return float(np.sqrt(np.sum(self.grad_u**2) + np.sum(self.grad_v**2)))

    def pack_grad(self):
        return np.concatenate(
            [self.grad_u.ravel(order="F"), self.grad_v.ravel(order="F")]
        )


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def pair_scalars(y_k, y_l, theta_k, theta_l):
    """Stable per-pair scalars; no overflow for |dy * dt| up to 700 and beyond."""
    dy = float(y_k) - float(y_l)
    u = dy * (float(theta_k) - float(theta_l))
    s_neg = float(_sigmoid(-u))
    s_pos = 1.0 - s_neg
    return PairScalars(hess_weight=dy * dy * s_pos * s_neg, grad_weight=dy * s_neg)


class _SampleTerms:
    """Per-sample quantities shared by value, gradient and Hessian."""

    def __init__(self, U, V, a1, a2, samples, pool):
        self.x = pool.X[samples.row_idx]
        self.z = pool.Z[samples.col_idx]
        self.pre_u = self.x @ U
        self.pre_v = self.z @ V
        self.f1 = phi(a1, self.pre_u)
        self.f2 = phi(a2, self.pre_v)
        self.g1 = dphi(a1, self.pre_u)
        self.g2 = dphi(a2, self.pre_v)
        self.theta = np.einsum("ij,ij->i", self.f1, self.f2)
        if not np.all(np.isfinite(self.theta)):
            raise FloatingPointError("non-finite proximity values encountered")
        self.a1, self.a2 = a1, a2

    @property
    def du_coeff(self):
        # d_{ki} = du_coeff[k, i] * x_k
        return self.g1 * self.f2

    @property
    def dv_coeff(self):
        # p_{ki} = dv_coeff[k, i] * z_k
        return self.f1 * self.g2

    def second_coeffs(self):
        # coefficients of x x^T, z z^T and x z^T in the Hessian block term
        h1 = d2phi(self.a1, self.pre_u)
        h2 = d2phi(self.a2, self.pre_v)
        return h1 * self.f2, self.f1 * h2, self.g1 * self.g2


def _effective_pair(weights, tied):
    if tied:
        if weights.d1 != weights.d2:
            raise ValueError("tied mode requires d1 == d2")
        return weights.U, weights.U
    return weights.U, weights.V


def _pair_reduce(y, th, yp, thp, flip_grad_weight=False):
    """Loss sum plus row/col sums of the gradient weight, over all pairs.

    One exp per pair: with w = dy * dt and z = exp(-|w|),
    softplus(-w) = (|w| - w)/2 + log1p(z) and
    sigmoid(-w) = z/(1+z) if w >= 0 else 1/(1+z).
    """
    m, mp = y.size, yp.size
    loss_parts = []
    row = np.empty(m)
    col = np.zeros(mp)
    for s in range(0, m, _BLOCK):
        e = min(s + _BLOCK, m)
        dy = y[s:e, None] - yp[None, :]
        w = th[s:e, None] - thp[None, :]
        w *= dy
        aw = np.abs(w)
        z = np.exp(-aw)
        sp = np.log1p(z)
        aw -= w
        aw *= 0.5
        sp += aw
        loss_parts.append(float(sp.sum()))
        z /= 1.0 + z
        gw = np.where(w >= 0, z, 1.0 - z)
        gw *= dy
        row[s:e] = gw.sum(axis=1)
        col += gw.sum(axis=0)
    if flip_grad_weight:
        row, col = -row, -col
    return math.fsum(loss_parts), row, col


def _pair_reduce_sub(y, th, yp, thp, kk, ll, flip_grad_weight=False):
    """Same reduction restricted to the sampled pairs (kk[t], ll[t])."""
    dy = y[kk] - yp[ll]
    w = dy * (th[kk] - thp[ll])
    loss_sum = float(_softplus(-w).sum())
    gw = dy * _sigmoid(-w)
    if flip_grad_weight:
        gw = -gw
    row = np.bincount(kk, weights=gw, minlength=y.size)
    col = np.bincount(ll, weights=gw, minlength=yp.size)
    return loss_sum, row, col


def _draw_pairs(m, mp, count, seed):
    """Uniform pair subsample without replacement over the m x mp grid."""
    count = int(count)
    total = m * mp
    if not 1 <= count <= total:
        raise ValueError(f"pair subsample count {count} not in [1, {total}]")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    flat = rng.choice(total, size=count, replace=False)
    return flat // mp, flat % mp


def loss_value(weights, a1, a2, samples, samples_p, pool, pool_p, tied=False,
               pair_subsample=None, subsample_seed=0):
    """Mean of softplus(-(y_k - y'_l)(theta_k - theta'_l)) over all pairs."""
    U, V = _effective_pair(weights, tied)
    t = _SampleTerms(U, V, a1, a2, samples, pool)
    tp = _SampleTerms(U, V, a1, a2, samples_p, pool_p)
    if pair_subsample is None:
        loss_sum, _, _ = _pair_reduce(samples.y, t.theta, samples_p.y, tp.theta)
        return loss_sum / (samples.m * samples_p.m)
    kk, ll = _draw_pairs(samples.m, samples_p.m, pair_subsample, subsample_seed)
    loss_sum, _, _ = _pair_reduce_sub(samples.y, t.theta, samples_p.y, tp.theta, kk, ll)
    return loss_sum / kk.size


def loss_grad(weights, a1, a2, samples, samples_p, pool, pool_p, tied=False,
              fix_first_row=False, pair_subsample=None, subsample_seed=0):
    """Objective value and analytic gradient.

    In tied mode the U- and V-chain contributions are summed into one shared
    matrix (reported in both gradient slots). With fix_first_row the first
    row of the U-gradient is zeroed.
    """
    U, V = _effective_pair(weights, tied)
    t = _SampleTerms(U, V, a1, a2, samples, pool)
    tp = _SampleTerms(U, V, a1, a2, samples_p, pool_p)
    if pair_subsample is None:
        loss_sum, row, col = _pair_reduce(
            samples.y, t.theta, samples_p.y, tp.theta,
            flip_grad_weight=DEBUG_FLIP_GRAD_WEIGHT,
        )
        npairs = samples.m * samples_p.m
    else:
        kk, ll = _draw_pairs(samples.m, samples_p.m, pair_subsample, subsample_seed)
        loss_sum, row, col = _pair_reduce_sub(
            samples.y, t.theta, samples_p.y, tp.theta, kk, ll,
            flip_grad_weight=DEBUG_FLIP_GRAD_WEIGHT,
        )
        npairs = kk.size

    grad_u = -(t.x.T @ (t.du_coeff * row[:, None])
               - tp.x.T @ (tp.du_coeff * col[:, None])) / npairs
    grad_v = -(t.z.T @ (t.dv_coeff * row[:, None])
               - tp.z.T @ (tp.dv_coeff * col[:, None])) / npairs
    if tied:
        shared = grad_u + grad_v
        grad_u = grad_v = shared
    if fix_first_row:
        grad_u = grad_u.copy()
        grad_u[0, :] = 0.0
    if not (np.isfinite(loss_sum) and np.all(np.isfinite(grad_u))
            and np.all(np.isfinite(grad_v))):
        raise FloatingPointError("non-finite loss or gradient")
    return LossReport(value=loss_sum / npairs, grad_u=grad_u, grad_v=grad_v)


def _stacked_grad_features(t, r, d1, d2):
    """Row k holds [d_k1; ..; d_kr; p_k1; ..; p_kr] of length r (d1 + d2)."""
    m = t.x.shape[0]
    cu = t.du_coeff
    cv = t.dv_coeff
    Gu = (cu[:, :, None] * t.x[:, None, :]).reshape(m, r * d1)
    Gv = (cv[:, :, None] * t.z[:, None, :]).reshape(m, r * d2)
    return np.hstack([Gu, Gv])


def loss_hessian_parts(weights, a1, a2, samples, samples_p, pool, pool_p,
                       pair_subsample=None, subsample_seed=0):
    """The two Hessian pieces: the PSD rank-one accumulation and the
    second-derivative block term, each averaged over pairs.

    The full Hessian is their difference. Blocks are ordered u_1..u_r then
    v_1..v_r, i.e. the packing of WeightPair.pack().
    """
    d1, d2, r = weights.d1, weights.d2, weights.r
    dim = r * (d1 + d2)
    if dim > HESSIAN_DIM_CAP:
        raise ValueError(f"Hessian dimension {dim} exceeds cap {HESSIAN_DIM_CAP}")
    m, mp = samples.m, samples_p.m
    if pair_subsample is None and m * mp > HESSIAN_PAIR_CAP:
        raise ValueError(
            f"pair count {m * mp} exceeds cap {HESSIAN_PAIR_CAP}; request a subsample"
        )

    t = _SampleTerms(weights.U, weights.V, a1, a2, samples, pool)
    tp = _SampleTerms(weights.U, weights.V, a1, a2, samples_p, pool_p)
    G = _stacked_grad_features(t, r, d1, d2)
    Gp = _stacked_grad_features(tp, r, d1, d2)

    if pair_subsample is None:
        dy = samples.y[:, None] - samples_p.y[None, :]
        w = dy * (t.theta[:, None] - tp.theta[None, :])
        s_neg = _sigmoid(-w)
        hw = dy * dy * s_neg * (1.0 - s_neg)
        gw = dy * s_neg
        npairs = m * mp
        row_h, col_h = hw.sum(axis=1), hw.sum(axis=0)
        row_g, col_g = gw.sum(axis=1), gw.sum(axis=0)
        cross = G.T @ (hw @ Gp)
        a_term = (G.T @ (G * row_h[:, None]) + Gp.T @ (Gp * col_h[:, None])
                  - cross - cross.T) / npairs
    else:
        kk, ll = _draw_pairs(m, mp, pair_subsample, subsample_seed)
        dy = samples.y[kk] - samples_p.y[ll]
        w = dy * (t.theta[kk] - tp.theta[ll])
        s_neg = _sigmoid(-w)
        hw = dy * dy * s_neg * (1.0 - s_neg)
        gw = dy * s_neg
        npairs = kk.size
        row_h = np.bincount(kk, weights=hw, minlength=m)
        col_h = np.bincount(ll, weights=hw, minlength=mp)
        row_g = np.bincount(kk, weights=gw, minlength=m)
        col_g = np.bincount(ll, weights=gw, minlength=mp)
        cross = (G[kk] * hw[:, None]).T @ Gp[ll]
        a_term = (G.T @ (G * row_h[:, None]) + Gp.T @ (Gp * col_h[:, None])
                  - cross - cross.T) / npairs

    cuu, cvv, cuv = t.second_coeffs()
    cuu_p, cvv_p, cuv_p = tp.second_coeffs()
    b_term = np.zeros((dim, dim))
    for i in range(r):
        u0, u1 = i * d1, (i + 1) * d1
        v0, v1 = r * d1 + i * d2, r * d1 + (i + 1) * d2
        buu = (t.x.T @ (t.x * (row_g * cuu[:, i])[:, None])
               - tp.x.T @ (tp.x * (col_g * cuu_p[:, i])[:, None])) / npairs
        bvv = (t.z.T @ (t.z * (row_g * cvv[:, i])[:, None])
               - tp.z.T @ (tp.z * (col_g * cvv_p[:, i])[:, None])) / npairs
        buv = (t.x.T @ (t.z * (row_g * cuv[:, i])[:, None])
               - tp.x.T @ (tp.z * (col_g * cuv_p[:, i])[:, None])) / npairs
        b_term[u0:u1, u0:u1] = buu
        b_term[v0:v1, v0:v1] = bvv
        b_term[u0:u1, v0:v1] = buv
        b_term[v0:v1, u0:u1] = buv.T
    return a_term, b_term


def loss_hessian(weights, a1, a2, samples, samples_p, pool, pool_p,
                 pair_subsample=None, subsample_seed=0):
    """Dense r(d1+d2) x r(d1+d2) Hessian, symmetric by construction."""
    a_term, b_term = loss_hessian_parts(
        weights, a1, a2, samples, samples_p, pool, pool_p,
        pair_subsample=pair_subsample, subsample_seed=subsample_seed,
    )
    return a_term - b_term


def make_objective(a1, a2, samples, samples_p, pool, pool_p, tied=False,
                   fix_first_row=False, pair_subsample=None, subsample_seed=0):
    """Close over one data set; returns a WeightPair -> LossReport callable."""

    def objective(weights):
        return loss_grad(
            weights, a1, a2, samples, samples_p, pool, pool_p,
            tied=tied, fix_first_row=fix_first_row,
            pair_subsample=pair_subsample, subsample_seed=subsample_seed,
        )

    return objective
