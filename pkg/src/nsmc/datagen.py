"""Synthetic data generation: ground-truth weights, Gaussian feature pools,
uniform edge sampling with replacement, exponential-family responses, sample
splitting, mixture features for clustering, and pairwise similarity labels.

Every generator is a pure function of its arguments and a 64-bit seed. A root
seed deterministically derives independent sub-streams (weights, features,
primed features, edges, primed edges, ...) so any component can be reproduced
in isolation.
"""

from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, phi
from .model import FeaturePool, WeightPair, normalize_ground_truth

# fixed sub-stream indices of a root seed; order is part of the format
_STREAMS = {
    "weights": 0,
    "features": 1,
    "features_primed": 2,
    "edges": 3,
    "edges_primed": 4,
    "init": 5,
    "mixture": 6,
    "test": 7,
}

# refuse exponential-family means beyond this (exp(theta) guard)
MEAN_OVERFLOW = 1e15


def child_seed(root_seed, name):
    """Derive the 64-bit seed of a named sub-stream of `root_seed`."""
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(_STREAMS[name],))
    return int(seq.generate_state(1, np.uint64)[0])


def _rng(seed, key=None):
    if key is None:
        return np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


@dataclass(frozen=True)
class ResponseLaw:
    """Edge-response distribution, parameterized by the proximity theta.

    kinds:
      gaussian          y ~ N(theta * sigma^2, sigma^2)
      gaussian_misspec  y ~ N((1-tau)^2 * theta, (1-tau)^2)
      binomial          y ~ Binom(n_binom, exp(theta)/(1+exp(theta)))
      poisson           y ~ Pois(exp(theta))
    """

    kind: str
    sigma: float = 1.0
    tau: float = 0.0
    n_binom: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "gaussian_misspec", "binomial", "poisson"):
            raise ValueError(f"unknown response law: {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian law needs sigma > 0")
        if self.kind == "gaussian_misspec" and not (0 <= self.tau < 1):
            raise ValueError("gaussian_misspec law needs tau in [0, 1)")
        if self.kind == "binomial" and self.n_binom < 1:
            raise ValueError("binomial law needs n_binom >= 1")

    @staticmethod
    def gaussian(sigma=1.0):
        return ResponseLaw("gaussian", sigma=sigma)

    @staticmethod
    def gaussian_misspec(tau):
        return ResponseLaw("gaussian_misspec", tau=tau)

    @staticmethod
    def binomial(n_binom):
        return ResponseLaw("binomial", n_binom=n_binom)

    @staticmethod
    def poisson():
        return ResponseLaw("poisson")

    def sample(self, theta_vals, rng):
        """Draw one response per proximity value.

        Only the poisson law can overflow: its mean is exp(theta). The
        binomial success probability is evaluated with a stable sigmoid,
        so large proximities merely saturate it.
        """
        t = np.asarray(theta_vals, dtype=float)
        if self.kind == "poisson":
            too_big = t > np.log(MEAN_OVERFLOW)
            if np.any(too_big):
                bad = float(t[too_big][0])
                raise ValueError(
                    f"poisson mean overflow: exp(theta) > {MEAN_OVERFLOW:g} at theta={bad:.6g}"
                )
        if self.kind == "gaussian":
            return rng.normal(t * self.sigma**2, self.sigma, size=t.shape)
        if self.kind == "gaussian_misspec":
            s2 = (1.0 - self.tau) ** 2
            return rng.normal(s2 * t, np.sqrt(s2), size=t.shape)
        if self.kind == "binomial":
            p = np.where(t >= 0, 1.0 / (1.0 + np.exp(-np.abs(t))),
                         np.exp(-np.abs(t)) / (1.0 + np.exp(-np.abs(t))))
            return rng.binomial(self.n_binom, p).astype(float)
        return rng.poisson(np.exp(t)).astype(float)


@dataclass(frozen=True)
class EdgeSampleSet:
    """m observed edges: (row_idx, col_idx, y) into a feature pool.

    Indices are 0-based in memory; the CSV form is 1-based. `beta` records
    the empirical max |y| of the set.
    """

    row_idx: np.ndarray
    col_idx: np.ndarray
    y: np.ndarray
    pool_ref: str = ""

    def __post_init__(self):
        object.__setattr__(self, "row_idx", np.asarray(self.row_idx, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.asarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if not (self.row_idx.shape == self.col_idx.shape == self.y.shape):
            raise ValueError("row_idx, col_idx and y must have equal length")

    @property
    def m(self):
        return self.y.size

    @property
    def beta(self):
        return float(np.max(np.abs(self.y))) if self.m else 0.0

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("row_index,col_index,y\n")
            for i, j, v in zip(self.row_idx, self.col_idx, self.y):
                fh.write(f"{i + 1},{j + 1},{repr(float(v))}\n")

    @staticmethod
    def from_csv(path, pool_ref=""):
        rows, cols, ys = [], [], []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "row_index,col_index,y":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                i, j, v = line.strip().split(",")
                rows.append(int(i) - 1)
                cols.append(int(j) - 1)
                ys.append(float(v))
        return EdgeSampleSet(np.array(rows), np.array(cols), np.array(ys), pool_ref)


@dataclass(frozen=True)
class GenerativeSpec:
    """Everything needed to draw one synthetic data set."""

    weights: WeightPair
    a1: ActivationKind
    a2: ActivationKind
    law: ResponseLaw
    n1: int
    n2: int
    m: int
    seed: int


def gen_ground_truth(d1, d2, r, fix_first_row=False, seed=0, max_tries=10):
    """Gaussian factor pair rescaled so sigma_r(U) = sigma_r(V) = 1.

    With `fix_first_row`, the first row of U doubles as the known constant
    for the identifiability constraint; generation itself is unchanged and
    downstream code reads it from U directly.
    """
    if r > min(d1, d2):
        raise ValueError(f"r={r} exceeds min(d1, d2)={min(d1, d2)}")
    rng = _rng(seed)
    for _ in range(max_tries):
        U = rng.standard_normal((d1, r))
        V = rng.standard_normal((d2, r))
        try:
            return WeightPair(normalize_ground_truth(U), normalize_ground_truth(V))
        except ValueError:
            continue
    raise ValueError(f"could not draw a rank-{r} pair in {max_tries} tries")


def gen_features(n1, n2, d1, d2, seed=0):
    """Feature pool with i.i.d. standard Gaussian rows."""
    rng = _rng(seed)
    X = rng.standard_normal((n1, d1))
    Z = rng.standard_normal((n2, d2))
    return FeaturePool(X, Z)


def gen_mixture_features(n, d, centers, spread, seed=0):
    """Rows drawn from an isotropic Gaussian mixture.

    Returns (features n x d, labels in 1..K). Component of each row is
    uniform over the K centers; spread is the within-component stdev.
    """
    centers = np.asarray(centers, dtype=float)
    K = centers.shape[0]
    if K < 1 or centers.shape[1] != d:
        raise ValueError(f"centers must be K x {d}, got {centers.shape}")
    rng = _rng(seed)
    labels = rng.integers(0, K, size=n)
    feats = centers[labels] + spread * rng.standard_normal((n, d))
    return feats, labels + 1


def _theta_batch(weights, a1, a2, X, Z):
    f1 = phi(a1, X @ weights.U)
    f2 = phi(a2, Z @ weights.V)
    return np.einsum("ij,ij->i", f1, f2)


def sample_edges(pool, weights, a1, a2, law, m, seed=0, pool_ref=""):
    """m edges sampled uniformly with replacement, responses drawn from `law`."""
    if m < 1:
        raise ValueError("need m >= 1")
    rng_idx = _rng(seed, key=0)
    rng_y = _rng(seed, key=1)
    rows = rng_idx.integers(0, pool.n1, size=m)
    cols = rng_idx.integers(0, pool.n2, size=m)
    th = _theta_batch(weights, a1, a2, pool.X[rows], pool.Z[cols])
    y = law.sample(th, rng_y)
    return EdgeSampleSet(rows, cols, y, pool_ref)


@dataclass(frozen=True)
class SampleSplit:
    """Two independent edge sets over disjoint feature pools."""

    omega: EdgeSampleSet
    omega_prime: EdgeSampleSet
    pool: FeaturePool
    pool_prime: FeaturePool


def split_samples(spec, share_pools=False):
    """Draw the split (omega over pool, omega' over a fresh primed pool).

    `share_pools` reuses the unprimed pool for omega' (ablation switch);
    the default follows the disjoint-pool construction.
    """
    w, seed = spec.weights, spec.seed
    pool = gen_features(spec.n1, spec.n2, w.d1, w.d2, seed=child_seed(seed, "features"))
    if share_pools:
        pool_p = pool
    else:
        pool_p = gen_features(
            spec.n1, spec.n2, w.d1, w.d2, seed=child_seed(seed, "features_primed")
        )
    omega = sample_edges(
        pool, w, spec.a1, spec.a2, spec.law, spec.m,
        seed=child_seed(seed, "edges"), pool_ref="pool",
    )
    omega_p = sample_edges(
        pool_p, w, spec.a1, spec.a2, spec.law, spec.m,
        seed=child_seed(seed, "edges_primed"), pool_ref="pool_prime",
    )
    return SampleSplit(omega, omega_p, pool, pool_p)


def union_samples(split):
    """Multiset union of the split's two edge sets over a stacked pool.

    Duplicate edges are kept; indices of the primed set are shifted past
    the unprimed pool's rows/columns.
    """
    a, b = split.omega, split.omega_prime
    pool = FeaturePool(
        np.vstack([split.pool.X, split.pool_prime.X]),
        np.vstack([split.pool.Z, split.pool_prime.Z]),
    )
    merged = EdgeSampleSet(
        np.concatenate([a.row_idx, b.row_idx + split.pool.n1]),
        np.concatenate([a.col_idx, b.col_idx + split.pool.n2]),
        np.concatenate([a.y, b.y]),
        pool_ref="union",
    )
    return merged, pool


def gen_similarity_labels(labels, pairs):
    """1 where the two items of a pair share a label, else 0."""
    labels = np.asarray(labels)
    out = np.empty(len(pairs), dtype=float)
    for t, (i, j) in enumerate(pairs):
        out[t] = 1.0 if labels[i] == labels[j] else 0.0
    return out


def features_to_csv(pool, path_x, path_z):
    for M, path in ((pool.X, path_x), (pool.Z, path_z)):
        with open(path, "w") as fh:
            fh.write(",".join(f"f{c}" for c in range(M.shape[1])) + "\n")
            for row in M:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
