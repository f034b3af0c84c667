"""Weight-matrix pair, feature pools, embeddings, and the proximity score.

The proximity of a row feature x and a column feature z is the inner
product of their nonlinear embeddings,

    theta(x, z) = < phi1(U^T x), phi2(V^T z) >,

which acts as the natural parameter of the edge-response distribution.
"""

from dataclasses import dataclass

import numpy as np

from .activations import phi


def _frozen_array(a, name):
    a = np.array(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class WeightPair:
    """Factor matrices U (d1 x r) and V (d2 x r); immutable after construction."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", _frozen_array(self.U, "U"))
        object.__setattr__(self, "V", _frozen_array(self.V, "V"))
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError(
                f"U and V disagree on r: {self.U.shape[1]} vs {self.V.shape[1]}"
            )
        if self.r > min(self.d1, self.d2):
            raise ValueError(f"r={self.r} exceeds min(d1, d2)={min(self.d1, self.d2)}")

    @property
    def d1(self):
        return self.U.shape[0]

    @property
    def d2(self):
        return self.V.shape[0]

    @property
    def r(self):
        return self.U.shape[1]

    def pack(self):
        """Stack the columns u_1..u_r then v_1..v_r into one vector."""
        return np.concatenate([self.U.ravel(order="F"), self.V.ravel(order="F")])

    @staticmethod
    def unpack(vec, d1, d2, r):
        vec = np.asarray(vec, dtype=float)
        if vec.size != r * (d1 + d2):
            raise ValueError(f"vector of size {vec.size} cannot unpack to ({d1},{d2},{r})")
        U = vec[: d1 * r].reshape(d1, r, order="F")
        V = vec[d1 * r :].reshape(d2, r, order="F")
        return WeightPair(U, V)

    def dist_sq(self, other):
        """Joint squared Frobenius distance to another pair."""
        du = self.U - other.U
        dv = self.V - other.V
        return float(np.sum(du * du) + np.sum(dv * dv))


@dataclass(frozen=True)
class FeaturePool:
    """Row features X (n1 x d1) and column features Z (n2 x d2)."""

    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", _frozen_array(self.X, "X"))
        object.__setattr__(self, "Z", _frozen_array(self.Z, "Z"))

    @property
    def n1(self):
        return self.X.shape[0]

    @property
    def n2(self):
        return self.Z.shape[0]

    @property
    def d1(self):
        return self.X.shape[1]

    @property
    def d2(self):
        return self.Z.shape[1]


def embed(W, kind, feature):
    """Embedding phi(W^T feature); W is d x r, feature has length d."""
    W = np.asarray(W, dtype=float)
    feature = np.asarray(feature, dtype=float)
    if feature.shape != (W.shape[0],):
        raise ValueError(f"feature of shape {feature.shape} does not match W {W.shape}")
    return phi(kind, W.T @ feature)


def theta(weights, a1, a2, x, z):
    """Proximity score: inner product of the two embeddings."""
    return float(np.dot(embed(weights.U, a1, x), embed(weights.V, a2, z)))


def normalize_ground_truth(W, rank_tol=1e-10):
    """Rescale W so its smallest singular value equals 1.

    Raises on rank-deficient input (sigma_r <= rank_tol * sigma_1).
    """
    W = np.asarray(W, dtype=float)
    sv = np.linalg.svd(W, compute_uv=False)
    smallest = sv[min(W.shape) - 1]
    if smallest <= rank_tol * sv[0]:
        raise ValueError(
            f"matrix is rank deficient: sigma_min={smallest:.3e}, sigma_max={sv[0]:.3e}"
        )
    return W / smallest


def write_matrix_csv(W, path):
    """Write a matrix row-major with a `# d,r` comment header line."""
    W = np.asarray(W, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"# {W.shape[0]},{W.shape[1]}\n")
        for row in W:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing `# d,r` header line")
        d, r = (int(tok) for tok in header.lstrip("#").strip().split(","))
        rows = [[float(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    W = np.array(rows, dtype=float)
    if W.shape != (d, r):
        raise ValueError(f"{path}: header promises {(d, r)}, file holds {W.shape}")
    return W


def save_weight_pair(weights, path_u, path_v):
    write_matrix_csv(weights.U, path_u)
    write_matrix_csv(weights.V, path_v)


def load_weight_pair(path_u, path_v):
    return WeightPair(read_matrix_csv(path_u), read_matrix_csv(path_v))
