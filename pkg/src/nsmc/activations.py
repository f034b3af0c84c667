"""Pointwise activations and their first two derivatives.

All functions accept scalars or numpy arrays and evaluate elementwise.
"""

from enum import Enum

import numpy as np


class ActivationKind(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"  # baseline-only; strips the nonlinearity


def parse_activation(name):
    """Map a lowercase config string to an ActivationKind."""
    try:
        return ActivationKind(name.strip().lower())
    except ValueError:
        raise ValueError(
            "unknown activation %r; expected one of sigmoid|tanh|relu|identity" % name
        ) from None


def smoothness_q(kind):
    """Nonsmoothness flag: 1 for relu, 0 for the smooth activations."""
    return 1 if kind == ActivationKind.RELU else 0


def _stable_sigmoid(x):
    # separate branches for x >= 0 and x < 0 so exp never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _as_output(x, out):
    return float(out) if np.ndim(x) == 0 else out


def phi(kind, x):
    """Activation value."""
    x = np.asarray(x, dtype=float)
    if kind == ActivationKind.SIGMOID:
        out = _stable_sigmoid(x)
    elif kind == ActivationKind.TANH:
        out = np.tanh(x)
    elif kind == ActivationKind.RELU:
        out = np.maximum(x, 0.0)
    elif kind == ActivationKind.IDENTITY:
        out = x + 0.0
    else:
        raise ValueError("unknown activation kind: %r" % (kind,))
    return _as_output(x, out)


def dphi(kind, x):
    """First derivative. For relu the value at 0 is defined as 0."""
    x = np.asarray(x, dtype=float)
    if kind == ActivationKind.SIGMOID:
        s = _stable_sigmoid(x)
        out = s * (1.0 - s)
    elif kind == ActivationKind.TANH:
        t = np.tanh(x)
        out = 1.0 - t * t
    elif kind == ActivationKind.RELU:
        out = (x > 0).astype(float)
    elif kind == ActivationKind.IDENTITY:
        out = np.ones_like(x)
    else:
        raise ValueError("unknown activation kind: %r" % (kind,))
    return _as_output(x, out)


def d2phi(kind, x):
    """Second derivative; identically 0 for relu and identity."""
    x = np.asarray(x, dtype=float)
    if kind == ActivationKind.SIGMOID:
        s = _stable_sigmoid(x)
        out = s * (1.0 - s) * (1.0 - 2.0 * s)
    elif kind == ActivationKind.TANH:
        t = np.tanh(x)
        out = -2.0 * t * (1.0 - t * t)
    elif kind in (ActivationKind.RELU, ActivationKind.IDENTITY):
        out = np.zeros_like(x)
    else:
        raise ValueError("unknown activation kind: %r" % (kind,))
    return _as_output(x, out)
