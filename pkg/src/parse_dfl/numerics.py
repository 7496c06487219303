"""Dense f64 kernels with hand-derived backward passes.

All model math runs through the handful of operations here: affine maps,
ReLU, softmax cross-entropy, and cosine similarity. There is no autodiff
graph; every composite loss assembles its gradient from these analytic
backward rules, and the test suite validates each rule against central
finite differences.

Vectors and matrices are plain float64 numpy arrays (row-major). Batched
variants operate on (n, dim) arrays and return per-sample quantities so
callers control the reduction.

Conventions:
  * ReLU subgradient at exactly 0 is 0.
  * Cosine similarity refuses inputs with norm below ``NORM_EPS`` rather
    than silently returning 0.
"""

import numpy as np

from .errors import ConfigurationError, DegenerateInputError

NORM_EPS = 1e-12


def as_vector(x):
    """Coerce to a 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigurationError(f"expected a vector, got shape {arr.shape}")
    return arr


def as_matrix(x):
    """Coerce to a 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"expected a matrix, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# affine: y = W x + b
# ---------------------------------------------------------------------------

def affine(x, w, b):
    """y = W x + b for a single input vector."""
    x, w, b = as_vector(x), as_matrix(w), as_vector(b)
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ConfigurationError(
            f"affine dims do not conform: x{x.shape}, W{w.shape}, b{b.shape}")
    return w @ x + b


def affine_backward(x, w, d_out):
    """Gradients of dot(d_out, affine(x, W, b)): returns (dx, dW, db).

    dx = W^T d_out, dW = d_out x^T, db = d_out.
    """
    x, w, d_out = as_vector(x), as_matrix(w), as_vector(d_out)
    dx = w.T @ d_out
    dw = np.outer(d_out, x)
    db = d_out.copy()
    return dx, dw, db


def affine_batch(xs, w, b):
    """Row-wise affine: (n, in) -> (n, out)."""
    xs, w, b = as_matrix(xs), as_matrix(w), as_vector(b)
    if w.shape[1] != xs.shape[1] or w.shape[0] != b.shape[0]:
        raise ConfigurationError(
            f"affine dims do not conform: X{xs.shape}, W{w.shape}, b{b.shape}")
    return xs @ w.T + b


def affine_batch_backward(xs, w, d_out):
    """Batched backward: returns (dXs, dW, db) for summed row outputs."""
    dxs = d_out @ w
    dw = d_out.T @ xs
    db = d_out.sum(axis=0)
    return dxs, dw, db


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu(x):
    """Elementwise max(0, x); works on any array shape."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, d_out):
    """Pass d_out where x > 0, zero elsewhere (subgradient at 0 is 0)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, d_out, 0.0)


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, label):
    """loss = -log softmax(logits)[label], with dLogits = softmax - onehot.

    Log-sum-exp is computed with max subtraction so large logits cannot
    overflow. Returns (loss, dLogits).
    """
    logits = as_vector(logits)
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise ConfigurationError(
            f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    shifted = logits - m
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[label])
    d_logits = exp / total
    d_logits[label] -= 1.0
    return loss, d_logits


def softmax_cross_entropy_batch(logits, labels):
    """Per-sample losses and gradients for (n, C) logits.

    Returns (losses (n,), dLogits (n, C)) without any batch reduction.
    """
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ConfigurationError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ConfigurationError(f"labels out of range for {c} classes")
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    losses = np.log(total[:, 0]) - shifted[np.arange(n), labels]
    d_logits = exp / total
    d_logits[np.arange(n), labels] -= 1.0
    return losses, d_logits


# ---------------------------------------------------------------------------
# cosine similarity
# ---------------------------------------------------------------------------

def cosine_similarity(a, b):
    """a.b / (|a||b|), clamped into [-1, 1] after rounding."""
    a, b = as_vector(a), as_vector(b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateInputError(
            f"cosine similarity of near-zero vector (norms {na:.3e}, {nb:.3e})")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_similarity_backward(a, b, d_out):
    """Gradients of d_out * cos(a, b).

    d cos/da = b/(|a||b|) - cos * a/|a|^2, symmetrically for b.
    """
    a, b = as_vector(a), as_vector(b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateInputError("cosine backward on near-zero vector")
    dot = float(a @ b)
    da = d_out * (b / (na * nb) - (dot / (na ** 3 * nb)) * a)
    db = d_out * (a / (na * nb) - (dot / (na * nb ** 3)) * b)
    return da, db


def cosine_rows(a, b):
    """Row-wise cosine similarity of two (n, d) arrays -> (n,)."""
    a, b = as_matrix(a), as_matrix(b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if na.size and (na.min() < NORM_EPS or nb.min() < NORM_EPS):
        raise DegenerateInputError("cosine similarity of near-zero row")
    return np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)


def cosine_rows_backward(a, b, d_out):
    """Row-wise backward of cosine_rows; d_out has shape (n,)."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if na.size and (na.min() < NORM_EPS or nb.min() < NORM_EPS):
        raise DegenerateInputError("cosine backward on near-zero row")
    dot = (a * b).sum(axis=1)
    inv = 1.0 / (na * nb)
    da = d_out[:, None] * (b * inv[:, None] - (dot * inv / na ** 2)[:, None] * a)
    db = d_out[:, None] * (a * inv[:, None] - (dot * inv / nb ** 2)[:, None] * b)
    return da, db


def check_finite(name, *arrays):
    """Raise if any array contains NaN/Inf; used at trainer checkpoints."""
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name}")
