"""Core NMF primitives.

Containers for bases, latent variables and data matrices, plus the
multiplicative latent update, cone projection/distance, basis
initialization and column normalization that everything else builds on.

All numerical kernels accept either the container types defined here or
plain numpy arrays, and return plain arrays. The containers are used at
pipeline boundaries (training state, model persistence); the kernels stay
array-in/array-out like any other numpy code.
"""

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12


class DimensionMismatch(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, what, shape_a, shape_b):
        super().__init__(f"{what}: incompatible shapes {shape_a} and {shape_b}")
        self.shapes = (shape_a, shape_b)


def as_array(x):
    """Return the underlying float array of a container or array-like."""
    if hasattr(x, "entries"):
        x = x.entries
    return np.asarray(x, dtype=float)


def _check_nonneg(a, name):
    if a.size and np.min(a) < 0:
        raise ValueError(f"{name} must be non-negative, found min {np.min(a)}")


@dataclass
class SparsityParams:
    """Sparsity penalties and the safe-division floor.

    mu_W and mu_H are the L1 penalty weights on the basis and the latent
    variables; eps is a hard floor added to every denominator so that
    mu = 0 is usable.
    """

    mu_W: float = 0.0
    mu_H: float = 0.0
    eps: float = EPS

    def __post_init__(self):
        if self.mu_W < 0 or self.mu_H < 0:
            raise ValueError("sparsity penalties must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class Basis:
    """Non-negative m x d matrix of basis vectors for one source."""

    entries: np.ndarray
    source_id: int = 0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        _check_nonneg(self.entries, "basis")

    @property
    def m(self):
        return self.entries.shape[0]

    @property
    def d(self):
        return self.entries.shape[1]


@dataclass
class Latents:
    """Non-negative d x N matrix of activation coefficients."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        _check_nonneg(self.entries, "latents")


DATA_KINDS = ("source", "mix", "adversarial", "supervised")


@dataclass
class DataMatrix:
    """Non-negative m x N matrix of column-wise signals."""

    entries: np.ndarray
    kind: str = "source"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        _check_nonneg(self.entries, "data matrix")
        if self.kind not in DATA_KINDS:
            raise ValueError(f"unknown data kind {self.kind!r}")

    @property
    def n_columns(self):
        return self.entries.shape[1]


def update_latents(H, W, U, p=None, n_scale=1.0):
    """One multiplicative update of the latent variables.

    Returns H * (W.T U / n) / (W.T W H / n + mu_H + eps) entrywise. The
    n_scale factor is the per-term 1/N scaling of the training objective;
    pass 1 for the unscaled update.
    """
    p = p or SparsityParams()
    H, W, U = as_array(H), as_array(W), as_array(U)
    if n_scale <= 0:
        raise ValueError("n_scale must be positive")
    if W.shape[0] != U.shape[0] or W.shape[1] != H.shape[0]:
        raise DimensionMismatch("update_latents basis", W.shape, U.shape)
    if H.shape[1] != U.shape[1]:
        raise DimensionMismatch("update_latents latents", H.shape, U.shape)
    num = W.T @ U / n_scale
    den = (W.T @ W) @ H / n_scale + p.mu_H + p.eps
    return H * num / den


def cone_distance(W, u, p=None, max_iter=500, tol=1e-8):
    """Distance from u to the convex cone spanned by the columns of W.

    Solves min_{h >= 0} ||u - W h||^2 + mu_H |h|_1 by iterating the
    multiplicative latent update from a strictly positive start.

    Returns:
        (h, distance): the minimizing coefficients and ||u - W h||_2.
    """
    p = p or SparsityParams()
    W = as_array(W)
    u = as_array(u).reshape(-1, 1)
    h = np.ones((W.shape[1], 1))
    for _ in range(max_iter):
        h_new = update_latents(h, W, u, p)
        delta = np.linalg.norm(h_new - h)
        h = h_new
        if delta <= tol * max(np.linalg.norm(h), p.eps):
            break
    distance = float(np.linalg.norm(u - W @ h))
    return h.ravel(), distance


def init_exemplar(U, d, seed):
    """Exemplar basis: d columns sampled from the data.

    Samples uniformly without replacement when the data has at least d
    columns, with replacement otherwise. The column indices are drawn as
    ``np.random.default_rng(seed).choice(N, size=d, replace=...)``.
    """
    U = as_array(U)
    if U.ndim != 2 or U.shape[1] == 0:
        raise ValueError("exemplar initialization needs a non-empty data matrix")
    if d < 1:
        raise ValueError("latent dimension must be >= 1")
    rng = np.random.default_rng(seed)
    n = U.shape[1]
    idx = rng.choice(n, size=d, replace=n < d)
    return U[:, idx].copy()


def init_random(m, d, seed):
    """Random basis: entries uniform on (0, 1], columns unit-normalized."""
    if m < 1 or d < 1:
        raise ValueError("basis dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    W = 1.0 - rng.random((m, d))
    return W / np.linalg.norm(W, axis=0)


def normalize_columns(W, partners=(), eps=EPS):
    """Scale the columns of W to unit norm, compensating in the partners.

    Column j of W is divided by its Euclidean norm and row j of every
    partner latent matrix is multiplied by the same norm, so all products
    W @ partner are preserved. Columns with norm <= eps are left alone.

    Returns:
        (W, partners): the rescaled basis and list of rescaled partners.
    """
    W = as_array(W)
    norms = np.linalg.norm(W, axis=0)
    scale = np.where(norms > eps, norms, 1.0)
    W_out = W / scale
    partners_out = [as_array(P) * scale[:, None] for P in partners]
    return W_out, partners_out
