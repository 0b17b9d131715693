"""Test-time inference.

Solves the convex non-negative fitting problem for a mixed signal against
the concatenated bases, applies the Wiener-type filter so that the
recovered sources sum to the mix, and provides the projection-only
denoising path that uses a single basis.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import SparsityParams, as_array, update_latents


@dataclass
class SeparationResult:
    """Per-source latents, raw reconstructions and filtered signals."""

    latents: list
    raw: list
    filtered: list
    residual: np.ndarray


def _solve_latents(V, Wcat, p, max_iter, tol):
    # convex problem; all-ones start (zeros are absorbing for the
    # multiplicative update, so strict positivity is required)
    h = np.ones((Wcat.shape[1], V.shape[1]))
    for _ in range(max_iter):
        h_new = update_latents(h, Wcat, V, p)
        delta = np.linalg.norm(h_new - h)
        h = h_new
        if delta <= tol * max(np.linalg.norm(h), p.eps):
            break
    return h


def separate(V, bases, p=None, max_iter=500, tol=1e-8, threads=1):
    """Separate the columns of V against a list of bases.

    Minimizes ||V - [W_1 ... W_S] h||_F^2 + mu_H |h|_1 over h >= 0, splits
    the solution into per-source blocks and Wiener-filters the raw
    reconstructions. Columns are independent; threads > 1 solves column
    chunks concurrently with identical results.
    """
    p = p or SparsityParams()
    V = as_array(V)
    W = [as_array(b) for b in bases]
    m = V.shape[0]
    for w in W:
        if w.shape[0] != m:
            raise ValueError(f"basis rows {w.shape[0]} do not match signal rows {m}")
    Wcat = np.concatenate(W, axis=1)

    if threads > 1 and V.shape[1] > 1:
        chunks = np.array_split(np.arange(V.shape[1]), min(threads, V.shape[1]))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: _solve_latents(V[:, idx], Wcat, p, max_iter, tol), chunks))
        h = np.concatenate(parts, axis=1)
    else:
        h = _solve_latents(V, Wcat, p, max_iter, tol)

    offsets = np.cumsum([0] + [w.shape[1] for w in W])
    latents = [h[offsets[i] : offsets[i + 1]] for i in range(len(W))]
    raw = [W[i] @ latents[i] for i in range(len(W))]
    filtered = wiener_filter(V, raw, p.eps)
    residual = np.linalg.norm(V - sum(raw), axis=0)
    return SeparationResult(latents, raw, filtered, residual)


def wiener_filter(v, raw, eps=1e-12):
    """Reallocate the mix proportionally to the raw reconstructions.

    u_i = v * raw_i / sum_j raw_j entrywise; where the denominator is
    <= eps the mix is split equally across sources. The outputs sum to v
    wherever the denominator exceeds eps.
    """
    v = as_array(v)
    raw = [as_array(r) for r in raw]
    denom = sum(raw)
    safe = denom > eps
    out = []
    for r in raw:
        u = np.where(safe, v * np.divide(r, denom, out=np.zeros_like(r), where=safe), v / len(raw))
        out.append(u)
    return out


def project_denoise(V, basis, p=None, max_iter=500, tol=1e-8):
    """Project each column of V onto the cone of one basis.

    Returns W h* with h* the non-negative projection coefficients; this is
    the projection-only denoising path that needs no noise basis.
    """
    p = p or SparsityParams()
    V = as_array(V)
    W = as_array(basis)
    h = _solve_latents(V, W, p, max_iter, tol)
    return W @ h
