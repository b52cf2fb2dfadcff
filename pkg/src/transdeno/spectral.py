"""Orthonormal 2D DCT on C x H x W feature maps and the spatial/spectral reshape.

Coefficient (i, j) of channel c is

    m[c, i, j] = a(i) a(j) sum_{h,w} M[c, h, w] cos(pi i (h + 1/2) / H) cos(pi j (w + 1/2) / W)

with a(0) = sqrt(1/N) and a(k) = sqrt(2/N) otherwise, so the forward/inverse
pair is an isometry (DCT-II / DCT-III).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "dct_matrix",
    "dct2_forward",
    "dct2_inverse",
    "flatten",
    "unflatten",
    "check_finite",
]


def check_finite(x: np.ndarray, name: str = "input") -> None:
    """Raise ValueError naming the first non-finite index of ``x``."""
    finite = np.isfinite(x)
    if not finite.all():
        bad = np.argwhere(~finite)[0]
        idx = tuple(int(i) for i in bad)
        raise ValueError(f"{name} has non-finite value {x[idx]!r} at index {idx}")


@lru_cache(maxsize=64)
def _dct_matrix(n: int, dtype_name: str) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)[:, None]
    t = np.arange(n, dtype=np.float64)[None, :]
    mat = np.cos(np.pi * k * (t + 0.5) / n)
    mat *= np.sqrt(2.0 / n)
    mat[0] = np.sqrt(1.0 / n)
    mat = mat.astype(dtype_name)
    mat.setflags(write=False)
    return mat


def dct_matrix(n: int, dtype=np.float64) -> np.ndarray:
    """Orthonormal DCT-II matrix of size n x n (rows are frequencies), read-only."""
    if n < 1:
        raise ValueError(f"DCT size must be positive, got {n}")
    return _dct_matrix(int(n), np.dtype(dtype).name)


def _as_map(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"{name} must have shape (C, H, W) with positive dims, got {x.shape}")
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    check_finite(x, name)
    return x


def dct2_forward(x: np.ndarray) -> np.ndarray:
    """Per-channel orthonormal 2D DCT-II. Output has the shape and dtype of ``x``."""
    x = _as_map(x, "feature map")
    _, h, w = x.shape
    dh = dct_matrix(h, x.dtype)
    dw = dct_matrix(w, x.dtype)
    return np.matmul(np.matmul(dh, x), dw.T)


def dct2_inverse(m: np.ndarray) -> np.ndarray:
    """Per-channel orthonormal 2D DCT-III, the exact inverse of :func:`dct2_forward`."""
    m = _as_map(m, "spectrum")
    _, h, w = m.shape
    dh = dct_matrix(h, m.dtype)
    dw = dct_matrix(w, m.dtype)
    return np.matmul(np.matmul(dh.T, m), dw)


def flatten(m: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (H*W, C); row p holds frequency (p // W, p % W)."""
    m = np.asarray(m)
    if m.ndim != 3:
        raise ValueError(f"expected a (C, H, W) map, got shape {m.shape}")
    c = m.shape[0]
    return m.reshape(c, -1).T.copy()


def unflatten(mf: np.ndarray, h: int, w: int) -> np.ndarray:
    """(H*W, C) -> (C, H, W), the inverse permutation of :func:`flatten`."""
    mf = np.asarray(mf)
    if mf.ndim != 2 or mf.shape[0] != h * w:
        raise ValueError(f"flattened spectrum of shape {mf.shape} does not match H*W = {h}*{w}")
    return mf.T.reshape(mf.shape[1], h, w).copy()
