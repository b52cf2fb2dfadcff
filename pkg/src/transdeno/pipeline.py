"""TransDeno: dynamic soft-threshold denoising of a feature map in the DCT domain.

    m  = DCT(M),  m~ = flatten(m)                       (HW x C)
    s  = mean_c(m~) + max_c(m~)                         (HW,)
    a  = sigmoid(D2(relu(D1(s))))                       (HW,) in (0, 1)
    M' = IDCT(unflatten(soft(m~, (1 - a) |m~|)))

D1 and D2 are deformable group FC layers; each computes its blend
coefficients from its own input.  With ``transposition=False`` the same
machinery attends over channels instead (pool over HW, one gate per channel).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .groupfc import CONVENTIONS, DeGroFc, DeGroFcTrace, degrofc_trace, init_degrofc
from .rng import make_rng
from .shrinkage import soft_map
from .spectral import check_finite, dct2_forward, dct2_inverse, flatten, unflatten

__all__ = [
    "TransDenoConfig",
    "TransDenoParams",
    "ForwardTrace",
    "init_params",
    "sigmoid",
    "pooled_spectrum",
    "attention_map",
    "transdeno_trace",
    "transdeno_forward",
    "transdeno_forward_gated",
    "dct_roundtrip",
]

DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class TransDenoConfig:
    H: int
    W: int
    C: int = 1
    reduction: int = 4
    group_counts: tuple = (2, 4, 8, 16)
    bilinear_convention: str = "paper"
    transposition: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "group_counts", tuple(int(n) for n in self.group_counts))
        for name in ("H", "W", "C", "reduction"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.bilinear_convention not in CONVENTIONS:
            raise ValueError(f"bilinear_convention must be one of {CONVENTIONS}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}, got {self.dtype!r}")
        n = self.attended_len
        if n % self.reduction:
            raise ValueError(
                f"attended length {n} is not divisible by the reduction ratio {self.reduction}")
        hidden = n // self.reduction
        bad = [g for g in self.group_counts if n % g or hidden % g]
        if bad:
            raise ValueError(
                f"group counts {bad} do not divide both the attended length {n} "
                f"and the hidden length {hidden}")

    @property
    def attended_len(self) -> int:
        """Length of the descriptor the attention network sees."""
        return self.H * self.W if self.transposition else self.C

    @property
    def hidden_len(self) -> int:
        return self.attended_len // self.reduction


@dataclass
class TransDenoParams:
    config: TransDenoConfig
    stage1: DeGroFc
    stage2: DeGroFc

    def named_arrays(self) -> dict:
        """Parameter arrays keyed by stable path, in sorted order.  Arrays are live references."""
        out = {}
        out.update(self.stage1.named_arrays("stage1."))
        out.update(self.stage2.named_arrays("stage2."))
        return dict(sorted(out.items()))

    def copy(self) -> "TransDenoParams":
        return copy.deepcopy(self)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)


def init_params(config: TransDenoConfig, seed: int = 0) -> TransDenoParams:
    rng = make_rng(seed, stream=0x1417)
    dt = np.dtype(config.dtype)
    n, hidden = config.attended_len, config.hidden_len
    stage1 = init_degrofc(n, hidden, config.group_counts, rng, config.bilinear_convention, dt)
    stage2 = init_degrofc(hidden, n, config.group_counts, rng, config.bilinear_convention, dt)
    return TransDenoParams(config, stage1, stage2)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1 + np.tanh(0.5 * z))


def pooled_spectrum(m: np.ndarray, transposition: bool = True) -> np.ndarray:
    """Channel mean plus channel max at every frequency, flattened row-major.

    With ``transposition=False`` the pooling runs over frequencies instead,
    giving one value per channel.
    """
    m = np.asarray(m)
    if m.ndim != 3:
        raise ValueError(f"expected a (C, H, W) spectrum, got shape {m.shape}")
    X = flatten(m)
    if not transposition:
        X = X.T
    return X.mean(axis=1) + X.max(axis=1)


def attention_map(s: np.ndarray, p: TransDenoParams) -> np.ndarray:
    s = np.asarray(s, dtype=p.dtype)
    if s.shape != (p.config.attended_len,):
        raise ValueError(f"descriptor must have length {p.config.attended_len}, got shape {s.shape}")
    t1 = degrofc_trace(s, s, p.stage1)
    h = np.maximum(t1.y, 0)
    t2 = degrofc_trace(h, h, p.stage2)
    return sigmoid(t2.y)


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one gated forward pass."""

    M: np.ndarray
    X: np.ndarray  # flattened spectrum with attended positions along axis 0
    argmax: np.ndarray
    s: np.ndarray
    t1: DeGroFcTrace
    t2: DeGroFcTrace
    a: np.ndarray
    out: np.ndarray


def _check_input(M: np.ndarray, p: TransDenoParams) -> np.ndarray:
    M = np.asarray(M)
    cfg = p.config
    if M.ndim != 3:
        raise ValueError(f"feature map must have shape (C, H, W), got {M.shape}")
    if M.shape[1:] != (cfg.H, cfg.W):
        raise ValueError(f"feature map is {M.shape[1]}x{M.shape[2]}, parameters are bound to {cfg.H}x{cfg.W}")
    if not cfg.transposition and M.shape[0] != cfg.C:
        raise ValueError(f"channel attention is bound to C={cfg.C}, feature map has C={M.shape[0]}")
    M = M.astype(p.dtype, copy=False)
    check_finite(M, "feature map")
    return M


def _rows(mf: np.ndarray, transposition: bool) -> np.ndarray:
    return mf if transposition else mf.T


def transdeno_trace(M: np.ndarray, p: TransDenoParams) -> ForwardTrace:
    """Gated forward pass keeping intermediates."""
    M = _check_input(M, p)
    cfg = p.config
    X = _rows(flatten(dct2_forward(M)), cfg.transposition)
    argmax = X.argmax(axis=1)
    s = X.mean(axis=1) + X[np.arange(X.shape[0]), argmax]
    t1 = degrofc_trace(s, s, p.stage1)
    h = np.maximum(t1.y, 0)
    t2 = degrofc_trace(h, h, p.stage2)
    a = sigmoid(t2.y)
    Y = a[:, None] * X
    out = dct2_inverse(unflatten(_rows(Y, cfg.transposition), cfg.H, cfg.W))
    return ForwardTrace(M, X, argmax, s, t1, t2, a, out)


def transdeno_forward_gated(M: np.ndarray, p: TransDenoParams) -> np.ndarray:
    """Forward pass that multiplies the spectrum by the attention map directly."""
    return transdeno_trace(M, p).out


def transdeno_forward(M: np.ndarray, p: TransDenoParams) -> np.ndarray:
    """Forward pass through explicit soft thresholding with threshold (1 - a) |m~|."""
    M = _check_input(M, p)
    cfg = p.config
    mf = flatten(dct2_forward(M))
    X = _rows(mf, cfg.transposition)
    s = X.mean(axis=1) + X.max(axis=1)
    a = attention_map(s, p)
    theta = (1 - a)[:, None] * np.abs(X)
    Y = soft_map(X, theta)
    return dct2_inverse(unflatten(_rows(Y, cfg.transposition), cfg.H, cfg.W))


def dct_roundtrip(M: np.ndarray) -> np.ndarray:
    """The module with attention removed (gate fixed at 1)."""
    return dct2_inverse(dct2_forward(M))
