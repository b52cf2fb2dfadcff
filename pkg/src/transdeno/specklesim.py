"""Synthetic bright-target scenes and multiplicative gamma speckle.

The speckle model is L-look intensity speckle: noisy = clean * n with
n ~ Gamma(shape=L, scale=1/L), so E[n] = 1 and Var[n] = 1/L.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng

__all__ = ["SceneSpec", "gen_clean", "apply_speckle", "sample_gamma", "enl"]

_STREAM_POSITIONS = 1
_STREAM_JITTER = 2
_STREAM_SPECKLE = 3
MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneSpec:
    H: int
    W: int
    C: int
    n_targets: int = 3
    target_size: int = 2
    target_amplitude: float = 1.0
    background_level: float = 0.2
    looks: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.H, self.W, self.C) < 1:
            raise ValueError("scene dims must be positive")
        if self.n_targets < 0:
            raise ValueError("n_targets must be >= 0")
        if self.n_targets and not 1 <= self.target_size <= min(self.H, self.W):
            raise ValueError(f"target_size {self.target_size} does not fit a {self.H}x{self.W} map")
        if self.background_level < 0:
            raise ValueError("background_level must be >= 0")
        if self.looks < 1:
            raise ValueError("looks must be >= 1")


def gen_clean(spec: SceneSpec, dtype=np.float32) -> np.ndarray:
    """Constant background with non-overlapping bright squares, jittered ±10% per channel."""
    out = np.full((spec.C, spec.H, spec.W), spec.background_level, dtype=np.float64)
    if spec.n_targets:
        rng = make_rng(spec.seed, _STREAM_POSITIONS)
        size = spec.target_size
        occupied = np.zeros((spec.H, spec.W), dtype=bool)
        placed = []
        attempts = 0
        while len(placed) < spec.n_targets:
            if attempts >= MAX_PLACEMENT_ATTEMPTS:
                raise ValueError(
                    f"could not place {spec.n_targets} non-overlapping {size}x{size} targets "
                    f"in {MAX_PLACEMENT_ATTEMPTS} attempts")
            attempts += 1
            r = int(rng.integers(0, spec.H - size + 1))
            c = int(rng.integers(0, spec.W - size + 1))
            if occupied[r:r + size, c:c + size].any():
                continue
            occupied[r:r + size, c:c + size] = True
            placed.append((r, c))
        jitter = make_rng(spec.seed, _STREAM_JITTER).uniform(0.9, 1.1, size=spec.C)
        for r, c in placed:
            out[:, r:r + size, c:c + size] = (spec.target_amplitude * jitter)[:, None, None]
    return out.astype(dtype)


def sample_gamma(shape_k: float, size, rng: np.random.Generator) -> np.ndarray:
    """Gamma(shape_k, scale 1) draws by Marsaglia-Tsang, for shape_k >= 1.

    Normals come from Box-Muller on the generator's uniforms; rejected
    candidates are redrawn in batches, so the output depends only on the
    generator state.
    """
    if shape_k < 1:
        raise ValueError(f"shape must be >= 1, got {shape_k}")
    n = int(np.prod(size))
    d = shape_k - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n, dtype=np.float64)
    filled = 0
    while filled < n:
        need = n - filled
        # acceptance is above 95% for every shape >= 1
        batch = need + need // 8 + 16
        u1 = 1.0 - rng.random(batch)  # (0, 1]
        u2 = rng.random(batch)
        x = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        u = 1.0 - rng.random(batch)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        logv = np.log(np.where(ok, v, 1.0))
        x2 = x * x
        ok &= (u < 1.0 - 0.0331 * x2 * x2) | (np.log(u) < 0.5 * x2 + d * (1.0 - v + logv))
        acc = (d * v)[ok][:need]
        out[filled:filled + acc.size] = acc
        filled += acc.size
    return out.reshape(size)


def apply_speckle(clean: np.ndarray, looks: int, seed: int) -> np.ndarray:
    clean = np.asarray(clean)
    if looks < 1:
        raise ValueError("looks must be >= 1")
    if np.any(clean < 0):
        raise ValueError("speckle is applied to intensities; clean map has negative entries")
    n = sample_gamma(float(looks), clean.shape, make_rng(seed, _STREAM_SPECKLE)) / looks
    return (clean * n).astype(clean.dtype)


def enl(region: np.ndarray) -> float:
    """Equivalent number of looks, (mean / std)^2, of a homogeneous region."""
    region = np.asarray(region, dtype=np.float64)
    return float((region.mean() / region.std()) ** 2)
