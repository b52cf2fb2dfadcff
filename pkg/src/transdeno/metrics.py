"""Denoising quality metrics and spectral band energies."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .spectral import dct2_forward, flatten

__all__ = ["mse", "psnr", "band_energy", "EvalReport", "evaluate"]


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float | None = None) -> float:
    """PSNR in dB; ``peak`` defaults to the max of ``b`` (the reference).  Returns inf when mse is 0."""
    a, b = _same_shape(a, b)
    if peak is None:
        peak = float(b.max())
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def band_energy(m: np.ndarray, n_bands: int = 4) -> np.ndarray:
    """Sum of squared coefficients in each contiguous band of the row-major flat order."""
    mf = flatten(np.asarray(m, dtype=np.float64))
    if n_bands < 1 or mf.shape[0] % n_bands:
        raise ValueError(f"n_bands={n_bands} must divide H*W={mf.shape[0]}")
    return (mf ** 2).sum(axis=1).reshape(n_bands, -1).sum(axis=1)


@dataclass
class EvalReport:
    mse: float
    psnr_db: float
    band_energy: list
    noise_suppression_gain_db: float

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else "-inf"
            return v

        d = {k: clean(v) for k, v in asdict(self).items()}
        return json.dumps(d, separators=(",", ":"))


def evaluate(denoised: np.ndarray, noisy: np.ndarray, clean: np.ndarray,
             peak: float | None = None, n_bands: int = 4) -> EvalReport:
    """Score ``denoised`` against ``clean``; the gain is measured relative to ``noisy``."""
    if peak is None:
        peak = float(np.max(clean))
    p_den = psnr(denoised, clean, peak)
    p_noisy = psnr(noisy, clean, peak)
    return EvalReport(
        mse=mse(denoised, clean),
        psnr_db=p_den,
        band_energy=[float(e) for e in band_energy(dct2_forward(np.asarray(denoised, np.float64)), n_bands)],
        noise_suppression_gain_db=p_den - p_noisy,
    )
