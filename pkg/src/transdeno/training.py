"""Plain SGD on the mean-squared denoising error."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import backward
from .pipeline import TransDenoParams, transdeno_trace
from .rng import make_rng

__all__ = ["TrainConfig", "DivergenceError", "dataset_loss", "train_denoiser"]

log = logging.getLogger(__name__)

_STREAM_BATCHES = 0x5E1EC7


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    # the loss is a per-element mean, so per-weight gradients are small
    learning_rate: float = 10.0
    steps: int = 2000
    batch: int = 8
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


def _pair_loss(noisy, clean, p):
    t = transdeno_trace(noisy, p)
    diff = t.out - clean
    return float(np.mean(diff * diff)), t, 2 * diff / diff.size


def dataset_loss(data: Sequence, p: TransDenoParams) -> float:
    """Mean over pairs of the per-pair MSE."""
    return float(np.mean([_pair_loss(n, c, p)[0] for n, c in data]))


def _batches(n_items: int, batch: int, seed: int):
    """Endless stream of index batches: seeded reshuffles, consumed in order."""
    rng = make_rng(seed, _STREAM_BATCHES)
    pool = []
    while True:
        while len(pool) < batch:
            pool.extend(rng.permutation(n_items).tolist())
        out, pool = pool[:batch], pool[batch:]
        yield out


def train_denoiser(cfg: TrainConfig, data: Sequence, p: TransDenoParams, log_every: int = 0):
    """Train a copy of ``p`` on (noisy, clean) pairs.

    Returns ``(params, history)`` where ``history[s]`` is the mean loss over
    the whole training set with the parameters in effect at the start of
    step ``s``; the last entry (index ``steps``) is after the final update.
    """
    p = p.copy()
    dt = p.dtype
    data = [(np.asarray(n, dtype=dt), np.asarray(c, dtype=dt)) for n, c in data]
    if not data:
        raise ValueError("training data is empty")
    shape = data[0][0].shape
    for n, c in data:
        if n.shape != shape or c.shape != shape:
            raise ValueError(f"all pairs must share shape {shape}")

    arrays = p.named_arrays()
    history = []
    batches = _batches(len(data), cfg.batch, cfg.seed)
    for step in range(cfg.steps + 1):
        try:
            with np.errstate(over="raise", invalid="raise"):
                loss = dataset_loss(data, p)
        except FloatingPointError:
            raise DivergenceError(step, math.nan) from None
        if not math.isfinite(loss):
            raise DivergenceError(step, loss)
        history.append(loss)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.6g", step, loss)
        if step == cfg.steps:
            break
        idx = next(batches)
        acc = {k: np.zeros_like(v) for k, v in arrays.items()}
        try:
            with np.errstate(over="raise", invalid="raise"):
                scale = dt.type(cfg.learning_rate / len(idx))
                for i in idx:
                    noisy, clean = data[i]
                    _, t, dout = _pair_loss(noisy, clean, p)
                    grads, _ = backward(noisy, p, dout, trace=t)
                    for k, g in grads.items():
                        acc[k] += g
                for k, arr in arrays.items():
                    arr -= scale * acc[k]
        except FloatingPointError:
            raise DivergenceError(step, math.nan) from None
    return p, history
