"""Hand-written reverse-mode gradients for TransDeno and a central-difference checker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .groupfc import degrofc_backward
from .pipeline import ForwardTrace, TransDenoParams, transdeno_trace
from .spectral import check_finite, dct2_forward, dct2_inverse, flatten, unflatten

__all__ = [
    "backward",
    "mse_loss",
    "region_signature",
    "GradEntry",
    "GradCheckReport",
    "compare_gradients",
    "finite_diff_check",
]


def backward(M: np.ndarray, p: TransDenoParams, dL_dout: np.ndarray,
             trace: ForwardTrace | None = None):
    """Gradients of the gated forward pass.

    Returns ``(grads, dL_dM)``; ``grads`` is keyed like ``p.named_arrays()``.
    Conventions at non-smooth points: ReLU'(0) = 0, the max pool routes to the
    lowest-index maximal entry, the coefficient clamp passes nothing outside
    (0, k - 1), and floor/ceil branch indices are constants.
    """
    dL_dout = np.asarray(dL_dout)
    check_finite(dL_dout, "upstream gradient")
    t = trace if trace is not None else transdeno_trace(M, p)
    if dL_dout.shape != t.out.shape:
        raise ValueError(f"upstream gradient shape {dL_dout.shape} != output shape {t.out.shape}")
    cfg = p.config
    dL_dout = dL_dout.astype(t.out.dtype, copy=False)

    # out = IDCT(unflatten(Y)); the adjoint of an orthonormal IDCT is the DCT
    dY = flatten(dct2_forward(dL_dout))
    if not cfg.transposition:
        dY = dY.T
    da = (dY * t.X).sum(axis=1)
    dX = t.a[:, None] * dY

    dz2 = da * t.a * (1 - t.a)
    g2, dh_x, dh_s = degrofc_backward(t.t2, p.stage2, dz2)
    dz1 = (dh_x + dh_s) * (t.t1.y > 0)
    g1, ds_x, ds_s = degrofc_backward(t.t1, p.stage1, dz1)
    ds = ds_x + ds_s

    dX += ds[:, None] / t.X.shape[1]
    dX[np.arange(t.X.shape[0]), t.argmax] += ds
    if not cfg.transposition:
        dX = dX.T
    dM = dct2_inverse(unflatten(dX, cfg.H, cfg.W))

    grads = {f"stage1.{k}": v for k, v in g1.items()}
    grads.update({f"stage2.{k}": v for k, v in g2.items()})
    return dict(sorted(grads.items())), dM


def mse_loss(target: np.ndarray) -> Callable:
    """Loss callable ``out -> (mean((out - target)^2), d/d out)``."""
    target = np.asarray(target)

    def loss(out):
        diff = out - target
        return float(np.mean(diff * diff)), 2 * diff / diff.size

    return loss


def region_signature(t: ForwardTrace) -> tuple:
    """Discrete state of every non-smooth point of the forward pass.

    Two evaluations with equal signatures lie in the same smooth piece.
    """
    parts = [t.argmax, t.t1.y > 0]
    for st in (t.t1, t.t2):
        k = len(st.K)
        parts += [st.raw <= 0, st.raw >= k - 1, st.lo, st.hi]
    return tuple(np.asarray(x).tobytes() for x in parts)


@dataclass
class GradEntry:
    path: str  # tensor path plus scalar index, e.g. "stage1.branch[8].weight[2][0][1]"
    tensor: str
    analytic: float
    numeric: float
    rel_err: float
    kink: bool = False


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param_path: str | None
    entries: list = field(default_factory=list)  # sorted, worst first
    n_kink: int = 0

    def per_tensor(self) -> dict:
        """Worst non-kink relative error per tensor path."""
        out = {}
        for e in self.entries:
            if e.kink:
                continue
            out[e.tensor] = max(out.get(e.tensor, 0.0), e.rel_err)
        return out

    def format(self, top: int = 10) -> str:
        lines = [f"max_rel_err={self.max_rel_err:.3e} worst={self.worst_param_path} "
                 f"checked={len(self.entries)} kink_excluded={self.n_kink}"]
        for e in self.entries[:top]:
            flag = " (kink)" if e.kink else ""
            lines.append(f"  {e.path:<36} analytic={e.analytic: .6e} numeric={e.numeric: .6e} "
                         f"rel={e.rel_err:.2e}{flag}")
        return "\n".join(lines)


def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def compare_gradients(f: Callable, arrays: dict, analytic: dict, eps: float = 1e-5,
                      floor: float = 1e-8) -> GradCheckReport:
    """Central differences on every scalar of ``arrays`` against ``analytic``.

    ``f()`` evaluates the loss from the current (in-place perturbed) arrays and
    returns either a float or ``(loss, signature)``; a scalar whose +eps and
    -eps evaluations land in different signatures is flagged as kink-adjacent
    and left out of the verdict.
    """

    def call():
        r = f()
        return r if isinstance(r, tuple) else (r, None)

    _, sig0 = call()
    entries = []
    for path, arr in arrays.items():
        g = np.asarray(analytic[path])
        if g.shape != arr.shape:
            raise ValueError(f"gradient for {path} has shape {g.shape}, parameter has {arr.shape}")
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp, sp = call()
            arr[idx] = old - eps
            lm, sm = call()
            arr[idx] = old
            num = (lp - lm) / (2 * eps)
            a = float(g[idx])
            kink = sig0 is not None and not (sp == sig0 and sm == sig0)
            suffix = "".join(f"[{i}]" for i in idx)
            entries.append(GradEntry(path + suffix, path, a, num, _rel_err(a, num, floor), kink))
    entries.sort(key=lambda e: (not e.kink, e.rel_err), reverse=True)
    good = [e for e in entries if not e.kink]
    worst = good[0] if good else None
    return GradCheckReport(
        max_rel_err=worst.rel_err if worst else 0.0,
        worst_param_path=worst.path if worst else None,
        entries=entries,
        n_kink=len(entries) - len(good),
    )


def finite_diff_check(p: TransDenoParams, M: np.ndarray, loss: Callable, eps: float = 1e-5,
                      include_input: bool = True, backward_fn: Callable = backward,
                      floor: float = 1e-8) -> GradCheckReport:
    """Check ``backward_fn`` against central differences of ``loss(forward(M))``.

    Needs 64-bit parameters.  The input gradient is reported under path ``input``.
    """
    if p.dtype != np.float64:
        raise ValueError("finite-difference checks need float64 parameters")
    M = np.array(M, dtype=np.float64)
    t = transdeno_trace(M, p)
    _, dout = loss(t.out)
    grads, dM = backward_fn(M, p, dout)
    arrays = dict(p.named_arrays())
    analytic = dict(grads)
    if include_input:
        arrays["input"] = M
        analytic["input"] = dM

    def f():
        tt = transdeno_trace(M, p)
        return loss(tt.out)[0], region_signature(tt)

    return compare_gradients(f, arrays, analytic, eps, floor)
