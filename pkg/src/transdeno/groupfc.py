"""Grouped fully-connected layers and the deformable group FC layer.

A grouped FC layer with n groups splits its input into n contiguous chunks
(frequency bands under the row-major flattening) and maps each chunk with
its own weight block, i.e. a block-diagonal weight matrix.

The deformable layer keeps one grouped branch per candidate group count and
blends them per sample.  A small FC produces k coefficients K_i in [0, k-1];
each K_i selects the branches at list indices floor(K_i) and ceil(K_i) and
weights them with a 2-way softmax over (K_i - floor(K_i), ceil(K_i) - K_i).
The k blended terms are averaged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GroupFc",
    "DeGroFc",
    "DeGroFcTrace",
    "CONVENTIONS",
    "init_group_fc",
    "init_degrofc",
    "group_fc_forward",
    "group_fc_backward",
    "coefficients",
    "offsets",
    "blend_weights",
    "degrofc_forward",
    "degrofc_trace",
    "degrofc_backward",
]

# "paper": floor branch weighted by the softmaxed (K - floor K) offset, as
# printed.  "standard": floor branch weighted by the (ceil K - K) offset, as in
# bilinear interpolation.
CONVENTIONS = ("paper", "standard")


@dataclass
class GroupFc:
    weight: np.ndarray  # (n_groups, out_len // n, in_len // n)
    bias: np.ndarray  # (n_groups, out_len // n)

    def __post_init__(self):
        if self.weight.ndim != 3 or self.bias.ndim != 2:
            raise ValueError("GroupFc expects weight (n, out/n, in/n) and bias (n, out/n)")
        if self.bias.shape != self.weight.shape[:2]:
            raise ValueError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def n_groups(self) -> int:
        return self.weight.shape[0]

    @property
    def in_len(self) -> int:
        return self.weight.shape[0] * self.weight.shape[2]

    @property
    def out_len(self) -> int:
        return self.weight.shape[0] * self.weight.shape[1]

    def dense(self) -> np.ndarray:
        """Equivalent (out_len, in_len) block-diagonal matrix."""
        n, o, i = self.weight.shape
        full = np.zeros((n * o, n * i), dtype=self.weight.dtype)
        for g in range(n):
            full[g * o:(g + 1) * o, g * i:(g + 1) * i] = self.weight[g]
        return full


@dataclass
class DeGroFc:
    group_counts: tuple
    coeff_weight: np.ndarray  # (k, coeff_in)
    coeff_bias: np.ndarray  # (k,)
    branches: list  # one GroupFc per entry of group_counts
    convention: str = "paper"

    def __post_init__(self):
        self.group_counts = tuple(int(n) for n in self.group_counts)
        k = len(self.group_counts)
        if k < 1:
            raise ValueError("need at least one candidate group count")
        if any(b <= a for a, b in zip(self.group_counts, self.group_counts[1:])):
            raise ValueError(f"group counts must be strictly increasing, got {self.group_counts}")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown bilinear convention {self.convention!r}")
        if self.coeff_weight.shape[0] != k or self.coeff_bias.shape != (k,):
            raise ValueError("coefficient FC must produce one output per candidate group count")
        if len(self.branches) != k:
            raise ValueError(f"expected {k} branches, got {len(self.branches)}")
        for n, br in zip(self.group_counts, self.branches):
            if br.n_groups != n:
                raise ValueError(f"branch for {n} groups has {br.n_groups} weight blocks")
            if (br.in_len, br.out_len) != (self.in_len, self.out_len):
                raise ValueError("all branches must share in_len and out_len")

    @property
    def k(self) -> int:
        return len(self.group_counts)

    @property
    def in_len(self) -> int:
        return self.branches[0].in_len

    @property
    def out_len(self) -> int:
        return self.branches[0].out_len

    def named_arrays(self, prefix: str = "") -> dict:
        out = {
            f"{prefix}coeff.weight": self.coeff_weight,
            f"{prefix}coeff.bias": self.coeff_bias,
        }
        for n, br in zip(self.group_counts, self.branches):
            out[f"{prefix}branch[{n}].weight"] = br.weight
            out[f"{prefix}branch[{n}].bias"] = br.bias
        return out


def init_group_fc(in_len: int, out_len: int, n_groups: int, rng: np.random.Generator,
                  dtype=np.float32) -> GroupFc:
    if in_len % n_groups or out_len % n_groups:
        raise ValueError(
            f"in_len={in_len} and out_len={out_len} must both be divisible by n_groups={n_groups}")
    gi, go = in_len // n_groups, out_len // n_groups
    bound = 1.0 / np.sqrt(gi)
    weight = rng.uniform(-bound, bound, size=(n_groups, go, gi))
    bias = rng.uniform(-bound, bound, size=(n_groups, go))
    return GroupFc(weight.astype(dtype), bias.astype(dtype))


def init_degrofc(in_len: int, out_len: int, group_counts, rng: np.random.Generator,
                 convention: str = "paper", dtype=np.float32) -> DeGroFc:
    """Fan-in uniform weights; coefficient bias starts every K_i at (k - 1) / 2."""
    group_counts = tuple(group_counts)
    k = len(group_counts)
    bound = 1.0 / np.sqrt(in_len)
    coeff_weight = rng.uniform(-bound, bound, size=(k, in_len)).astype(dtype)
    coeff_bias = np.full(k, (k - 1) / 2, dtype=dtype)
    branches = [init_group_fc(in_len, out_len, n, rng, dtype) for n in group_counts]
    return DeGroFc(group_counts, coeff_weight, coeff_bias, branches, convention)


def group_fc_forward(x: np.ndarray, p: GroupFc) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (p.in_len,):
        raise ValueError(f"grouped FC expects input of length {p.in_len}, got shape {x.shape}")
    n, _, gi = p.weight.shape
    y = np.einsum("goi,gi->go", p.weight, x.reshape(n, gi)) + p.bias
    return y.reshape(-1)


def group_fc_backward(x: np.ndarray, p: GroupFc, dy: np.ndarray):
    """Return (d_weight, d_bias, d_x) for upstream gradient ``dy``."""
    n, go, gi = p.weight.shape
    xg = np.asarray(x).reshape(n, gi)
    dyg = np.asarray(dy).reshape(n, go)
    d_weight = dyg[:, :, None] * xg[:, None, :]
    d_x = np.einsum("goi,go->gi", p.weight, dyg).reshape(-1)
    return d_weight, dyg.copy(), d_x


def coefficients(s: np.ndarray, p: DeGroFc) -> np.ndarray:
    """Affine map of ``s`` to k values, hard-clamped to [0, k - 1]."""
    s = np.asarray(s)
    if s.shape != (p.coeff_weight.shape[1],):
        raise ValueError(
            f"coefficient FC expects input of length {p.coeff_weight.shape[1]}, got shape {s.shape}")
    raw = p.coeff_weight @ s + p.coeff_bias
    return np.clip(raw, 0, p.k - 1)


def offsets(K, k: int | None = None):
    """Softmaxed offset pair (o_p, o_q) for a coefficient, or arrays of them.

    The raw pair is (K - floor K, ceil K - K).  Pass ``k`` to range-check
    against [0, k - 1].
    """
    K = np.asarray(K)
    if not np.issubdtype(K.dtype, np.floating):
        K = K.astype(np.float64)
    if not np.all(np.isfinite(K)) or np.any(K < 0):
        raise ValueError(f"coefficients must be finite and >= 0, got {K}")
    if k is not None and np.any(K > k - 1):
        raise ValueError(f"coefficients must lie in [0, {k - 1}], got {K}")
    raw_p = K - np.floor(K)
    raw_q = np.ceil(K) - K
    # 2-way softmax, computed stably via the logit difference
    o_p = 1 / (1 + np.exp(raw_q - raw_p))
    o_q = 1 - o_p
    if o_p.ndim == 0:
        return float(o_p), float(o_q)
    return o_p, o_q


def blend_weights(K: np.ndarray, convention: str = "paper"):
    """Branch indices and weights for each coefficient.

    Returns (lo, hi, w_lo, w_hi): ``lo``/``hi`` are list indices into the
    group counts, ``w_lo``/``w_hi`` the weights of those branches.
    """
    K = np.atleast_1d(np.asarray(K))
    o_p, o_q = offsets(K)
    lo = np.floor(K).astype(np.int64)
    hi = np.ceil(K).astype(np.int64)
    if convention == "paper":
        return lo, hi, o_p, o_q
    if convention == "standard":
        return lo, hi, o_q, o_p
    raise ValueError(f"unknown bilinear convention {convention!r}")


@dataclass
class DeGroFcTrace:
    """Intermediates of one forward pass, kept for the backward pass."""

    x: np.ndarray
    s: np.ndarray
    raw: np.ndarray
    K: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray
    branch_out: dict = field(default_factory=dict)
    y: np.ndarray | None = None


def degrofc_trace(x: np.ndarray, s: np.ndarray, p: DeGroFc) -> DeGroFcTrace:
    x = np.asarray(x)
    s = np.asarray(s)
    if x.shape != (p.in_len,):
        raise ValueError(f"deformable group FC expects input of length {p.in_len}, got shape {x.shape}")
    if s.shape != (p.coeff_weight.shape[1],):
        raise ValueError(
            f"coefficient FC expects input of length {p.coeff_weight.shape[1]}, got shape {s.shape}")
    raw = p.coeff_weight @ s + p.coeff_bias
    K = np.clip(raw, 0, p.k - 1)
    lo, hi, w_lo, w_hi = blend_weights(K, p.convention)
    w_lo = w_lo.astype(x.dtype, copy=False)
    w_hi = w_hi.astype(x.dtype, copy=False)
    used = sorted(set(lo.tolist()) | set(hi.tolist()))
    outs = {j: group_fc_forward(x, p.branches[j]) for j in used}
    y = np.zeros(p.out_len, dtype=x.dtype)
    for i in range(p.k):
        y += w_lo[i] * outs[lo[i]] + w_hi[i] * outs[hi[i]]
    y /= p.k
    return DeGroFcTrace(x, s, raw, K, lo, hi, w_lo, w_hi, outs, y)


def degrofc_forward(x: np.ndarray, s: np.ndarray, p: DeGroFc) -> np.ndarray:
    """Deformable group FC on ``x`` with coefficients computed from ``s``."""
    return degrofc_trace(x, s, p).y


def degrofc_backward(t: DeGroFcTrace, p: DeGroFc, dy: np.ndarray):
    """Backward pass through :func:`degrofc_trace`.

    Branch indices are treated as constants; gradient reaches the coefficient
    FC only through the offset weights.  The clamp passes no gradient when
    the raw coefficient is outside (0, k - 1).

    Returns (grads, d_x, d_s) where ``grads`` is keyed like ``named_arrays``.
    """
    k = p.k
    dy = np.asarray(dy) / k
    d_out = {j: np.zeros(p.out_len, dtype=dy.dtype) for j in t.branch_out}
    d_wlo = np.empty(k, dtype=dy.dtype)
    d_whi = np.empty(k, dtype=dy.dtype)
    for i in range(k):
        lo, hi = t.lo[i], t.hi[i]
        d_out[lo] += t.w_lo[i] * dy
        d_out[hi] += t.w_hi[i] * dy
        d_wlo[i] = dy @ t.branch_out[lo]
        d_whi[i] = dy @ t.branch_out[hi]

    if p.convention == "paper":
        d_op, d_oq = d_wlo, d_whi
        o_p = t.w_lo
    else:
        d_op, d_oq = d_whi, d_wlo
        o_p = t.w_hi
    # softmax of (raw_p, raw_q): d raw_p = o_p o_q (d_op - d_oq) = -d raw_q
    d_rawp = o_p * (1 - o_p) * (d_op - d_oq)
    # raw_p = K - floor K, raw_q = ceil K - K
    d_K = 2 * d_rawp
    d_raw = np.where((t.raw > 0) & (t.raw < k - 1), d_K, 0).astype(dy.dtype)

    grads = {
        "coeff.weight": np.outer(d_raw, t.s),
        "coeff.bias": d_raw,
    }
    d_x = np.zeros(p.in_len, dtype=dy.dtype)
    for j, (n, br) in enumerate(zip(p.group_counts, p.branches)):
        if j in d_out:
            dw, db, dx = group_fc_backward(t.x, br, d_out[j])
            d_x += dx
        else:
            dw, db = np.zeros_like(br.weight), np.zeros_like(br.bias)
        grads[f"branch[{n}].weight"] = dw
        grads[f"branch[{n}].bias"] = db
    d_s = p.coeff_weight.T @ d_raw
    return grads, d_x, d_s
