"""Kernel fusion algebra for inference-time reparameterization.

Two linear structures collapse into single convolutions:

- a sequence of depthwise dilated convolutions (no nonlinearity between
  stages) composes into one dense depthwise kernel whose support is
  ``K = 1 + sum(d_i * (k_i - 1))``;
- parallel same-shape 3x3 branches (optionally plus an identity
  self-residual) sum into one 3x3 kernel.

Branch fusion is exact everywhere because all branches share one zero
padding. Stack fusion is exact on interior pixels only: per-stage zero
padding is not equivalent to single-stage zero padding, so rows and
columns within ``(K - 1) // 2`` of the border may differ. Tests and the
fused inference path treat that margin as the documented boundary
caveat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigError, ShapeError


class UnsupportedFusionError(ValueError):
    """Requested fusion is not mathematically possible."""


@dataclass(frozen=True)
class DilatedStackSpec:
    """Ordered (kernel, dilation) stages of a depthwise convolution stack."""

    stages: tuple[tuple[int, int], ...]
    channels: int

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("stack needs at least one stage")
        for k, d in self.stages:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"stage kernel {k} must be odd and positive")
            if d < 1:
                raise ConfigError(f"stage dilation {d} must be >= 1")
        if self.channels < 1:
            raise ConfigError("channels must be positive")


def effective_kernel_size(spec: DilatedStackSpec) -> int:
    """Support of the dense kernel equivalent to the stack: 1 + sum(d*(k-1))."""
    return 1 + sum(d * (k - 1) for k, d in spec.stages)


def dilate_kernel_to_dense(weight: np.ndarray, d: int) -> np.ndarray:
    """Spread a (C, 1, k, k) kernel onto a dense d*(k-1)+1 grid, taps at stride d."""
    if weight.ndim != 4 or weight.shape[1] != 1:
        raise ShapeError("expected a depthwise (C, 1, k, k) kernel")
    k = weight.shape[2]
    if k != weight.shape[3] or k % 2 == 0:
        raise ConfigError("kernel must be square and odd")
    if d == 1:
        return weight.copy()
    size = d * (k - 1) + 1
    dense = np.zeros((weight.shape[0], 1, size, size), dtype=weight.dtype)
    dense[:, :, ::d, ::d] = weight
    return dense


def _convolve_full_per_channel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-channel full 2-D convolution of (C, 1, A, A) with (C, 1, B, B)."""
    ca, _, ah, aw = a.shape
    cb, _, bh, bw = b.shape
    if ca != cb:
        raise ShapeError("channel counts differ between stage kernels")
    out = np.zeros((ca, 1, ah + bh - 1, aw + bw - 1), dtype=np.result_type(a, b))
    for i in range(bh):
        for j in range(bw):
            out[:, :, i : i + ah, j : j + aw] += b[:, :, i : i + 1, j : j + 1] * a
    return out


def compose_stack_to_dense(
    spec: DilatedStackSpec,
    weights,
    biases=None,
    nonlinearity_between_stages: bool = False,
):
    """Collapse a depthwise dilated stack into one dense kernel plus bias.

    Successive stride-1 correlations compose into a single correlation
    whose kernel is the (true) convolution of the densified per-stage
    kernels. A constant bias plane b passed through the next stage picks
    up that stage's tap sum, so biases fold as
    ``b <- b * sum(w_next) + b_next`` (exact on interior pixels).

    Returns (dense_weight (C, 1, K, K), dense_bias (1, C, 1, 1)).
    """
    if nonlinearity_between_stages:
        raise UnsupportedFusionError(
            "a stack with nonlinearities between stages has no single-kernel "
            "equivalent"
        )
    if len(weights) != len(spec.stages):
        raise ShapeError("one weight per stage required")
    if biases is None:
        biases = [None] * len(weights)
    if len(biases) != len(weights):
        raise ShapeError("one bias (or None) per stage required")

    c = spec.channels
    dense = None
    bias_acc = np.zeros(c, dtype=np.float64)
    for (k, d), w, b in zip(spec.stages, weights, biases):
        if w.shape != (c, 1, k, k):
            raise ShapeError(
                f"stage weight shape {w.shape} != expected {(c, 1, k, k)}"
            )
        w64 = np.asarray(w, dtype=np.float64)
        stage_dense = dilate_kernel_to_dense(w64, d)
        if dense is None:
            dense = stage_dense
        else:
            dense = _convolve_full_per_channel(dense, stage_dense)
            bias_acc = bias_acc * w64.sum(axis=(1, 2, 3))
        if b is not None:
            bias_acc = bias_acc + np.asarray(b, dtype=np.float64).reshape(c)

    target = effective_kernel_size(spec)
    assert dense.shape[2] == target and dense.shape[3] == target
    out_dtype = np.result_type(*[w.dtype for w in weights])
    return dense.astype(out_dtype), bias_acc.reshape(1, c, 1, 1).astype(out_dtype)


def fuse_parallel_3x3(branch_weights, branch_biases=None, include_identity=False):
    """Sum parallel same-shape 3x3 branches into one kernel.

    The identity self-residual embeds as a center-tap identity map
    (requires in_channels == out_channels). Biases sum; missing biases
    count as zero. Returns (weight, bias (1, C_out, 1, 1)).
    """
    if not branch_weights:
        raise ShapeError("at least one branch required")
    base = branch_weights[0]
    if base.ndim != 4 or base.shape[2:] != (3, 3):
        raise ShapeError("branches must be (out, in, 3, 3) kernels")
    for w in branch_weights[1:]:
        if w.shape != base.shape:
            raise ShapeError("branch weight shapes differ")
    out_c, in_c = base.shape[:2]

    weight = np.zeros(base.shape, dtype=np.float64)
    for w in branch_weights:
        weight += w
    if include_identity:
        if out_c != in_c:
            raise ShapeError("identity branch needs in_channels == out_channels")
        idx = np.arange(out_c)
        weight[idx, idx, 1, 1] += 1.0

    bias = np.zeros((1, out_c, 1, 1), dtype=np.float64)
    if branch_biases is not None:
        if len(branch_biases) != len(branch_weights):
            raise ShapeError("one bias (or None) per branch required")
        for b in branch_biases:
            if b is None:
                continue
            if b.shape != (1, out_c, 1, 1):
                raise ShapeError(f"branch bias shape {b.shape} mismatches")
            bias += b
    return weight.astype(base.dtype), bias.astype(base.dtype)


def fuse_model(model):
    """Inference-form copy of a model: stacks and branch groups collapsed.

    Idempotent; see :func:`dcfmn.model.fuse_model` for the network-aware
    entry point (this module only provides the kernel algebra).
    """
    from .model import fuse_model as _fuse  # circular-import firewall

    return _fuse(model)
