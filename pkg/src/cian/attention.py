"""Cross-modal and intra-modal attention blocks.

A block projects its inputs to value/key/query vectors, combines key and
query with a *package operation*, normalises with a temperature-scaled
softmax and reweights the value vector coordinate-wise.  All functions accept
arrays or :class:`~cian.numerics.Tensor` and operate on the last axis, so a
leading batch axis comes for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from cian.errors import DimensionError, ParameterError
from cian.numerics import Tensor, as_tensor, exp, linear, mul, reshape, softmax_t, tanh, tsum

PACKAGE_KINDS = ("dot", "gaussian", "kernel-gaussian")
SCORE_MODES = ("coordinate", "outer")


@dataclass(frozen=True)
class PackageOp:
    """How a key and a query are combined before the softmax."""

    kind: str = "dot"
    phi: Callable = field(default=tanh, compare=False)

    def __post_init__(self):
        if self.kind not in PACKAGE_KINDS:
            raise ParameterError(f"unknown package op {self.kind!r}; expected one of {PACKAGE_KINDS}")


@dataclass
class BlockParams:
    W_v: np.ndarray
    W_k: np.ndarray
    W_q: np.ndarray
    b_v: np.ndarray
    b_k: np.ndarray
    b_q: np.ndarray

    def __post_init__(self):
        dims = {np.shape(self.W_v)[0], np.shape(self.W_k)[0], np.shape(self.W_q)[0]}
        if len(dims) != 1:
            raise DimensionError(f"value/key/query projections disagree on output dim: {sorted(dims)}")
        if np.shape(self.W_v)[1] != np.shape(self.W_k)[1]:
            raise DimensionError("value and key projections must read the same input")

    @property
    def dim(self) -> int:
        return int(np.shape(self.W_v)[0])


@dataclass
class AttentionOutput:
    weights: Tensor
    output: Tensor
    value: Tensor


def package_score(k, q, op: PackageOp = PackageOp()) -> Tensor:
    k, q = as_tensor(k), as_tensor(q)
    if k.shape != q.shape:
        raise DimensionError(f"package_score: key {k.shape} and query {q.shape} differ")
    if op.kind == "dot":
        return mul(k, q)
    if op.kind == "gaussian":
        return exp(mul(k, q))
    return exp(mul(op.phi(k), op.phi(q)))


def attention_weights(s) -> Tensor:
    s = as_tensor(s)
    return softmax_t(mul(s, 1.0 / math.sqrt(s.shape[-1])))


def _outer_attention(k, q, v, op):
    # dim x dim score matrix per sample, softmax along rows, then A @ v
    dim = k.shape[-1]
    lead = k.shape[:-1]
    kk = reshape(k, lead + (dim, 1))
    qq = reshape(q, lead + (1, dim))
    if op.kind == "dot":
        s = mul(kk, qq)
    elif op.kind == "gaussian":
        s = exp(mul(kk, qq))
    else:
        s = exp(mul(op.phi(kk), op.phi(qq)))
    a = softmax_t(mul(s, 1.0 / math.sqrt(dim)))
    o = tsum(mul(a, reshape(v, lead + (1, dim))), axis=-1)
    return a, o


def _attend(kv_feat, q_feat, params: BlockParams, op: PackageOp, mode: str) -> AttentionOutput:
    if mode not in SCORE_MODES:
        raise ParameterError(f"unknown score mode {mode!r}")
    v = linear(params.W_v, params.b_v, kv_feat)
    k = linear(params.W_k, params.b_k, kv_feat)
    q = linear(params.W_q, params.b_q, q_feat)
    if k.shape != q.shape:
        raise DimensionError(f"key batch shape {k.shape} and query batch shape {q.shape} differ")
    if mode == "outer":
        a, o = _outer_attention(k, q, v, op)
        return AttentionOutput(a, o, v)
    a = attention_weights(package_score(k, q, op))
    return AttentionOutput(a, mul(a, v), v)


def cross_modal_block(kv_feat, q_feat, params: BlockParams, op: PackageOp = PackageOp(), mode="coordinate"):
    """Values and keys from ``kv_feat``, the query from the other modality."""
    return _attend(kv_feat, q_feat, params, op, mode)


def intra_modal_block(x_feat, params: BlockParams, op: PackageOp = PackageOp(), mode="coordinate"):
    """Values, keys and query all from the same features."""
    return _attend(x_feat, x_feat, params, op, mode)
