"""Composite operations built from the primitives in ``tensor``.

Composites inherit exact first and second derivatives from their parts, so
nothing here defines its own backward function.
"""

from typing import Sequence, Union

import numpy as np

from meta_prompting.autodiff.tensor import (
    ArrayLike,
    Tensor,
    add,
    as_tensor,
    exp,
    getitem,
    log,
    matmul,
    mean,
    neg,
    sub,
    tsum,
)
from meta_prompting.models.exceptions import ContractError, DimensionError


def logsumexp(x: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    # The shift is a constant: logsumexp is invariant to it.
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    total = tsum(exp(sub(x, shift)), axis=axis, keepdims=True)
    out = add(log(total), shift)
    if not keepdims:
        out = out.reshape(tuple(d for i, d in enumerate(out.shape) if i != axis % x.ndim))
    return out


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


def embedding(table: Tensor, ids: Union[Sequence[int], np.ndarray]) -> Tensor:
    """Row lookup ``table[ids]``; ids may be any integer array shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding: ids out of range for table of {table.shape[0]} rows")
    return getitem(table, ids)


def linear(x: Tensor, weight: Tensor, bias: Union[Tensor, None] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def pick(x: Tensor, targets: Union[Sequence[int], np.ndarray]) -> Tensor:
    """``x[i, targets[i]]`` for each row i of a 2-D tensor."""
    targets = np.asarray(targets, dtype=np.int64)
    if x.ndim != 2 or targets.shape != (x.shape[0],):
        raise DimensionError(f"pick: need (B, C) values and B targets, got {x.shape} / {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= x.shape[1]):
        raise ContractError(f"pick: target outside 0..{x.shape[1] - 1}")
    return getitem(x, (np.arange(x.shape[0]), targets))


def cross_entropy(logits: ArrayLike, targets: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim == 1:
        logits = logits.reshape(1, logits.shape[0])
        targets = targets.reshape(1)
    return neg(mean(pick(log_softmax(logits, axis=-1), targets)))
