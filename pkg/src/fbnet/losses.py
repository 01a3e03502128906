"""Segmentation losses.

Three losses, all tape-connected scalars:

* bwbce          - multi-label BCE against block-level multi-hot targets.
                   One unit of supervision per (class, block) regardless of
                   how many pixels of the class sit in the block, which is
                   what keeps its gradient uniform across pixel counts.
* pointwise_ce   - per-pixel softmax cross-entropy with an ignore id.
* reweighted_ce  - per-pixel CE with per-class weights (ablation baseline).

Probabilities are clamped to [1e-7, 1 - 1e-7] inside the logs; the
backward keeps the saturated slope so logits can still recover. With P
produced by a sigmoid over logits z, d bwbce / dz = (sigmoid(z) - y) / n.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from fbnet.labels import IGNORE, BlockLabel
from fbnet.tensor import ShapeError, Tensor, record

CLAMP = 1e-7


@dataclass
class LossValue:
    """Scalar loss plus the element count its normalization used."""

    value: Tensor
    count: int
    all_ignored: bool = False
    parts: dict | None = None


def _reduction_denom(reduction, count):
    if reduction == "mean":
        return max(count, 1)
    if reduction == "sum":
        return 1
    raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")


def bwbce(p, target, reduction="mean"):
    """Binary cross-entropy of block probabilities against multi-hot block bits."""
    if isinstance(target, BlockLabel):
        target = target.data
    y = np.asarray(target)
    if y.shape != p.data.shape:
        if p.data.ndim == y.ndim + 1 and p.data.shape[1:] == y.shape:
            y = y[None]
        else:
            raise ShapeError(f"bwbce: prediction {p.data.shape} vs target {y.shape}")
    y = y.astype(p.data.dtype)
    n = p.data.size
    denom = _reduction_denom(reduction, n)
    pc = np.clip(p.data, CLAMP, 1.0 - CLAMP)
    terms = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    def grad_fn(g):
        return (g * (pc - y) / (pc * (1.0 - pc)) / denom,)

    value = record(terms.sum(dtype=p.data.dtype) / p.data.dtype.type(denom), (p,), grad_fn, "bwbce")
    return LossValue(value=value, count=n)


def _batched(logits, mask):
    if logits.data.ndim == 3:
        z = logits.data[None]
        m = np.asarray(mask)[None]
    elif logits.data.ndim == 4:
        z = logits.data
        m = np.asarray(mask)
    else:
        raise ShapeError(f"pointwise_ce expects CHW or NCHW logits, got {logits.data.shape}")
    if m.shape != (z.shape[0], z.shape[2], z.shape[3]):
        raise ShapeError(f"pointwise_ce: logits {logits.data.shape} vs mask {np.asarray(mask).shape}")
    return z, m


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def pointwise_ce(logits, mask, ignore=IGNORE, reduction="mean", class_weights=None):
    """Mean (or sum) of per-pixel -log softmax(logits)[target]; ignore pixels skipped."""
    z, m = _batched(logits, mask)
    c = z.shape[1]
    bad = (m >= c) & (m != ignore)
    if bad.any():
        raise ValueError(f"mask id {int(m[bad][0])} outside [0, {c}) and != {ignore}")
    valid = m != ignore
    count = int(valid.sum())

    if class_weights is not None:
        class_weights = np.asarray(class_weights, dtype=z.dtype)
        if class_weights.shape != (c,):
            raise ValueError(f"need {c} class weights, got shape {class_weights.shape}")
        if (class_weights <= 0).any():
            raise ValueError("class weights must all be > 0")

    if count == 0:
        warnings.warn("pointwise_ce: every pixel ignored, loss defined as 0", stacklevel=2)
        value = record(z.dtype.type(0.0), (logits,), lambda g: (np.zeros_like(logits.data),), "pointwise_ce")
        return LossValue(value=value, count=0, all_ignored=True)

    denom = _reduction_denom(reduction, count)
    logp = _log_softmax(z)
    idx = np.where(valid, m, 0).astype(np.int64)
    nll = -np.take_along_axis(logp, idx[:, None], axis=1)[:, 0]
    pix_w = np.ones_like(nll) if class_weights is None else class_weights[idx]
    nll = np.where(valid, nll * pix_w, 0.0)

    def grad_fn(g):
        prob = np.exp(logp)
        onehot = np.zeros_like(prob)
        np.put_along_axis(onehot, idx[:, None], 1.0, axis=1)
        gz = (prob - onehot) * (pix_w * valid)[:, None] / denom * g
        gz = gz.astype(logits.data.dtype, copy=False)
        return (gz if logits.data.ndim == 4 else gz[0],)

    value = record(z.dtype.type(nll.sum() / denom), (logits,), grad_fn, "pointwise_ce")
    return LossValue(value=value, count=count)


def reweighted_ce(logits, mask, weights, ignore=IGNORE, reduction="mean"):
    """Per-pixel CE where each pixel is weighted by its target class weight."""
    return pointwise_ce(logits, mask, ignore=ignore, reduction=reduction, class_weights=weights)
