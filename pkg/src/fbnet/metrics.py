"""Segmentation metrics and the gradient-dilution probe.

EvalReport accumulates a confusion matrix (rows = ground truth, columns
= prediction, ignore pixels skipped) and derives per-class IoU, mIoU and
foreground-only mIoU. Classes absent from both prediction and truth
have undefined IoU and are excluded from the means.

The dilution probe quantifies how a thin object's supervision thins out
under per-pixel loss: a single block logit is nearest-upsampled by the
stride and scored with sum-normalized cross-entropy against masks whose
foreground pixel count k varies; the logit's gradient magnitude scales
as k/stride^2. The block-wise BCE run on the same masks is constant in
k. The construction keeps every non-foreground pixel ignored so the
ratios are exact, not approximate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from fbnet import tensor as T
from fbnet.labels import IGNORE, ClassScheme, assign
from fbnet.losses import bwbce, pointwise_ce
from fbnet.tensor import Tensor


class EvalReport:
    def __init__(self, scheme):
        self.scheme = scheme
        self.confusion = np.zeros((scheme.total, scheme.total), dtype=np.int64)

    def accumulate(self, prediction, truth):
        prediction = np.asarray(prediction)
        truth = np.asarray(truth)
        if prediction.shape != truth.shape:
            raise ValueError(f"prediction {prediction.shape} vs truth {truth.shape}")
        c = self.scheme.total
        if ((prediction >= c) | (prediction < 0)).any():
            raise ValueError(f"prediction ids must be in [0, {c})")
        valid = truth != IGNORE
        if ((truth >= c) & valid).any():
            raise ValueError(f"truth ids must be in [0, {c}) or {IGNORE}")
        pair = truth[valid].astype(np.int64) * c + prediction[valid].astype(np.int64)
        self.confusion += np.bincount(pair, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other):
        if other.scheme != self.scheme:
            raise ValueError("cannot merge reports over different class schemes")
        self.confusion += other.confusion
        return self

    def per_class_iou(self):
        """IoU per class; None where the class occurs in neither prediction nor truth."""
        tp = np.diag(self.confusion)
        fn = self.confusion.sum(axis=1) - tp
        fp = self.confusion.sum(axis=0) - tp
        out = []
        for c in range(self.scheme.total):
            denom = int(tp[c] + fp[c] + fn[c])
            out.append(None if denom == 0 else float(tp[c]) / denom)
        return out

    def _mean_over(self, ids):
        defined = [iou for c, iou in enumerate(self.per_class_iou()) if c in ids and iou is not None]
        return float(np.mean(defined)) if defined else float("nan")

    def miou(self):
        return self._mean_over(set(range(self.scheme.total)))

    def f_miou(self):
        return self._mean_over(set(self.scheme.foreground_ids))

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "per_class_iou": self.per_class_iou(),
            "miou": self.miou(),
            "f_miou": self.f_miou(),
        }

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


# -- gradient-dilution probe -------------------------------------------------

_PROBE_SCHEME = ClassScheme(total=2, foreground_ids=(1,))


@dataclass
class DilutionReport:
    stride: int
    ce_magnitude: list
    bwbce_magnitude: list

    def ce_ratios(self):
        full = self.ce_magnitude[-1]
        return [m / full for m in self.ce_magnitude]

    def bwbce_ratios(self):
        full = self.bwbce_magnitude[-1]
        return [m / full for m in self.bwbce_magnitude]

    def to_csv(self):
        lines = ["stride,k,ce_ratio,bwbce_ratio"]
        for i, (ce, bw) in enumerate(zip(self.ce_ratios(), self.bwbce_ratios())):
            lines.append(f"{self.stride},{i + 1},{ce!r},{bw!r}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def _probe_mask(stride, k):
    # k foreground pixels, everything else ignored: the pixel count is the
    # only thing that differs between cases
    mask = np.full((stride, stride), IGNORE, dtype=np.uint8)
    mask.reshape(-1)[:k] = 1
    return mask


def dilution_probe(stride):
    """Gradient magnitude vs foreground pixel count for one s x s block."""
    if stride < 2:
        raise ValueError(f"dilution probe needs stride >= 2, got {stride}")
    ce_mag, bw_mag = [], []
    for k in range(1, stride * stride + 1):
        mask = _probe_mask(stride, k)

        z = Tensor(np.zeros((1, 2, 1, 1)), requires_grad=True, dtype=np.float64)
        up = T.upsample_nearest(z, stride)
        T.backward(pointwise_ce(up, mask[None], reduction="sum").value)
        ce_mag.append(float(abs(z.grad[0, 1, 0, 0])))

        zb = Tensor(np.zeros((1, 1, 1)), requires_grad=True, dtype=np.float64)
        target = assign(mask, _PROBE_SCHEME, stride)
        T.backward(bwbce(T.sigmoid(zb), target, reduction="sum").value)
        bw_mag.append(float(abs(zb.grad[0, 0, 0])))
    return DilutionReport(stride=stride, ce_magnitude=ce_mag, bwbce_magnitude=bw_mag)
