"""SGD training loop with poly schedule and paired-loss supervision.

The total objective is lambda2 * pixel cross-entropy on the final
logits plus lambda1 * the sum of block-wise BCE losses, one per
injected stage. Optimization is SGD with momentum and weight decay on
a polynomially decaying learning rate.

Everything is deterministic in (seed, config): sample order, per-sample
augmentation draws, gradient accumulation order and log formatting are
all fixed, so identical runs produce byte-identical checkpoints and
logs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from fbnet import checkpoint, network
from fbnet import tensor as T
from fbnet.blocks import aux_loss
from fbnet.losses import LossValue, pointwise_ce
from fbnet.metrics import EvalReport
from fbnet.tensor import Tensor


class NumericError(RuntimeError):
    """Training hit a non-finite value."""


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9
    epochs: int = 3
    batch_size: int = 4
    crop: int = 96
    scale_range: tuple = (0.5, 2.0)
    flip_prob: float = 0.5
    seed: int = 0
    checkpoint_every: int = 0  # extra checkpoints every N iterations; 0 = final only

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.poly_power <= 0:
            raise ValueError(f"poly_power must be > 0, got {self.poly_power}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.crop < 8 or self.crop % 8:
            raise ValueError(f"crop must be a positive multiple of 8, got {self.crop}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def poly_lr(iteration, max_iter, lr0=0.01, power=0.9):
    """lr0 * (1 - iteration/max_iter)^power."""
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return lr0 * (1.0 - iteration / max_iter) ** power


def sgd_step(params, velocities, lr, momentum, weight_decay):
    """v <- momentum*v + (grad + wd*param); param <- param - lr*v."""
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + (g + weight_decay * p.data)
        velocities[name] = v
        p.data -= lr * v


# -- augmentation ------------------------------------------------------------


def _lin_axis(n_in, n_out):
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_image(image, out_h, out_w):
    """Bilinear resize of a (3, H, W) float array, half-pixel centers."""
    _, h, w = image.shape
    r0, r1, rw = _lin_axis(h, out_h)
    c0, c1, cw = _lin_axis(w, out_w)
    rows = image[:, r0, :] * (1.0 - rw)[None, :, None] + image[:, r1, :] * rw[None, :, None]
    return rows[:, :, c0] * (1.0 - cw)[None, None, :] + rows[:, :, c1] * cw[None, None, :]


def resize_mask(mask, out_h, out_w):
    """Nearest-neighbor resize of a (H, W) label mask."""
    h, w = mask.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return mask[rows][:, cols]


def apply_augment(image, mask, target, flip, top, left, crop):
    """Deterministic core: resize to target, optional flip, crop window."""
    if not crop <= target:
        raise ValueError(f"crop {crop} exceeds resized size {target}")
    image = resize_image(image, target, target)
    mask = resize_mask(mask, target, target)
    if flip:
        image = image[:, :, ::-1]
        mask = mask[:, ::-1]
    image = image[:, top : top + crop, left : left + crop]
    mask = mask[top : top + crop, left : left + crop]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def augment(sample, config, rng):
    """Random resize (floored so the crop always fits), flip, crop."""
    size = sample.mask.shape[0]
    lo, hi = config.scale_range
    scale = max(float(rng.uniform(lo, hi)), config.crop / size)
    target = max(config.crop, int(round(size * scale)))
    flip = bool(rng.random() < config.flip_prob)
    top = int(rng.integers(0, target - config.crop + 1))
    left = int(rng.integers(0, target - config.crop + 1))
    return apply_augment(sample.image, sample.mask, target, flip, top, left, config.crop)


# -- objective ---------------------------------------------------------------


def _scaled(value, factor):
    return T.mul(value, Tensor(np.asarray(factor, dtype=value.data.dtype)))


def total_loss(result, mask, scheme, lambda1=1.0, lambda2=1.0):
    """lambda2 * pixel CE + lambda1 * sum of per-injection block BCE."""
    mask = np.asarray(mask)
    ce = pointwise_ce(result.z, mask)
    parts = {"ce": float(ce.value.data)}
    total = ce.value if lambda2 == 1.0 else _scaled(ce.value, lambda2)
    if lambda1 > 0:
        for name, p in result.aux:
            stride = mask.shape[-2] // p.data.shape[-2]
            term = aux_loss(p, mask, scheme, stride)
            parts[f"bwbce_{name}"] = float(term.value.data)
            total = T.add(total, term.value if lambda1 == 1.0 else _scaled(term.value, lambda1))
    return LossValue(value=total, count=ce.count, parts=parts)


# -- the loop ----------------------------------------------------------------


def evaluate(model, samples):
    """Confusion-matrix report of argmax predictions over samples."""
    report = EvalReport(model.config.scheme)
    for sample in samples:
        z = model.forward(sample.image).z
        report.accumulate(np.argmax(z.data, axis=0).astype(np.uint8), sample.mask)
    return report


def train(train_config, model_config, samples, out_dir):
    """Train a freshly built model; writes log, config echo and checkpoints.

    Returns (model, final checkpoint path).
    """
    if not samples:
        raise ValueError("no training samples")
    os.makedirs(out_dir, exist_ok=True)
    model = network.build(model_config, seed=train_config.seed)
    params = model.parameters()
    velocities = {}
    rng = np.random.default_rng(train_config.seed)
    scheme = model_config.scheme
    aux_names = [name for name, blk in model.blocks.items() if blk.has_aux_head]
    part_keys = ["ce"] + [f"bwbce_{name}" for name in aux_names]

    n = len(samples)
    steps_per_epoch = math.ceil(n / train_config.batch_size)
    max_iter = train_config.epochs * steps_per_epoch
    lines = ["iter,lr," + ",".join(["total"] + part_keys)]
    iteration = 0
    for _ in range(train_config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            lr = poly_lr(iteration, max_iter, train_config.lr0, train_config.poly_power)
            for p in params.values():
                p.zero_grad()
            sums = dict.fromkeys(["total"] + part_keys, 0.0)
            for i in batch:
                image, mask = augment(samples[int(i)], train_config, rng)
                loss = total_loss(
                    model.forward(image), mask, scheme, train_config.lambda1, train_config.lambda2
                )
                T.backward(_scaled(loss.value, 1.0 / len(batch)))
                sums["total"] += float(loss.value.data)
                for key in part_keys:
                    sums[key] += loss.parts.get(key, 0.0)
            sgd_step(params, velocities, lr, train_config.momentum, train_config.weight_decay)
            means = ",".join(f"{sums[k] / len(batch):.6f}" for k in ["total"] + part_keys)
            lines.append(f"{iteration},{lr:.8f},{means}")
            iteration += 1
            if train_config.checkpoint_every and iteration % train_config.checkpoint_every == 0:
                checkpoint.save(os.path.join(out_dir, f"checkpoint_{iteration:06d}.fbn1"), params)

    final = os.path.join(out_dir, "checkpoint_final.fbn1")
    checkpoint.save(final, params)
    with open(os.path.join(out_dir, "train_log.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({"train": train_config.to_dict(), "model": model_config.to_dict()}, fh, indent=2)
        fh.write("\n")
    return model, final
