"""Block-wise multi-hot label assignment.

A full-resolution class-id mask is reduced to stride-s blocks: bit
(c, i, j) is set iff any pixel of foreground class c falls inside the
s x s block at (s*i, s*j). Ignore pixels never set a bit, and only the
foreground classes of the scheme receive bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IGNORE = 255


@dataclass(frozen=True)
class ClassScheme:
    """Partition of the class ids into background stuff and foreground targets."""

    total: int
    foreground_ids: tuple[int, ...]

    def __post_init__(self):
        if self.total < 1 or self.total > IGNORE:
            raise ValueError(f"total class count must be in [1, {IGNORE}), got {self.total}")
        fg = tuple(int(i) for i in self.foreground_ids)
        object.__setattr__(self, "foreground_ids", fg)
        if len(set(fg)) != len(fg):
            raise ValueError(f"duplicate foreground ids: {fg}")
        for i in fg:
            if not 0 <= i < self.total:
                raise ValueError(f"foreground id {i} outside [0, {self.total})")

    @property
    def background_ids(self):
        fg = set(self.foreground_ids)
        return tuple(i for i in range(self.total) if i not in fg)

    @property
    def n_foreground(self):
        return len(self.foreground_ids)


@dataclass
class BlockLabel:
    """Multi-hot block targets, shape (n_foreground, H/stride, W/stride), values 0/1."""

    data: np.ndarray
    stride: int


def _check_mask(mask, scheme, stride):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    h, w = mask.shape
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if h % stride or w % stride:
        raise ValueError(
            f"mask {h}x{w} not divisible by stride {stride} (no implicit padding)"
        )
    bad = (mask >= scheme.total) & (mask != IGNORE)
    if bad.any():
        raise ValueError(
            f"mask contains id {int(mask[bad][0])} outside [0, {scheme.total}) and != {IGNORE}"
        )
    return mask


def _per_class_blocks(mask, scheme, stride):
    h, w = mask.shape
    fg = np.asarray(scheme.foreground_ids)
    eq = mask[None, :, :] == fg[:, None, None]
    return eq.reshape(len(fg), h // stride, stride, w // stride, stride)


def assign(mask, scheme, stride):
    """Reduce a mask to stride-s multi-hot block labels (bit set iff class present)."""
    mask = _check_mask(mask, scheme, stride)
    blocks = _per_class_blocks(mask, scheme, stride)
    bits = blocks.any(axis=(2, 4)).astype(np.uint8)
    return BlockLabel(data=bits, stride=stride)


def block_foreground_count(mask, scheme, stride):
    """Per-block count of pixels of each foreground class (the pre-threshold sums)."""
    mask = _check_mask(mask, scheme, stride)
    blocks = _per_class_blocks(mask, scheme, stride)
    return blocks.sum(axis=(2, 4), dtype=np.int64)
