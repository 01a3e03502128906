"""Procedural urban-scene-like images with camouflaged thin foreground.

Each image is three horizontal background bands (sky, building, road)
with per-band base colors and low-amplitude pixel noise. Foreground
objects - poles, signs, lights, persons, vehicles - are thin flat-colored
shapes whose color sits within ``color_offset`` of the base color of the
band they are anchored on; at offset 0 they are chromatically invisible
and only the missing noise texture distinguishes them.

Generation is pure in (config, index): the stream is keyed by
``default_rng([seed, index])`` and touches no global state.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from fbnet.labels import ClassScheme
from fbnet.netpbm import read_pgm, read_ppm, write_pgm, write_ppm

CLASS_NAMES = ("sky", "building", "road", "pole", "sign", "light", "person", "vehicle")
DEFAULT_SCHEME = ClassScheme(total=8, foreground_ids=(3, 4, 5, 6, 7))

_GEOMETRY_FIELDS = ("size", "color_offset", "thickness", "objects_per_image", "noise_amplitude")


class DataError(Exception):
    """Dataset files or manifest are missing or inconsistent."""


@dataclass(frozen=True)
class CamoConfig:
    size: int = 96
    color_offset: float = 0.08
    thickness: tuple = (1, 4)
    objects_per_image: tuple = (3, 8)
    noise_amplitude: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "thickness", tuple(self.thickness))
        object.__setattr__(self, "objects_per_image", tuple(self.objects_per_image))
        if self.size < 16 or self.size % 8:
            raise ValueError(f"size must be >= 16 and divisible by 8, got {self.size}")
        if not 0.0 <= self.color_offset <= 1.0:
            raise ValueError(f"color_offset must be in [0, 1], got {self.color_offset}")
        lo, hi = self.thickness
        if not 1 <= lo <= hi:
            raise ValueError(f"thickness range must satisfy 1 <= lo <= hi, got {self.thickness}")
        lo, hi = self.objects_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"objects_per_image range must satisfy 0 <= lo <= hi, got {self.objects_per_image}")
        if self.noise_amplitude < 0:
            raise ValueError(f"noise_amplitude must be >= 0, got {self.noise_amplitude}")

    @property
    def scheme(self):
        return DEFAULT_SCHEME


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8
    band_colors: np.ndarray  # (3, 3) float32, row = band id


_BAND_BASE = (
    ((0.55, 0.65, 0.82), 0.08),  # sky
    ((0.46, 0.42, 0.40), 0.08),  # building
    ((0.30, 0.30, 0.33), 0.06),  # road
)


def _draw_rect(image, mask, y0, x0, h, w, color, cls):
    size = mask.shape[0]
    y0, x0 = max(0, y0), max(0, x0)
    y1, x1 = min(size, y0 + h), min(size, x0 + w)
    image[:, y0:y1, x0:x1] = color[:, None, None]
    mask[y0:y1, x0:x1] = cls


def _draw_disc(image, mask, cy, cx, r, color, cls):
    size = mask.shape[0]
    y0, y1 = max(0, cy - r), min(size, cy + r + 1)
    x0, x1 = max(0, cx - r), min(size, cx + r + 1)
    yy, xx = np.ogrid[y0:y1, x0:x1]
    sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    image[:, y0:y1, x0:x1][:, sel] = color[:, None]
    mask[y0:y1, x0:x1][sel] = cls


def generate(config, index):
    """Deterministic Sample for (config.seed, index)."""
    rng = np.random.default_rng([config.seed, index])
    size = config.size

    # horizontal band layout: sky / building / road
    r1 = int(rng.integers(size * 20 // 100, size * 40 // 100 + 1))
    r2 = int(rng.integers(size * 55 // 100, size * 75 // 100 + 1))
    band_colors = np.empty((3, 3), dtype=np.float64)
    for band, (base, jitter) in enumerate(_BAND_BASE):
        band_colors[band] = np.clip(np.asarray(base) + rng.uniform(-jitter, jitter, size=3), 0.0, 1.0)

    image = np.empty((3, size, size), dtype=np.float64)
    mask = np.empty((size, size), dtype=np.uint8)
    bounds = ((0, r1, 0), (r1, r2, 1), (r2, size, 2))
    for y0, y1, band in bounds:
        image[:, y0:y1, :] = band_colors[band][:, None, None]
        mask[y0:y1, :] = band
    band_of_row = np.empty(size, dtype=np.int64)
    for y0, y1, band in bounds:
        band_of_row[y0:y1] = band
    image += rng.uniform(-config.noise_amplitude, config.noise_amplitude, size=image.shape)
    np.clip(image, 0.0, 1.0, out=image)

    t_lo, t_hi = config.thickness
    n_objects = int(rng.integers(config.objects_per_image[0], config.objects_per_image[1] + 1))
    for _ in range(n_objects):
        cls = int(rng.integers(3, 8))
        t = int(rng.integers(t_lo, t_hi + 1))
        if cls == 3:  # pole: thin vertical bar
            h = int(rng.integers(size // 5, size // 2 + 1))
            y0 = int(rng.integers(0, size - h + 1))
            x0 = int(rng.integers(0, size - t + 1))
            anchor_row = min(y0 + h - 1, size - 1)
            shape = ("rect", y0, x0, h, t)
        elif cls == 4:  # sign: small disc in the upper two thirds
            r = int(rng.integers(1, 4))
            cy = int(rng.integers(r, max(r + 1, size * 2 // 3)))
            cx = int(rng.integers(r, size - r))
            anchor_row = cy
            shape = ("disc", cy, cx, r)
        elif cls == 5:  # light: smaller disc in the upper half
            r = int(rng.integers(1, 3))
            cy = int(rng.integers(r, max(r + 1, size // 2)))
            cx = int(rng.integers(r, size - r))
            anchor_row = cy
            shape = ("disc", cy, cx, r)
        elif cls == 6:  # person: narrow upright rectangle in the lower half
            h = int(rng.integers(2 * t, 4 * t + 1))
            y0 = int(rng.integers(size // 2, size - h + 1)) if size - h >= size // 2 else max(0, size - h)
            x0 = int(rng.integers(0, size - t + 1))
            anchor_row = min(y0 + h - 1, size - 1)
            shape = ("rect", y0, x0, h, t)
        else:  # vehicle: wide low rectangle near the road band
            w = int(rng.integers(2 * t, 5 * t + 1))
            h = int(rng.integers(t, 2 * t + 1))
            y0 = int(rng.integers(max(0, r2 - h), size - h + 1))
            x0 = int(rng.integers(0, size - w + 1))
            anchor_row = min(y0 + h - 1, size - 1)
            shape = ("rect", y0, x0, h, w)

        base = band_colors[band_of_row[anchor_row]]
        color = np.clip(base + rng.uniform(-config.color_offset, config.color_offset, size=3), 0.0, 1.0)
        if shape[0] == "rect":
            _, y0, x0, h, w = shape
            _draw_rect(image, mask, y0, x0, h, w, color, cls)
        else:
            _, cy, cx, r = shape
            _draw_disc(image, mask, cy, cx, r, color, cls)

    return Sample(
        image=image.astype(np.float32),
        mask=mask,
        band_colors=band_colors.astype(np.float32),
    )


# -- file IO and manifests ---------------------------------------------------


def sample_paths(data_dir, split, index):
    stem = os.path.join(data_dir, split, f"{index:05d}")
    return stem + ".ppm", stem + ".pgm"


def write_sample(data_dir, split, index, sample):
    ppm, pgm = sample_paths(data_dir, split, index)
    write_ppm(ppm, sample.image)
    write_pgm(pgm, sample.mask)


def read_sample_files(data_dir, split, index):
    """8-bit quantized (image, mask) as written to disk."""
    ppm, pgm = sample_paths(data_dir, split, index)
    return read_ppm(ppm), read_pgm(pgm)


def manifest_path(data_dir):
    return os.path.join(data_dir, "dataset.json")


def load_manifest(data_dir):
    path = manifest_path(data_dir)
    if not os.path.exists(path):
        raise DataError(f"no dataset manifest at {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable dataset manifest {path}: {exc}") from None
    for key in (*_GEOMETRY_FIELDS, "splits"):
        if key not in manifest:
            raise DataError(f"dataset manifest {path} lacks {key!r}")
    return manifest


def config_for_split(manifest, split):
    if split not in manifest["splits"]:
        raise DataError(f"split {split!r} not in manifest; have {sorted(manifest['splits'])}")
    geometry = {key: manifest[key] for key in _GEOMETRY_FIELDS}
    return CamoConfig(**geometry, seed=int(manifest["splits"][split]["seed"]))


def load_split(data_dir, split):
    """Regenerate a split's samples in memory (files are 8-bit inspection copies)."""
    manifest = load_manifest(data_dir)
    config = config_for_split(manifest, split)
    count = int(manifest["splits"][split]["count"])
    return [generate(config, i) for i in range(count)]


def write_split(data_dir, config, split, count, seed, force=False):
    """Generate and write one split plus the (merged) manifest."""
    split_dir = os.path.join(data_dir, split)
    if os.path.isdir(split_dir) and os.listdir(split_dir) and not force:
        raise DataError(f"split directory {split_dir} is not empty; pass force to overwrite")
    os.makedirs(split_dir, exist_ok=True)

    if os.path.exists(manifest_path(data_dir)):
        manifest = load_manifest(data_dir)
        for key in _GEOMETRY_FIELDS:
            ours = getattr(config, key)
            ours = list(ours) if isinstance(ours, tuple) else ours
            if manifest[key] != ours:
                raise DataError(
                    f"dataset at {data_dir} was generated with {key}={manifest[key]!r}, "
                    f"requested {ours!r}; use a fresh directory"
                )
    else:
        manifest = {
            "size": config.size,
            "color_offset": config.color_offset,
            "thickness": list(config.thickness),
            "objects_per_image": list(config.objects_per_image),
            "noise_amplitude": config.noise_amplitude,
            "splits": {},
        }

    split_config = replace(config, seed=seed)
    for index in range(count):
        write_sample(data_dir, split, index, generate(split_config, index))
    manifest["splits"][split] = {"count": count, "seed": seed}
    tmp = manifest_path(data_dir) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, manifest_path(data_dir))
    return manifest
