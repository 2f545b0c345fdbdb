"""Synthetic lesion dataset and on-disk dataset loading.

Each sample is a skin-toned textured background with one irregular dark
blob (the lesion) and a few thin dark strokes (hair-like distractors that
are not part of the mask).  Every random choice is rotation-uniform, so the
data distribution is invariant under the dihedral group.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import read_image, read_mask, write_image, write_mask

MIN_FOREGROUND = 0.05
MAX_FOREGROUND = 0.6


@dataclass
class SampleRecord:
    image: np.ndarray  # [3, H, W] in [0, 1]
    mask: np.ndarray  # [1, H, W] in {0, 1}
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be [3, H, W], got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise ValueError(f"mask shape {self.mask.shape} does not match image {self.image.shape}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must be binary")


class Dataset:
    """Stacked images ``[N, 3, H, W]`` and masks ``[N, 1, H, W]``."""

    def __init__(self, images: np.ndarray, masks: np.ndarray, ids=None):
        if len(images) == 0:
            raise ValueError("dataset is empty")
        if len(images) != len(masks):
            raise ValueError("images and masks differ in length")
        self.images = np.asarray(images, dtype=np.float64)
        self.masks = np.asarray(masks, dtype=np.uint8)
        self.ids = list(ids) if ids is not None else [f"sample_{i:04d}" for i in range(len(images))]

    @classmethod
    def from_records(cls, records) -> Dataset:
        records = list(records)
        if not records:
            raise ValueError("dataset is empty")
        return cls(np.stack([r.image for r in records]), np.stack([r.mask for r in records]),
                   [r.id for r in records])

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> SampleRecord:
        return SampleRecord(self.images[i], self.masks[i], self.ids[i])

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.images[idx], self.masks[idx], [self.ids[i] for i in idx])


def _blob_mask(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
    a, b = rng.uniform(0.12 * size, 0.34 * size, size=2)
    orient = rng.uniform(0.0, 2 * np.pi)
    dy, dx = yy - cy, xx - cx
    rho = np.hypot(dx, dy)
    phi = np.arctan2(dy, dx)
    rel = phi - orient
    r = a * b / np.sqrt((b * np.cos(rel)) ** 2 + (a * np.sin(rel)) ** 2)
    harmonics = np.arange(2, 6)
    amps = rng.uniform(0.0, 0.25, size=harmonics.size) / harmonics
    phases = rng.uniform(0.0, 2 * np.pi, size=harmonics.size)
    r = r * (1.0 + (amps[:, None, None] * np.cos(harmonics[:, None, None] * phi + phases[:, None, None])).sum(0))
    return (rho <= r).astype(np.uint8)


def _strokes(rng, size: int, count: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((size, size))
    for _ in range(count):
        py, px = rng.uniform(0, size, size=2)
        theta = rng.uniform(0.0, np.pi)
        bend = rng.uniform(-0.02, 0.02)
        # signed distance to a gently curved line through (px, py)
        u = (xx - px) * np.cos(theta) + (yy - py) * np.sin(theta)
        v = -(xx - px) * np.sin(theta) + (yy - py) * np.cos(theta) - bend * u ** 2
        length = rng.uniform(0.3, 0.8) * size
        out = np.maximum(out, np.exp(-(v / 0.6) ** 2) * (np.abs(u) < length / 2))
    return out


def synth_sample(size: int, rng) -> SampleRecord:
    """One synthetic lesion image; the mask is redrawn until its area is plausible."""
    while True:
        mask = _blob_mask(rng, size)
        frac = mask.mean()
        if MIN_FOREGROUND <= frac <= MAX_FOREGROUND:
            break
    skin = np.array([0.86, 0.68, 0.58]) + rng.uniform(-0.08, 0.08, size=3)
    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16, mode="wrap")
    texture /= texture.std() + 1e-12
    image = skin[:, None, None] * (1.0 + 0.06 * texture)[None]

    contrast = rng.uniform(0.25, 0.55)
    lesion = skin * np.array([0.55, 0.45, 0.42]) ** rng.uniform(0.6, 1.2)
    inner = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 24, mode="wrap")
    inner /= inner.std() + 1e-12
    soft = gaussian_filter(mask.astype(np.float64), sigma=0.8)
    blend = contrast + (1 - contrast) * soft
    lesion_img = lesion[:, None, None] * (1.0 + 0.12 * inner)[None]
    image = image * (1 - soft * blend)[None] + lesion_img * (soft * blend)[None]

    hair = _strokes(rng, size, int(rng.integers(0, 4)))
    image = image * (1 - 0.6 * hair)[None]
    image = image + rng.normal(0.0, 0.03, size=image.shape)
    return SampleRecord(np.clip(image, 0.0, 1.0), mask[None], "")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def gen_synthetic(n: int, size: int, seed: int, out_dir=None) -> Dataset:
    """Generate ``n`` samples; when ``out_dir`` is given write ``<id>.ppm`` / ``<id>_mask.pgm``."""
    if size % 2 or size < 32:
        raise ValueError(f"size must be even and at least 32, got {size}")
    if n < 1:
        raise ValueError("n must be positive")
    records = []
    for i in range(n):
        rec = synth_sample(size, sample_rng(seed, i))
        rec.id = f"sample_{i:04d}"
        records.append(rec)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"cannot write to {out}")
        for rec in records:
            write_image(out / f"{rec.id}.ppm", rec.image)
            write_mask(out / f"{rec.id}_mask.pgm", rec.mask)
    return Dataset.from_records(records)


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    images = sorted(p for p in directory.glob("*.ppm"))
    if not images:
        raise FileNotFoundError(f"no .ppm images in {directory}")
    records = []
    for p in images:
        mask_path = p.with_name(p.stem + "_mask.pgm")
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask {mask_path}")
        records.append(SampleRecord(read_image(p), read_mask(mask_path), p.stem))
    return Dataset.from_records(records)
