"""Labeled image datasets: in-memory container, binary file format, synthetic data.

Images live in [0,1] as float64 (N, C, H, W); labels are dense integers.
The on-disk container quantizes pixels to u8, which is lossless for any
pixel that is a whole multiple of 1/255 (the noise budget 8/255 survives
a write/read round trip exactly).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from ._binio import atomic_write_bytes
from .errors import DatasetFormatError

UEDS_MAGIC = b"UEDS"
UEDS_VERSION = 1


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, n_classes)
    n_classes: int
    split: str = ""
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N,C,H,W), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} != ({self.images.shape[0]},)"
            )
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(
                f"labels out of range [0,{self.n_classes}): "
                f"{self.labels.min()}..{self.labels.max()}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError(
                f"pixels out of [0,1]: min={self.images.min()}, max={self.images.max()}"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def with_images(self, images: np.ndarray, note: str | None = None) -> "LabeledDataset":
        notes = self.notes + (note,) if note else self.notes
        return replace(self, images=images, notes=notes)

    def take(self, indices: np.ndarray) -> "LabeledDataset":
        return replace(self, images=self.images[indices], labels=self.labels[indices])


def write_ueds(path, data: LabeledDataset) -> None:
    """magic, version u16, n u32, H u16, W u16, C u8, n_classes u16, pixels u8, labels u8."""
    n, c, h, w = data.images.shape
    if data.n_classes > 0xFFFF:
        raise ValueError("n_classes exceeds container limit")
    if data.labels.size and data.labels.max() > 0xFF:
        raise ValueError("labels exceed u8 container limit")
    blob = bytearray()
    blob += UEDS_MAGIC
    blob += struct.pack("<HIHHBH", UEDS_VERSION, n, h, w, c, data.n_classes)
    pixels = np.clip(np.rint(data.images * 255.0), 0, 255).astype(np.uint8)
    blob += pixels.tobytes()
    blob += data.labels.astype(np.uint8).tobytes()
    atomic_write_bytes(path, bytes(blob))


def read_ueds(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != UEDS_MAGIC:
        raise DatasetFormatError(f"bad magic {blob[:4]!r}", offset=0)
    try:
        version, n, h, w, c, n_classes = struct.unpack_from("<HIHHBH", blob, 4)
    except struct.error as exc:
        raise DatasetFormatError(f"truncated header: {exc}", offset=4) from exc
    if version != UEDS_VERSION:
        raise DatasetFormatError(f"unsupported version {version}", offset=4)
    pos = 4 + struct.calcsize("<HIHHBH")
    npix = n * c * h * w
    if len(blob) != pos + npix + n:
        raise DatasetFormatError(
            f"expected {pos + npix + n} bytes, file has {len(blob)}", offset=min(len(blob), pos)
        )
    pixels = np.frombuffer(blob, dtype=np.uint8, count=npix, offset=pos)
    labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=pos + npix)
    images = pixels.reshape(n, c, h, w).astype(np.float64) / 255.0
    return LabeledDataset(images, labels.astype(np.int64), n_classes)


def gen_synth_blobs(
    n_classes: int = 4,
    per_class_train: int = 400,
    per_class_test: int = 100,
    hw: tuple[int, int] = (32, 32),
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Synthetic sparse-image classification task: one dim blob per class.

    Each class owns a location on a ring around the image center and an
    intensity profile (its blob width); the width carries most of the class
    signal because the center is heavily jittered and the peak amplitude
    varies per sample. That keeps the task learnable to high accuracy but
    not in the first few gradient steps. Pixel noise (sigma 0.05) is added
    and values are clamped to [0, 1]; most of every image stays near-zero
    background, the structure the sparsity-aware mask exploits.
    """
    if min(hw) < 16:
        raise ValueError(f"image sides must be >= 16, got {hw}")
    h, w = hw
    scale = min(h, w) / 32.0
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes + np.pi / n_classes
    ring = 5.0 * scale
    centers = np.stack(
        [h / 2.0 + ring * np.sin(angles), w / 2.0 + ring * np.cos(angles)], axis=1
    )
    widths = 2.2 * scale * 1.25 ** np.arange(n_classes)
    jitter_px = max(2, int(round(6.0 * scale)))

    def make_split(per_class: int, split: str) -> LabeledDataset:
        images = np.empty((n_classes * per_class, 1, h, w))
        labels = np.repeat(np.arange(n_classes), per_class)
        for c in range(n_classes):
            jitter = rng.integers(-jitter_px, jitter_px + 1, size=(per_class, 2)).astype(
                np.float64
            )
            amp = rng.uniform(0.30, 0.50, size=per_class)
            noise = rng.normal(0.0, 0.05, size=(per_class, h, w))
            cy = centers[c, 0] + jitter[:, 0]
            cx = centers[c, 1] + jitter[:, 1]
            r2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
            blob = amp[:, None, None] * np.exp(-r2 / (2.0 * widths[c] ** 2))
            images[c * per_class : (c + 1) * per_class, 0] = np.clip(blob + noise, 0.0, 1.0)
        return LabeledDataset(
            images, labels, n_classes, split=split, notes=(f"synth_blobs(seed={seed})",)
        )

    return make_split(per_class_train, "train"), make_split(per_class_test, "test")
