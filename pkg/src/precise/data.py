"""Datasets: manifest loading, synthetic generation, subsetting and batching."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .pgm import PGMError, read_pgm, to_uint8, write_pgm

DEFAULT_FRACTIONS = (0.01, 0.05, 0.10, 0.25, 0.50, 1.00)
STD_FLOOR = 1e-6


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # n x H x W, raw pixels in [0, 1]
    labels: np.ndarray  # n, int64
    num_classes: int
    provenance: str = "synthetic"
    paths: tuple = ()

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if images.ndim != 3 or len(images) != len(labels):
            raise DataError("images must be n x H x W with one label each")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if images.size and (images.min() < 0 or images.max() > 1 or not np.all(np.isfinite(images))):
            raise DataError("raw pixels must lie in [0, 1]")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def flat(self, dtype=np.float64) -> np.ndarray:
        return self.images.reshape(len(self), -1).astype(dtype)

    def select(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        paths = tuple(self.paths[i] for i in idx) if self.paths else ()
        return LabeledDataset(self.images[idx], self.labels[idx], self.num_classes, self.provenance, paths)

    def stats(self) -> tuple:
        return normalization_stats(self)


def normalization_stats(ds: LabeledDataset) -> tuple:
    """Scalar mean and population std over every pixel; std floored at 1e-6."""
    if len(ds) < 2:
        raise DataError("normalization statistics need at least two samples")
    px = ds.images
    mean = float(px.mean())
    std = float(np.sqrt(((px - mean) ** 2).mean()))
    return mean, max(std, STD_FLOOR)


# ---- manifest I/O ---------------------------------------------------------

def load_manifest(manifest_path, root: Optional[str] = None) -> LabeledDataset:
    """Read a ``path,label`` CSV of 8-bit P5 images. Paths resolve against
    ``root`` (default: the manifest's directory)."""
    root = root if root is not None else os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["path", "label"]:
        raise DataError(f"{manifest_path}: header must be 'path,label'")
    images, labels, paths = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"{manifest_path}:{lineno}: expected 'path,label'")
        rel, lab = row[0].strip(), row[1].strip()
        full = os.path.join(root, rel)
        if not os.path.isfile(full):
            raise DataError(f"missing image file: {full}")
        try:
            img = read_pgm(full)
            label = int(lab)
        except PGMError as exc:
            raise DataError(str(exc)) from exc
        except ValueError:
            raise DataError(f"{manifest_path}:{lineno}: label '{lab}' is not an integer") from None
        if images and img.shape != images[0].shape:
            raise DataError(f"{full}: dimensions {img.shape} differ from {images[0].shape}")
        if label < 0:
            raise DataError(f"{manifest_path}:{lineno}: negative label")
        images.append(img)
        labels.append(label)
        paths.append(rel)
    if not images:
        raise DataError(f"{manifest_path}: no samples")
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1
    missing = np.flatnonzero(np.bincount(labels, minlength=num_classes) == 0)
    if missing.size:
        raise DataError(f"{manifest_path}: label gap, classes {missing.tolist()} have no samples")
    pixels = np.stack(images).astype(np.float64) / 255.0
    return LabeledDataset(pixels, labels, num_classes, "manifest", tuple(paths))


def save_manifest(ds: LabeledDataset, out_dir, manifest_name: str = "manifest.csv") -> str:
    """Write every sample as a PGM plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    width = max(4, len(str(len(ds))))
    rows = []
    for i, (img, lab) in enumerate(zip(ds.images, ds.labels)):
        rel = f"img_{i:0{width}d}_c{lab}.pgm"
        write_pgm(os.path.join(out_dir, rel), to_uint8(img))
        rows.append((rel, int(lab)))
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("path,label\n")
        for rel, lab in rows:
            f.write(f"{rel},{lab}\n")
    return path


# ---- synthetic data -------------------------------------------------------

def class_pattern(j: int, side: int) -> np.ndarray:
    """Noise-free pattern for class ``j`` (values 0 or 0.8)."""
    pat = np.zeros((side, side))
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    if j == 0:
        pat[(yy - c) ** 2 + (xx - c) ** 2 <= (side / 4.0) ** 2] = 0.8
    elif j == 1:
        w = max(1, side // 8)
        for col in (side // 4, (3 * side) // 4):
            pat[:, col - w // 2: col - w // 2 + w] = 0.8
    else:
        if j + 1 > 4:
            raise DataError("synthetic generator supports at most 4 classes")
        q = max(1, side // 4)
        corners = [(slice(0, q), slice(0, q)), (slice(0, q), slice(side - q, side)),
                   (slice(side - q, side), slice(0, q)), (slice(side - q, side), slice(side - q, side))]
        for sl in corners[: j + 1]:
            pat[sl] = 0.8
    return pat


def gen_synthetic(n_per_class, side: int = 16, seed: int = 0, noise: float = 0.1) -> LabeledDataset:
    """Class-blocked images: N(0, noise**2) pixel noise plus the class pattern, clipped to [0, 1]."""
    n_per_class = [int(n) for n in n_per_class]
    if side < 8:
        raise DataError("side must be >= 8")
    if len(n_per_class) < 2 or min(n_per_class) < 1:
        raise DataError("need >= 2 classes with >= 1 sample each")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for j, n in enumerate(n_per_class):
        pat = class_pattern(j, side)
        imgs = np.clip(pat + rng.normal(0.0, noise, size=(n, side, side)), 0.0, 1.0)
        images.append(imgs)
        labels += [j] * n
    return LabeledDataset(np.concatenate(images), np.asarray(labels), len(n_per_class), "synthetic")


# ---- subsetting and batching ----------------------------------------------

@dataclass(frozen=True)
class SubsetSpec:
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")

    def count(self, n_class: int) -> int:
        # round half up, floor at one sample per class
        return min(n_class, max(1, int(math.floor(self.fraction * n_class + 0.5))))


def stratified_subset(ds: LabeledDataset, spec: SubsetSpec) -> LabeledDataset:
    rng = np.random.default_rng([spec.seed, 0x5B5E7])
    keep = []
    for j in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == j)
        if members.size == 0:
            continue
        keep.append(rng.choice(members, size=spec.count(members.size), replace=False))
    return ds.select(np.sort(np.concatenate(keep)))


def batches(ds: LabeledDataset, batch_size: int, seed: int = 0, shuffle: bool = True, *,
            epoch: int = 0, normalize: bool = True, stats: Optional[tuple] = None,
            dtype=np.float64) -> Iterator[tuple]:
    """Yield (x, labels) with x flattened to batch x pixels.

    Shuffled order depends only on (seed, epoch). With ``normalize`` the
    pixels are standardized by ``stats`` (default: this dataset's own).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(ds)) if shuffle else np.arange(len(ds))
    x = ds.flat(np.float64)
    if normalize:
        mean, std = stats if stats is not None else normalization_stats(ds)
        x = (x - mean) / std
    x = x.astype(dtype)
    for s in range(0, len(ds), batch_size):
        idx = order[s:s + batch_size]
        yield x[idx], ds.labels[idx]
