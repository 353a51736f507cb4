"""Prototype images and distance reports.

The distances reported here are taken from the same forward pass whose
output feeds the linear classifier, so an explanation row is exactly the
classifier input for that image.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import LabeledDataset
from .model import PreciseModel, decode, encode, forward
from .pgm import to_uint8, write_pgm


@dataclass
class ExplainReport:
    names: list
    distances: np.ndarray  # queries x m, prototype columns in reservation order
    predicted: np.ndarray
    nearest: np.ndarray
    prototype_class: np.ndarray
    prototype_files: list = field(default_factory=list)
    class_average: np.ndarray = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            header = ["image", "pred"]
            for k in range(self.distances.shape[1]):
                header += [f"proto_{k}_class", f"proto_{k}_dist"]
            w.writerow(header)
            for name, pred, row in zip(self.names, self.predicted, self.distances):
                rec = [name, int(pred)]
                for k, dist in enumerate(row):
                    rec += [int(self.prototype_class[k]), repr(float(dist))]
                w.writerow(rec)


def prototype_images(model: PreciseModel) -> np.ndarray:
    """Decoded prototypes as m x H x W arrays in [0, 1]."""
    with ag.no_grad():
        out = decode(model, Tensor(model.bank.prototypes.data))
    return out.data.reshape((model.bank.m, *model.arch.image_shape))


def export_prototypes(model: PreciseModel, out_dir) -> list:
    """Write one ``proto_{class}_{index}.pgm`` per prototype; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for k, img in enumerate(prototype_images(model)):
        path = os.path.join(out_dir, f"proto_{model.bank.class_of(k)}_{k}.pgm")
        write_pgm(path, to_uint8(img))
        paths.append(path)
    return paths


def distance_report(model: PreciseModel, queries: LabeledDataset, names=None) -> ExplainReport:
    if queries.image_shape != tuple(model.arch.image_shape):
        raise ag.ShapeError(f"query images are {queries.image_shape}, model expects {model.arch.image_shape}")
    x = queries.images.reshape(len(queries), -1).astype(model.dtype)
    with ag.no_grad():
        out = forward(model, Tensor(x))
    dist = out.distances.data
    if names is None:
        names = list(queries.paths) if queries.paths else [f"query_{i}" for i in range(len(queries))]
    return ExplainReport(list(names), dist, np.argmax(out.probs.data, axis=1), np.argmin(dist, axis=1),
                         model.bank.class_map())


def class_average_distances(model: PreciseModel, ds: LabeledDataset) -> np.ndarray:
    """N x N matrix: row a is the mean, over class-a images, of the mean
    distance to the prototypes reserved for class b. Rows of classes
    absent from ``ds`` are NaN."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    dist = distance_report(model, ds).distances.astype(np.float64)
    N, owner = model.num_classes, model.bank.class_map()
    per_block = np.stack([dist[:, owner == b].mean(axis=1) for b in range(N)], axis=1)
    out = np.full((N, N), np.nan)
    for a in range(N):
        rows = ds.labels == a
        if rows.any():
            out[a] = per_block[rows].mean(axis=0)
    return out


def write_class_average_csv(matrix: np.ndarray, path) -> None:
    N = matrix.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["data_class"] + [f"proto_class_{b}" for b in range(N)])
        for a in range(N):
            if np.all(np.isnan(matrix[a])):
                continue
            w.writerow([f"class_{a}"] + [repr(float(v)) for v in matrix[a]])


def is_row_diagonally_dominant(matrix: np.ndarray) -> bool:
    """Every present row's diagonal entry is strictly below its off-diagonal entries."""
    for a in range(matrix.shape[0]):
        if np.all(np.isnan(matrix[a])):
            continue
        off = np.delete(matrix[a], a)
        if not np.all(matrix[a, a] < off):
            return False
    return True


def prototype_coverage(model: PreciseModel, ds: LabeledDataset) -> list:
    """Per class: does some reserved prototype have a same-class nearest training encoding?"""
    with ag.no_grad():
        z = encode(model, Tensor(ds.images.reshape(len(ds), -1).astype(model.dtype)))
        d = ag.euclidean_distance_rows(z, model.bank.prototypes).data
    nearest_label = ds.labels[np.argmin(d, axis=0)]
    owner = model.bank.class_map()
    return [bool(np.any(nearest_label[owner == j] == j)) for j in range(model.num_classes)]
