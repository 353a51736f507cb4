"""Loss terms: reconstruction, weighted cross-entropy, prototype alignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import PreciseModel, PrototypeBank, forward

LOG_FLOOR = 1e-12
MODES = ("reserved", "unreserved")


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.001
    class_weights: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss coefficients must be non-negative")
        if np.any(self.class_weights <= 0):
            raise ValueError("class weights must be strictly positive")


@dataclass
class LossBreakdown:
    total: Tensor
    classification: Tensor
    ae: Tensor
    proto_term1: Tensor
    proto_term2: Tensor
    lambda1: float
    lambda2: float

    def values(self) -> dict:
        return {
            "total": self.total.item(),
            "classification": self.classification.item(),
            "ae": self.ae.item(),
            "proto_term1": self.proto_term1.item(),
            "proto_term2": self.proto_term2.item(),
        }

    def identity_residual(self) -> float:
        """Relative gap between total and its recomposition from the parts."""
        v = self.values()
        recomposed = v["classification"] + self.lambda1 * v["ae"] + self.lambda2 * (v["proto_term1"] + v["proto_term2"])
        return abs(v["total"] - recomposed) / max(abs(recomposed), 1e-300)


def ae_loss(x: Tensor, recon: Tensor) -> Tensor:
    """Mean over the batch of the summed squared pixel error."""
    if x.shape != recon.shape:
        raise ag.ShapeError(f"ae_loss: shapes differ {x.shape} vs {recon.shape}")
    diff = recon - x
    return ag.mean(ag.sum(diff * diff, axis=1))


def compute_class_weights(class_counts) -> np.ndarray:
    """w_j = n / (N * n_j): inverse-frequency weights, all ones when balanced."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValueError(f"every class needs at least one sample, got counts {counts.tolist()}")
    return counts.sum() / (len(counts) * counts)


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def weighted_ce_from_log_probs(log_probs: Tensor, labels, class_weights) -> Tensor:
    n, N = log_probs.shape
    labels = _check_labels(labels, N)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    coef = np.zeros((n, N))
    coef[np.arange(n), labels] = w / w.sum()
    return -ag.sum(log_probs * Tensor(coef.astype(log_probs.dtype)))


def weighted_ce(probs: Tensor, labels, class_weights) -> Tensor:
    """sum_i w_{y_i} * -log p[i, y_i] / sum_i w_{y_i}, with p floored at 1e-12."""
    return weighted_ce_from_log_probs(ag.log(probs, floor=LOG_FLOOR), labels, class_weights)


def proto_loss_reserved(encodings: Tensor, labels, bank: PrototypeBank, distances: Tensor = None):
    """Class-level prototype alignment.

    term1 pulls each encoding toward the nearest prototype reserved for its
    class. term2 pulls each reserved prototype toward the nearest encoding of
    its class; prototypes of classes absent from the batch are skipped and the
    mean runs over the contributing prototypes only.
    """
    labels = _check_labels(labels, bank.num_classes)
    if distances is None:
        distances = ag.euclidean_distance_rows(encodings, bank.prototypes)
    owner = bank.class_map()
    same = labels[:, None] == owner[None, :]
    term1 = ag.mean(ag.min(distances, axis=1, mask=same))
    cols = np.flatnonzero(np.isin(owner, np.unique(labels)))
    per_proto = ag.min(ag.take(distances, cols, axis=1), axis=0, mask=same[:, cols])
    term2 = ag.mean(per_proto)
    return term1, term2


def proto_loss_unreserved(encodings: Tensor, bank: PrototypeBank, distances: Tensor = None):
    """Dataset-level alignment ignoring labels (the ablation baseline)."""
    if distances is None:
        distances = ag.euclidean_distance_rows(encodings, bank.prototypes)
    return ag.mean(ag.min(distances, axis=1)), ag.mean(ag.min(distances, axis=0))


def total_loss(x: Tensor, labels, model: PreciseModel, weights: LossWeights, mode: str = "reserved") -> LossBreakdown:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out = forward(model, x)
    cls = weighted_ce_from_log_probs(out.log_probs, labels, weights.class_weights)
    ae = ae_loss(x, out.recon)
    if mode == "reserved":
        t1, t2 = proto_loss_reserved(out.encoding, labels, model.bank, out.distances)
    else:
        t1, t2 = proto_loss_unreserved(out.encoding, model.bank, out.distances)
    total = cls + weights.lambda1 * ae + weights.lambda2 * (t1 + t2)
    return LossBreakdown(total, cls, ae, t1, t2, weights.lambda1, weights.lambda2)
