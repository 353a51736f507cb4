"""Optimizer, training loop, metrics, multi-seed runs and sweeps."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import DEFAULT_FRACTIONS, LabeledDataset, SubsetSpec, batches, stratified_subset
from .model import ArchSpec, PreciseModel, init_model, predict
from .objective import MODES, LossWeights, compute_class_weights, total_loss

logger = logging.getLogger(__name__)

DEFAULT_D_VALUES = (1, 2, 3, 4, 5)
LOSS_KEYS = ("total", "classification", "ae", "proto_term1", "proto_term2")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lambda1: float = 1.0
    lambda2: float = 0.001
    d: int = 2
    mode: str = "reserved"
    seeds: int = 3
    seed: int = 0
    fraction: float = 1.0
    latent_dim: int = 32
    hidden: tuple = (128, 64)
    dtype: str = "float32"
    bias: bool = True
    proto_init: str = "class"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.seeds < 1 or self.d < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, seeds >= 1 and d >= 1 required")
        if self.lr <= 0 or self.weight_decay < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lr must be positive; weight_decay and lambdas non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.proto_init not in ("class", "random"):
            raise ValueError("proto_init must be 'class' or 'random'")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def seed_list(self) -> list:
        return [self.seed + i for i in range(self.seeds)]


# ---- Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, state: AdamState, lr: float = 1e-3, wd: float = 0.0, grads=None) -> None:
    """One Adam update with L2 decay folded into the gradient (g + wd * theta).

    Parameters without a gradient are treated as having zero gradient.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = np.zeros_like(p.data) if grads[i] is None else np.asarray(grads[i])
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ag.ShapeError(f"shape mismatch in adam_step for parameter {i}")
        if wd:
            g = g + wd * p.data
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


# ---- training -------------------------------------------------------------

@dataclass
class TrainResult:
    model: PreciseModel
    history: list  # per-epoch mean of each loss term, plus val_accuracy when a validation set is given
    steps: list  # per-step loss values plus the breakdown residual


def build_model(train_ds: LabeledDataset, config: TrainConfig, seed: int) -> PreciseModel:
    arch = ArchSpec(train_ds.image_shape, tuple(config.hidden), config.latent_dim)
    norm = train_ds.stats() if len(train_ds) >= 2 else (0.0, 1.0)
    kwargs = {}
    if config.proto_init == "class":
        kwargs = {"init_images": train_ds.images, "init_labels": train_ds.labels}
    model = init_model(arch, config.d, train_ds.num_classes, seed, norm=norm, bias=config.bias,
                       dtype=config.np_dtype, **kwargs)
    model.meta.update(lambda1=config.lambda1, lambda2=config.lambda2, mode=config.mode)
    return model


def train(train_ds: LabeledDataset, config: TrainConfig, seed: Optional[int] = None,
          model: Optional[PreciseModel] = None, val_ds: Optional[LabeledDataset] = None) -> TrainResult:
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    seed = config.seed if seed is None else seed
    if model is None:
        model = build_model(train_ds, config, seed)
    weights = LossWeights(config.lambda1, config.lambda2, compute_class_weights(train_ds.class_counts))
    params = model.parameters()
    state = AdamState.for_params(params)
    history, steps = [], []
    for epoch in range(config.epochs):
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        n_steps = 0
        for step, (x, y) in enumerate(batches(train_ds, config.batch_size, seed, True, epoch=epoch,
                                              normalize=False, dtype=config.np_dtype)):
            model.zero_grad()
            # overflow is reported through NonFiniteError, not numpy warnings
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    br = total_loss(Tensor(x), y, model, weights, config.mode)
            except ag.NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch} step {step}: non-finite value in '{exc.op}'") from exc
            vals = br.values()
            bad = [k for k in LOSS_KEYS if not np.isfinite(vals[k])]
            if bad:
                raise TrainingDiverged(f"epoch {epoch} step {step}: non-finite loss term(s) {bad}")
            ag.backward(br.total)
            adam_step(params, state, config.lr, config.weight_decay)
            steps.append({"epoch": epoch, "step": step, **vals, "residual": br.identity_residual()})
            for k in LOSS_KEYS:
                sums[k] += vals[k]
            n_steps += 1
        row = {"epoch": epoch, **{k: v / n_steps for k, v in sums.items()}}
        if val_ds is not None:
            row["val_accuracy"] = evaluate(model, val_ds).accuracy
        history.append(row)
        logger.debug("epoch %d total %.5f", epoch, row["total"])
    model.zero_grad()
    return TrainResult(model, history, steps)


# ---- metrics --------------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    class_accuracy: list  # None where the class has no test samples
    confusion: list
    n: int
    seed: Optional[int] = None

    def row(self) -> list:
        return [self.accuracy, self.macro_f1, *self.class_accuracy]


def metrics_from_predictions(labels, preds, num_classes: int, seed=None) -> MetricsReport:
    labels, preds = np.asarray(labels), np.asarray(preds)
    if labels.size == 0:
        raise ValueError("empty test set")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    tp = np.diag(cm).astype(np.float64)
    support, predicted = cm.sum(axis=1), cm.sum(axis=0)
    class_acc, f1s = [], []
    for j in range(num_classes):
        if support[j] == 0:
            class_acc.append(None)
            continue
        class_acc.append(float(100.0 * tp[j] / support[j]))
        precision = tp[j] / predicted[j] if predicted[j] else 0.0
        recall = tp[j] / support[j]
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return MetricsReport(float(100.0 * tp.sum() / labels.size), 100.0 * float(np.mean(f1s)), class_acc,
                         cm.tolist(), int(labels.size), seed)


def evaluate(model: PreciseModel, ds: LabeledDataset, seed=None) -> MetricsReport:
    preds, _ = predict(model, ds.images)
    return metrics_from_predictions(ds.labels, preds, model.num_classes, seed)


# ---- multi-seed runs ------------------------------------------------------

@dataclass
class MultiSeedReport:
    config: TrainConfig
    reports: list
    models: list = field(default_factory=list)
    subsets: list = field(default_factory=list)

    def _agg(self, values, fn):
        vals = [v for v in values if v is not None]
        if not vals:
            return None
        if fn == "std":
            return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return float(np.mean(vals))

    def aggregate(self, fn: str = "mean") -> list:
        """Aggregate of [accuracy, macro_f1, acc_class_0, ...] across seeds."""
        rows = [r.row() for r in self.reports]
        return [self._agg([row[c] for row in rows], fn) for c in range(len(rows[0]))]

    @property
    def accuracy_mean(self) -> float:
        return self.aggregate("mean")[0]

    @property
    def accuracy_std(self) -> float:
        return self.aggregate("std")[0]

    def class_accuracy_mean(self, j: int) -> Optional[float]:
        return self.aggregate("mean")[2 + j]


def _seed_job(args):
    config, train_ds, test_ds, seed, keep = args
    subset = stratified_subset(train_ds, SubsetSpec(config.fraction, seed))
    res = train(subset, config, seed=seed)
    rep = evaluate(res.model, test_ds, seed=seed)
    return rep, (res.model if keep else None), subset.class_counts.tolist()


def run_multiseed(config: TrainConfig, train_ds: LabeledDataset, test_ds: LabeledDataset,
                  workers: int = 1, keep_models: bool = False) -> MultiSeedReport:
    """Train one model per seed on that seed's stratified subset.

    Subset draws depend only on (fraction, seed), so runs that differ only
    in mode or d see identical training data.
    """
    jobs = [(config, train_ds, test_ds, s, keep_models) for s in config.seed_list()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_seed_job, jobs))
    else:
        results = [_seed_job(j) for j in jobs]
    return MultiSeedReport(config, [r[0] for r in results],
                           [r[1] for r in results] if keep_models else [],
                           [r[2] for r in results])


# ---- sweeps ---------------------------------------------------------------

@dataclass
class SweepTable:
    key_name: str
    rows: list  # [(key, MultiSeedReport)]
    num_classes: int

    def header(self) -> list:
        return ["fraction_or_d", "seed", "accuracy", "macro_f1",
                *[f"acc_class_{j}" for j in range(self.num_classes)]]

    def records(self) -> list:
        out = []
        for key, ms in self.rows:
            for rep in ms.reports:
                out.append([key, rep.seed, *rep.row()])
            out.append([key, "mean", *ms.aggregate("mean")])
            out.append([key, "std", *ms.aggregate("std")])
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for rec in self.records():
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in rec])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as f:
                f.write(text)
        return text


def sweep_subsets(config: TrainConfig, train_ds, test_ds, fractions=DEFAULT_FRACTIONS,
                  workers: int = 1, keep_models: bool = False) -> SweepTable:
    for f in fractions:
        if not 0 < f <= 1:
            raise ValueError(f"fraction {f} outside (0, 1]")
    rows = [(f, run_multiseed(replace(config, fraction=f), train_ds, test_ds, workers, keep_models))
            for f in fractions]
    return SweepTable("fraction", rows, train_ds.num_classes)


def sweep_prototypes(config: TrainConfig, train_ds, test_ds, d_values=DEFAULT_D_VALUES,
                     workers: int = 1, keep_models: bool = False) -> SweepTable:
    rows = [(int(d), run_multiseed(replace(config, d=int(d)), train_ds, test_ds, workers, keep_models))
            for d in d_values]
    return SweepTable("d", rows, train_ds.num_classes)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
