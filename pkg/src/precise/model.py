"""Autoencoder + prototype-metric layer + linear head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = ("relu", "sigmoid", "linear")


@dataclass(frozen=True)
class ArchSpec:
    """MLP encoder/decoder extents.

    The encoder maps ``pixels -> *hidden -> latent_dim``; the decoder mirrors
    it and ends in a sigmoid so reconstructions stay in [0, 1].
    """

    image_shape: tuple = (16, 16)
    hidden: tuple = (128, 64)
    latent_dim: int = 32
    hidden_activation: str = "relu"

    def __post_init__(self):
        if len(self.image_shape) != 2 or any(int(s) < 1 for s in self.image_shape):
            raise ValueError(f"invalid image shape {self.image_shape}")
        if self.latent_dim < 1 or any(int(h) < 1 for h in self.hidden):
            raise ValueError("layer extents must be positive")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.hidden_activation}'")

    @property
    def pixels(self) -> int:
        return int(self.image_shape[0]) * int(self.image_shape[1])

    def encoder_layers(self) -> list:
        dims = [self.pixels, *self.hidden, self.latent_dim]
        acts = [self.hidden_activation] * len(self.hidden) + ["linear"]
        return list(zip(dims[:-1], dims[1:], acts))

    def decoder_layers(self) -> list:
        dims = [self.latent_dim, *reversed(self.hidden), self.pixels]
        acts = [self.hidden_activation] * len(self.hidden) + ["sigmoid"]
        return list(zip(dims[:-1], dims[1:], acts))


@dataclass
class PrototypeBank:
    prototypes: Tensor  # m x latent_dim
    per_class: int
    num_classes: int

    def __post_init__(self):
        if self.prototypes.shape[0] != self.per_class * self.num_classes:
            raise ValueError("prototype count must equal per_class * num_classes")

    @property
    def m(self) -> int:
        return self.per_class * self.num_classes

    def class_of(self, k: int) -> int:
        return k // self.per_class

    def reserved(self, j: int) -> range:
        return range(j * self.per_class, (j + 1) * self.per_class)

    def class_map(self) -> np.ndarray:
        return np.arange(self.m) // self.per_class


class ForwardOutput(NamedTuple):
    recon: Tensor
    encoding: Tensor
    distances: Tensor
    probs: Tensor
    log_probs: Tensor


@dataclass
class PreciseModel:
    arch: ArchSpec
    encoder: list  # [(weight, bias), ...], weight is out x in
    decoder: list
    bank: PrototypeBank
    cls_weight: Tensor  # N x m
    cls_bias: Optional[Tensor]
    seed: int = 0
    norm_mean: float = 0.0
    norm_std: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.bank.num_classes

    @property
    def dtype(self):
        return self.cls_weight.dtype

    def named_parameters(self) -> list:
        out = []
        for i, (w, b) in enumerate(self.encoder):
            out += [(f"encoder.{i}.weight", w), (f"encoder.{i}.bias", b)]
        for i, (w, b) in enumerate(self.decoder):
            out += [(f"decoder.{i}.weight", w), (f"decoder.{i}.bias", b)]
        out.append(("prototypes", self.bank.prototypes))
        out.append(("classifier.weight", self.cls_weight))
        if self.cls_bias is not None:
            out.append(("classifier.bias", self.cls_bias))
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}


def _glorot(rng, fan_in, fan_out, dtype):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in)).astype(dtype)


def init_model(arch: ArchSpec, per_class: int, num_classes: int, seed: int = 0, *,
               init_images: Optional[np.ndarray] = None, init_labels: Optional[np.ndarray] = None,
               norm: tuple = (0.0, 1.0), bias: bool = True, dtype=np.float32,
               noise: float = 0.01) -> PreciseModel:
    """Build a model with Glorot-uniform affine layers.

    With ``init_images``/``init_labels`` (raw pixels in [0, 1]) each prototype
    reserved for class j starts at the encoding of a randomly drawn class-j
    sample plus N(0, noise**2) jitter; otherwise prototypes are standard normal.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)

    def layers(spec):
        out = []
        for fan_in, fan_out, _ in spec:
            w = Tensor(_glorot(rng, fan_in, fan_out, dtype), requires_grad=True)
            b = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)
            out.append((w, b))
        return out

    encoder = layers(arch.encoder_layers())
    decoder = layers(arch.decoder_layers())
    m = per_class * num_classes
    cls_w = Tensor(_glorot(rng, m, num_classes, dtype), requires_grad=True)
    cls_b = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True) if bias else None
    protos = Tensor(np.zeros((m, arch.latent_dim), dtype=dtype), requires_grad=True)
    model = PreciseModel(arch, encoder, decoder, PrototypeBank(protos, per_class, num_classes),
                         cls_w, cls_b, seed=seed, norm_mean=float(norm[0]), norm_std=float(norm[1]))

    if init_images is None:
        protos.data[...] = rng.standard_normal((m, arch.latent_dim)).astype(dtype)
        return model
    labels = np.asarray(init_labels)
    flat = np.asarray(init_images, dtype=dtype).reshape(len(labels), -1)
    picks = []
    for j in range(num_classes):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            raise ValueError(f"class {j} has no samples for prototype init")
        picks.extend(rng.choice(members, size=per_class, replace=members.size < per_class))
    with ag.no_grad():
        z = encode(model, Tensor(flat[np.asarray(picks)])).data
    protos.data[...] = (z + noise * rng.standard_normal(z.shape)).astype(dtype)
    return model


def _mlp(x: Tensor, layers: list, spec: list) -> Tensor:
    for (w, b), (_, _, act) in zip(layers, spec):
        x = x @ w.T + b
        if act == "relu":
            x = ag.relu(x)
        elif act == "sigmoid":
            x = ag.sigmoid(x)
    return x


def _check_cols(x: Tensor, n: int, what: str):
    if x.data.ndim != 2 or x.shape[1] != n:
        raise ag.ShapeError(f"{what}: expected batch x {n}, got {x.shape}")


def encode(model: PreciseModel, x: Tensor) -> Tensor:
    """Raw pixels (batch x pixels, values in [0, 1]) to latent encodings."""
    _check_cols(x, model.arch.pixels, "encode")
    xn = (x - model.norm_mean) * (1.0 / model.norm_std)
    return _mlp(xn, model.encoder, model.arch.encoder_layers())


def decode(model: PreciseModel, z: Tensor) -> Tensor:
    _check_cols(z, model.arch.latent_dim, "decode")
    return _mlp(z, model.decoder, model.arch.decoder_layers())


def prototype_distances(model: PreciseModel, z: Tensor) -> Tensor:
    _check_cols(z, model.arch.latent_dim, "prototype_distances")
    return ag.euclidean_distance_rows(z, model.bank.prototypes)


def classify_log_probs(model: PreciseModel, distvec: Tensor) -> Tensor:
    _check_cols(distvec, model.bank.m, "classify")
    logits = distvec @ model.cls_weight.T
    if model.cls_bias is not None:
        logits = logits + model.cls_bias
    return ag.log_softmax(logits)


def classify(model: PreciseModel, distvec: Tensor) -> Tensor:
    return ag.exp(classify_log_probs(model, distvec))


def forward(model: PreciseModel, x: Tensor) -> ForwardOutput:
    z = encode(model, x)
    recon = decode(model, z)
    dist = prototype_distances(model, z)
    logp = classify_log_probs(model, dist)
    return ForwardOutput(recon, z, dist, ag.exp(logp), logp)


def predict(model: PreciseModel, images: np.ndarray, batch_size: int = 256) -> tuple:
    """Predicted labels and distance vectors for raw images, without recording a graph."""
    flat = np.asarray(images, dtype=model.dtype).reshape(len(images), -1)
    preds, dists = [], []
    with ag.no_grad():
        for s in range(0, len(flat), batch_size):
            out = forward(model, Tensor(flat[s:s + batch_size]))
            preds.append(np.argmax(out.probs.data, axis=1))
            dists.append(out.distances.data)
    return np.concatenate(preds), np.concatenate(dists)
