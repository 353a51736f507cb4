"""Checkpoint files.

Layout::

    PRECISEv1
    param <name> <extent,extent,...> <bytes-per-scalar>
    ...
    end
    <little-endian raw buffers, in header order>
    key=value lines (lambdas, d, N, architecture, normalization)
"""

from __future__ import annotations

import os

import numpy as np

from .autograd import Tensor
from .model import ArchSpec, PreciseModel, PrototypeBank

MAGIC = b"PRECISEv1\n"
_WIDTH = {4: "<f4", 8: "<f8"}


class CheckpointError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def model_metadata(model: PreciseModel) -> dict:
    arch = model.arch
    meta = {
        "d": model.bank.per_class,
        "num_classes": model.num_classes,
        "image_shape": f"{arch.image_shape[0]}x{arch.image_shape[1]}",
        "hidden": arch.hidden,
        "latent_dim": arch.latent_dim,
        "hidden_activation": arch.hidden_activation,
        "bias": model.cls_bias is not None,
        "seed": model.seed,
        "norm_mean": float(model.norm_mean),
        "norm_std": float(model.norm_std),
    }
    for k, v in sorted(model.meta.items()):
        meta.setdefault(k, v)
    return meta


def dumps(model: PreciseModel) -> bytes:
    header, raw = [MAGIC], []
    for name, p in model.named_parameters():
        width = p.data.dtype.itemsize
        if width not in _WIDTH:
            raise CheckpointError(f"unsupported scalar width for {name}")
        shape = ",".join(str(s) for s in p.shape)
        header.append(f"param {name} {shape} {width}\n".encode())
        raw.append(np.ascontiguousarray(p.data, dtype=_WIDTH[width]).tobytes())
    header.append(b"end\n")
    meta = "".join(f"{k}={_fmt(v)}\n" for k, v in model_metadata(model).items())
    return b"".join(header) + b"".join(raw) + meta.encode()


def save_checkpoint(model: PreciseModel, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(dumps(model))


def _parse_meta(text: str) -> dict:
    meta = {}
    for line in text.splitlines():
        if line.strip():
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"bad metadata line: {line!r}")
            meta[key] = value
    return meta


def loads(blob: bytes) -> PreciseModel:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a PRECISEv1 checkpoint")
    pos = len(MAGIC)
    entries = []
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError("truncated header")
        line = blob[pos:nl].decode()
        pos = nl + 1
        if line == "end":
            break
        parts = line.split(" ")
        if len(parts) != 4 or parts[0] != "param":
            raise CheckpointError(f"bad header line: {line!r}")
        shape = tuple(int(s) for s in parts[2].split(","))
        entries.append((parts[1], shape, int(parts[3])))
    arrays = {}
    for name, shape, width in entries:
        nbytes = int(np.prod(shape)) * width
        chunk = blob[pos:pos + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated buffer for {name}")
        dt = np.dtype(_WIDTH[width])
        arrays[name] = np.frombuffer(chunk, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
    meta = _parse_meta(blob[pos:].decode())

    h, w = (int(s) for s in meta["image_shape"].split("x"))
    hidden = tuple(int(s) for s in meta["hidden"].split(",") if s)
    arch = ArchSpec((h, w), hidden, int(meta["latent_dim"]), meta["hidden_activation"])

    def t(name):
        return Tensor(arrays[name], requires_grad=True)

    encoder = [(t(f"encoder.{i}.weight"), t(f"encoder.{i}.bias")) for i in range(len(hidden) + 1)]
    decoder = [(t(f"decoder.{i}.weight"), t(f"decoder.{i}.bias")) for i in range(len(hidden) + 1)]
    bank = PrototypeBank(t("prototypes"), int(meta["d"]), int(meta["num_classes"]))
    bias = t("classifier.bias") if meta["bias"] == "true" else None
    known = {"d", "num_classes", "image_shape", "hidden", "latent_dim", "hidden_activation",
             "bias", "seed", "norm_mean", "norm_std"}
    extras = {k: v for k, v in meta.items() if k not in known}
    return PreciseModel(arch, encoder, decoder, bank, t("classifier.weight"), bias,
                        seed=int(meta["seed"]), norm_mean=float(meta["norm_mean"]),
                        norm_std=float(meta["norm_std"]), meta=extras)


def load_checkpoint(path) -> PreciseModel:
    with open(path, "rb") as f:
        return loads(f.read())
