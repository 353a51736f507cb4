"""Command-line entry point.

Subcommands: train, eval, explain, sweep-subsets, sweep-prototypes,
gen-synthetic, gradcheck. Every config key can be set in a ``--config``
file or overridden as ``--key value``.

Exit codes: 0 ok, 1 gradcheck failure, 2 config error, 3 data error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import DataError, LabeledDataset, SubsetSpec, gen_synthetic, load_manifest, save_manifest, stratified_subset
from .experiment import LOSS_KEYS, TrainingDiverged, evaluate, sweep_prototypes, sweep_subsets, train
from .explain import (class_average_distances, distance_report, export_prototypes,
                      write_class_average_csv)
from .gradcheck import run_gradcheck
from .pgm import PGMError, read_pgm

logger = logging.getLogger("precise")

COMMANDS = ("train", "eval", "explain", "sweep-subsets", "sweep-prototypes", "gen-synthetic", "gradcheck")
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _parse(argv):
    parser = argparse.ArgumentParser(prog="precise", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--out", default=None, help="output directory (default runs/<command>)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    overrides = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument '{tok}'")
        key, eq, val = tok[2:].partition("=")
        key = cfgmod.normalize_key(key)
        if not eq:
            if i + 1 >= len(rest):
                raise ConfigError(f"missing value for '--{tok[2:]}'")
            val = rest[i + 1]
            i += 1
        overrides[key] = cfgmod.parse_value(key, val)
        i += 1
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    file_values = cfgmod.read_config_file(args.config) if args.config else {}
    cfg = cfgmod.resolve(file_values, overrides)
    out = args.out or os.path.join("runs", args.command)
    return args, cfg, out


# ---- data helpers ---------------------------------------------------------

def load_data(cfg: dict) -> tuple:
    """(train, test) datasets for the configured source."""
    if cfg["data"] == "synth":
        n_train = cfg["n_per_class"]
        n_test = cfg["test_n_per_class"] or n_train
        train_ds = gen_synthetic(n_train, cfg["side"], seed=cfg["data_seed"])
        test_ds = gen_synthetic(n_test, cfg["side"], seed=cfg["data_seed"] + 1)
        return train_ds, test_ds
    train_ds = load_manifest(cfg["data"])
    if cfg["test_data"]:
        test_ds = load_manifest(cfg["test_data"])
    else:
        logger.warning("no test_data given; evaluating on the training manifest")
        test_ds = train_ds
    return train_ds, test_ds


def _write_metrics(path, reports, num_classes):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "accuracy", "macro_f1", *[f"acc_class_{j}" for j in range(num_classes)]])
        for rep in reports:
            w.writerow([rep.seed, *["" if v is None else repr(float(v)) for v in rep.row()]])


def _echo(cfg, out, command):
    cfg = dict(cfg)
    cfgmod.write_config(cfg, os.path.join(out, "config.txt"))
    logger.info("%s: effective config written to %s", command, os.path.join(out, "config.txt"))


# ---- subcommands ----------------------------------------------------------

def cmd_train(cfg, out):
    tc = cfgmod.train_config(cfg)
    train_ds, test_ds = load_data(cfg)
    if tc.fraction < 1.0:
        train_ds = stratified_subset(train_ds, SubsetSpec(tc.fraction, tc.seed))
    os.makedirs(out, exist_ok=True)
    _echo(cfg, out, "train")
    res = train(train_ds, tc, seed=tc.seed)
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(res.model, ckpt)
    with open(os.path.join(out, "loss_history.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", *LOSS_KEYS])
        for row in res.history:
            w.writerow([row["epoch"], *[repr(row[k]) for k in LOSS_KEYS]])
    rep = evaluate(res.model, test_ds, seed=tc.seed)
    _write_metrics(os.path.join(out, "metrics.csv"), [rep], test_ds.num_classes)
    print(f"accuracy={rep.accuracy:.4f} macro_f1={rep.macro_f1:.4f} class_accuracy={rep.class_accuracy}")
    print(f"checkpoint: {ckpt}")
    return 0


def _require_checkpoint(cfg):
    if not cfg["checkpoint"]:
        raise ConfigError("'checkpoint' is required")
    if not os.path.isfile(cfg["checkpoint"]):
        raise DataError(f"checkpoint not found: {cfg['checkpoint']}")
    return load_checkpoint(cfg["checkpoint"])


def cmd_eval(cfg, out):
    model = _require_checkpoint(cfg)
    _, test_ds = load_data(cfg)
    os.makedirs(out, exist_ok=True)
    _echo(cfg, out, "eval")
    rep = evaluate(model, test_ds, seed=model.seed)
    _write_metrics(os.path.join(out, "metrics.csv"), [rep], test_ds.num_classes)
    print(f"accuracy={rep.accuracy:.4f} macro_f1={rep.macro_f1:.4f} class_accuracy={rep.class_accuracy}")
    return 0


def _load_queries(paths, num_classes) -> LabeledDataset:
    imgs = []
    for p in paths:
        if not os.path.isfile(p):
            raise DataError(f"missing query image: {p}")
        imgs.append(read_pgm(p).astype(np.float64) / 255.0)
    if len({im.shape for im in imgs}) > 1:
        raise DataError("query images differ in size")
    # labels are unknown for ad-hoc queries; 0 is a placeholder and is never reported
    return LabeledDataset(np.stack(imgs), np.zeros(len(imgs), dtype=np.int64), num_classes,
                          "manifest", tuple(paths))


def cmd_explain(cfg, out):
    model = _require_checkpoint(cfg)
    _, test_ds = load_data(cfg)
    os.makedirs(out, exist_ok=True)
    _echo(cfg, out, "explain")
    files = export_prototypes(model, os.path.join(out, "prototypes"))
    queries = _load_queries(cfg["queries"], model.num_classes) if cfg["queries"] else test_ds
    report = distance_report(model, queries)
    report.prototype_files = files
    report.to_csv(os.path.join(out, "distances.csv"))
    matrix = class_average_distances(model, test_ds)
    write_class_average_csv(matrix, os.path.join(out, "class_average.csv"))
    print(f"{len(files)} prototype images, {len(report.names)} query rows written to {out}")
    return 0


def cmd_sweep(cfg, out, which):
    tc = cfgmod.train_config(cfg)
    train_ds, test_ds = load_data(cfg)
    os.makedirs(out, exist_ok=True)
    _echo(cfg, out, which)
    if which == "sweep-subsets":
        table = sweep_subsets(tc, train_ds, test_ds, cfg["fractions"], workers=cfg["workers"])
        path = os.path.join(out, "sweep_subsets.csv")
    else:
        table = sweep_prototypes(tc, train_ds, test_ds, cfg["d_values"], workers=cfg["workers"])
        path = os.path.join(out, "sweep_prototypes.csv")
    text = table.to_csv(path)
    print(text, end="")
    return 0


def cmd_gen_synthetic(cfg, out):
    train_ds, test_ds = load_data(dict(cfg, data="synth"))
    _echo(cfg, out, "gen-synthetic")
    tr = save_manifest(train_ds, os.path.join(out, "train"))
    te = save_manifest(test_ds, os.path.join(out, "test"))
    print(f"train manifest: {tr}\ntest manifest: {te}")
    return 0


def cmd_gradcheck(cfg, out):
    os.makedirs(out, exist_ok=True)
    _echo(cfg, out, "gradcheck")
    report = run_gradcheck(seed=cfg["seed"])
    lines = report.lines()
    with open(os.path.join(out, "gradcheck.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if report.passed else 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, cfg, out = _parse(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "explain": cmd_explain,
        "sweep-subsets": lambda c, o: cmd_sweep(c, o, "sweep-subsets"),
        "sweep-prototypes": lambda c, o: cmd_sweep(c, o, "sweep-prototypes"),
        "gen-synthetic": cmd_gen_synthetic,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PGMError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
