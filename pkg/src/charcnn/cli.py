"""Command-line entry point: prepare, train, eval, predict, gradcheck."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import load_config
from .dataset import (
    LabeledDataset,
    default_label_map,
    preprocess,
    quantize,
    read_idx_images,
    read_idx_labels,
    read_label_map,
    read_pgm,
    split,
    write_idx,
)
from .errors import CharCNNError, CompatibilityError, InputError
from .metrics import (
    evaluate_predictions,
    write_auc_summary,
    write_class_metrics,
    write_confusion,
    write_predictions,
    write_roc,
)
from .model import build
from .training import evaluate, gradient_check, train, write_curves

log = logging.getLogger("charcnn")

IMAGES_FILE = "images.idx"
LABELS_FILE = "labels.idx"
SPLIT_FILE = "split.json"
CHECKPOINT_FILE = "model.htrc"
CURVES_FILE = "curves.csv"


def _single_thread():
    """Pin BLAS to one thread so reductions run in a fixed order."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def _label_map(path, classes: int) -> list[str]:
    return read_label_map(path, classes) if path else default_label_map(classes)


def _check_labels(labels: np.ndarray, classes: int, source) -> None:
    if labels.size and int(labels.max()) >= classes:
        raise InputError(f"{source}: label {int(labels.max())} outside the {classes}-class map")


# ----------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    raw = read_idx_images(args.images)
    labels = read_idx_labels(args.labels)
    if len(raw) != len(labels):
        raise InputError(f"{args.images} has {len(raw)} images but {args.labels} has {len(labels)} labels")
    _check_labels(labels, args.classes, args.labels)
    images = preprocess(raw, args.size, args.invert)
    parts = split(len(labels), args.ratio, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(quantize(images), out / IMAGES_FILE)
    write_idx(np.asarray(labels, dtype=np.uint8), out / LABELS_FILE)
    (out / SPLIT_FILE).write_text(
        json.dumps({"seed": parts.seed, "train": parts.train.tolist(), "test": parts.test.tolist()}),
        encoding="utf-8",
    )
    print(f"N={len(labels)} train={len(parts.train)} test={len(parts.test)}")
    return 0


def _load_prepared(cfg) -> tuple[LabeledDataset, np.ndarray, np.ndarray]:
    if cfg.data is None:
        raise InputError(f"{cfg.source}: config needs a 'data' key pointing at a prepared directory")
    data = Path(cfg.data)
    raw = read_idx_images(data / IMAGES_FILE)
    labels = read_idx_labels(data / LABELS_FILE)
    parts = json.loads((data / SPLIT_FILE).read_text(encoding="utf-8"))
    label_map = _label_map(cfg.label_map, cfg.classes)
    _check_labels(labels, cfg.classes, data / LABELS_FILE)
    dataset = LabeledDataset(preprocess(raw, cfg.input_size), labels, label_map)
    train_idx = np.asarray(parts["train"], dtype=np.int64)[: cfg.train_limit]
    val_idx = np.asarray(parts["test"], dtype=np.int64)[: cfg.val_limit]
    return dataset, train_idx, val_idx


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    deterministic = args.deterministic or cfg.deterministic
    dataset, train_idx, val_idx = _load_prepared(cfg)
    model = build(cfg.model_config(), seed=cfg.init_seed)
    with _single_thread() if deterministic else contextlib.nullcontext():
        model, curve = train(
            model,
            dataset.images[train_idx],
            dataset.labels[train_idx],
            cfg.schedule(),
            cfg.adam(),
            dataset.images[val_idx],
            dataset.labels[val_idx],
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(model, out / CHECKPOINT_FILE)
    write_curves(curve, out / CURVES_FILE)
    last = curve[-1]
    print(f"epochs={cfg.epochs} steps={last.step} train_loss={last.train_loss:.4f} "
          f"train_acc={last.train_acc:.4f}"
          + ("" if last.val_acc is None else f" val_loss={last.val_loss:.4f} val_acc={last.val_acc:.4f}"))
    print(f"checkpoint={out / CHECKPOINT_FILE} curves={out / CURVES_FILE}")
    return 0


def cmd_eval(args) -> int:
    model = checkpoint.load(args.checkpoint)
    size = model.config.input[1]
    raw = read_idx_images(args.images)
    labels = read_idx_labels(args.labels).astype(np.int64)
    if len(raw) != len(labels):
        raise InputError(f"{args.images} has {len(raw)} images but {args.labels} has {len(labels)} labels")
    if labels.size and int(labels.max()) >= model.class_count:
        raise CompatibilityError(
            f"{args.labels}: label {int(labels.max())} does not fit the "
            f"{model.class_count}-class checkpoint {args.checkpoint}"
        )
    label_map = _label_map(args.label_map, model.class_count)
    images = preprocess(raw, size, args.invert)
    loss, acc, probs = evaluate(model, images, labels)
    report = evaluate_predictions(probs, labels)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.csv", probs, labels)
    write_confusion(out / "confusion.csv", report.matrix, label_map)
    write_roc(out / "roc", report)
    write_auc_summary(out / "auc.csv", report, label_map)
    write_class_metrics(out / "class_metrics.csv", report, label_map)
    print(f"accuracy={acc:.4f} loss={loss:.4f} samples={len(labels)}")
    return 0


def cmd_predict(args) -> int:
    if args.topk < 1:
        raise InputError(f"--topk must be >= 1, got {args.topk}")
    model = checkpoint.load(args.checkpoint)
    label_map = _label_map(args.label_map, model.class_count)
    image = preprocess(read_pgm(args.image), model.config.input[1], args.invert)
    probs = model.forward(image)[0]
    order = np.argsort(-probs, kind="stable")[: args.topk]
    print(label_map[order[0]])
    for c in order:
        print(f"{label_map[c]}:{float(probs[c]):.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    model = build(cfg.model_config(), seed=cfg.init_seed)
    rng = np.random.default_rng(cfg.init_seed)
    x = rng.random((cfg.gradcheck_samples, *model.config.input))
    y = rng.integers(0, cfg.classes, cfg.gradcheck_samples)
    report = gradient_check(
        model, x, y,
        tolerance=cfg.gradcheck_tolerance,
        max_entries=cfg.gradcheck_max_entries,
        seed=cfg.init_seed,
    )
    print(report)
    return 0 if report.passed else 1


# --------------------------------------------------------------------- main


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="charcnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="preprocess raw IDX files and split them")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--invert", action="store_true", help="convert white background to black")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--ratio", type=float, default=0.7, help="training fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=47)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write metric CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--invert", action="store_true")
    p.add_argument("--label-map")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single P5 PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--invert", action="store_true")
    p.add_argument("--label-map")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of a config's model")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CharCNNError, OSError, json.JSONDecodeError) as exc:
        print(f"charcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
