"""Loss, Adam, the epoch/step training loop, and finite-difference gradient checks."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InputError, ShapeError
from .model import Model, check_one_hot, forward

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def one_hot(labels: np.ndarray, classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InputError(f"labels must lie in [0, {classes})")
    out = np.zeros((labels.size, classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean categorical cross-entropy of (B, classes) probabilities vs one-hot rows."""
    probs = np.asarray(probs)
    check_one_hot(targets, probs.shape)
    if not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-5):
        raise InputError("probability rows must sum to 1")
    picked = probs[np.arange(probs.shape[0]), np.argmax(targets, axis=1)]
    return float(-np.mean(np.log(np.maximum(picked.astype(np.float64), PROB_FLOOR))))


# ----------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, p in params.items():
        if name not in grads:
            raise ShapeError(f"no gradient for parameter {name}")
        if grads[name].shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {grads[name].shape} != {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------- train loop


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 20
    batch_size: int = 200
    shuffle_seed: int = 0
    log_every: int = 1
    dropout_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.log_every < 1:
            raise InputError(f"log_every must be >= 1, got {self.log_every}")


def steps_per_epoch(train_size: int, batch_size: int) -> int:
    return -(-train_size // batch_size)


@dataclass
class CurvePoint:
    epoch: int
    step: int
    train_loss: float
    train_acc: float
    val_loss: float | None = None
    val_acc: float | None = None


CURVE_HEADER = ("epoch", "step", "train_loss", "train_acc", "val_loss", "val_acc")


def curves_to_csv(points: list[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for p in points:
        w.writerow(
            [p.epoch, p.step, repr(p.train_loss), repr(p.train_acc),
             "" if p.val_loss is None else repr(p.val_loss),
             "" if p.val_acc is None else repr(p.val_acc)]
        )
    return buf.getvalue()


def write_curves(points: list[CurvePoint], path: str | Path) -> None:
    Path(path).write_text(curves_to_csv(points), encoding="utf-8", newline="")


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 500):
    """(loss, accuracy, probabilities) in eval mode."""
    if len(labels) == 0:
        raise InputError("cannot evaluate on an empty set")
    probs = np.concatenate(
        [forward(model, images[i : i + batch_size]) for i in range(0, len(labels), batch_size)]
    )
    loss = cross_entropy(probs, one_hot(labels, model.class_count, probs.dtype))
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, acc, probs


def train(
    model: Model,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    schedule: TrainSchedule,
    adam: AdamState | None = None,
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
) -> tuple[Model, list[CurvePoint]]:
    """Mini-batch Adam training.

    Train metrics (loss/accuracy of the current batch, dropout active) are
    logged every ``log_every`` steps. At each epoch end one extra point
    carries the epoch-mean train metrics and, when a validation set is given,
    eval-mode validation metrics.
    """
    n = len(train_labels)
    if n == 0:
        raise InputError("training set is empty")
    if schedule.batch_size > n:
        raise InputError(f"batch_size {schedule.batch_size} exceeds training size {n}")
    adam = adam or AdamState()
    params = model.parameters()
    rng = np.random.default_rng(schedule.shuffle_seed)
    dropout_seeds = np.random.SeedSequence(schedule.dropout_seed)
    steps = steps_per_epoch(n, schedule.batch_size)
    curve: list[CurvePoint] = []
    step = 0
    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(n)
        loss_sum = correct = 0.0
        for i in range(steps):
            idx = order[i * schedule.batch_size : (i + 1) * schedule.batch_size]
            x, y = train_images[idx], train_labels[idx]
            targets = one_hot(y, model.class_count, model.dtype)
            seed = int(dropout_seeds.spawn(1)[0].generate_state(1)[0])
            probs = forward(model, x, training=True, seed=seed)
            loss = cross_entropy(probs, targets)
            hits = int(np.sum(np.argmax(probs, axis=1) == y))
            grads = model.backward(targets)
            adam_step(params, grads, adam)
            step += 1
            loss_sum += loss * len(idx)
            correct += hits
            if step % schedule.log_every == 0:
                curve.append(CurvePoint(epoch, step, loss, hits / len(idx)))
        point = CurvePoint(epoch, step, loss_sum / n, correct / n)
        if val_images is not None and val_labels is not None and len(val_labels):
            point.val_loss, point.val_acc, _ = evaluate(model, val_images, val_labels)
        curve.append(point)
        log.info(
            "epoch %d/%d steps=%d train_loss=%.4f train_acc=%.4f val_acc=%s",
            epoch, schedule.epochs, steps, point.train_loss, point.train_acc,
            "-" if point.val_acc is None else f"{point.val_acc:.4f}",
        )
    return model, curve


# --------------------------------------------------------- gradient checking


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def numeric_gradient(f: Callable[[], float], param: np.ndarray, h: float = 1e-5, entries=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``param`` (perturbed in place).

    Only ``entries`` (flat indices) are evaluated when given; the rest stay 0.
    """
    grad = np.zeros_like(param, dtype=np.float64)
    flat, gflat = param.reshape(-1), grad.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + h
        plus = f()
        flat[i] = old - h
        minus = f()
        flat[i] = old
        gflat[i] = (plus - minus) / (2 * h)
    return grad


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        lines = [f"{name:<16} {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max {self.max_error:.3e} tol {self.tolerance:.0e} {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def gradient_check(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    grad_transform: Callable[[dict], dict] | None = None,
) -> GradCheckReport:
    """Compare analytic model gradients with central differences in float64.

    The model is copied to float64 and evaluated in eval mode (dropout off).
    ``max_entries`` samples that many entries per parameter block.
    ``grad_transform`` post-processes the analytic gradients; tests use it to
    plant bugs.
    """
    m64 = model.astype(np.float64)
    x = np.asarray(images, dtype=np.float64)
    targets = one_hot(labels, m64.class_count, np.float64)

    forward(m64, x)
    analytic = m64.backward(targets)
    if grad_transform is not None:
        analytic = grad_transform(analytic)

    def loss() -> float:
        return cross_entropy(forward(m64, x), targets)

    rng = np.random.default_rng(seed)
    errors = {}
    for name, param in m64.parameters().items():
        entries = None
        if max_entries is not None and param.size > max_entries:
            entries = np.sort(rng.choice(param.size, max_entries, replace=False))
        numeric = numeric_gradient(loss, param, h, entries)
        a = analytic[name].reshape(-1)
        nflat = numeric.reshape(-1)
        if entries is not None:
            a, nflat = a[entries], nflat[entries]
        errors[name] = float(relative_error(a, nflat).max())
    return GradCheckReport(errors, tolerance)
