"""Flat ``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys are errors. All
problems in a file are collected and reported together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import AdamState, TrainSchedule


def _blocks(text: str) -> tuple[tuple[int, int], ...]:
    """``8x5,16x3`` -> ((8, 5), (16, 3)); empty string -> ()."""
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        filters, _, ksize = item.lower().partition("x")
        out.append((int(filters), int(ksize)))
    return tuple(out)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    data: Path | None = None
    label_map: Path | None = None
    channels: int = 1
    input_size: int = 32
    conv_blocks: tuple[tuple[int, int], ...] = ((8, 5), (16, 3), (32, 3))
    dense_units: tuple[int, ...] = (64,)
    dropout_p: float = 0.5
    classes: int = 47
    epochs: int = 20
    batch_size: int = 200
    shuffle_seed: int = 0
    init_seed: int = 0
    dropout_seed: int = 0
    log_every: int = 1
    train_limit: int | None = None
    val_limit: int | None = None
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    invert: bool = False
    deterministic: bool = False
    gradcheck_samples: int = 2
    gradcheck_max_entries: int | None = 20
    gradcheck_tolerance: float = 1e-4
    source: Path | None = field(default=None, repr=False)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input=(self.channels, self.input_size, self.input_size),
            conv_blocks=self.conv_blocks,
            dense_units=self.dense_units,
            dropout_p=self.dropout_p,
            classes=self.classes,
        )

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(
            epochs=self.epochs,
            batch_size=self.batch_size,
            shuffle_seed=self.shuffle_seed,
            log_every=self.log_every,
            dropout_seed=self.dropout_seed,
        )

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)


_PARSERS = {
    "data": Path,
    "label_map": Path,
    "channels": int,
    "input_size": int,
    "conv_blocks": _blocks,
    "dense_units": _ints,
    "dropout_p": float,
    "classes": int,
    "epochs": int,
    "batch_size": int,
    "shuffle_seed": int,
    "init_seed": int,
    "dropout_seed": int,
    "log_every": int,
    "train_limit": int,
    "val_limit": int,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "invert": _bool,
    "deterministic": _bool,
    "gradcheck_samples": int,
    "gradcheck_max_entries": int,
    "gradcheck_tolerance": float,
}

KEYS = tuple(_PARSERS)


def _range_problems(cfg: RunConfig) -> list[str]:
    checks = [
        ("epochs", cfg.epochs >= 1, "must be >= 1"),
        ("batch_size", cfg.batch_size >= 1, "must be >= 1"),
        ("log_every", cfg.log_every >= 1, "must be >= 1"),
        ("classes", cfg.classes >= 2, "must be >= 2"),
        ("channels", cfg.channels >= 1, "must be >= 1"),
        ("input_size", cfg.input_size >= 1, "must be >= 1"),
        ("dropout_p", 0.0 <= cfg.dropout_p < 1.0, "must be in [0, 1)"),
        ("lr", cfg.lr >= 0, "must be >= 0"),
        ("beta1", 0.0 <= cfg.beta1 < 1.0, "must be in [0, 1)"),
        ("beta2", 0.0 <= cfg.beta2 < 1.0, "must be in [0, 1)"),
        ("epsilon", cfg.epsilon > 0, "must be > 0"),
        ("gradcheck_samples", cfg.gradcheck_samples >= 1, "must be >= 1"),
        ("train_limit", cfg.train_limit is None or cfg.train_limit >= 1, "must be >= 1"),
        ("val_limit", cfg.val_limit is None or cfg.val_limit >= 0, "must be >= 0"),
    ]
    problems = [f"{key}: {msg}" for key, ok, msg in checks if not ok]
    try:
        cfg.model_config().validate()
    except ConfigError as exc:
        problems.append(f"conv_blocks/dense_units: {exc}")
    return problems


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values, problems = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        elif key not in _PARSERS:
            problems.append(f"line {lineno}: unknown key {key!r}")
        elif key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        else:
            try:
                values[key] = _PARSERS[key](value)
            except ValueError as exc:
                problems.append(f"line {lineno}: bad value for {key!r}: {exc}")
    cfg = RunConfig(**values)
    problems += _range_problems(cfg)
    if problems:
        raise ConfigError(f"{source}: invalid config:\n  " + "\n  ".join(problems))
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), str(path))
    base = path.parent
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in ("data", "label_map") and value is not None and not value.is_absolute():
            setattr(cfg, f.name, base / value)
    cfg.source = path
    return cfg
