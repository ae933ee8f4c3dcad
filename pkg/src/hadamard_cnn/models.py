"""Network specifications and builders for the four experiment configurations."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import layers as L
from .tensor import pad2d
from .errors import ConfigurationError

DATASETS = ("mnist", "cifar10")
METHODS = ("hadamard", "convolution")
BN_POSITIONS = ("none", "pre_block", "post_block")
PRECISIONS = {"float64": np.float64, "float32": np.float32}
INPUT_SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}
NUM_CLASSES = 10


@dataclass
class ModelSpec:
    """Declarative description of one network.

    Fields left as ``None`` are filled from the dataset/depth/method defaults
    by :meth:`resolved`.
    """

    dataset: str = "mnist"
    depth: int = 1
    method: str = "hadamard"
    kernel_size: int = 3
    features_per_layer: Optional[list[int]] = None
    bn_position: Optional[str] = None
    dropout_p: Optional[list[float]] = None
    second_fc: Optional[bool] = None
    fc_hidden: int = 256
    init: str = "normal"

    def resolved(self) -> "ModelSpec":
        spec = dataclasses.replace(self)
        cifar = spec.dataset == "cifar10"
        if spec.features_per_layer is None:
            spec.features_per_layer = [32 * 2**i for i in range(spec.depth)] if cifar else [32] * spec.depth
        if spec.bn_position is None:
            spec.bn_position = "post_block" if cifar else "none"
        if spec.dropout_p is None:
            if not cifar:
                p = 0.0
            elif spec.depth == 1:
                p = 0.2 if spec.method == "hadamard" else 0.3
            else:
                p = 0.2
            spec.dropout_p = [p] * spec.depth
        if spec.second_fc is None:
            spec.second_fc = cifar and spec.depth == 3
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.depth < 1:
            raise ConfigurationError(f"depth must be >= 1, got {self.depth}")
        if self.kernel_size < 1:
            raise ConfigurationError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.features_per_layer is not None and len(self.features_per_layer) != self.depth:
            raise ConfigurationError(
                f"features_per_layer has {len(self.features_per_layer)} entries for depth {self.depth}")
        if self.dropout_p is not None:
            if len(self.dropout_p) != self.depth:
                raise ConfigurationError(f"dropout_p has {len(self.dropout_p)} entries for depth {self.depth}")
            if any(not 0.0 <= p < 1.0 for p in self.dropout_p):
                raise ConfigurationError(f"dropout probabilities must lie in [0, 1): {self.dropout_p}")
        if self.bn_position is not None and self.bn_position not in BN_POSITIONS:
            raise ConfigurationError(f"bn_position must be one of {BN_POSITIONS}, got {self.bn_position!r}")
        if self.init not in L.INIT_MODES:
            raise ConfigurationError(f"init must be one of {L.INIT_MODES}, got {self.init!r}")


@dataclass
class Hyperparams:
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 20
    seed: int = 0
    patience: int = 3
    threshold: float = 1e-3
    precision: str = "float32"
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be non-negative, got {self.epochs}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"precision must be one of {tuple(PRECISIONS)}, got {self.precision!r}")
        for name in ("train_limit", "test_limit"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigurationError(f"{name} must be positive, got {value}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def default_hyperparams(spec: ModelSpec) -> Hyperparams:
    """Learning rate, weight decay and batch size for a configuration."""
    if spec.dataset == "mnist":
        return Hyperparams(batch_size=64, lr=1e-4, weight_decay=1e-4, epochs=20)
    lr = 2e-3 if spec.depth == 3 and spec.method == "hadamard" else 1e-3
    return Hyperparams(batch_size=20, lr=lr, weight_decay=1e-4, epochs=60)


def padded_input_size(size: int, depth: int) -> int:
    """Smallest size >= ``size`` that stays even through ``depth`` halvings."""
    step = 2**depth
    return -(-size // step) * step


class PadInput(L.Module):
    """Zero-pads the input at the bottom/right so every pooling stage sees an even size."""

    def __init__(self, size: int):
        self.size = size

    def forward(self, x):
        return pad2d(x, (self.size, self.size))


def build_model(spec: ModelSpec, rng: Optional[np.random.Generator] = None, dtype=np.float64) -> L.Sequential:
    """Assemble ``[extract -> (BN) -> ReLU -> maxpool -> (dropout)] x depth -> dense`` for ``spec``."""
    spec = spec.resolved()
    rng = rng if rng is not None else np.random.default_rng(0)
    channels, height, width = INPUT_SHAPES[spec.dataset]
    blocks: list[L.Module] = []
    size = padded_input_size(height, spec.depth)
    if size != height:
        blocks.append(PadInput(size))
    for i, out in enumerate(spec.features_per_layer):
        if spec.bn_position == "pre_block":
            blocks.append(L.BatchNorm2d(channels, dtype=dtype))
        if spec.method == "hadamard":
            blocks.append(L.HadamardLayer(channels, out, spec.kernel_size, (size, size), rng, spec.init, dtype))
        else:
            blocks.append(L.ConvLayer(channels, out, spec.kernel_size, rng, spec.init, dtype))
        if spec.bn_position == "post_block":
            blocks.append(L.BatchNorm2d(out, dtype=dtype))
        blocks += [L.ReLU(), L.MaxPool2()]
        if spec.dropout_p[i] > 0:
            blocks.append(L.Dropout(spec.dropout_p[i], rng))
        channels, size = out, size // 2
    blocks.append(L.Flatten())
    flat = channels * size * size
    if spec.second_fc:
        blocks += [L.DenseLayer(flat, spec.fc_hidden, rng, spec.init, dtype), L.ReLU()]
        if spec.dropout_p[-1] > 0:
            blocks.append(L.Dropout(spec.dropout_p[-1], rng))
        flat = spec.fc_hidden
    blocks.append(L.DenseLayer(flat, NUM_CLASSES, rng, spec.init, dtype))
    return L.Sequential(*blocks)


def count_parameters(model: L.Module) -> int:
    return model.num_parameters()


# ------------------------------------------------------ flat config files


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return ",".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_value(field_type: str, text: str):
    text = text.strip()
    if text == "" and "Optional" in field_type:
        return None
    if "list[int]" in field_type:
        return [int(v) for v in text.split(",") if v.strip()]
    if "list[float]" in field_type:
        return [float(v) for v in text.split(",") if v.strip()]
    if "bool" in field_type:
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigurationError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "1", "yes")
    if "int" in field_type:
        return int(text)
    if "float" in field_type:
        return float(text)
    return text


def config_fields() -> dict[str, tuple[type, str]]:
    """Map every config key to its owning dataclass and annotated type."""
    out = {}
    for cls in (ModelSpec, Hyperparams):
        for f in dataclasses.fields(cls):
            out[f.name] = (cls, str(f.type))
    return out


def to_config_text(spec: ModelSpec, hp: Hyperparams) -> str:
    lines = [f"{f.name} = {_format(getattr(obj, f.name))}"
             for obj in (spec, hp) for f in dataclasses.fields(obj)]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, object]:
    """Parse ``key = value`` lines (``#`` comments allowed) into typed values."""
    known = config_fields()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = parse_value(known[key][1], value)
        except ValueError as exc:
            raise ConfigurationError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return values


def from_config_values(values: dict[str, object], base_spec: Optional[ModelSpec] = None,
                       base_hp: Optional[Hyperparams] = None) -> tuple[ModelSpec, Hyperparams]:
    known = config_fields()
    spec_kw = {k: v for k, v in values.items() if known[k][0] is ModelSpec}
    hp_kw = {k: v for k, v in values.items() if known[k][0] is Hyperparams}
    spec = dataclasses.replace(base_spec or ModelSpec(), **spec_kw)
    hp = dataclasses.replace(base_hp or default_hyperparams(spec), **hp_kw)
    return spec, hp


def save_config(path, spec: ModelSpec, hp: Hyperparams) -> None:
    Path(path).write_text(to_config_text(spec, hp))


def load_config(path) -> tuple[ModelSpec, Hyperparams]:
    return from_config_values(parse_config_text(Path(path).read_text()))
