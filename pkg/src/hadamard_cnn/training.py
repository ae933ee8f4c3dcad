"""Adam with decoupled weight decay, plateau LR decay, training loop, checkpoints."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .datasets import DatasetHandle, batches
from .errors import DimensionError, DivergenceError
from .layers import Module, Sequential
from .tensor import Tensor, backward, no_grad, softmax_cross_entropy

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "lr")


class Adam:
    """Bias-corrected Adam; weight decay shrinks parameters by ``lr * wd`` each step."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.names = [name for name, _ in params]
        self.params = [p for _, p in params]
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self)


def adam_step(state: Adam) -> None:
    for name, p in zip(state.names, state.params):
        if p.grad is None or p.grad.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {None if p.grad is None else p.grad.shape}, "
                                 f"parameter has {p.shape}")
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
            raise DivergenceError(f"non-finite gradient in {name} ({bad} of {p.grad.size} entries)")
    state.step_count += 1
    t = state.step_count
    b1, b2, lr = state.beta1, state.beta2, state.lr
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(state.params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


class PlateauScheduler:
    """Divide the learning rate by 10 after ``patience`` epochs without relative improvement."""

    def __init__(self, optimizer: Adam, factor: float = 0.1, patience: int = 3, threshold: float = 1e-3):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, epoch_loss: float) -> float:
        return scheduler_step(self, epoch_loss)


def scheduler_step(sched: PlateauScheduler, epoch_loss: float) -> float:
    if epoch_loss < sched.best * (1.0 - sched.threshold):
        sched.best = epoch_loss
        sched.bad_epochs = 0
    else:
        sched.bad_epochs += 1
        if sched.bad_epochs >= sched.patience:
            sched.optimizer.lr *= sched.factor
            sched.bad_epochs = 0
            logger.info("plateau: learning rate reduced to %g", sched.optimizer.lr)
    return sched.optimizer.lr


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    lr: float


@dataclass
class TrainReport:
    config: dict
    seed: int
    epochs: list[EpochMetrics] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_test_acc(self) -> Optional[float]:
        return self.epochs[-1].test_acc if self.epochs else None

    @property
    def best_epoch(self) -> Optional[EpochMetrics]:
        return max(self.epochs, key=lambda e: e.test_acc) if self.epochs else None

    @property
    def best_test_acc(self) -> Optional[float]:
        return self.best_epoch.test_acc if self.epochs else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for e in self.epochs:
            writer.writerow([e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.test_acc), repr(e.lr)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def summary(self) -> str:
        if not self.epochs:
            return f"no epochs run; seed={self.seed}"
        best = self.best_epoch
        return (f"final_test_acc={self.final_test_acc:.4f} best_test_acc={best.test_acc:.4f} "
                f"(epoch {best.epoch}) epochs={len(self.epochs)} seed={self.seed} "
                f"wall_time={self.wall_time:.1f}s")


def evaluate(model: Module, images: np.ndarray, labels: np.ndarray, batch_size: int = 500,
             dtype=None) -> float:
    """Fraction of examples whose highest logit is the true class."""
    if len(labels) == 0:
        return 0.0
    was_training = model.training
    model.eval()
    correct = 0
    with no_grad():
        for x, y in batches(images, labels, batch_size):
            logits = model(Tensor(x, dtype=dtype or x.dtype))
            correct += int((logits.data.argmax(axis=1) == y).sum())
    model.train(was_training)
    return correct / len(labels)


def snapshot(model: Sequential) -> dict[str, np.ndarray]:
    state = {name: p.data.copy() for name, p in model.named_parameters()}
    state.update({name: buf.copy() for name, buf in model.buffers()})
    return state


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    """Write named arrays to an ``.npz`` container (shapes and dtypes are stored with them)."""
    with open(path, "wb") as f:
        np.savez(f, **state)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def restore(model: Sequential, state: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    for name, value in state.items():
        if name in params:
            if params[name].shape != value.shape:
                raise DimensionError(f"checkpoint {name} has shape {value.shape}, model expects {params[name].shape}")
            params[name].data = value.astype(params[name].dtype).copy()
    for i, block in enumerate(model):
        key = f"{i}.running_mean"
        if key in state:
            block.state.running_mean = state[key].copy()
            block.state.running_var = state[f"{i}.running_var"].copy()


def train(model: Sequential, dataset: DatasetHandle, hp, config: Optional[dict] = None,
          checkpoint_path=None, on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> TrainReport:
    """Train with shuffled mini-batches, recording train/test metrics per epoch.

    Test accuracy is measured in eval mode after each epoch and never feeds
    back into training. The parameters of the best-test-accuracy epoch are
    written to ``checkpoint_path`` when given.
    """
    hp.validate()
    report = TrainReport(config=dict(config or {}), seed=hp.seed)
    if hp.epochs == 0:
        return report
    dtype = hp.dtype
    train_x, train_y = dataset.images("train"), dataset.labels("train")
    test_x, test_y = dataset.images("test"), dataset.labels("test")
    optimizer = Adam(list(model.named_parameters()), hp.lr, hp.weight_decay)
    scheduler = PlateauScheduler(optimizer, patience=hp.patience, threshold=hp.threshold)
    shuffle_rng = np.random.default_rng([hp.seed, 1])
    best_acc, best_state = -1.0, None
    start = time.perf_counter()
    for epoch in range(1, hp.epochs + 1):
        model.train()
        total_loss, correct, seen = 0.0, 0, 0
        for x, y in batches(train_x, train_y, hp.batch_size, shuffle_rng):
            if len(y) < 2:
                continue  # batch norm needs two samples; a size-1 tail batch is skipped
            optimizer.zero_grad()
            logits = model(Tensor(x, dtype=dtype))
            loss = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss.item()):
                report.wall_time = time.perf_counter() - start
                raise DivergenceError(f"loss became {loss.item()} in epoch {epoch}", report)
            backward(loss)
            try:
                optimizer.step()
            except DivergenceError as exc:
                report.wall_time = time.perf_counter() - start
                raise DivergenceError(f"epoch {epoch}: {exc}", report) from exc
            total_loss += loss.item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        train_loss = total_loss / max(seen, 1)
        lr_used = optimizer.lr
        test_acc = evaluate(model, test_x, test_y, dtype=dtype)
        metrics = EpochMetrics(epoch, train_loss, correct / max(seen, 1), test_acc, lr_used)
        report.epochs.append(metrics)
        logger.info("epoch %d loss=%.4f train_acc=%.4f test_acc=%.4f lr=%g",
                    epoch, train_loss, metrics.train_acc, test_acc, lr_used)
        if on_epoch is not None:
            on_epoch(metrics)
        if test_acc > best_acc:
            best_acc, best_state = test_acc, snapshot(model)
        scheduler.step(train_loss)
    report.wall_time = time.perf_counter() - start
    if checkpoint_path is not None and best_state is not None:
        save_checkpoint(checkpoint_path, best_state)
    return report
