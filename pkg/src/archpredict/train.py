"""Training, finetuning and evaluation loops."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import AdamState, ContractError, NonFiniteError, Tape, Tensor
from .data import Dataset
from .metrics import MetricsReport, report
from .model import Model, Prepared, load_checkpoint

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "train_loss", "eval_mape", "eval_acc10", "eval_tau"]


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # cosine decay of the learning rate to lr * lr_floor over all epochs
    cosine: bool = True
    lr_floor: float = 0.05
    init_head_bias: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Model
    log: list[dict] = field(default_factory=list)


def _raw_targets(model: Model, ds: Dataset) -> np.ndarray:
    t = ds.targets()
    return np.log(t) if model.config.task == "latency" else t


def prepare_dataset(model: Model, ds: Dataset) -> list[Prepared]:
    return [model.prepare(s.graph, s.platform) for s in ds.samples]


def predict_dataset(
    model: Model, ds: Dataset, batch_size: int = 64, threads: int = 1,
    prepared: Sequence[Prepared] | None = None,
) -> np.ndarray:
    items = list(prepared) if prepared is not None else prepare_dataset(model, ds)
    if threads <= 1:
        return model.predict_prepared(items, batch_size)
    chunks = [items[i : i + batch_size] for i in range(0, len(items), batch_size)]
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda c: model.predict_prepared(c, batch_size), chunks))
    return np.concatenate(parts)


def evaluate(
    model: Model, ds: Dataset, threads: int = 1, prepared: Sequence[Prepared] | None = None
) -> MetricsReport:
    preds = predict_dataset(model, ds, threads=threads, prepared=prepared)
    return report(preds, ds.targets(), [s.family for s in ds.samples])


def _write_log(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, LOG_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in LOG_HEADER})


def train(
    model: Model,
    train_ds: Dataset,
    hyper: TrainConfig,
    eval_ds: Dataset | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Mini-batch Adam on mean squared error of the raw head output."""
    if len(train_ds) == 0:
        raise ContractError("empty training set")
    items = prepare_dataset(model, train_ds)
    eval_items = prepare_dataset(model, eval_ds) if eval_ds is not None and len(eval_ds) else None
    y = _raw_targets(model, train_ds)
    params = model.trainable_params()
    if hyper.init_head_bias and "head.b2" in params:
        params["head.b2"].data = np.array([float(np.mean(y))])
    state = AdamState(hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
    rng = np.random.default_rng(hyper.seed)
    rows: list[dict] = []
    n = len(items)
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total = max(1, hyper.epochs * steps_per_epoch)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            if hyper.cosine:
                frac = state.step / total
                scale = hyper.lr_floor + (1 - hyper.lr_floor) * 0.5 * (1 + math.cos(math.pi * frac))
                state.lr = hyper.lr * scale
            try:
                with Tape() as tape:
                    batch = model.collate([items[i] for i in idx])
                    out = model.forward_batch(batch)
                    loss = ag.square(out - Tensor(y[idx])).mean()
                grads = tape.backward(loss)
            except NonFiniteError as exc:
                raise TrainingError(str(exc), epoch) from exc
            lv = loss.item()
            if not math.isfinite(lv):
                raise TrainingError("loss is not finite", epoch)
            total_loss += lv * len(idx)
            named = {k: grads[p] for k, p in params.items() if p in grads}
            try:
                ag.adam_step(params, named, state)
            except NonFiniteError as exc:
                raise TrainingError(str(exc), epoch) from exc
        row = {"epoch": epoch, "train_loss": total_loss / n,
               "eval_mape": None, "eval_acc10": None, "eval_tau": None}
        if eval_items is not None:
            r = evaluate(model, eval_ds, prepared=eval_items)
            row.update(eval_mape=r.mape_pct, eval_acc10=r.acc_at_10_pct, eval_tau=r.kendall_tau)
        log.info("epoch %d loss %.6f eval_mape %s", epoch, row["train_loss"], row["eval_mape"])
        rows.append(row)
    if log_path is not None:
        _write_log(rows, Path(log_path))
    return TrainResult(model, rows)


def finetune(
    checkpoint: str | Path | Model,
    finetune_ds: Dataset,
    hyper: TrainConfig | None = None,
    eval_ds: Dataset | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Continue training from a checkpoint with a lower default learning rate."""
    hyper = hyper or TrainConfig(lr=1e-4, epochs=10)
    model = checkpoint if isinstance(checkpoint, Model) else load_checkpoint(checkpoint)
    hyper = TrainConfig(**{**hyper.to_dict(), "init_head_bias": False})
    if hyper.epochs == 0:
        if log_path is not None:
            _write_log([], Path(log_path))
        return TrainResult(model, [])
    return train(model, finetune_ds, hyper, eval_ds, log_path)
