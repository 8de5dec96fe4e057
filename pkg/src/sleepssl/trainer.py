"""Optimization loops for the pretext (SSL) and downstream (supervised
fine-tuning) phases, with seeding, checkpointing, and metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datastore import Dataset, Window, window_signal, epoch_array
from .net import NetConfig, StagingModel, NUM_STAGES, classify
from .objectives import PretextTask, Hyperparams, default_hyperparams
from .sigproc import NormStats


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class FinetuneConfig:
    epochs: int = 100
    batch_size: int = 8
    optim: OptimConfig = field(default_factory=OptimConfig)


@dataclass
class RunManifest:
    seed: int
    method: str
    config: dict
    dataset_id: str
    split_id: str | None = None
    checkpoint: str | None = None
    log: list[dict] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


class EpochSource:
    """Lazy batch access to normalized epochs of a dataset subset."""

    def __init__(self, dataset: Dataset, items: list[tuple[str, int]],
                 stats: NormStats):
        self.dataset = dataset
        self.items = items
        self.stats = stats

    def __len__(self) -> int:
        return len(self.items)

    def batch(self, indices: np.ndarray) -> np.ndarray:
        out = []
        for i in indices:
            rid, pos = self.items[i]
            x = epoch_array(self.dataset, rid, pos)
            out.append((x - self.stats.mean[:, None]) / self.stats.std[:, None])
        return np.stack(out)


def fit_pool_norm(dataset: Dataset, items: list[tuple[str, int]]) -> NormStats:
    """Per-channel z-score statistics over a pool of epochs.

    Accumulates sums streamingly so large pools never need to fit in memory.
    """
    if not items:
        raise ValueError("empty fitting pool")
    c = len(dataset.manifest.channels)
    total = np.zeros(c)
    total_sq = np.zeros(c)
    n = 0
    for rid, pos in items:
        x = epoch_array(dataset, rid, pos)
        total += x.sum(axis=1)
        total_sq += (x ** 2).sum(axis=1)
        n += x.shape[1]
    mean = total / n
    var = total_sq / n - mean ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    if np.any(std == 0):
        bad = np.flatnonzero(std == 0).tolist()
        raise ValueError(f"zero-variance channel index(es) in fitting pool: {bad}")
    return NormStats(mean=mean, std=std)


def pretrain(method: str, source: EpochSource, net_config: NetConfig,
             hyper: Hyperparams | None = None, seed: int = 0,
             max_steps_per_epoch: int | None = None,
             log_path: str | Path | None = None) -> tuple[dict, list[dict]]:
    """Run the pretext objective and return (encoder state_dict, loss log).

    Heads, targets, and auxiliary networks are discarded; only the epoch
    encoder weights survive.
    """
    if len(source) == 0:
        raise ValueError("empty epoch source")
    hyper = hyper or default_hyperparams(method)
    torch.manual_seed(seed)
    task = PretextTask(method, net_config, hyper)
    task.train()
    opt = torch.optim.Adam(
        [p for p in task.parameters() if p.requires_grad],
        lr=hyper.lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=hyper.weight_decay,
    )
    rng = np.random.default_rng(seed)
    log: list[dict] = []
    n = len(source)
    batch_size = min(hyper.batch_size, n)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        losses = []
        n_steps = len(order) // batch_size
        if max_steps_per_epoch is not None:
            n_steps = min(n_steps, max_steps_per_epoch)
        n_steps = max(n_steps, 1)
        for step in range(n_steps):
            idx = order[step * batch_size : (step + 1) * batch_size]
            if len(idx) < 2:
                continue
            batch = source.batch(idx)
            loss = task.training_step(batch, rng)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite pretext loss at epoch {epoch}, step {step} ({method})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            task.after_step()
            losses.append(float(loss.detach()))
        log.append({"epoch": epoch, "loss": float(np.mean(losses))})
    if log_path is not None:
        with open(log_path, "w") as f:
            for row in log:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    state = {k: v.detach().clone() for k, v in task.encoder.state_dict().items()}
    return state, log


def _window_batches(windows: list[Window], batch_size: int,
                    rng: np.random.Generator | None):
    order = np.arange(len(windows))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [windows[i] for i in order[start : start + batch_size]]


def _load_window_batch(dataset: Dataset, batch: list[Window], stats: NormStats):
    xs, ys, valid = [], [], []
    for w in batch:
        sig = window_signal(dataset, w)
        sig = (sig - stats.mean[None, :, None]) / stats.std[None, :, None]
        xs.append(sig)
        ys.append(w.labels if w.labels is not None else np.zeros(len(w.positions), dtype=int))
        valid.append(w.valid)
    x = torch.as_tensor(np.stack(xs), dtype=torch.float32)
    y = torch.as_tensor(np.stack(ys), dtype=torch.long)
    v = torch.as_tensor(np.stack(valid))
    return x, y, v


@dataclass
class MetricsReport:
    accuracy: float
    confusion: np.ndarray  # 5 x 5, rows = true stage, cols = predicted
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    n_epochs: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "n_epochs": self.n_epochs,
        }


def metrics_from_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> MetricsReport:
    if y_true.size == 0:
        raise ValueError("empty evaluation set")
    confusion = np.zeros((NUM_STAGES, NUM_STAGES), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diagonal(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, diag / support, 0.0)
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    return MetricsReport(
        accuracy=float(diag.sum() / support.sum()),
        confusion=confusion,
        per_class_recall=recall,
        per_class_f1=f1,
        n_epochs=int(support.sum()),
    )


def evaluate(model: StagingModel, dataset: Dataset, windows: list[Window],
             stats: NormStats, batch_size: int = 8) -> MetricsReport:
    """Accuracy, per-class recall/F1, and the 5x5 confusion matrix over all
    valid epochs of the given windows."""
    if not windows:
        raise ValueError("empty evaluation set")
    model.eval()
    trues, preds = [], []
    with torch.no_grad():
        for batch in _window_batches(windows, batch_size, rng=None):
            x, y, v = _load_window_batch(dataset, batch, stats)
            pred = classify(model(x))
            mask = v.numpy()
            trues.append(y.numpy()[mask])
            preds.append(pred[mask])
    return metrics_from_predictions(np.concatenate(trues), np.concatenate(preds))


@dataclass
class FinetuneResult:
    model: StagingModel
    stats: NormStats
    val_trace: list[float]
    best_epoch: int
    best_val_accuracy: float


def finetune(dataset: Dataset, train_windows: list[Window], val_windows: list[Window],
             net_config: NetConfig, encoder_init: dict | None = None,
             config: FinetuneConfig | None = None, seed: int = 0,
             stats: NormStats | None = None) -> FinetuneResult:
    """Supervised sequence-to-sequence fine-tuning with cross-entropy.

    The sequence encoder always starts from scratch; the epoch encoder starts
    from ``encoder_init`` when given. Normalization statistics are fitted on
    the training windows only. Returns the checkpoint with the best
    validation accuracy (ties break toward the earliest epoch).
    """
    config = config or FinetuneConfig()
    torch.manual_seed(seed)
    model = StagingModel(net_config)
    if encoder_init is not None:
        model.epoch_encoder.load_state_dict(encoder_init)
    if stats is None:
        items = [(w.rec_id, int(p)) for w in train_windows
                 for p, real in zip(w.positions, w.valid) if real]
        stats = fit_pool_norm(dataset, items)
    opt = torch.optim.Adam(model.parameters(), lr=config.optim.lr,
                           betas=(config.optim.beta1, config.optim.beta2),
                           eps=config.optim.eps,
                           weight_decay=config.optim.weight_decay)
    rng = np.random.default_rng(seed)
    best_state = None
    best_acc = -1.0
    best_epoch = -1
    val_trace: list[float] = []
    for epoch in range(config.epochs):
        model.train()
        for batch in _window_batches(train_windows, config.batch_size, rng):
            x, y, v = _load_window_batch(dataset, batch, stats)
            logits = model(x)
            # padded tail positions carry no loss
            loss = F.cross_entropy(logits[v], y[v])
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite fine-tuning loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        report = evaluate(model, dataset, val_windows, stats, config.batch_size)
        val_trace.append(report.accuracy)
        if report.accuracy > best_acc:
            best_acc = report.accuracy
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    return FinetuneResult(model=model, stats=stats, val_trace=val_trace,
                          best_epoch=best_epoch, best_val_accuracy=best_acc)
