"""Training loop, ADAM optimiser and classification evaluation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bayes import (DEFAULT_MC_PASSES, DEFAULT_TRIAGE_THRESHOLD, PredictiveSummary,
                    UncertaintyReport, mc_probabilities)
from .coding import (RATE, check_coding, encode_constant_current, logits_grad_to_spikes,
                     output_logits, predict, softmax_cross_entropy)
from .data import Dataset
from .errors import TrainingDivergedError, ValidationError
from .layers import EVAL, TRAIN
from .network import Network, bptt_backward, sample_dropout_masks

logger = logging.getLogger(__name__)

DEFAULT_NUM_STEPS = 25


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 20
    epochs: int = 30
    num_steps: int = DEFAULT_NUM_STEPS
    coding: str = RATE
    mc_dropout: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1 or self.num_steps < 1:
            raise ValidationError("batch_size, epochs and num_steps must be at least 1")
        check_coding(self.coding)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = float("nan")
    val_acc: float = float("nan")
    seconds: float = 0.0


class Adam:
    """ADAM with bias-corrected moment estimates."""

    def __init__(self, network: Network, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.network = network
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in network.parameters()}
        self.v = {k: np.zeros_like(p) for k, p in network.parameters()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        grads = dict(self.network.gradients())
        for key, p in self.network.parameters():
            g = grads[key]
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _currents(images, num_steps):
    return encode_constant_current(images, num_steps)


def train_step(network: Network, optimizer: Adam, images, labels, config: TrainConfig,
               rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """One forward/backward/update on a batch. Returns ``(mean loss, predictions)``."""
    batch = len(labels)
    masks = sample_dropout_masks(network, rng, batch)
    sim = network.forward(_currents(images, config.num_steps), TRAIN, masks=masks, record_tape=True)
    logits = output_logits(sim.spikes, config.coding)
    _, losses, grad_logits = softmax_cross_entropy(logits, labels)
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"loss became {loss}; logits range [{logits.min()}, {logits.max()}]")
    # NaN membranes compare False against the threshold and would spike silently as zeros
    if not np.isfinite(sim.membrane).all():
        raise TrainingDivergedError("output membrane potential is not finite")
    grad_spikes = logits_grad_to_spikes(grad_logits / batch, sim.spikes, config.coding)
    network.zero_grad()
    bptt_backward(network, sim.tape, grad_spikes)
    for key, g in network.gradients():
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"gradient of parameter {key} is not finite")
    optimizer.step()
    return loss, predict(sim.spikes, config.coding)


def eval_loss_accuracy(network: Network, dataset: Dataset, config: TrainConfig,
                       batch_size: int = 50) -> tuple[float, float]:
    total, correct = 0.0, 0
    for idx in _batches(len(dataset), batch_size):
        sim = network.forward(_currents(dataset.images[idx], config.num_steps), EVAL)
        _, losses, _ = softmax_cross_entropy(output_logits(sim.spikes, config.coding), dataset.labels[idx])
        total += float(losses.sum())
        correct += int((predict(sim.spikes, config.coding) == dataset.labels[idx]).sum())
    return total / len(dataset), 100.0 * correct / len(dataset)


def train(network: Network, train_set: Dataset, val_set: Dataset | None = None,
          config: TrainConfig | None = None, callback=None) -> tuple[Network, list[EpochMetrics]]:
    """Fit ``network`` in place with ADAM and cross-entropy on the coding's logits."""
    config = config or TrainConfig()
    if train_set.num_classes != network.num_outputs:
        raise ValidationError(f"network has {network.num_outputs} outputs but data has {train_set.num_classes} classes")
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(network, lr=config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        loss_sum, correct = 0.0, 0
        for idx in _batches(len(train_set), config.batch_size, rng):
            loss, pred = train_step(network, optimizer, train_set.images[idx], train_set.labels[idx], config, rng)
            loss_sum += loss * len(idx)
            correct += int((pred == train_set.labels[idx]).sum())
        m = EpochMetrics(epoch, loss_sum / len(train_set), 100.0 * correct / len(train_set))
        if val_set is not None and len(val_set):
            m.val_loss, m.val_acc = eval_loss_accuracy(network, val_set, config)
        m.seconds = time.perf_counter() - start
        logger.info("epoch %d loss %.4f acc %.2f%% val_loss %.4f val_acc %.2f%% (%.1fs)",
                    epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc, m.seconds)
        history.append(m)
        if callback is not None:
            callback(m)
    return network, history


def check_loss_slope(network: Network, images, labels, config: TrainConfig, steps: int = 5) -> list[float]:
    """Losses of repeated updates on one fixed batch; warns if any step increases the loss."""
    rng = np.random.default_rng(config.seed)
    optimizer = Adam(network, lr=config.learning_rate)
    losses = []
    for _ in range(steps):
        loss, _ = train_step(network, optimizer, images, labels, config, rng)
        losses.append(loss)
    if any(b > a for a, b in zip(losses, losses[1:])):
        logger.warning("training loss increased on a fixed batch: %s", losses)
    return losses


# -- evaluation -------------------------------------------------------------


@dataclass
class ClassMetrics:
    """Per-class and macro-averaged classification metrics, in percent."""

    confusion: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        if not self.class_names:
            self.class_names = [str(i) for i in range(len(self.confusion))]

    @classmethod
    def from_predictions(cls, true, predicted, num_classes: int, class_names=None) -> "ClassMetrics":
        cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(cm, (np.asarray(true), np.asarray(predicted)), 1)
        return cls(cm, list(class_names or []))

    @property
    def support(self):
        return self.confusion.sum(axis=1)

    @property
    def recall(self) -> np.ndarray:
        tp = np.diag(self.confusion).astype(np.float64)
        return 100.0 * np.divide(tp, self.support, out=np.zeros_like(tp), where=self.support > 0)

    @property
    def precision(self) -> np.ndarray:
        tp = np.diag(self.confusion).astype(np.float64)
        predicted = self.confusion.sum(axis=0)
        return 100.0 * np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)

    @property
    def f1(self) -> np.ndarray:
        p, r = self.precision, self.recall
        return np.divide(2 * p * r, p + r, out=np.zeros_like(p), where=(p + r) > 0)

    @property
    def accuracy(self) -> float:
        return 100.0 * float(np.trace(self.confusion)) / float(self.confusion.sum())

    @property
    def macro(self) -> dict[str, float]:
        return {"recall": float(self.recall.mean()), "precision": float(self.precision.mean()),
                "f1": float(self.f1.mean())}

    def to_csv(self, path) -> Path:
        """``class, recall, precision, f1, accuracy`` rows plus an ``Average`` row."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "recall", "precision", "f1", "accuracy"])
            for i, name in enumerate(self.class_names):
                w.writerow([name, f"{self.recall[i]:.6f}", f"{self.precision[i]:.6f}", f"{self.f1[i]:.6f}", ""])
            mac = self.macro
            w.writerow(["Average", f"{mac['recall']:.6f}", f"{mac['precision']:.6f}",
                        f"{mac['f1']:.6f}", f"{self.accuracy:.6f}"])
        return path

    def confusion_to_csv(self, path) -> Path:
        """Rows are true classes, columns predicted classes."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted"] + list(self.class_names))
            for name, row in zip(self.class_names, self.confusion):
                w.writerow([name] + [int(v) for v in row])
        return path


@dataclass
class EvalResult:
    metrics: ClassMetrics
    predictions: np.ndarray
    report: UncertaintyReport | None = None
    summaries: list[PredictiveSummary] | None = None


def evaluate(network: Network, test_set: Dataset, coding: str = RATE, mc: bool = False,
             mc_passes: int = DEFAULT_MC_PASSES, num_steps: int = DEFAULT_NUM_STEPS,
             base_seed: int = 0, threshold: float = DEFAULT_TRIAGE_THRESHOLD,
             metric: str = "entropy", batch_size: int = 50) -> EvalResult:
    """Classify ``test_set``.

    Without MC: one deterministic eval-mode pass decoded by the coding's rule.
    With MC: ``mc_passes`` dropout passes per batch (pass ``t`` seeded with
    ``base_seed + t``); the prediction is the argmax of the mean softmax.
    """
    check_coding(coding)
    if len(test_set) == 0:
        raise ValidationError("cannot evaluate on an empty test set")
    if test_set.num_classes != network.num_outputs:
        raise ValidationError(f"network has {network.num_outputs} outputs but data has {test_set.num_classes} classes")
    preds = np.empty(len(test_set), dtype=np.int64)
    summaries = [] if mc else None
    for idx in _batches(len(test_set), batch_size):
        currents = _currents(test_set.images[idx], num_steps)
        if mc:
            probs = mc_probabilities(network, currents, mc_passes, base_seed, coding)
            batch_summaries = [PredictiveSummary(probs[:, i]) for i in range(len(idx))]
            summaries.extend(batch_summaries)
            preds[idx] = [s.predicted for s in batch_summaries]
        else:
            sim = network.forward(currents, EVAL)
            preds[idx] = predict(sim.spikes, coding)
    metrics = ClassMetrics.from_predictions(test_set.labels, preds, network.num_outputs, test_set.class_names)
    report = None
    if mc:
        report = UncertaintyReport.from_summaries(summaries, test_set.labels, threshold, metric)
    return EvalResult(metrics, preds, report, summaries)


EPOCH_COLUMNS = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"]


def write_epoch_csv(path, history: list[EpochMetrics], include_seconds: bool = True) -> Path:
    """Per-epoch losses and accuracies.

    Pass ``include_seconds=False`` to drop wall-clock time so reruns give identical files.
    """
    path = Path(path)
    columns = EPOCH_COLUMNS if include_seconds else EPOCH_COLUMNS[:-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for m in history:
            w.writerow([m.epoch] + [f"{getattr(m, c):.6f}" for c in columns[1:]])
    return path


CODING_TABLE_COLUMNS = ["coding", "class", "recall", "precision", "f1", "accuracy",
                        "train_seconds", "mean_entropy", "mean_mi"]


def compare_codings(build_network, train_set: Dataset, test_set: Dataset, config: TrainConfig,
                    modes=("rate", "temporal-negative", "temporal-inverse"),
                    mc_passes: int = DEFAULT_MC_PASSES, val_set: Dataset | None = None) -> list[dict]:
    """Train and MC-evaluate one fresh network per coding with identical seeds.

    ``build_network`` is a zero-argument factory. Returns rows shaped like a
    per-coding performance / training-time / uncertainty table.
    """
    rows = []
    for mode in modes:
        cfg = TrainConfig(**{**asdict(config), "coding": mode})
        net = build_network()
        start = time.perf_counter()
        train(net, train_set, val_set, cfg)
        seconds = time.perf_counter() - start
        res = evaluate(net, test_set, mode, mc=True, mc_passes=mc_passes, num_steps=cfg.num_steps,
                       base_seed=cfg.seed)
        cm = res.metrics
        for i, name in enumerate(cm.class_names):
            rows.append({"coding": mode, "class": name, "recall": cm.recall[i], "precision": cm.precision[i],
                         "f1": cm.f1[i], "accuracy": None, "train_seconds": None,
                         "mean_entropy": None, "mean_mi": None})
        mac = cm.macro
        rows.append({"coding": mode, "class": "Average", **mac, "accuracy": cm.accuracy,
                     "train_seconds": seconds, "mean_entropy": float(res.report.entropy.mean()),
                     "mean_mi": float(res.report.mutual_information.mean())})
    return rows


def write_coding_table(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CODING_TABLE_COLUMNS)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else ("" if r[c] is None else f"{r[c]:.6f}")
                        for c in CODING_TABLE_COLUMNS])
    return path
