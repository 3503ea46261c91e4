"""Monte Carlo dropout inference and uncertainty metrics.

Each stochastic pass keeps dropout active with a freshly drawn mask (seed
``base_seed + pass_index``), turns the output spikes into softmax
probabilities through the active coding's logits, and the passes are averaged
into the predictive distribution. Uncertainty is reported in nats:

* predictive entropy  ``H[mean]`` (aleatoric + epistemic)
* mutual information  ``H[mean] - mean_t H[p_t]`` (epistemic only)
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coding import RATE, check_coding, output_logits, softmax
from .errors import ValidationError
from .layers import MC_EVAL
from .network import Network, sample_dropout_masks

logger = logging.getLogger(__name__)

DEFAULT_MC_PASSES = 100
DEFAULT_TRIAGE_THRESHOLD = 0.4
SIMPLEX_TOL = 1e-6


@dataclass
class PredictiveSummary:
    """Per-pass class distributions of one sample and their average."""

    per_pass: np.ndarray
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        self.per_pass = np.atleast_2d(np.asarray(self.per_pass, dtype=np.float64))
        self.mean = self.per_pass.mean(axis=0)

    @property
    def mc_passes(self) -> int:
        return self.per_pass.shape[0]

    @property
    def num_classes(self) -> int:
        return self.per_pass.shape[1]

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.mean))


def _check_simplex(p):
    p = np.asarray(p, dtype=np.float64)
    if (p < -SIMPLEX_TOL).any() or not np.allclose(p.sum(axis=-1), 1.0, atol=SIMPLEX_TOL, rtol=0):
        raise ValidationError("expected a probability vector (nonnegative, summing to 1)")
    return p


def _entropy(p):
    p = np.asarray(p, dtype=np.float64)
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -plogp.sum(axis=-1)


def predictive_entropy(mean) -> float:
    """Shannon entropy (nats) of a class distribution, with ``0 log 0 = 0``."""
    return float(_entropy(_check_simplex(mean)))


def mutual_information(summary: PredictiveSummary, clamp: bool = True) -> float:
    """Entropy of the mean minus the mean per-pass entropy.

    Small negative values from floating-point cancellation are clamped to 0.
    """
    h_mean = _entropy(summary.mean)
    expected_h = _entropy(summary.per_pass).mean()
    mi = float(h_mean - expected_h)
    if mi < 0.0 and clamp:
        if mi < -1e-9:
            logger.warning("mutual information %.3e < 0 clamped to 0", mi)
        else:
            logger.debug("mutual information %.3e < 0 clamped to 0", mi)
        mi = 0.0
    return mi


def mc_probabilities(network: Network, currents, mc_passes: int = DEFAULT_MC_PASSES,
                     base_seed: int = 0, coding: str = RATE) -> np.ndarray:
    """Softmax outputs of ``mc_passes`` stochastic passes over a batch.

    ``currents`` is shaped ``(num_steps, batch, *input_shape)``; the result is
    ``(mc_passes, batch, num_classes)``.
    """
    check_coding(coding)
    if mc_passes < 1:
        raise ValidationError("mc_passes must be at least 1")
    batch = currents.shape[1]
    out = np.empty((mc_passes, batch, network.num_outputs))
    # Layers ahead of the first dropout are deterministic outside train mode:
    # simulate them once and replay only the stochastic suffix per pass.
    split_at = network.first_dropout_index()
    if split_at is None or split_at == 0:
        prefix, split_at = currents, 0
    else:
        prefix, _ = network.run_layers(currents, 0, split_at, MC_EVAL)
    n_layers = len(network.layers)
    for t in range(mc_passes):
        masks = sample_dropout_masks(network, base_seed + t, batch)
        spikes, _ = network.run_layers(prefix, split_at, n_layers, MC_EVAL, masks=masks)
        out[t] = softmax(output_logits(spikes, coding))
    return out


def mc_predict(network: Network, currents, mc_passes: int = DEFAULT_MC_PASSES,
               base_seed: int = 0, coding: str = RATE) -> PredictiveSummary:
    """MC-dropout predictive distribution for a single encoded sample.

    ``currents`` is ``(num_steps, *input_shape)`` or ``(num_steps, 1, *input_shape)``.
    """
    currents = np.asarray(currents)
    if currents.ndim == len(network.input_shape) + 1:
        currents = currents[:, None]
    if currents.shape[1] != 1:
        raise ValidationError("mc_predict takes one sample; use mc_predict_batch")
    return PredictiveSummary(mc_probabilities(network, currents, mc_passes, base_seed, coding)[:, 0])


def mc_predict_batch(network: Network, currents, mc_passes: int = DEFAULT_MC_PASSES,
                     base_seed: int = 0, coding: str = RATE) -> list[PredictiveSummary]:
    probs = mc_probabilities(network, currents, mc_passes, base_seed, coding)
    return [PredictiveSummary(probs[:, i]) for i in range(probs.shape[1])]


@dataclass
class UncertaintyReport:
    """Per-sample predictions and uncertainty of a test set."""

    predicted: np.ndarray
    entropy: np.ndarray
    mutual_information: np.ndarray
    true_label: np.ndarray | None = None
    threshold: float = DEFAULT_TRIAGE_THRESHOLD
    metric: str = "entropy"
    sample_id: np.ndarray | None = None

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=int)
        self.entropy = np.asarray(self.entropy, dtype=np.float64)
        self.mutual_information = np.asarray(self.mutual_information, dtype=np.float64)
        if self.true_label is not None:
            self.true_label = np.asarray(self.true_label, dtype=int)
        if self.sample_id is None:
            self.sample_id = np.arange(len(self.predicted))
        _check_metric(self.metric)

    @classmethod
    def from_summaries(cls, summaries, true_label=None, threshold=DEFAULT_TRIAGE_THRESHOLD,
                       metric="entropy", sample_id=None) -> "UncertaintyReport":
        return cls(
            predicted=[s.predicted for s in summaries],
            entropy=[predictive_entropy(s.mean) for s in summaries],
            mutual_information=[mutual_information(s) for s in summaries],
            true_label=true_label, threshold=threshold, metric=metric, sample_id=sample_id,
        )

    def __len__(self):
        return len(self.predicted)

    def metric_values(self, metric: str | None = None) -> np.ndarray:
        metric = _check_metric(metric or self.metric)
        return self.entropy if metric == "entropy" else self.mutual_information

    @property
    def flagged(self) -> np.ndarray:
        return self.metric_values() >= self.threshold

    @property
    def correct(self) -> np.ndarray | None:
        if self.true_label is None:
            return None
        return self.predicted == self.true_label

    def rows(self):
        for i in range(len(self)):
            yield {
                "sample_id": int(self.sample_id[i]),
                "predicted": int(self.predicted[i]),
                "true_label": "" if self.true_label is None else int(self.true_label[i]),
                "entropy_nats": float(self.entropy[i]),
                "mutual_information_nats": float(self.mutual_information[i]),
                "triage_flag": int(self.flagged[i]),
            }

    def to_csv(self, path, indices=None) -> Path:
        """Write ``sample_id, predicted, true_label, entropy_nats, mutual_information_nats, triage_flag``."""
        rows = list(self.rows())
        if indices is not None:
            rows = [rows[i] for i in indices]
        return write_report_rows(path, rows)


REPORT_COLUMNS = ["sample_id", "predicted", "true_label", "entropy_nats",
                  "mutual_information_nats", "triage_flag"]


def write_report_rows(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow([r["sample_id"], r["predicted"], r["true_label"],
                             f"{r['entropy_nats']:.6f}", f"{r['mutual_information_nats']:.6f}",
                             r["triage_flag"]])
    return path


def _check_metric(metric):
    if metric not in ("entropy", "mi"):
        raise ValidationError(f"metric must be 'entropy' or 'mi', got {metric!r}")
    return metric


def triage(report: UncertaintyReport, threshold: float = DEFAULT_TRIAGE_THRESHOLD,
           metric: str = "entropy") -> np.ndarray:
    """Indices of samples whose uncertainty is at least ``threshold``.

    Sorted by decreasing uncertainty; equal values keep their original order.
    """
    if threshold < 0:
        raise ValidationError("threshold must be nonnegative")
    values = report.metric_values(metric)
    selected = np.flatnonzero(values >= threshold)
    order = np.argsort(-values[selected], kind="stable")
    return selected[order]
