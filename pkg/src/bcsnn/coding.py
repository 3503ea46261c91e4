"""Input encoding, output decoding and the classification loss.

Time steps are 1-indexed: a spike in row ``r`` of a spike array happened at
step ``r + 1``. This keeps the reciprocal first-spike logit finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

RATE = "rate"
TEMPORAL_NEGATIVE = "temporal-negative"
TEMPORAL_INVERSE = "temporal-inverse"
CODING_MODES = (RATE, TEMPORAL_NEGATIVE, TEMPORAL_INVERSE)


def check_coding(mode: str) -> str:
    if mode not in CODING_MODES:
        raise ValidationError(f"coding must be one of {CODING_MODES}, got {mode!r}")
    return mode


@dataclass
class SpikeRecord:
    """Output spikes shaped ``(num_steps, ..., num_outputs)``."""

    spikes: np.ndarray

    def __post_init__(self):
        self.spikes = np.asarray(self.spikes)
        if self.spikes.ndim < 2:
            raise ValidationError("a spike record needs a time axis and a neuron axis")

    @property
    def num_steps(self) -> int:
        return self.spikes.shape[0]


@dataclass
class FirstSpikeTimes:
    """First spike step of every output neuron; ``num_steps + 1`` means never."""

    ft: np.ndarray
    num_steps: int

    @property
    def sentinel(self) -> int:
        return self.num_steps + 1

    @property
    def never(self) -> np.ndarray:
        return self.ft > self.num_steps


def encode_constant_current(image, num_steps: int) -> np.ndarray:
    """Present the same normalised image as input current at every step.

    Returns a read-only broadcast view shaped ``(num_steps, *image.shape)``.
    """
    image = np.asarray(image)
    if num_steps < 1:
        raise ValidationError("num_steps must be at least 1")
    if image.size and (np.nanmin(image) < 0.0 or np.nanmax(image) > 1.0 or np.isnan(image).any()):
        raise ValidationError("pixel values must lie in [0, 1]")
    return np.broadcast_to(image, (num_steps,) + image.shape)


def _as_record(record) -> SpikeRecord:
    return record if isinstance(record, SpikeRecord) else SpikeRecord(record)


def rate_decode(record) -> tuple[np.ndarray, np.ndarray]:
    """Spike counts over all steps and the most active neuron (lowest index on ties)."""
    spikes = _as_record(record).spikes
    counts = spikes.sum(axis=0)
    return counts, np.argmax(counts, axis=-1)


def first_spike_decode(record) -> tuple[FirstSpikeTimes, np.ndarray]:
    """First spike step per neuron and the earliest-firing neuron.

    Neurons that never fire count as ``+inf`` for the decision; ties go to the
    lowest index, which also makes an all-silent record decode to class 0.
    """
    rec = _as_record(record)
    fired = rec.spikes > 0
    any_fired = fired.any(axis=0)
    first = np.argmax(fired, axis=0) + 1
    ft = np.where(any_fired, first, rec.num_steps + 1)
    return FirstSpikeTimes(ft, rec.num_steps), np.argmin(ft, axis=-1)


def temporal_logits(ft: FirstSpikeTimes, strategy: str = "negative") -> np.ndarray:
    """Map first-spike steps to logits that decrease with later firing.

    ``negative``: ``-ft`` (never-fired -> ``-(num_steps + 1)``).
    ``inverse``: ``1 / ft`` (never-fired -> 0).
    """
    times = ft.ft.astype(np.float64)
    if strategy == "negative":
        return -times
    if strategy == "inverse":
        return np.where(ft.never, 0.0, 1.0 / times)
    raise ValidationError(f"unknown temporal strategy {strategy!r}")


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Softmax probabilities, cross-entropy loss and its gradient w.r.t. logits.

    Works on a single logit vector with an int label, or row-wise on a
    ``(batch, classes)`` array with a label array (loss and gradient are then
    per row, not averaged).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(label)
    n_classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValidationError(f"labels shape {labels.shape} does not fit logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or (labels < 0).any() or (labels >= n_classes).any():
        raise ValidationError(f"labels must be class indices in [0, {n_classes})")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    probs = np.exp(log_p)
    loss = -np.take_along_axis(log_p, labels[..., None], axis=-1)[..., 0]
    grad = probs.copy()
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], axis=-1) - 1.0, axis=-1)
    if logits.ndim == 1:
        loss = float(loss)
    return probs, loss, grad


def output_logits(spikes, coding: str) -> np.ndarray:
    """Logits of a ``(num_steps, batch, classes)`` output record under ``coding``."""
    check_coding(coding)
    if coding == RATE:
        return rate_decode(spikes)[0].astype(np.float64)
    ft, _ = first_spike_decode(spikes)
    return temporal_logits(ft, "negative" if coding == TEMPORAL_NEGATIVE else "inverse")


def predict(spikes, coding: str) -> np.ndarray:
    """Deterministic decoder prediction for the chosen coding."""
    check_coding(coding)
    if coding == RATE:
        return rate_decode(spikes)[1]
    return first_spike_decode(spikes)[1]


def logits_grad_to_spikes(grad_logits, spikes, coding: str) -> np.ndarray:
    """Pull a logit gradient back onto the output spike tensor.

    Rate coding: every step's spike contributes one count, so the gradient is
    broadcast over time. Temporal codings: the first-spike step is treated as
    moving one step earlier per unit of extra spike at that step
    (d ft / d s[ft] = -1); a neuron that never fired routes its gradient to
    the final step, as if it were about to fire at ``num_steps + 1``.
    """
    check_coding(coding)
    spikes = np.asarray(spikes)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    num_steps = spikes.shape[0]
    if coding == RATE:
        return np.broadcast_to(grad_logits, spikes.shape).astype(spikes.dtype)
    ft, _ = first_spike_decode(spikes)
    times = ft.ft.astype(np.float64)
    if coding == TEMPORAL_NEGATIVE:
        dlogit_dft = -np.ones_like(times)
    else:
        dlogit_dft = -1.0 / times**2
    grad_ft = grad_logits * dlogit_dft
    step_index = np.minimum(ft.ft, num_steps) - 1
    out = np.zeros(spikes.shape, dtype=np.float64)
    np.put_along_axis(out, step_index[None], -grad_ft[None], axis=0)
    return out.astype(spikes.dtype)
