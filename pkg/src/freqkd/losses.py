"""Training objectives: band distillation losses, cross-entropy, alignment, assembly.

Every loss returns its scalar value together with analytic gradients for the
inputs that are trainable in the distillation setup (the first feature
argument and any classifier parameters). Gradient correctness is pinned to
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, LabelError, NumericError
from .frequency import FrequencyBands
from .models import LinearHead, SharedClassifiers, raw_class_backward, raw_class_logits


@dataclass(frozen=True)
class LossWeights:
    """Weights on the low/high band distillation terms."""

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        for name, value in (("lambda1", self.lambda1), ("lambda2", self.lambda2)):
            if not np.isfinite(value) or value < 0:
                raise NumericError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term scalars of one training step.

    ``total`` is always the literal expression
    ``task + align + lambda1*low + lambda2*high`` evaluated left to right, so
    the identity can be re-checked bit for bit.
    """

    task: float
    align: float
    low: float
    high: float
    total: float

    def to_dict(self):
        return {
            "task": self.task,
            "align": self.align,
            "low": self.low,
            "high": self.high,
            "total": self.total,
        }


@dataclass
class FeatureBatch:
    """N x D feature rows for one modality, with their class labels."""

    rows: np.ndarray
    modality: str
    labels: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise DimensionError(f"feature rows must be N x D with N >= 1, got {self.rows.shape}")
        if self.labels.shape != (self.rows.shape[0],):
            raise DimensionError("labels must align with feature rows")
        if not np.all(np.isfinite(self.rows)):
            raise NumericError("feature rows contain non-finite values")


def _check_same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse_loss(a, b):
    """Mean squared error over all entries; strong alignment for low bands."""
    a, b = _check_same_shape(a, b)
    diff = a - b
    loss = float(np.mean(diff * diff))
    grad_a = 2.0 * diff / diff.size
    return loss, grad_a


def log_compress(u):
    """Sign-symmetric log compression: log(1+u) for u >= 0, -log(1-u) otherwise."""
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.log1p(np.abs(u))


def log_compress_deriv(u):
    u = np.asarray(u, dtype=np.float64)
    return 1.0 / (1.0 + np.abs(u))


def logmse_loss(a, b):
    """MSE after log compression; weak alignment for high bands.

    The compression is 1-Lipschitz with slope 1/(1+|u|), so both the value
    and the gradient are dominated by plain MSE.
    """
    a, b = _check_same_shape(a, b)
    diff = log_compress(a) - log_compress(b)
    loss = float(np.mean(diff * diff))
    grad_a = 2.0 * diff * log_compress_deriv(a) / diff.size
    return loss, grad_a


def _check_labels(labels, classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise DimensionError(f"labels must be one-dimensional, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelError(
            f"labels must lie in [0, {classes}), found range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def cross_entropy(logits, labels):
    """Mean negative log softmax probability of the true class."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"logits must be N x C with C >= 2, got {logits.shape}")
    n = logits.shape[0]
    labels = _check_labels(labels, logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    softmax = np.exp(shifted - log_z[:, None])
    grad = softmax
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def _ce_through_head(head: LinearHead, x, labels):
    """CE through a bare linear head; returns loss, head grads, input grad."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != head.w.shape[0]:
        raise DimensionError(
            f"head expects input dim {head.w.shape[0]}, got {x.shape[1]}"
        )
    loss, d_logits = cross_entropy(x @ head.w + head.b, labels)
    return loss, x.T @ d_logits, d_logits.sum(axis=0), d_logits @ head.w.T


def _zero_phi_grads(heads: SharedClassifiers):
    return {
        "phi_l.w": np.zeros_like(heads.phi_l.w),
        "phi_l.b": np.zeros_like(heads.phi_l.b),
        "phi_h.w": np.zeros_like(heads.phi_h.w),
        "phi_h.b": np.zeros_like(heads.phi_h.b),
    }


class AlignResult(NamedTuple):
    loss: float
    d_low_a: np.ndarray
    d_high_a: np.ndarray
    d_low_b: np.ndarray
    d_high_b: np.ndarray
    phi_grads: dict


def align_loss(bands_a: FrequencyBands, bands_b: FrequencyBands,
               heads: SharedClassifiers, labels) -> AlignResult:
    """Shared-classifier alignment: four CE terms over both modalities' bands."""
    phi_grads = _zero_phi_grads(heads)
    loss_ha, dw, db, d_high_a = _ce_through_head(heads.phi_h, bands_a.high, labels)
    phi_grads["phi_h.w"] += dw
    phi_grads["phi_h.b"] += db
    loss_hb, dw, db, d_high_b = _ce_through_head(heads.phi_h, bands_b.high, labels)
    phi_grads["phi_h.w"] += dw
    phi_grads["phi_h.b"] += db
    loss_la, dw, db, d_low_a = _ce_through_head(heads.phi_l, bands_a.low, labels)
    phi_grads["phi_l.w"] += dw
    phi_grads["phi_l.b"] += db
    loss_lb, dw, db, d_low_b = _ce_through_head(heads.phi_l, bands_b.low, labels)
    phi_grads["phi_l.w"] += dw
    phi_grads["phi_l.b"] += db
    return AlignResult(
        loss=loss_ha + loss_hb + loss_la + loss_lb,
        d_low_a=d_low_a,
        d_high_a=d_high_a,
        d_low_b=d_low_b,
        d_high_b=d_high_b,
        phi_grads=phi_grads,
    )


class RawAlignResult(NamedTuple):
    loss: float
    d_raw_a: np.ndarray
    phi_grads: dict


def raw_align_loss(raw_a, raw_b, heads: SharedClassifiers, labels) -> RawAlignResult:
    """Alignment fallback without band decomposition.

    Both modalities' undecomposed features pass through the low-band
    classifier, which then acts as the single shared decision space.
    Gradients flow to the classifier from both terms but only to the first
    (trainable) modality's features.
    """
    phi_grads = _zero_phi_grads(heads)
    loss_a, dw, db, d_raw_a = _ce_through_head(heads.phi_l, raw_a, labels)
    phi_grads["phi_l.w"] += dw
    phi_grads["phi_l.b"] += db
    loss_b, dw, db, _ = _ce_through_head(heads.phi_l, raw_b, labels)
    phi_grads["phi_l.w"] += dw
    phi_grads["phi_l.b"] += db
    return RawAlignResult(loss=loss_a + loss_b, d_raw_a=d_raw_a, phi_grads=phi_grads)


class TaskResult(NamedTuple):
    loss: float
    d_raw: np.ndarray
    d_low: np.ndarray | None
    d_high: np.ndarray | None
    private_grads: dict
    phi_grads: dict


def task_loss(raw, bands: FrequencyBands | None, heads: SharedClassifiers,
              private_head: LinearHead, labels, include_band_terms=True) -> TaskResult:
    """Discriminative pressure on the student's raw and band features.

    The raw term runs through the rectified private-head path. Band terms go
    through the shared classifiers and are dropped when decomposition is
    disabled (``bands is None``) or deduplicated away by the caller.
    """
    raw = np.asarray(raw, dtype=np.float64)
    logits, rectified = raw_class_logits(private_head, raw)
    loss_raw, d_logits = cross_entropy(logits, labels)
    d_w, d_b, d_raw = raw_class_backward(private_head, raw, rectified, d_logits)
    private_grads = {"head.w": d_w, "head.b": d_b}
    phi_grads = _zero_phi_grads(heads)
    loss = loss_raw
    d_low = d_high = None
    if bands is not None and include_band_terms:
        loss_low, dw, db, d_low = _ce_through_head(heads.phi_l, bands.low, labels)
        phi_grads["phi_l.w"] += dw
        phi_grads["phi_l.b"] += db
        loss_high, dw, db, d_high = _ce_through_head(heads.phi_h, bands.high, labels)
        phi_grads["phi_h.w"] += dw
        phi_grads["phi_h.b"] += db
        loss = loss_raw + loss_low + loss_high
    return TaskResult(
        loss=loss,
        d_raw=d_raw,
        d_low=d_low,
        d_high=d_high,
        private_grads=private_grads,
        phi_grads=phi_grads,
    )


def total_loss(task, align, low, high, weights: LossWeights) -> LossBreakdown:
    """Assemble the weighted objective, preserving every term for logging."""
    for name, value in (("task", task), ("align", align), ("low", low), ("high", high)):
        if not np.isfinite(value):
            raise NumericError(f"loss term '{name}' is non-finite: {value}")
    total = task + align + weights.lambda1 * low + weights.lambda2 * high
    return LossBreakdown(task=task, align=align, low=low, high=high, total=total)
