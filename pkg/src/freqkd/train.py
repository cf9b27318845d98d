"""Teacher pre-training, frequency-decoupled distillation, and evaluation.

Distillation is offline: the teacher encoder is loaded from a checkpoint and
never updated. Per batch the student encoder runs forward, both feature
batches are band-decomposed, optionally standardized, and the four loss
terms are assembled; gradients reach the student encoder, its private head,
and the shared band classifiers. Teacher-side alignment terms update only
the shared classifiers.

All randomness (init, shuffling) flows through named SeededRng streams, so a
distillation run with every component disabled performs bit-identical
arithmetic to the plain unimodal trainer.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import frequency, losses
from .data import DatasetSplits, PairedDataset
from .errors import ConfigError, DataError, DimensionError, NumericError
from .models import (
    LinearHead,
    MlpEncoder,
    ModelBundle,
    PolySgd,
    SharedClassifiers,
    raw_class_backward,
    raw_class_logits,
)
from .numerics import SeededRng

LOSS_KINDS = ("mse", "logmse")


@dataclass(frozen=True)
class ExperimentConfig:
    student_modality: str = "b"
    teacher_checkpoint: str | None = None
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-2
    momentum: float = 0.9
    poly_power: float = 0.9
    lambda1: float = 1.0
    lambda2: float = 1.0
    threshold: float = 0.5
    freq: bool = True
    align: bool = True
    scale: bool = True
    log: bool = True
    low_loss: str | None = None
    high_loss: str | None = None
    align_standardized: bool = False
    dedup_student_band_ce: bool = False
    feature_dim: int = 64
    hidden: tuple = (128, 128)
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.student_modality not in ("a", "b"):
            raise ConfigError(f"student_modality must be 'a' or 'b', got "
                              f"'{self.student_modality}'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        for name in ("lr", "momentum", "poly_power", "lambda1", "lambda2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.scale and not self.freq:
            raise ConfigError("scale toggle requires freq")
        if self.log and not self.freq:
            raise ConfigError("log toggle requires freq")
        if self.align_standardized and not self.freq:
            raise ConfigError("align_standardized requires freq")
        for name in ("low_loss", "high_loss"):
            value = getattr(self, name)
            if value is not None and value not in LOSS_KINDS:
                raise ConfigError(f"{name} must be one of {LOSS_KINDS}, got '{value}'")
        if self.feature_dim < 4 or self.feature_dim % 2 != 0:
            raise ConfigError(f"feature_dim must be even and >= 4, got "
                              f"{self.feature_dim}")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must all be >= 1, got {self.hidden}")
        return self

    @property
    def effective_low_loss(self) -> str:
        return self.low_loss or "mse"

    @property
    def effective_high_loss(self) -> str:
        if self.high_loss is not None:
            return self.high_loss
        return "logmse" if self.log else "mse"

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        if "hidden" in known:
            known["hidden"] = tuple(known["hidden"])
        return cls(**known).validate()


@dataclass
class TrainReport:
    kind: str
    modality: str
    seed: int
    epochs: int
    trace: list
    final_accuracy: float
    per_class_accuracy: list
    wall_time_s: float
    config_echo: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "kind": self.kind,
            "modality": self.modality,
            "seed": self.seed,
            "epochs": self.epochs,
            "trace": [t.to_dict() for t in self.trace],
            "final_accuracy": self.final_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "wall_time_s": self.wall_time_s,
            "config_echo": self.config_echo,
            "extra": self.extra,
        }


def write_json(obj, path):
    """Serialize with stable key order; atomic via temp file + rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _batch_slices(perm, batch_size):
    for start in range(0, len(perm), batch_size):
        yield perm[start : start + batch_size]


def _mean_trace(acc, count):
    return losses.LossBreakdown(
        task=acc[0] / count, align=acc[1] / count,
        low=acc[2] / count, high=acc[3] / count, total=acc[4] / count,
    )


@dataclass
class EvalResult:
    accuracy: float
    per_class: list
    logits: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray


def evaluate(bundle: ModelBundle, dataset: PairedDataset) -> EvalResult:
    """Top-1 accuracy of the private raw-feature head on one split.

    Ties in the logits resolve to the lowest class index (first argmax).
    """
    if dataset.n < 1:
        raise DataError("cannot evaluate on an empty split")
    x = dataset.modality(bundle.modality)
    feats = bundle.encoder.features(x)
    logits, _ = raw_class_logits(bundle.head, feats)
    predictions = np.argmax(logits, axis=1)
    correct = predictions == dataset.labels
    classes = bundle.head.b.shape[0]
    per_class = []
    for c in range(classes):
        mask = dataset.labels == c
        per_class.append(float(correct[mask].mean()) if mask.any() else None)
    return EvalResult(
        accuracy=float(correct.mean()),
        per_class=per_class,
        logits=logits,
        predictions=predictions,
        labels=dataset.labels,
    )


def train_unimodal(splits: DatasetSplits, modality: str, config: ExperimentConfig):
    """Train one modality's encoder and private head with plain cross-entropy."""
    config = replace(config, student_modality=modality).validate()
    started = time.perf_counter()
    x_train = splits.train.modality(modality)
    labels = splits.train.labels
    classes = splits.num_classes
    if classes < 2:
        raise DataError("training needs at least two classes")
    rng = SeededRng(config.seed)
    widths = [x_train.shape[1], *config.hidden, config.feature_dim]
    encoder = MlpEncoder.init(widths, rng, f"encoder.{modality}")
    head = LinearHead.init(config.feature_dim, classes, rng, f"head.{modality}")
    bundle = ModelBundle(modality=modality, encoder=encoder, head=head)
    params = bundle.trainable_params()

    n = splits.train.n
    steps_per_epoch = math.ceil(n / config.batch_size)
    opt = PolySgd(params, lr=config.lr, momentum=config.momentum,
                  power=config.poly_power, max_steps=config.epochs * steps_per_epoch)
    weights = losses.LossWeights(config.lambda1, config.lambda2)

    trace = []
    for epoch in range(config.epochs):
        perm = rng.stream("shuffle", epoch).permutation(n)
        acc = [0.0] * 5
        count = 0
        for batch_no, idx in enumerate(_batch_slices(perm, config.batch_size)):
            feats, cache = encoder.forward(x_train[idx])
            logits, rectified = raw_class_logits(head, feats)
            task, d_logits = losses.cross_entropy(logits, labels[idx])
            try:
                breakdown = losses.total_loss(task, 0.0, 0.0, 0.0, weights)
            except NumericError as exc:
                raise NumericError(f"{exc} (epoch {epoch}, batch {batch_no})") from exc
            d_w, d_b, d_feats = raw_class_backward(head, feats, rectified, d_logits)
            grads = {f"encoder.{k}": v
                     for k, v in encoder.backward(cache, d_feats).items()}
            grads["head.w"] = d_w
            grads["head.b"] = d_b
            opt.step(grads)
            for j, term in enumerate(("task", "align", "low", "high", "total")):
                acc[j] += getattr(breakdown, term)
            count += 1
        trace.append(_mean_trace(acc, count))

    result = evaluate(bundle, splits.test)
    report = TrainReport(
        kind="train-uni",
        modality=modality,
        seed=config.seed,
        epochs=config.epochs,
        trace=trace,
        final_accuracy=result.accuracy,
        per_class_accuracy=result.per_class,
        wall_time_s=time.perf_counter() - started,
        config_echo=config.to_dict(),
        extra={"train_size": n, "test_size": splits.test.n, "classes": classes},
    )
    return bundle, report


def _band_loss_fn(kind):
    return losses.mse_loss if kind == "mse" else losses.logmse_loss


def _distill_step(encoder, head, phi, teacher, x_s, x_t, y, config,
                  band_split, weights):
    """One distillation step: returns (LossBreakdown, gradient dict)."""
    feats_s, cache_s = encoder.forward(x_s)
    feats_t = teacher.encoder.features(x_t)

    d_feats = np.zeros_like(feats_s)
    phi_grads = None
    align_val = 0.0
    low_val = 0.0
    high_val = 0.0

    def add_phi(more):
        nonlocal phi_grads
        if phi_grads is None:
            phi_grads = more
        else:
            for k in phi_grads:
                phi_grads[k] += more[k]

    if config.freq:
        bands_s = frequency.decompose(feats_s, band_split)
        bands_t = frequency.decompose(feats_t, band_split)
        d_low_band = np.zeros_like(bands_s.low)
        d_high_band = np.zeros_like(bands_s.high)

        std_low_s, std_low_cache = frequency.standardize_fwd(bands_s.low)
        std_high_s, std_high_cache = frequency.unit_norm_fwd(bands_s.high)
        std_low_t, _ = frequency.standardize_fwd(bands_t.low)
        std_high_t, _ = frequency.unit_norm_fwd(bands_t.high)

        if config.scale:
            low_in_s, low_in_t = std_low_s, std_low_t
            high_in_s, high_in_t = std_high_s, std_high_t
        else:
            low_in_s, low_in_t = bands_s.low, bands_t.low
            high_in_s, high_in_t = bands_s.high, bands_t.high

        low_val, d_low_in = _band_loss_fn(config.effective_low_loss)(low_in_s, low_in_t)
        high_val, d_high_in = _band_loss_fn(config.effective_high_loss)(high_in_s, high_in_t)
        if config.scale:
            d_low_band += frequency.normalize_bwd(std_low_cache,
                                                  weights.lambda1 * d_low_in)
            d_high_band += frequency.normalize_bwd(std_high_cache,
                                                   weights.lambda2 * d_high_in)
        else:
            d_low_band += weights.lambda1 * d_low_in
            d_high_band += weights.lambda2 * d_high_in

        if config.align_standardized:
            class_bands_s = frequency.FrequencyBands(low=std_low_s, high=std_high_s)
            class_bands_t = frequency.FrequencyBands(low=std_low_t, high=std_high_t)
        else:
            class_bands_s, class_bands_t = bands_s, bands_t

        d_class_low = np.zeros_like(bands_s.low)
        d_class_high = np.zeros_like(bands_s.high)
        if config.align:
            ares = losses.align_loss(class_bands_s, class_bands_t, phi, y)
            align_val = ares.loss
            add_phi(ares.phi_grads)
            d_class_low += ares.d_low_a
            d_class_high += ares.d_high_a

        include_bands = not (config.dedup_student_band_ce and config.align)
        tres = losses.task_loss(feats_s, class_bands_s, phi, head, y,
                                include_band_terms=include_bands)
        add_phi(tres.phi_grads)
        if tres.d_low is not None:
            d_class_low += tres.d_low
            d_class_high += tres.d_high

        if config.align_standardized:
            d_low_band += frequency.normalize_bwd(std_low_cache, d_class_low)
            d_high_band += frequency.normalize_bwd(std_high_cache, d_class_high)
        else:
            d_low_band += d_class_low
            d_high_band += d_class_high

        d_feats += frequency.band_project(d_low_band, band_split, "low")
        d_feats += frequency.band_project(d_high_band, band_split, "high")
    else:
        if config.align:
            rres = losses.raw_align_loss(feats_s, feats_t, phi, y)
            align_val = rres.loss
            add_phi(rres.phi_grads)
            d_feats += rres.d_raw_a
        tres = losses.task_loss(feats_s, None, phi, head, y)
        add_phi(tres.phi_grads)

    d_feats += tres.d_raw
    breakdown = losses.total_loss(tres.loss, align_val, low_val, high_val, weights)

    grads = {f"encoder.{k}": v for k, v in encoder.backward(cache_s, d_feats).items()}
    grads["head.w"] = tres.private_grads["head.w"]
    grads["head.b"] = tres.private_grads["head.b"]
    grads.update(phi_grads)
    return breakdown, grads


def distill(splits: DatasetSplits, config: ExperimentConfig, teacher: ModelBundle):
    """Distill the frozen teacher into a freshly initialized student."""
    config = config.validate()
    started = time.perf_counter()
    student_m = config.student_modality
    x_train_s = splits.train.modality(student_m)
    x_train_t = splits.train.modality(teacher.modality)
    labels = splits.train.labels
    classes = splits.num_classes

    if teacher.encoder.feature_dim != config.feature_dim:
        raise DimensionError(
            f"teacher feature dim {teacher.encoder.feature_dim} != student "
            f"feature dim {config.feature_dim}"
        )
    if teacher.encoder.input_dim != x_train_t.shape[1]:
        raise DimensionError(
            f"teacher expects input dim {teacher.encoder.input_dim}, dataset "
            f"has {x_train_t.shape[1]}"
        )

    rng = SeededRng(config.seed)
    widths = [x_train_s.shape[1], *config.hidden, config.feature_dim]
    encoder = MlpEncoder.init(widths, rng, f"encoder.{student_m}")
    head = LinearHead.init(config.feature_dim, classes, rng, f"head.{student_m}")
    phi = SharedClassifiers.init(config.feature_dim, classes, rng)
    bundle = ModelBundle(modality=student_m, encoder=encoder, head=head, phi=phi)
    params = bundle.trainable_params()

    n = splits.train.n
    steps_per_epoch = math.ceil(n / config.batch_size)
    opt = PolySgd(params, lr=config.lr, momentum=config.momentum,
                  power=config.poly_power, max_steps=config.epochs * steps_per_epoch)
    weights = losses.LossWeights(config.lambda1, config.lambda2)
    band_split = (frequency.BandSplit.for_dim(config.feature_dim, config.threshold)
                  if config.freq else None)

    trace = []
    for epoch in range(config.epochs):
        perm = rng.stream("shuffle", epoch).permutation(n)
        acc = [0.0] * 5
        count = 0
        for batch_no, idx in enumerate(_batch_slices(perm, config.batch_size)):
            try:
                breakdown, grads = _distill_step(
                    encoder, head, phi, teacher,
                    x_train_s[idx], x_train_t[idx], labels[idx],
                    config, band_split, weights,
                )
            except NumericError as exc:
                raise NumericError(f"{exc} (epoch {epoch}, batch {batch_no})") from exc
            opt.step(grads)
            for j, term in enumerate(("task", "align", "low", "high", "total")):
                acc[j] += getattr(breakdown, term)
            count += 1
        trace.append(_mean_trace(acc, count))

    result = evaluate(bundle, splits.test)
    report = TrainReport(
        kind="distill",
        modality=student_m,
        seed=config.seed,
        epochs=config.epochs,
        trace=trace,
        final_accuracy=result.accuracy,
        per_class_accuracy=result.per_class,
        wall_time_s=time.perf_counter() - started,
        config_echo=config.to_dict(),
        extra={
            "teacher_modality": teacher.modality,
            "train_size": n,
            "test_size": splits.test.n,
            "classes": classes,
        },
    )
    return bundle, report
