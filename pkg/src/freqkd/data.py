"""Synthetic paired-modality benchmark generator and feature CSV exchange.

Each sample is a pair of feature vectors built in the frequency domain.
Class semantics are drawn in a small latent space and projected into the low
bins of both modalities (plus a small per-modality perturbation), while each
modality gets its own class-conditional content and noise in the high bins.
After inverse transformation the per-modality affine map ``x -> s*x + mu``
injects the scale and offset gaps that motivate standardization.

The construction guarantees the cross-modal band structure on the *inputs*;
whether trained encoders preserve it is measured downstream, not assumed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, PairingError, ParseError
from .frequency import BandSplit
from .numerics import SeededRng

MODALITIES = ("a", "b")


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int = 6
    input_dim: int = 64
    semantic_dim: int = 16
    train_size: int = 2000
    test_size: int = 500
    semantic_noise: float = 4.5
    high_band_signal: float = 0.7
    high_band_noise: float = 0.9
    low_band_perturb: float = 0.5
    scale_a: float = 1.6
    offset_a: float = 0.4
    scale_b: float = 1.0
    offset_b: float = 0.0
    band_threshold: float = 0.5
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.input_dim < 4 or self.input_dim % 2 != 0:
            raise ConfigError(f"input_dim must be even and >= 4, got {self.input_dim}")
        split = BandSplit.for_dim(self.input_dim, self.band_threshold)
        if self.semantic_dim < 1 or self.semantic_dim > split.low_bin_count:
            raise ConfigError(
                f"semantic_dim must lie in [1, {split.low_bin_count}] "
                f"(low-band capacity), got {self.semantic_dim}"
            )
        if min(self.train_size, self.test_size) < self.num_classes:
            raise ConfigError("each split needs at least one sample per class")
        for name in ("semantic_noise", "high_band_signal", "high_band_noise",
                     "low_band_perturb", "scale_a", "scale_b"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "SyntheticConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**known).validate()


@dataclass
class PairedDataset:
    """One split: ids, labels, and per-modality feature matrices."""

    ids: np.ndarray
    labels: np.ndarray
    x: dict

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.x = {m: np.asarray(v, dtype=np.float64) for m, v in self.x.items()}
        n = self.ids.shape[0]
        for m, v in self.x.items():
            if v.shape[0] != n:
                raise PairingError(f"modality '{m}' has {v.shape[0]} rows for {n} ids")

    @property
    def n(self) -> int:
        return int(self.ids.shape[0])

    @property
    def dim(self) -> int:
        return int(next(iter(self.x.values())).shape[1])

    def modality(self, m: str) -> np.ndarray:
        if m not in self.x:
            raise DataError(f"dataset has no modality '{m}'")
        return self.x[m]

    def has_modality(self, m: str) -> bool:
        return m in self.x


@dataclass
class DatasetSplits:
    train: PairedDataset
    test: PairedDataset
    num_classes: int
    config: SyntheticConfig | None = None


def _balanced_labels(n, classes):
    # round-robin assignment keeps per-class counts within one of each other
    return np.arange(n, dtype=np.int64) % classes


def _high_prototype(gen, n_high):
    proto = gen.standard_normal(n_high) + 1j * gen.standard_normal(n_high)
    proto[-1] = proto[-1].real  # Nyquist bin must stay real
    return proto


def _generate_split(config: SyntheticConfig, rng: SeededRng, split_name, size,
                    semantic_protos, high_protos):
    d = config.input_dim
    band = BandSplit.for_dim(d, config.band_threshold)
    k, cut = band.spectrum_len, band.cutoff
    n_high = k - cut
    s_dim = config.semantic_dim
    # gains chosen so unit-variance bin content yields roughly unit feature norm
    low_gain = np.sqrt(d / (2.0 * s_dim - 1.0))
    high_gain = np.sqrt(d / (4.0 * n_high - 3.0))
    scales = {"a": config.scale_a, "b": config.scale_b}
    offsets = {"a": config.offset_a, "b": config.offset_b}

    labels = _balanced_labels(size, config.num_classes)
    features = {m: np.empty((size, d)) for m in MODALITIES}
    for i in range(size):
        label = int(labels[i])
        eta = rng.stream(f"{split_name}.semantic", i).standard_normal(s_dim)
        z = semantic_protos[label] + config.semantic_noise * eta
        for m in MODALITIES:
            perturb = rng.stream(f"{split_name}.lowperturb.{m}", i).standard_normal(s_dim)
            noise_gen = rng.stream(f"{split_name}.highnoise.{m}", i)
            noise = _high_prototype(noise_gen, n_high)
            bins = np.zeros(k, dtype=np.complex128)
            bins[:s_dim] = low_gain * (z + config.low_band_perturb * perturb)
            bins[cut:] = high_gain * (
                config.high_band_signal * high_protos[m][label]
                + config.high_band_noise * noise
            )
            x = np.fft.irfft(bins, n=d)
            features[m][i] = scales[m] * x + offsets[m]
    return PairedDataset(ids=np.arange(size, dtype=np.int64), labels=labels, x=features)


def generate(config: SyntheticConfig) -> DatasetSplits:
    """Build train/test splits; bitwise reproducible from the config alone."""
    config.validate()
    rng = SeededRng(config.seed)
    band = BandSplit.for_dim(config.input_dim, config.band_threshold)
    n_high = band.spectrum_len - band.cutoff
    semantic_protos = [
        rng.stream("proto.semantic", c).standard_normal(config.semantic_dim)
        for c in range(config.num_classes)
    ]
    high_protos = {
        m: [_high_prototype(rng.stream(f"proto.high.{m}", c), n_high)
            for c in range(config.num_classes)]
        for m in MODALITIES
    }
    train = _generate_split(config, rng, "train", config.train_size,
                            semantic_protos, high_protos)
    test = _generate_split(config, rng, "test", config.test_size,
                           semantic_protos, high_protos)
    return DatasetSplits(train=train, test=test,
                         num_classes=config.num_classes, config=config)


def save_features(dataset: PairedDataset, path):
    """Write one split as CSV: header ``id,label,m,f0..f{D-1}``, 17-digit floats."""
    dim = dataset.dim
    header = "id,label,m," + ",".join(f"f{j}" for j in range(dim))
    lines = [header]
    for i in range(dataset.n):
        for m in sorted(dataset.x):
            values = ",".join(f"{v:.17g}" for v in dataset.x[m][i])
            lines.append(f"{dataset.ids[i]},{dataset.labels[i]},{m},{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_features(path) -> PairedDataset:
    """Parse a feature CSV back into a split; errors carry the line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError("file is empty", line=1)
    header = lines[0].split(",")
    if header[:3] != ["id", "label", "m"]:
        raise ParseError("header must start with id,label,m", line=1)
    dim = len(header) - 3
    if dim < 1 or header[3:] != [f"f{j}" for j in range(dim)]:
        raise ParseError("feature columns must be f0..f{D-1}", line=1)

    per_modality = {}
    labels_by_id = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 3 + dim:
            raise ParseError(
                f"expected {3 + dim} fields, found {len(parts)}", line=lineno
            )
        try:
            sample_id = int(parts[0])
            label = int(parts[1])
        except ValueError as exc:
            raise ParseError(f"bad id/label: {exc}", line=lineno) from exc
        modality = parts[2]
        if modality not in MODALITIES:
            raise ParseError(f"modality must be one of {MODALITIES}, got '{modality}'",
                             line=lineno)
        if label < 0:
            raise ParseError(f"label out of range: {label}", line=lineno)
        try:
            vec = np.array([float(v) for v in parts[3:]], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"bad feature value: {exc}", line=lineno) from exc
        if not np.all(np.isfinite(vec)):
            raise ParseError("non-finite feature value", line=lineno)
        bucket = per_modality.setdefault(modality, {})
        if sample_id in bucket:
            raise ParseError(f"duplicate row for id {sample_id} modality {modality}",
                             line=lineno)
        bucket[sample_id] = vec
        if labels_by_id.setdefault(sample_id, label) != label:
            raise ParseError(f"conflicting labels for id {sample_id}", line=lineno)

    if not per_modality:
        raise DataError(f"{path} contains no feature rows")
    id_sets = {m: set(rows) for m, rows in per_modality.items()}
    all_ids = sorted(set().union(*id_sets.values()))
    for m, present in id_sets.items():
        if len(per_modality) > 1 and present != set(all_ids):
            raise PairingError(
                f"modality '{m}' covers {len(present)} of {len(all_ids)} ids; "
                "paired files must cover every id in every modality"
            )
    ids = np.array(all_ids, dtype=np.int64)
    labels = np.array([labels_by_id[i] for i in all_ids], dtype=np.int64)
    x = {
        m: np.stack([rows[i] for i in all_ids])
        for m, rows in per_modality.items()
    }
    return PairedDataset(ids=ids, labels=labels, x=x)


def save_dataset(splits: DatasetSplits, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_features(splits.train, out / "train.csv")
    save_features(splits.test, out / "test.csv")
    if splits.config is not None:
        (out / "dataset.config.json").write_text(
            json.dumps(splits.config.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def load_dataset(data_dir) -> DatasetSplits:
    root = Path(data_dir)
    train = load_features(root / "train.csv")
    test = load_features(root / "test.csv")
    config = None
    config_path = root / "dataset.config.json"
    if config_path.exists():
        config = SyntheticConfig.from_dict(json.loads(config_path.read_text()))
    classes = int(max(train.labels.max(), test.labels.max())) + 1
    if config is not None:
        classes = max(classes, config.num_classes)
    return DatasetSplits(train=train, test=test, num_classes=classes, config=config)
