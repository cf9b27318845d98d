"""Diagnostics: cross-modal similarity, per-dimension means, ablation grids.

The similarity report averages per-sample cosine similarity between paired
feature vectors, once on the raw vectors and once per band. Samples whose
norm degenerates in a given variant are excluded from that variant's mean
and counted separately.

Ablation grids enumerate fixed configuration rows, run each row for every
requested seed in both distillation directions, and echo the complete
resolved configuration per run so any cell can be reproduced on its own.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema
import numpy as np

from .data import DatasetSplits, load_dataset
from .errors import DimensionError, PairingError
from .frequency import BandSplit, decompose
from .losses import FeatureBatch
from .models import ModelBundle
from .numerics import NORM_EPS
from .train import ExperimentConfig, distill, train_unimodal

MODALITIES = ("a", "b")


def _paired_cosines(rows_a, rows_b):
    """Per-row cosine values plus the count of degenerate-norm pairs."""
    na = np.linalg.norm(rows_a, axis=1)
    nb = np.linalg.norm(rows_b, axis=1)
    good = (na >= NORM_EPS) & (nb >= NORM_EPS)
    dots = np.sum(rows_a * rows_b, axis=1)
    values = np.where(good, dots / np.maximum(na * nb, NORM_EPS), 0.0)
    return values[good], int((~good).sum())


@dataclass
class SimilarityReport:
    source: str
    threshold: float
    sample_count: int
    mean_raw: float | None
    mean_low: float | None
    mean_high: float | None
    degenerate: dict

    def to_dict(self):
        return {
            "source": self.source,
            "threshold": self.threshold,
            "sample_count": self.sample_count,
            "mean_raw": self.mean_raw,
            "mean_low": self.mean_low,
            "mean_high": self.mean_high,
            "degenerate": self.degenerate,
        }


def similarity_report(features_a: FeatureBatch, features_b: FeatureBatch,
                      split: BandSplit, source="features") -> SimilarityReport:
    """Mean paired cosine of raw, low-band, and high-band feature variants."""
    a, b = features_a.rows, features_b.rows
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] != b.shape[0] or not np.array_equal(features_a.labels,
                                                      features_b.labels):
        raise PairingError("feature batches are not sample-by-sample paired")
    bands_a = decompose(a, split)
    bands_b = decompose(b, split)
    means = {}
    degenerate = {}
    for name, (va, vb) in {
        "raw": (a, b),
        "low": (bands_a.low, bands_b.low),
        "high": (bands_a.high, bands_b.high),
    }.items():
        values, bad = _paired_cosines(va, vb)
        means[name] = float(values.mean()) if values.size else None
        degenerate[name] = bad
    return SimilarityReport(
        source=source,
        threshold=split.threshold,
        sample_count=int(a.shape[0]),
        mean_raw=means["raw"],
        mean_low=means["low"],
        mean_high=means["high"],
        degenerate=degenerate,
    )


def mean_profile(features: FeatureBatch) -> np.ndarray:
    """Column means of a feature batch (one value per dimension)."""
    return features.rows.mean(axis=0)


def encoder_features(bundle: ModelBundle, dataset, labels=None) -> FeatureBatch:
    """Run a trained encoder over its modality's inputs of one split."""
    rows = bundle.encoder.features(dataset.modality(bundle.modality))
    return FeatureBatch(rows=rows, modality=bundle.modality, labels=dataset.labels)


SUITES = ("components", "loss_grid", "threshold", "lambda")

_COMPONENT_ROWS = [
    ("none", dict(freq=False, align=False, scale=False, log=False)),
    ("freq", dict(freq=True, align=False, scale=False, log=False)),
    ("align", dict(freq=False, align=True, scale=False, log=False)),
    ("freq+align", dict(freq=True, align=True, scale=False, log=False)),
    ("freq+scale", dict(freq=True, align=False, scale=True, log=False)),
    ("freq+align+scale", dict(freq=True, align=True, scale=True, log=False)),
    ("freq+align+scale+log", dict(freq=True, align=True, scale=True, log=True)),
]

_LOSS_GRID_ROWS = [
    ("low=mse,high=logmse", dict(low_loss="mse", high_loss="logmse")),
    ("low=mse,high=mse", dict(low_loss="mse", high_loss="mse")),
    ("low=logmse,high=logmse", dict(low_loss="logmse", high_loss="logmse")),
    ("low=logmse,high=mse", dict(low_loss="logmse", high_loss="mse")),
]

_THRESHOLD_VALUES = (0.25, 1.0 / 3.0, 0.5)
_LAMBDA_VALUES = (0.5, 1.0, 3.0, 5.0)


def suite_rows(suite: str):
    if suite == "components":
        return list(_COMPONENT_ROWS)
    if suite == "loss_grid":
        return list(_LOSS_GRID_ROWS)
    if suite == "threshold":
        return [(f"threshold={t:.6g}", dict(threshold=t)) for t in _THRESHOLD_VALUES]
    if suite == "lambda":
        return [
            (f"lambda1={l1:g},lambda2={l2:g}", dict(lambda1=l1, lambda2=l2))
            for l1 in _LAMBDA_VALUES
            for l2 in _LAMBDA_VALUES
        ]
    raise ValueError(f"unknown suite '{suite}', expected one of {SUITES}")


def _resolve_splits(source) -> DatasetSplits:
    if isinstance(source, DatasetSplits):
        return source
    return load_dataset(source)


def run_distill_task(data_dir, out_dir, config_dict):
    """Execute one grid cell; standalone so worker processes can run it."""
    splits = load_dataset(data_dir)
    config = ExperimentConfig.from_dict(config_dict)
    teacher = ModelBundle.load(Path(out_dir) / config.teacher_checkpoint)
    _, report = distill(splits, config, teacher)
    return report.final_accuracy


def run_ablation(data_dir, base_config: ExperimentConfig, suite: str,
                 seeds, out_dir, jobs=1):
    """Run one ablation suite; returns the grid as a JSON-ready dict.

    Teachers are trained once per (modality, seed) with the base settings and
    cached under ``out_dir/teachers``; every cell's echoed config references
    its teacher checkpoint relative to ``out_dir``, so rows stay re-runnable
    from the grid file alone.
    """
    rows = suite_rows(suite)
    seeds = list(seeds)
    out = Path(out_dir)
    teacher_dir = out / "teachers"
    teacher_dir.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and isinstance(data_dir, DatasetSplits):
        raise ValueError("parallel ablation needs an on-disk dataset directory")
    splits = _resolve_splits(data_dir)

    unimodal_accuracy = {m: {} for m in MODALITIES}
    teacher_paths = {}
    for seed in seeds:
        for m in MODALITIES:
            rel = f"teachers/uni_{m}_seed{seed}.ckpt"
            bundle, report = train_unimodal(
                splits, m, replace(base_config, seed=seed))
            bundle.save(out / rel)
            unimodal_accuracy[m][str(seed)] = report.final_accuracy
            teacher_paths[(m, seed)] = rel

    tasks = []
    for row_idx, (label, overrides) in enumerate(rows):
        for student in MODALITIES:
            teacher_m = "b" if student == "a" else "a"
            for seed in seeds:
                config = replace(
                    base_config,
                    student_modality=student,
                    seed=seed,
                    teacher_checkpoint=teacher_paths[(teacher_m, seed)],
                    **overrides,
                ).validate()
                tasks.append((row_idx, student, seed, config))

    accuracies = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(run_distill_task, str(data_dir), str(out),
                            cfg.to_dict()): (row_idx, student, seed)
                for row_idx, student, seed, cfg in tasks
            }
            for future, key in futures.items():
                accuracies[key] = future.result()
    else:
        for row_idx, student, seed, cfg in tasks:
            teacher = ModelBundle.load(out / cfg.teacher_checkpoint)
            _, report = distill(splits, cfg, teacher)
            accuracies[(row_idx, student, seed)] = report.final_accuracy

    grid_rows = []
    for row_idx, (label, overrides) in enumerate(rows):
        results = []
        per_modality = {}
        for student in MODALITIES:
            values = []
            for seed in seeds:
                teacher_m = "b" if student == "a" else "a"
                config = replace(
                    base_config,
                    student_modality=student,
                    seed=seed,
                    teacher_checkpoint=teacher_paths[(teacher_m, seed)],
                    **overrides,
                )
                acc = accuracies[(row_idx, student, seed)]
                values.append(acc)
                results.append({
                    "student_modality": student,
                    "seed": seed,
                    "accuracy": acc,
                    "config": config.to_dict(),
                })
            per_modality[student] = float(np.mean(values))
        grid_rows.append({
            "label": label,
            "overrides": overrides,
            "results": results,
            "mean_accuracy": per_modality,
        })

    return {
        "suite": suite,
        "base_config": base_config.to_dict(),
        "seeds": seeds,
        "unimodal_accuracy": unimodal_accuracy,
        "rows": grid_rows,
    }


GRID_SCHEMA = {
    "type": "object",
    "required": ["suite", "base_config", "seeds", "unimodal_accuracy", "rows"],
    "properties": {
        "suite": {"enum": list(SUITES)},
        "base_config": {"type": "object"},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "unimodal_accuracy": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["label", "overrides", "results", "mean_accuracy"],
                "properties": {
                    "label": {"type": "string"},
                    "overrides": {"type": "object"},
                    "mean_accuracy": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "number", "minimum": 0, "maximum": 1,
                        },
                    },
                    "results": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["student_modality", "seed", "accuracy",
                                         "config"],
                            "properties": {
                                "student_modality": {"enum": ["a", "b"]},
                                "seed": {"type": "integer"},
                                "accuracy": {
                                    "type": "number", "minimum": 0, "maximum": 1,
                                },
                                "config": {"type": "object"},
                            },
                        },
                    },
                },
            },
        },
    },
}


def validate_grid(grid):
    jsonschema.validate(grid, GRID_SCHEMA)
    return grid


_CSV_CONFIG_FIELDS = ("freq", "align", "scale", "log", "threshold",
                      "lambda1", "lambda2", "low_loss", "high_loss")


def grid_to_csv(grid, path):
    """Flatten a grid into one CSV line per (row, direction, seed) cell."""
    header = ["suite", "row", "label", "student_modality", "seed",
              *_CSV_CONFIG_FIELDS, "accuracy"]
    lines = [",".join(header)]
    for row_idx, row in enumerate(grid["rows"]):
        for res in row["results"]:
            cfg = res["config"]
            cells = [grid["suite"], str(row_idx), row["label"],
                     res["student_modality"], str(res["seed"])]
            for name in _CSV_CONFIG_FIELDS:
                value = cfg.get(name)
                cells.append("" if value is None else f"{value}")
            cells.append(f"{res['accuracy']:.17g}")
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
