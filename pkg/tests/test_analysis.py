"""Similarity reports, mean profiles, and the ablation grid machinery."""

import json

import numpy as np
import pytest

from freqkd.analysis import (
    grid_to_csv,
    mean_profile,
    run_ablation,
    similarity_report,
    suite_rows,
    validate_grid,
)
from freqkd.data import SyntheticConfig, generate, save_dataset
from freqkd.errors import PairingError
from freqkd.frequency import BandSplit
from freqkd.losses import FeatureBatch
from freqkd.train import ExperimentConfig, train_unimodal

BAND = BandSplit.for_dim(16, 0.5)


def batch(rows, modality="a", labels=None):
    rows = np.asarray(rows, dtype=float)
    if labels is None:
        labels = np.zeros(rows.shape[0], dtype=int)
    return FeatureBatch(rows=rows, modality=modality, labels=labels)


class TestSimilarityReport:
    def test_identical_features(self):
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((10, 16))
        rows[3] = 1.0  # constant row: degenerate high band
        report = similarity_report(batch(rows), batch(rows.copy(), "b"), BAND)
        assert report.mean_raw == pytest.approx(1.0, abs=1e-9)
        assert report.mean_low == pytest.approx(1.0, abs=1e-9)
        assert report.mean_high == pytest.approx(1.0, abs=1e-9)
        assert report.degenerate["high"] == 1
        assert report.degenerate["raw"] == 0

    def test_negated_features(self):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((8, 16))
        report = similarity_report(batch(rows), batch(-rows, "b"), BAND)
        assert report.mean_raw == pytest.approx(-1.0, abs=1e-9)
        assert report.mean_high == pytest.approx(-1.0, abs=1e-9)

    def test_swap_symmetric(self):
        rng = np.random.default_rng(2)
        a = batch(rng.standard_normal((12, 16)))
        b = batch(rng.standard_normal((12, 16)), "b")
        fwd = similarity_report(a, b, BAND)
        rev = similarity_report(b, a, BAND)
        assert fwd.mean_raw == pytest.approx(rev.mean_raw, abs=1e-12)
        assert fwd.mean_low == pytest.approx(rev.mean_low, abs=1e-12)
        assert fwd.mean_high == pytest.approx(rev.mean_high, abs=1e-12)

    def test_means_bounded(self):
        rng = np.random.default_rng(3)
        report = similarity_report(batch(rng.standard_normal((30, 16))),
                                   batch(rng.standard_normal((30, 16)), "b"),
                                   BAND)
        for value in (report.mean_raw, report.mean_low, report.mean_high):
            assert -1.0 <= value <= 1.0

    def test_unpaired_rejected(self):
        a = batch(np.zeros((4, 16)), labels=np.array([0, 0, 1, 1]))
        b = batch(np.ones((4, 16)), "b", labels=np.array([0, 1, 1, 1]))
        with pytest.raises(PairingError):
            similarity_report(a, b, BAND)


class TestMeanProfile:
    def test_constant_batch(self):
        rows = np.full((7, 5), 3.25)
        np.testing.assert_array_equal(mean_profile(batch(rows)), np.full(5, 3.25))

    def test_single_sample_is_itself(self):
        rows = np.array([[1.0, -2.0, 0.5, 0.0, 9.0]])
        np.testing.assert_array_equal(mean_profile(batch(rows)), rows[0])

    def test_generator_offsets_visible(self):
        splits = generate(SyntheticConfig(seed=2, train_size=300, test_size=60))
        prof_a = mean_profile(batch(splits.train.x["a"], "a", splits.train.labels))
        prof_b = mean_profile(batch(splits.train.x["b"], "b", splits.train.labels))
        assert prof_a.mean() > prof_b.mean()


class TestSuiteRows:
    def test_row_counts(self):
        assert len(suite_rows("components")) == 7
        assert len(suite_rows("loss_grid")) == 4
        assert len(suite_rows("threshold")) == 3
        assert len(suite_rows("lambda")) == 16

    def test_component_pattern(self):
        labels = [label for label, _ in suite_rows("components")]
        assert labels[0] == "none"
        assert labels[-1] == "freq+align+scale+log"
        toggles = [o for _, o in suite_rows("components")]
        assert toggles[2] == dict(freq=False, align=True, scale=False, log=False)

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            suite_rows("nope")


@pytest.fixture(scope="module")
def micro_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro")
    splits = generate(SyntheticConfig(seed=0, train_size=120, test_size=60))
    save_dataset(splits, root)
    return root, splits


MICRO_RUN = dict(epochs=3, batch_size=32)


class TestRunAblation:
    def test_loss_grid_structure(self, micro_dataset, tmp_path):
        root, _ = micro_dataset
        base = ExperimentConfig(seed=0, **MICRO_RUN)
        grid = run_ablation(root, base, "loss_grid", seeds=[0], out_dir=tmp_path)
        validate_grid(grid)
        assert len(grid["rows"]) == 4
        for row in grid["rows"]:
            assert len(row["results"]) == 2  # both directions x one seed
            for res in row["results"]:
                echoed = ExperimentConfig.from_dict(res["config"])
                assert echoed.low_loss in ("mse", "logmse")

    def test_all_off_row_matches_unimodal(self, micro_dataset, tmp_path):
        root, splits = micro_dataset
        base = ExperimentConfig(seed=0, **MICRO_RUN)
        grid = run_ablation(root, base, "components", seeds=[0],
                            out_dir=tmp_path)
        validate_grid(grid)
        none_row = grid["rows"][0]
        assert none_row["label"] == "none"
        for res in none_row["results"]:
            m = res["student_modality"]
            _, uni = train_unimodal(splits, m,
                                    ExperimentConfig(seed=0, **MICRO_RUN))
            assert res["accuracy"] == uni.final_accuracy
            assert grid["unimodal_accuracy"][m]["0"] == uni.final_accuracy

    def test_row_rerunnable_from_echo(self, micro_dataset, tmp_path):
        from freqkd.analysis import run_distill_task

        root, _ = micro_dataset
        base = ExperimentConfig(seed=0, **MICRO_RUN)
        grid = run_ablation(root, base, "threshold", seeds=[0],
                            out_dir=tmp_path)
        res = grid["rows"][1]["results"][0]
        again = run_distill_task(root, tmp_path, res["config"])
        assert again == res["accuracy"]

    def test_csv_flattening(self, micro_dataset, tmp_path):
        root, _ = micro_dataset
        base = ExperimentConfig(seed=0, **MICRO_RUN)
        grid = run_ablation(root, base, "loss_grid", seeds=[0],
                            out_dir=tmp_path)
        csv_path = tmp_path / "grid.csv"
        grid_to_csv(grid, csv_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0].startswith("suite,row,label,student_modality,seed")
        assert len(lines) == 1 + 4 * 2

    def test_parallel_matches_serial(self, micro_dataset, tmp_path):
        root, _ = micro_dataset
        base = ExperimentConfig(seed=0, **MICRO_RUN)
        serial = run_ablation(root, base, "threshold", seeds=[0],
                              out_dir=tmp_path / "s", jobs=1)
        parallel = run_ablation(root, base, "threshold", seeds=[0],
                                out_dir=tmp_path / "p", jobs=2)
        for row_s, row_p in zip(serial["rows"], parallel["rows"]):
            assert row_s["mean_accuracy"] == row_p["mean_accuracy"]

    def test_grid_json_serializable(self, micro_dataset, tmp_path):
        root, _ = micro_dataset
        base = ExperimentConfig(seed=0, **MICRO_RUN)
        grid = run_ablation(root, base, "loss_grid", seeds=[0],
                            out_dir=tmp_path)
        text = json.dumps(grid, sort_keys=True)
        validate_grid(json.loads(text))
