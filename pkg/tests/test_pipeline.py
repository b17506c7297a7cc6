import numpy as np
import pytest

from disagreenet import (
    NoiseReport,
    NoiseSpec,
    TrainConfig,
    disagreenet,
    filter_and_retrain,
    identification_metrics,
    inject_noise,
    make_blobs,
    normalize_scores,
    run_noise_identification,
)
from disagreenet.pipeline import load_report, save_filtered_indices, save_report


def bimodal_scores(rng, low=500, high=500):
    lo = np.clip(rng.normal(0.05, 0.01, size=low), 0.0, 1.0)
    hi = np.clip(rng.normal(0.95, 0.01, size=high), 0.0, 1.0)
    return np.concatenate([lo, hi])


class TestNormalizeScores:
    def test_elp_passthrough(self):
        values = np.array([0.0, 0.5, 1.0])
        out, orientation = normalize_scores("elp", values)
        assert np.array_equal(out, values)
        assert orientation == "low_is_noisy"

    def test_cum_loss_minmax_high_noisy(self):
        out, orientation = normalize_scores("cum_loss", np.array([1.0, 3.0, 5.0]))
        assert np.allclose(out, [0.0, 0.5, 1.0])
        assert orientation == "high_is_noisy"

    def test_mean_margin_minmax_low_noisy(self):
        out, orientation = normalize_scores("mean_margin", np.array([-2.0, 0.0, 6.0]))
        assert np.allclose(out, [0.0, 0.25, 1.0])
        assert orientation == "low_is_noisy"

    def test_zero_span_maps_to_half(self):
        out, _ = normalize_scores("cum_loss", np.full(5, 2.0))
        assert np.allclose(out, 0.5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="score kind"):
            normalize_scores("entropy", np.array([0.1, 0.2]))


class TestDisagreenet:
    def test_bimodal_fixture_estimates_half(self, rng):
        scores = bimodal_scores(rng)
        report = disagreenet(scores, orientation="low_is_noisy")
        assert report.noise_estimate == pytest.approx(0.5, abs=0.01)
        assert np.array_equal(report.noisy_indices, np.arange(500))

    def test_orientation_flip(self, rng):
        scores = bimodal_scores(rng)
        report = disagreenet(scores, orientation="high_is_noisy")
        assert np.array_equal(report.noisy_indices, np.arange(500, 1000))

    def test_constant_scores_take_degenerate_path(self):
        report = disagreenet(np.full(100, 0.9))
        assert report.degenerate
        assert report.noise_estimate == 0.0
        assert report.noisy_indices.size == 0
        assert report.bmm is None

    def test_estimate_equals_flagged_fraction_exactly(self, rng):
        scores = bimodal_scores(rng, low=300, high=700)
        report = disagreenet(scores)
        assert report.noise_estimate == report.noisy_indices.size / scores.size

    def test_unnormalized_scores_rejected(self):
        with pytest.raises(ValueError, match="normalized"):
            disagreenet(np.array([-0.5, 0.5] * 10))

    def test_unknown_orientation_rejected(self, rng):
        with pytest.raises(ValueError, match="orientation"):
            disagreenet(bimodal_scores(rng), orientation="sideways")

    def test_deterministic(self, rng):
        scores = bimodal_scores(rng)
        a = disagreenet(scores, seed=3)
        b = disagreenet(scores, seed=3)
        assert a.noise_estimate == b.noise_estimate
        assert np.array_equal(a.noisy_indices, b.noisy_indices)
        assert a.bmm.threshold == b.bmm.threshold


class TestIdentificationMetrics:
    def report_with(self, indices, total):
        return NoiseReport(
            noise_estimate=len(indices) / total,
            noisy_indices=np.array(indices, dtype=np.int64),
            score_used="elp",
            bmm=None,
        )

    def test_perfect_flagging(self):
        mask = np.zeros(10, dtype=bool)
        mask[[2, 5]] = True
        metrics = identification_metrics(self.report_with([2, 5], 10), mask)
        assert metrics["f1"] == 1.0
        assert metrics["estimate_abs_error"] == pytest.approx(0.0)

    def test_nothing_flagged(self):
        mask = np.zeros(10, dtype=bool)
        mask[:3] = True
        metrics = identification_metrics(self.report_with([], 10), mask)
        assert metrics["recall"] == 0.0
        assert metrics["f1"] == 0.0

    def test_hand_computed_values(self):
        total = 1000
        mask = np.zeros(total, dtype=bool)
        mask[:400] = True
        flagged = list(range(250)) + list(range(400, 450))  # 250 true + 50 false
        metrics = identification_metrics(self.report_with(flagged, total), mask)
        assert metrics["precision"] == pytest.approx(250 / 300)
        assert metrics["recall"] == pytest.approx(0.625)
        assert metrics["f1"] == pytest.approx(2 * (250 / 300) * 0.625 / (250 / 300 + 0.625))

    def test_empty_mask_reports_absent_metrics(self):
        metrics = identification_metrics(self.report_with([1], 10), np.zeros(10, dtype=bool))
        assert metrics["precision"] is None
        assert metrics["recall"] is None
        assert metrics["f1"] is None
        assert metrics["estimate_abs_error"] == pytest.approx(0.1)


@pytest.fixture(scope="module")
def noisy_setup():
    train = inject_noise(
        make_blobs(3, 60, 2, 8.0, seed=0),
        NoiseSpec(kind="symmetric", rate=0.3, seed=1),
    )
    test = make_blobs(3, 30, 2, 8.0, seed=99)
    cfg = TrainConfig(ensemble_size=1, epochs=10, seed=2)
    return train, test, cfg


class TestFilterAndRetrain:
    def test_empty_report_equals_plain_training(self, noisy_setup):
        train, test, cfg = noisy_setup
        empty = NoiseReport(0.0, np.array([], dtype=np.int64), "elp", None)
        result = filter_and_retrain(train, empty, cfg, test)
        assert result["retained_count"] == train.num_examples
        assert 0.0 <= result["test_accuracy_best_epoch"] <= 1.0
        assert result["test_accuracy_final_epoch"] <= result["test_accuracy_best_epoch"]

    def test_oracle_filter_beats_random_removal(self, noisy_setup):
        train, test, cfg = noisy_setup
        oracle = NoiseReport(
            train.corruption_mask.mean(),
            np.flatnonzero(train.corruption_mask).astype(np.int64),
            "oracle", None,
        )
        rng = np.random.default_rng(5)
        random_idx = np.sort(rng.choice(train.num_examples, oracle.noisy_indices.size,
                                        replace=False)).astype(np.int64)
        random_report = NoiseReport(oracle.noise_estimate, random_idx, "random", None)
        acc_oracle = filter_and_retrain(train, oracle, cfg, test)["test_accuracy_final_epoch"]
        acc_random = filter_and_retrain(train, random_report, cfg, test)["test_accuracy_final_epoch"]
        assert acc_oracle >= acc_random

    def test_all_flagged_rejected(self, noisy_setup):
        train, test, cfg = noisy_setup
        everything = NoiseReport(1.0, np.arange(train.num_examples, dtype=np.int64),
                                 "elp", None)
        with pytest.raises(ValueError, match="empty training set"):
            filter_and_retrain(train, everything, cfg, test)

    def test_out_of_range_indices_rejected(self, noisy_setup):
        train, test, cfg = noisy_setup
        bad = NoiseReport(0.01, np.array([10_000], dtype=np.int64), "elp", None)
        with pytest.raises(ValueError, match="out of range"):
            filter_and_retrain(train, bad, cfg, test)


class TestEndToEnd:
    def test_small_noisy_run_estimates_rate(self):
        ds = inject_noise(
            make_blobs(4, 100, 2, 9.0, seed=0),
            NoiseSpec(kind="symmetric", rate=0.2, seed=1),
        )
        cfg = TrainConfig(ensemble_size=6, epochs=15, seed=2)
        report = run_noise_identification(ds, cfg)
        metrics = identification_metrics(report, ds.corruption_mask)
        assert metrics["f1"] > 0.9
        assert metrics["estimate_abs_error"] < 0.05

    def test_score_kind_requiring_logits_is_guarded(self):
        ds = make_blobs(2, 30, 2, 8.0, seed=0)
        cfg = TrainConfig(ensemble_size=2, epochs=2, seed=0)
        with pytest.raises(ValueError, match="record_logits"):
            run_noise_identification(ds, cfg, score_kind="cum_loss")


class TestReportSerialization:
    def test_round_trip(self, rng, tmp_path):
        report = disagreenet(bimodal_scores(rng), provenance={"train_seed": 4})
        report.metrics = {"f1": 0.9}
        path = tmp_path / "report.json"
        save_report(report, path)
        back = load_report(path)
        assert back.noise_estimate == report.noise_estimate
        assert np.array_equal(back.noisy_indices, report.noisy_indices)
        assert back.bmm.threshold == report.bmm.threshold
        assert np.allclose(back.bmm.alpha, report.bmm.alpha)
        assert back.metrics == {"f1": 0.9}
        assert back.provenance["train_seed"] == 4

    def test_degenerate_round_trip(self, tmp_path):
        report = disagreenet(np.full(50, 0.7))
        path = tmp_path / "report.json"
        save_report(report, path)
        back = load_report(path)
        assert back.degenerate
        assert back.bmm is None

    def test_version_checked(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text('{"version": 99}')
        with pytest.raises(ValueError, match="version"):
            load_report(path)

    def test_filtered_indices_file(self, rng, tmp_path):
        report = disagreenet(bimodal_scores(rng, low=3, high=17))
        path = tmp_path / "ids.txt"
        save_filtered_indices(report, path)
        lines = path.read_text().split()
        assert [int(v) for v in lines] == report.noisy_indices.tolist()
