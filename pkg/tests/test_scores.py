import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from disagreenet import (
    FidelityError,
    bi_series,
    binomial_distance,
    compute_scores,
    cum_loss,
    elp,
    lm,
    mean_margin,
    tpa,
)
from disagreenet.scores import (
    _wasserstein_to_binomial,
    learning_times,
    lm_per_epoch,
    load_scores_csv,
    save_bi_csv,
    save_scores_csv,
    slope_analysis,
)
from conftest import random_logits_trace, trace_from_correctness, trace_from_logits


def correctness_tensors(max_cells=12):
    return st.integers(min_value=1, max_value=3).flatmap(
        lambda e: st.integers(min_value=1, max_value=3).flatmap(
            lambda n: st.integers(min_value=1, max_value=max(1, max_cells // (e * n))).flatmap(
                lambda m: st.lists(
                    st.integers(min_value=0, max_value=1),
                    min_size=e * n * m, max_size=e * n * m,
                ).map(lambda bits: np.array(bits, dtype=np.uint8).reshape(e, n, m))
            )
        )
    )


class TestTpa:
    def test_all_correct(self):
        trace = trace_from_correctness(np.ones((1, 4, 1)))
        assert tpa(trace, 0, 0) == 1.0

    def test_three_of_four(self):
        trace = trace_from_correctness(np.array([[[1], [1], [1], [0]]]))
        assert tpa(trace, 0, 0) == 0.75

    def test_none_correct(self):
        trace = trace_from_correctness(np.zeros((1, 4, 1)))
        assert tpa(trace, 0, 0) == 0.0


class TestElp:
    def test_hand_example(self):
        # two models over three epochs: [0,0], [1,0], [1,1]
        correct = np.array([[[0], [0]], [[1], [0]], [[1], [1]]])
        assert elp(trace_from_correctness(correct))[0] == pytest.approx(0.5)

    def test_always_correct(self):
        trace = trace_from_correctness(np.ones((4, 3, 2)))
        assert np.allclose(elp(trace), 1.0)

    def test_staggered_learning_scores_lower(self):
        e, n = 10, 10
        simultaneous = np.zeros((e, n, 1), dtype=np.uint8)
        simultaneous[e // 2 :] = 1
        staggered = np.zeros((e, n, 1), dtype=np.uint8)
        for i in range(n):
            staggered[min(e // 2 + i, e) :, i] = 1
        v_sim = elp(trace_from_correctness(simultaneous))[0]
        v_stag = elp(trace_from_correctness(staggered))[0]
        assert v_stag < v_sim

    def test_epoch_set_restriction(self):
        correct = np.array([[[0]], [[1]], [[1]]])
        trace = trace_from_correctness(correct)
        assert elp(trace.with_epoch_set([0]))[0] == 0.0
        assert elp(trace.with_epoch_set([1, 2]))[0] == 1.0

    def test_empty_epoch_set_rejected(self):
        trace = trace_from_correctness(np.ones((2, 1, 1)))
        trace.epoch_set = []
        with pytest.raises(ValueError, match="epoch_set"):
            elp(trace)

    def test_no_labels_is_fidelity_error(self):
        trace = trace_from_correctness(np.ones((1, 1, 1)))
        trace.labels = None
        trace.correctness = None
        with pytest.raises(FidelityError):
            elp(trace)

    @settings(max_examples=60, deadline=None)
    @given(correctness_tensors())
    def test_matches_mean_of_tpa(self, correct):
        trace = trace_from_correctness(correct)
        e, n, m = correct.shape
        for ex in range(m):
            brute = sum(tpa(trace, ep, ex) for ep in range(e)) / e
            assert elp(trace)[ex] == pytest.approx(brute, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(correctness_tensors(), st.data())
    def test_bit_flip_raises_elp_by_exact_quantum(self, correct, data):
        e, n, m = correct.shape
        ep = data.draw(st.integers(0, e - 1))
        i = data.draw(st.integers(0, n - 1))
        ex = data.draw(st.integers(0, m - 1))
        if correct[ep, i, ex]:
            return
        flipped = correct.copy()
        flipped[ep, i, ex] = 1
        before = elp(trace_from_correctness(correct))[ex]
        after = elp(trace_from_correctness(flipped))[ex]
        assert after - before == pytest.approx(1.0 / (n * e), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(correctness_tensors(), st.randoms(use_true_random=False))
    def test_model_reorder_invariance(self, correct, rnd):
        order = list(range(correct.shape[1]))
        rnd.shuffle(order)
        base = elp(trace_from_correctness(correct))
        shuffled = elp(trace_from_correctness(correct[:, order, :]))
        assert np.allclose(base, shuffled)


class TestCumLoss:
    def test_even_probabilities_give_ln2(self):
        logits = np.zeros((1, 1, 1, 2))
        trace = trace_from_logits(logits, [0])
        assert cum_loss(trace)[0] == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct_approaches_zero(self):
        logits = np.zeros((1, 1, 1, 3))
        logits[..., 0] = 40.0
        trace = trace_from_logits(logits, [0])
        assert cum_loss(trace)[0] < 1e-6

    def test_two_epoch_average(self):
        # margins chosen so the per-cell CE is exactly 0.2 and 0.6
        def margin(ce):
            return -math.log(math.expm1(ce))
        logits = np.zeros((2, 1, 1, 2))
        logits[0, ..., 0] = margin(0.2)
        logits[1, ..., 0] = margin(0.6)
        trace = trace_from_logits(logits, [0])
        assert cum_loss(trace)[0] == pytest.approx(0.4, abs=1e-12)

    def test_requires_logits(self):
        trace = trace_from_correctness(np.ones((1, 1, 1)))
        with pytest.raises(FidelityError):
            cum_loss(trace)


class TestMeanMargin:
    def test_hand_values(self):
        logits = np.array([2.0, 0.5, -1.0]).reshape(1, 1, 1, 3)
        assert mean_margin(trace_from_logits(logits, [0]))[0] == pytest.approx(1.5)
        trace = trace_from_logits(logits, [1])
        assert mean_margin(trace)[0] == pytest.approx(-1.5)

    def test_equal_logits_zero_margin(self):
        logits = np.zeros((2, 3, 4, 5))
        trace = trace_from_logits(logits, np.zeros(4, dtype=int))
        assert np.allclose(mean_margin(trace), 0.0)

    def test_requires_logits(self):
        trace = trace_from_correctness(np.ones((1, 1, 1)))
        with pytest.raises(FidelityError):
            mean_margin(trace)


class TestLm:
    def test_certain_truth(self):
        logits = np.zeros((2, 2, 1, 2))
        logits[..., 0] = 50.0
        assert lm(trace_from_logits(logits, [0]))[0] == pytest.approx(1.0)

    def test_single_cell_probability(self):
        logits = np.log([0.3, 0.7]).reshape(1, 1, 1, 2)
        assert lm(trace_from_logits(logits, [0]))[0] == pytest.approx(0.3, abs=1e-12)

    def test_two_cell_average(self):
        logits = np.zeros((2, 1, 1, 2))
        logits[0, 0, 0] = np.log([0.2, 0.8])
        logits[1, 0, 0] = np.log([0.8, 0.2])
        assert lm(trace_from_logits(logits, [0]))[0] == pytest.approx(0.5, abs=1e-12)


class TestBiSeries:
    def test_unanimous_correct(self):
        trace = trace_from_correctness(np.ones((1, 5, 6)))
        assert bi_series(trace).bi[0] == pytest.approx(1.0)

    def test_hand_example(self):
        # M=4 with TPA values {1, 1, 0, 0.5} over 2 models
        correct = np.array([[[1, 1, 0, 1], [1, 1, 0, 0]]])
        assert bi_series(trace_from_correctness(correct)).bi[0] == pytest.approx(
            math.sqrt(0.5) + math.sqrt(0.25)
        )

    def test_maximum_split(self):
        correct = np.zeros((1, 3, 4), dtype=np.uint8)
        correct[0, :, :2] = 1
        assert bi_series(trace_from_correctness(correct)).bi[0] == pytest.approx(
            math.sqrt(2)
        )

    def test_max_bi_epoch_first_tie(self):
        correct = np.ones((3, 2, 2), dtype=np.uint8)
        assert bi_series(trace_from_correctness(correct)).max_bi_epoch == 0

    @settings(max_examples=40, deadline=None)
    @given(correctness_tensors(), st.randoms(use_true_random=False))
    def test_bounds_and_reorder_invariance(self, correct, rnd):
        series = bi_series(trace_from_correctness(correct))
        assert np.all(series.bi >= 0.0)
        assert np.all(series.bi <= math.sqrt(2) + 1e-12)
        ex_order = list(range(correct.shape[2]))
        rnd.shuffle(ex_order)
        mod_order = list(range(correct.shape[1]))
        rnd.shuffle(mod_order)
        reordered = bi_series(
            trace_from_correctness(correct[:, mod_order, :][:, :, ex_order])
        )
        assert np.allclose(series.bi, reordered.bi)


def brute_force_w1(weights_a, weights_b, support):
    """O(n^2) discrete optimal transport on a shared 1-D support."""
    # on the line, optimal transport is the CDF coupling; simulate it by
    # greedily matching sorted mass
    a = list(weights_a)
    b = list(weights_b)
    cost = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        move = min(a[i], b[j])
        cost += move * abs(support[i] - support[j])
        a[i] -= move
        b[j] -= move
        if a[i] <= 1e-15:
            i += 1
        if b[j] <= 1e-15:
            j += 1
    return cost


class TestBinomialDistance:
    def test_exact_binomial_is_zero(self):
        n = 4
        # counts drawn so the empirical distribution equals Binomial(4, 0.5)
        pmf = stats.binom.pmf(np.arange(n + 1), n, 0.5)
        counts = np.repeat(np.arange(n + 1), (pmf * 16).astype(int))
        assert _wasserstein_to_binomial(counts, n) == pytest.approx(0.0, abs=1e-12)

    def test_unanimous_subset_is_zero(self):
        counts = np.full(10, 2)
        assert _wasserstein_to_binomial(counts, 2) == pytest.approx(0.0, abs=1e-12)

    def test_polarized_two_model_case(self):
        # half the examples at agreement 0, half at 2, reference Binomial(2, 0.5)
        counts = np.array([0, 0, 2, 2])
        value = _wasserstein_to_binomial(counts, 2)
        emp = np.array([0.5, 0.0, 0.5])
        ref = stats.binom.pmf(np.arange(3), 2, 0.5)
        oracle = brute_force_w1(emp, ref, np.arange(3) / 2)
        assert oracle == pytest.approx(0.25)
        assert value == pytest.approx(oracle, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=40))
    def test_matches_transport_oracle(self, counts):
        n = 5
        counts = np.array(counts)
        p_hat = counts.mean() / n
        emp = np.bincount(counts, minlength=n + 1) / counts.size
        ref = stats.binom.pmf(np.arange(n + 1), n, p_hat)
        support = np.arange(n + 1) / n
        oracle = stats.wasserstein_distance(support, support, emp, ref)
        assert _wasserstein_to_binomial(counts, n) == pytest.approx(oracle, abs=1e-10)

    def test_empty_subset_reported_as_nan(self):
        trace = trace_from_correctness(np.ones((2, 3, 4)))
        clean, noisy = binomial_distance(trace, np.zeros(4, dtype=bool))
        assert np.all(np.isnan(noisy))
        assert not np.any(np.isnan(clean))


class TestLearningTimes:
    def test_learned_from_start(self):
        trace = trace_from_correctness(np.ones((5, 1, 2)))
        assert learning_times(trace).tolist() == [0, 0]

    def test_never_learned(self):
        trace = trace_from_correctness(np.zeros((5, 1, 1)))
        assert learning_times(trace).tolist() == [-1]

    def test_requires_stability(self):
        correct = np.array([[[1]], [[0]], [[1]], [[1]], [[1]]])
        assert learning_times(trace_from_correctness(correct)).tolist() == [2]


class TestSlopeAnalysis:
    def test_identical_curves_give_zero_gaps(self, rng):
        e, n, m, c = 6, 2, 24, 2
        logits = rng.normal(size=(e, n, m // 2, c))
        logits = np.concatenate([logits, logits], axis=2)
        labels = np.zeros(m, dtype=int)
        trace = trace_from_logits(logits, labels)
        mask = np.zeros(m, dtype=bool)
        mask[m // 2 :] = True
        result = slope_analysis(trace, mask)
        for _, _, d_agree, d_logit, diff in result.rows:
            assert d_agree == pytest.approx(0.0, abs=1e-12)
            assert d_logit == pytest.approx(0.0, abs=1e-12)
            assert diff == pytest.approx(0.0, abs=1e-12)

    def test_empty_noisy_mask_yields_no_rows(self, rng):
        trace = random_logits_trace(rng, 4, 2, 12, 2)
        result = slope_analysis(trace, np.zeros(12, dtype=bool))
        assert result.rows == []

    def test_small_buckets_dropped(self, rng):
        trace = random_logits_trace(rng, 4, 2, 8, 2)
        mask = np.zeros(8, dtype=bool)
        mask[:4] = True
        result = slope_analysis(trace, mask, min_bucket=10)
        assert result.rows == []
        assert result.dropped_buckets

    def test_slower_noisy_agreement_shows_positive_gap(self):
        e, n = 8, 4
        m = 40
        correct = np.zeros((e, n, m), dtype=np.uint8)
        correct[1:, :, :20] = 1                      # clean: learned at epoch 1
        correct[1:, : n // 2, 20:] = 1               # noisy: half the models
        logits = np.zeros((e, n, m, 2))
        logits[..., 0] = np.where(correct, 5.0, -5.0)
        labels = np.zeros(m, dtype=int)
        trace = trace_from_logits(logits, labels)
        mask = np.zeros(m, dtype=bool)
        mask[20:] = True
        result = slope_analysis(trace, mask)
        mid = [r for r in result.rows if r[1] == e // 2]
        assert mid and all(r[2] > 0 for r in mid)


class TestScoreCsv:
    def test_round_trip(self, rng, tmp_path):
        trace = random_logits_trace(rng, 3, 2, 5, 3)
        table = compute_scores(trace)
        mask = np.array([0, 1, 0, 0, 1], dtype=bool)
        path = tmp_path / "scores.csv"
        save_scores_csv(table, path, mask=mask)
        values, back_mask = load_scores_csv(path)
        assert np.array_equal(values["elp"], table.elp)
        assert np.array_equal(values["cum_loss"], table.cum_loss)
        assert np.array_equal(values["mean_margin"], table.mean_margin)
        assert np.array_equal(values["lm"], table.lm)
        assert np.array_equal(back_mask, mask)

    def test_correctness_only_table_omits_logit_columns(self, tmp_path):
        trace = trace_from_correctness(np.ones((2, 2, 3)))
        table = compute_scores(trace)
        assert table.cum_loss is None
        path = tmp_path / "scores.csv"
        save_scores_csv(table, path)
        values, mask = load_scores_csv(path)
        assert set(values) == {"elp"}
        assert mask is None

    def test_bi_csv(self, tmp_path):
        trace = trace_from_correctness(np.ones((3, 2, 2)))
        path = tmp_path / "bi.csv"
        save_bi_csv(bi_series(trace), path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,bi"
        assert len(lines) == 4


class TestLmPerEpoch:
    def test_matches_manual_average(self, rng):
        trace = random_logits_trace(rng, 2, 3, 4, 3)
        per_epoch = lm_per_epoch(trace)
        probs = np.exp(trace.logits - trace.logits.max(axis=-1, keepdims=True))
        probs /= probs.sum(axis=-1, keepdims=True)
        manual = probs[:, :, np.arange(4), trace.labels].mean(axis=1)
        assert np.allclose(per_epoch, manual)
