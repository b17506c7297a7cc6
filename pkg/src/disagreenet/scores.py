"""Per-example and per-epoch agreement statistics over ensemble traces.

Correctness-only traces support the agreement pace score, the bimodal index
and the binomial-distance diagnostic; traces that carry raw logits
additionally support the cumulative-loss, mean-margin and mean-probability
scores and the slope analysis.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import FidelityError
from .trace import EnsembleTrace


@dataclass
class ScoreTable:
    elp: np.ndarray                        # (M,) in [0, 1]
    cum_loss: np.ndarray | None = None     # (M,) >= 0
    mean_margin: np.ndarray | None = None  # (M,)
    lm: np.ndarray | None = None           # (M,) in [0, 1]


@dataclass
class BiSeries:
    bi: np.ndarray          # (E,) each in [0, sqrt(2)]
    max_bi_epoch: int


def _correctness(trace: EnsembleTrace) -> np.ndarray:
    if trace.correctness is None:
        raise FidelityError("trace carries no labels; correctness unavailable")
    return trace.correctness


def _logits(trace: EnsembleTrace) -> np.ndarray:
    if trace.logits is None:
        raise FidelityError("score requires a logits-bearing trace")
    return trace.logits


def _epoch_view(arr: np.ndarray, epoch_set) -> np.ndarray:
    if not epoch_set:
        raise ValueError("epoch_set must be nonempty")
    return arr[np.asarray(epoch_set, dtype=int)]


def tpa(trace: EnsembleTrace, epoch: int, example: int) -> float:
    """Fraction of models predicting the given label at one epoch."""
    return float(_correctness(trace)[epoch, :, example].mean())


def elp(trace: EnsembleTrace) -> np.ndarray:
    """Agreement pace per example: mean model accuracy over the epoch set."""
    correct = _epoch_view(_correctness(trace), trace.epoch_set)
    return correct.mean(axis=(0, 1))


def cum_loss(trace: EnsembleTrace) -> np.ndarray:
    """Mean cross-entropy per example over models and the epoch set."""
    logits = _epoch_view(_logits(trace), trace.epoch_set)
    y = trace.labels
    if y is None:
        raise FidelityError("cumulative loss requires labels")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    true_logit = np.take_along_axis(
        shifted, y[None, None, :, None], axis=-1
    )[..., 0]
    return (log_z - true_logit).mean(axis=(0, 1))


def mean_margin(trace: EnsembleTrace) -> np.ndarray:
    """Mean (true logit - best other logit) over models and the epoch set."""
    logits = _epoch_view(_logits(trace), trace.epoch_set)
    y = trace.labels
    if y is None:
        raise FidelityError("mean margin requires labels")
    if trace.num_classes < 2:
        raise ValueError("margin needs at least two classes")
    true_logit = np.take_along_axis(logits, y[None, None, :, None], axis=-1)[..., 0]
    masked = logits.copy()
    np.put_along_axis(masked, y[None, None, :, None], -np.inf, axis=-1)
    return (true_logit - masked.max(axis=-1)).mean(axis=(0, 1))


def lm(trace: EnsembleTrace) -> np.ndarray:
    """Mean softmax probability of the given label over models and epochs."""
    logits = _epoch_view(_logits(trace), trace.epoch_set)
    y = trace.labels
    if y is None:
        raise FidelityError("mean probability requires labels")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    true_prob = np.take_along_axis(probs, y[None, None, :, None], axis=-1)[..., 0]
    return true_prob.mean(axis=(0, 1))


def bi_series(trace: EnsembleTrace) -> BiSeries:
    """Bimodal index per epoch: sqrt(frac unanimously right) + sqrt(frac
    unanimously wrong), using exact integer unanimity counts."""
    correct = _correctness(trace)
    n = trace.num_models
    counts = correct.sum(axis=1, dtype=np.int64)        # (E, M)
    frac_all = (counts == n).mean(axis=1)
    frac_none = (counts == 0).mean(axis=1)
    bi = np.sqrt(frac_all) + np.sqrt(frac_none)
    return BiSeries(bi=bi, max_bi_epoch=int(np.argmax(bi)))


def compute_scores(trace: EnsembleTrace) -> ScoreTable:
    """All per-example scores the trace's fidelity level supports."""
    table = ScoreTable(elp=elp(trace))
    if trace.logits is not None:
        table.cum_loss = cum_loss(trace)
        table.mean_margin = mean_margin(trace)
        table.lm = lm(trace)
    return table


def _wasserstein_to_binomial(counts: np.ndarray, n: int) -> float:
    """W1 on support {0..N}/N between the empirical agreement-count
    distribution and Binomial(N, mean accuracy)."""
    p_hat = counts.mean() / n
    emp = np.bincount(counts, minlength=n + 1) / counts.size
    ref = stats.binom.pmf(np.arange(n + 1), n, p_hat)
    cdf_gap = np.abs(np.cumsum(emp) - np.cumsum(ref))[:-1]
    return float(cdf_gap.sum() / n)


def binomial_distance(trace: EnsembleTrace, mask: np.ndarray):
    """Per-epoch W1 distance to the matched binomial, separately for the
    clean and noisy subsets.  Empty subsets yield NaN for every epoch."""
    correct = _correctness(trace)
    mask = np.asarray(mask, dtype=bool)
    counts = correct.sum(axis=1, dtype=np.int64)        # (E, M)
    n = trace.num_models
    clean = np.full(trace.num_epochs, np.nan)
    noisy = np.full(trace.num_epochs, np.nan)
    for e in range(trace.num_epochs):
        if (~mask).any():
            clean[e] = _wasserstein_to_binomial(counts[e, ~mask], n)
        if mask.any():
            noisy[e] = _wasserstein_to_binomial(counts[e, mask], n)
    return clean, noisy


@dataclass
class SlopeAnalysis:
    """Per-learning-time comparison of agreement vs truth-probability slopes.

    ``rows`` holds (learning_time, epoch, d_agreement, d_logit, diff) tuples
    where d_* is the clean-minus-noisy gap of the bucket's mean curve and
    diff = d_agreement - d_logit.
    """

    rows: list = field(default_factory=list)
    dropped_buckets: list = field(default_factory=list)


def learning_times(trace: EnsembleTrace, stable_epochs: int = 3) -> np.ndarray:
    """First epoch at which any model's correctness holds for
    ``stable_epochs`` consecutive epochs; -1 when never learned."""
    correct = _correctness(trace)
    e_ = trace.num_epochs
    k = min(stable_epochs, e_)
    stable = np.ones((e_ - k + 1,) + correct.shape[1:], dtype=bool)
    for off in range(k):
        stable &= correct[off : off + e_ - k + 1].astype(bool)
    any_model = stable.any(axis=1)                      # (E-k+1, M)
    times = np.where(any_model.any(axis=0), any_model.argmax(axis=0), -1)
    return times


def slope_analysis(trace: EnsembleTrace, mask: np.ndarray,
                   min_bucket: int = 10) -> SlopeAnalysis:
    """Group clean/noisy examples by learning time and compare how fast their
    mean agreement rises versus their mean ground-truth probability."""
    correct = _correctness(trace)
    probs_true = lm_per_epoch(trace)                    # (E, M)
    mask = np.asarray(mask, dtype=bool)
    times = learning_times(trace)
    agreement = correct.mean(axis=1)                    # (E, M)

    result = SlopeAnalysis()
    for t in sorted(set(times[times >= 0])):
        clean_sel = (times == t) & ~mask
        noisy_sel = (times == t) & mask
        if clean_sel.sum() < min_bucket or noisy_sel.sum() < min_bucket:
            result.dropped_buckets.append(
                (int(t), int(clean_sel.sum()), int(noisy_sel.sum()))
            )
            continue
        d_agree = agreement[:, clean_sel].mean(axis=1) - agreement[:, noisy_sel].mean(axis=1)
        d_logit = probs_true[:, clean_sel].mean(axis=1) - probs_true[:, noisy_sel].mean(axis=1)
        for e in range(trace.num_epochs):
            result.rows.append(
                (int(t), e, float(d_agree[e]), float(d_logit[e]),
                 float(d_agree[e] - d_logit[e]))
            )
    return result


def lm_per_epoch(trace: EnsembleTrace) -> np.ndarray:
    """Mean ground-truth probability per (epoch, example), averaged over models."""
    logits = _logits(trace)
    y = trace.labels
    if y is None:
        raise FidelityError("slope analysis requires labels")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    true_prob = np.take_along_axis(probs, y[None, None, :, None], axis=-1)[..., 0]
    return true_prob.mean(axis=1)


def save_scores_csv(table: ScoreTable, path, mask=None) -> None:
    """example_id, elp, cum_loss, mean_margin, lm[, is_noisy_truth]."""
    m = table.elp.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["example_id", "elp", "cum_loss", "mean_margin", "lm"]
        if mask is not None:
            head.append("is_noisy_truth")
        writer.writerow(head)
        for i in range(m):
            row = [i, repr(float(table.elp[i]))]
            for col in (table.cum_loss, table.mean_margin, table.lm):
                row.append(repr(float(col[i])) if col is not None else "")
            if mask is not None:
                row.append(int(mask[i]))
            writer.writerow(row)


def load_scores_csv(path):
    """Return dict of column name -> float array (missing columns omitted),
    plus the truth mask when present."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError("empty scores file")
    out = {}
    for col in ("elp", "cum_loss", "mean_margin", "lm"):
        if rows[0].get(col):
            out[col] = np.array([float(r[col]) for r in rows])
    mask = None
    if rows[0].get("is_noisy_truth") not in (None, ""):
        mask = np.array([bool(int(r["is_noisy_truth"])) for r in rows])
    return out, mask


def save_bi_csv(series: BiSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "bi"])
        for e, v in enumerate(series.bi):
            writer.writerow([e, repr(float(v))])
