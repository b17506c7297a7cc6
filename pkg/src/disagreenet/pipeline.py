"""End-to-end noise filtration: score vector -> Beta-mixture threshold ->
noise estimate and flagged indices, plus evaluation metrics and the
filtered-retraining harness."""

import json
from dataclasses import dataclass, field

import numpy as np

from .bmm import BmmFit, fit_bmm
from .dataset import LabeledDataset
from .errors import DegenerateFitError
from .trainer import TrainConfig, train_ensemble

SCORE_KINDS = ("elp", "cum_loss", "mean_margin")
REPORT_VERSION = 1


@dataclass
class NoiseReport:
    noise_estimate: float
    noisy_indices: np.ndarray            # sorted int ids
    score_used: str
    bmm: BmmFit | None
    degenerate: bool = False
    metrics: dict | None = None
    provenance: dict = field(default_factory=dict)

    def mask_for(self, num_examples: int) -> np.ndarray:
        mask = np.zeros(num_examples, dtype=bool)
        mask[self.noisy_indices] = True
        return mask


def normalize_scores(kind: str, values: np.ndarray):
    """Map a raw score vector into [0, 1] and give its noisy orientation.

    The agreement-pace score is already a [0, 1] fraction with low = noisy.
    Cumulative loss is min-max normalized (high loss = noisy); mean margin is
    affinely mapped to [0, 1] using the observed range (low margin = noisy).
    """
    values = np.asarray(values, dtype=np.float64)
    if kind == "elp":
        return values, "low_is_noisy"
    span = np.ptp(values)
    if span == 0.0:
        return np.full_like(values, 0.5), (
            "high_is_noisy" if kind == "cum_loss" else "low_is_noisy"
        )
    scaled = (values - values.min()) / span
    if kind == "cum_loss":
        return scaled, "high_is_noisy"
    if kind == "mean_margin":
        return scaled, "low_is_noisy"
    raise ValueError(f"unknown score kind {kind!r}")


def disagreenet(scores, orientation: str = "low_is_noisy", score_used: str = "elp",
                max_iter: int = 200, tol: float = 1e-6, seed: int = 0,
                restarts: int = 1, provenance=None) -> NoiseReport:
    """Fit a two-component Beta mixture to the scores and flag the noisy side
    of its intersection threshold; the noise estimate is the flagged fraction."""
    scores = np.asarray(scores, dtype=np.float64)
    if orientation not in ("low_is_noisy", "high_is_noisy"):
        raise ValueError(f"unknown orientation {orientation!r}")
    if scores.min() < 0.0 or scores.max() > 1.0:
        raise ValueError("scores must be normalized into [0, 1]")

    provenance = dict(provenance or {})
    provenance.setdefault("seed", seed)
    try:
        fit = fit_bmm(scores, max_iter=max_iter, tol=tol, seed=seed, restarts=restarts)
    except DegenerateFitError:
        return NoiseReport(
            noise_estimate=0.0,
            noisy_indices=np.array([], dtype=np.int64),
            score_used=score_used,
            bmm=None,
            degenerate=True,
            provenance=provenance,
        )
    if orientation == "low_is_noisy":
        flagged = scores < fit.threshold
    else:
        flagged = scores > fit.threshold
    idx = np.flatnonzero(flagged).astype(np.int64)
    return NoiseReport(
        noise_estimate=idx.size / scores.size,
        noisy_indices=idx,
        score_used=score_used,
        bmm=fit,
        provenance=provenance,
    )


def identification_metrics(report: NoiseReport, mask, true_rate=None) -> dict:
    """Precision / recall / F1 of the flagged set against the ground-truth
    corruption mask, plus the absolute noise-estimate error."""
    mask = np.asarray(mask, dtype=bool)
    flagged = report.mask_for(mask.size)
    tp = int((flagged & mask).sum())
    fp = int((flagged & ~mask).sum())
    fn = int((~flagged & mask).sum())
    metrics = {}
    if mask.any():
        metrics["precision"] = tp / (tp + fp) if tp + fp else 0.0
        metrics["recall"] = tp / (tp + fn)
        denom = metrics["precision"] + metrics["recall"]
        metrics["f1"] = (
            2.0 * metrics["precision"] * metrics["recall"] / denom if denom else 0.0
        )
    else:
        metrics["precision"] = None
        metrics["recall"] = None
        metrics["f1"] = None
    if true_rate is None:
        true_rate = mask.mean()
    metrics["estimate_abs_error"] = abs(report.noise_estimate - float(true_rate))
    return metrics


def filter_and_retrain(ds: LabeledDataset, report: NoiseReport, cfg: TrainConfig,
                       test_ds: LabeledDataset) -> dict:
    """Train one model on the dataset minus the flagged indices; report test
    accuracy at the best epoch (and at the final epoch, for reference)."""
    idx = np.asarray(report.noisy_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= ds.num_examples):
        raise ValueError("report indices out of range for dataset")
    keep = np.setdiff1d(np.arange(ds.num_examples), idx)
    if keep.size == 0:
        raise ValueError("empty training set")

    subset = LabeledDataset(
        features=ds.features[keep],
        given_labels=ds.given_labels[keep],
        num_classes=ds.num_classes,
    )
    single = TrainConfig(
        ensemble_size=1,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        hidden_units=cfg.hidden_units,
        seed=cfg.seed,
        record_logits=False,
        weight_decay=cfg.weight_decay,
        lr_schedule=cfg.lr_schedule,
    )
    # reuse the ensemble trainer with an end-of-epoch test evaluation pass
    from .trainer import MlpModel, _epoch_lr  # local import avoids cycle at module load
    import math

    rng = np.random.default_rng(single.seed)
    model = MlpModel(subset.num_features, subset.num_classes, single.hidden_units, rng)
    velocity = [np.zeros_like(p) for p in model.params]
    x, y = subset.features, subset.given_labels
    accs = []
    for epoch in range(single.epochs):
        lr = _epoch_lr(single, epoch)
        order = rng.permutation(keep.size)
        for k in range(0, keep.size, single.batch_size):
            batch = order[k : k + single.batch_size]
            loss, grads, _ = model.loss_and_grads(x[batch], y[batch])
            if not math.isfinite(loss):
                raise ValueError(f"retraining diverged at epoch {epoch}")
            for p, v, g in zip(model.params, velocity, grads):
                if single.weight_decay:
                    g = g + single.weight_decay * p
                v *= single.momentum
                v += g
                p -= lr * v
        preds = model.logits(test_ds.features).argmax(axis=1)
        accs.append(float((preds == test_ds.given_labels).mean()))
    return {
        "test_accuracy_best_epoch": max(accs),
        "test_accuracy_final_epoch": accs[-1],
        "best_epoch": int(np.argmax(accs)),
        "retained_count": int(keep.size),
    }


def run_noise_identification(ds: LabeledDataset, cfg: TrainConfig,
                             score_kind: str = "elp", bmm_seed: int = 0,
                             restarts: int = 1) -> NoiseReport:
    """Convenience wrapper: train the ensemble, score it, run the filter."""
    from . import scores as sc

    trace = train_ensemble(ds, cfg)
    table = sc.compute_scores(trace)
    raw = getattr(table, score_kind)
    if raw is None:
        raise ValueError(f"{score_kind} requires record_logits=True")
    values, orientation = normalize_scores(score_kind, raw)
    return disagreenet(
        values,
        orientation=orientation,
        score_used=score_kind,
        seed=bmm_seed,
        restarts=restarts,
        provenance={"train_seed": cfg.seed, "ensemble_size": cfg.ensemble_size},
    )


def save_report(report: NoiseReport, path) -> None:
    """Versioned structured-text (JSON) serialization of a NoiseReport."""
    doc = {
        "version": REPORT_VERSION,
        "noise_estimate": report.noise_estimate,
        "noisy_indices": [int(i) for i in report.noisy_indices],
        "score_used": report.score_used,
        "degenerate": report.degenerate,
        "metrics": report.metrics,
        "provenance": report.provenance,
    }
    if report.bmm is not None:
        doc["bmm"] = {
            "alpha": [float(v) for v in report.bmm.alpha],
            "beta": [float(v) for v in report.bmm.beta],
            "weight": [float(v) for v in report.bmm.weight],
            "threshold": report.bmm.threshold,
            "threshold_fallback": report.bmm.threshold_fallback,
            "low_component": report.bmm.low_component,
            "converged": report.bmm.converged,
            "iterations": report.bmm.iterations,
            "log_likelihood": report.bmm.log_likelihood,
        }
    else:
        doc["bmm"] = None
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> NoiseReport:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {doc.get('version')}")
    bmm = None
    if doc["bmm"] is not None:
        b = doc["bmm"]
        bmm = BmmFit(
            alpha=np.array(b["alpha"]),
            beta=np.array(b["beta"]),
            weight=np.array(b["weight"]),
            threshold=b["threshold"],
            low_component=b["low_component"],
            converged=b["converged"],
            iterations=b["iterations"],
            log_likelihood=b["log_likelihood"],
            threshold_fallback=b["threshold_fallback"],
        )
    return NoiseReport(
        noise_estimate=doc["noise_estimate"],
        noisy_indices=np.array(doc["noisy_indices"], dtype=np.int64),
        score_used=doc["score_used"],
        bmm=bmm,
        degenerate=doc["degenerate"],
        metrics=doc["metrics"],
        provenance=doc["provenance"],
    )


def save_filtered_indices(report: NoiseReport, path) -> None:
    """One flagged example id per line, for consumption by external trainers."""
    with open(path, "w") as fh:
        for i in report.noisy_indices:
            fh.write(f"{int(i)}\n")
