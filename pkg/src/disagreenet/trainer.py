"""SGD training of small classifier ensembles, and the full-batch linear
regression trainer used by the overfit laboratory.

Each ensemble member is trained independently from its own derived seed
(root seed XOR model index), so deleting a member never perturbs the rest.
Predictions are recorded at visit time within each epoch: every example is
scored exactly once per epoch, by the model state that saw its mini-batch.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .errors import TrainingDivergenceError
from .trace import EnsembleTrace


@dataclass
class TrainConfig:
    ensemble_size: int = 10
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    hidden_units: int = 32          # 0 = multinomial logistic regression
    seed: int = 0
    record_logits: bool = False
    weight_decay: float = 0.0
    lr_schedule: str = "constant"   # "constant" | "cosine"
    sample_with_replacement: bool = False
    eval_at_epoch_end: bool = False

    def __post_init__(self):
        if self.ensemble_size < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("ensemble_size, epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.hidden_units < 0:
            raise ValueError("hidden_units must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


class MlpModel:
    """<=1-hidden-layer network: affine -> ReLU -> affine -> softmax.

    With hidden_units == 0 this reduces to multinomial logistic regression.
    Weights start uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    """

    def __init__(self, num_features, num_classes, hidden_units, rng):
        self.hidden_units = hidden_units
        if hidden_units > 0:
            self.params = [
                _uniform_init(rng, num_features, hidden_units),
                np.zeros(hidden_units),
                _uniform_init(rng, hidden_units, num_classes),
                np.zeros(num_classes),
            ]
        else:
            self.params = [
                _uniform_init(rng, num_features, num_classes),
                np.zeros(num_classes),
            ]

    def logits(self, x):
        if self.hidden_units > 0:
            w1, b1, w2, b2 = self.params
            return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2
        w, b = self.params
        return x @ w + b

    def loss_and_grads(self, x, y):
        """Mean cross-entropy over the batch and its parameter gradients.

        Overflow is allowed to propagate as inf/nan; divergence is detected
        from the loss by the caller, so the numpy warnings are suppressed.
        """
        with np.errstate(over="ignore", invalid="ignore"):
            return self._loss_and_grads(x, y)

    def _loss_and_grads(self, x, y):
        if self.hidden_units > 0:
            w1, b1, w2, b2 = self.params
            pre = x @ w1 + b1
            hidden = np.maximum(pre, 0.0)
            logits = hidden @ w2 + b2
        else:
            w, b = self.params
            logits = x @ w + b

        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        n = x.shape[0]
        loss = -log_probs[np.arange(n), y].mean()

        delta = np.exp(log_probs)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        if self.hidden_units > 0:
            g_w2 = hidden.T @ delta
            g_b2 = delta.sum(axis=0)
            d_hidden = delta @ w2.T
            d_hidden[pre <= 0] = 0.0
            g_w1 = x.T @ d_hidden
            g_b1 = d_hidden.sum(axis=0)
            grads = [g_w1, g_b1, g_w2, g_b2]
        else:
            grads = [x.T @ delta, delta.sum(axis=0)]
        return loss, grads, logits


def _uniform_init(rng, fan_in, fan_out):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.learning_rate


def train_ensemble(ds: LabeledDataset, cfg: TrainConfig,
                   workers: int = 1) -> EnsembleTrace:
    """Train an ensemble of independently seeded models, recording a dense
    [epochs x models x examples] prediction trace.

    Members may train on worker threads; each writes only its own model slice
    of the trace, so the result is identical for any worker count.
    """
    if ds.num_examples == 0:
        raise ValueError("dataset is empty")

    e_, n_, m_, c_ = cfg.epochs, cfg.ensemble_size, ds.num_examples, ds.num_classes
    predicted = np.zeros((e_, n_, m_), dtype=np.int32)
    logits_arr = np.zeros((e_, n_, m_, c_)) if cfg.record_logits else None

    x, y = ds.features, ds.given_labels

    def train_member(i):
        rng = np.random.default_rng(cfg.seed ^ i)
        model = MlpModel(ds.num_features, c_, cfg.hidden_units, rng)
        velocity = [np.zeros_like(p) for p in model.params]
        for epoch in range(e_):
            lr = _epoch_lr(cfg, epoch)
            visited = np.zeros(m_, dtype=bool)
            if cfg.sample_with_replacement:
                n_batches = -(-m_ // cfg.batch_size)
                batches = [
                    rng.integers(0, m_, size=cfg.batch_size) for _ in range(n_batches)
                ]
            else:
                order = rng.permutation(m_)
                batches = [
                    order[k : k + cfg.batch_size]
                    for k in range(0, m_, cfg.batch_size)
                ]
            for batch in batches:
                loss, grads, logits = model.loss_and_grads(x[batch], y[batch])
                if not math.isfinite(loss):
                    raise TrainingDivergenceError(
                        f"non-finite loss in model {i} at epoch {epoch}",
                        model=i,
                        epoch=epoch,
                    )
                if not cfg.eval_at_epoch_end:
                    predicted[epoch, i, batch] = logits.argmax(axis=1)
                    if logits_arr is not None:
                        logits_arr[epoch, i, batch] = logits
                    visited[batch] = True
                for p, v, g in zip(model.params, velocity, grads):
                    if cfg.weight_decay:
                        g = g + cfg.weight_decay * p
                    v *= cfg.momentum
                    v += g
                    p -= lr * v
            if cfg.eval_at_epoch_end:
                logits = model.logits(x)
                predicted[epoch, i] = logits.argmax(axis=1)
                if logits_arr is not None:
                    logits_arr[epoch, i] = logits
            elif not visited.all():
                # with-replacement sampling can leave gaps; fill them with an
                # end-of-epoch evaluation so the trace stays dense
                rest = np.flatnonzero(~visited)
                logits = model.logits(x[rest])
                predicted[epoch, i, rest] = logits.argmax(axis=1)
                if logits_arr is not None:
                    logits_arr[epoch, i, rest] = logits

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(train_member, range(n_)))
    else:
        for i in range(n_):
            train_member(i)

    return EnsembleTrace(
        predicted=predicted,
        num_classes=c_,
        labels=y.copy(),
        logits=logits_arr,
        seed_lineage=f"train_ensemble seed={cfg.seed} per-model=seed^i",
    )


def train_linear_ensemble(x, y, q: int, steps: int, lr: float, seed: int,
                          init_scale: float = 1.0) -> np.ndarray:
    """Full-batch GD on the squared loss for Q independently initialized
    linear models.

    x has shape (d, M) with examples as columns; y has shape (M,).  The
    update is W <- W - lr * (W Sxx - Syx) with Sxx = X X^T, Syx = y X^T.
    Returns snapshots of shape (Q, steps + 1, d) including the init.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if q < 1:
        raise ValueError("Q must be >= 1")
    d, m = x.shape
    sxx = x @ x.T
    syx = y @ x.T
    spectral = np.linalg.norm(sxx, 2)
    if lr * spectral >= 2.0 and lr > 0:
        raise ValueError(
            f"unstable step size: lr * ||Sxx|| = {lr * spectral:.3g} >= 2"
        )

    bound = 1e6 * (1.0 + abs(init_scale)) * (1.0 + np.linalg.norm(y))
    snapshots = np.zeros((q, steps + 1, d))
    for i in range(q):
        rng = np.random.default_rng(seed ^ i)
        w = rng.normal(0.0, 1.0, size=d) * init_scale
        snapshots[i, 0] = w
        for s in range(steps):
            w = w - lr * (w @ sxx - syx)
            if not np.all(np.isfinite(w)) or np.linalg.norm(w) > bound:
                raise TrainingDivergenceError(
                    f"linear model {i} diverged at step {s}", model=i, epoch=s
                )
            snapshots[i, s + 1] = w
    return snapshots
