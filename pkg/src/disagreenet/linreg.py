"""Linear-regression overfit laboratory.

Trains an ensemble of linear models with full-batch gradient descent on a
shared design matrix and tracks, at every step: the inter-model disagreement
(mean per-test-point variance of the test errors), per-model test errors,
overfit flags, and the exact first-order bookkeeping behind the
overfit / cross-gradient sign criterion.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .trainer import train_linear_ensemble


@dataclass
class LinRegExperiment:
    x_train: np.ndarray          # (d, M)
    y_train: np.ndarray          # (M,)
    x_test: np.ndarray           # (d, N_test)
    y_test: np.ndarray           # (N_test,)
    q: int = 16
    lr: float = 1e-3
    steps: int = 200
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.x_train = np.asarray(self.x_train, dtype=np.float64)
        self.y_train = np.asarray(self.y_train, dtype=np.float64)
        self.x_test = np.asarray(self.x_test, dtype=np.float64)
        self.y_test = np.asarray(self.y_test, dtype=np.float64)
        if self.q < 1:
            raise ValueError("Q must be >= 1")


@dataclass
class ExperimentResult:
    """Step-indexed diagnostics.

    Arrays indexed by step s in [0, S] describe the model state after s
    updates; arrays indexed by transition s in [0, S) describe the update
    from step s to s + 1.
    """

    disag: np.ndarray               # (S+1,)
    test_sq_error: np.ndarray       # (S+1, Q) squared test error per model
    train_loss: np.ndarray          # (S+1, Q)
    overfit: np.ndarray             # (S, Q) bool: test error rose over the step
    main_term: np.ndarray           # (S, Q)  2*mu * Delta(i,i) . Delta(i,t)
    residual: np.ndarray            # (S, Q)  ||mu * Delta(i,i) X_t||^2 (exact O(mu^2))
    cross_dot: np.ndarray           # (S, Q)  Delta(i,i) . Delta(i,t)
    snapshots: np.ndarray = field(repr=False, default=None)  # (Q, S+1, d)


def make_noisy_regression(dim: int, train_size: int, test_size: int,
                          noise_std: float, seed: int):
    """Random Gaussian design with a planted linear teacher plus label noise.

    Defaults target the overparameterized regime (dim > train_size), where
    gradient descent reliably overfits the noisy targets.
    """
    rng = np.random.default_rng(seed)
    teacher = rng.normal(0.0, 1.0, size=dim) / np.sqrt(dim)
    x_train = rng.normal(0.0, 1.0, size=(dim, train_size))
    x_test = rng.normal(0.0, 1.0, size=(dim, test_size))
    y_train = teacher @ x_train + noise_std * rng.normal(size=train_size)
    y_test = teacher @ x_test
    return x_train, y_train, x_test, y_test


def disagreement(test_errors: np.ndarray) -> float:
    """Mean pairwise squared gap of test-error vectors over 2 Q^2 pairs.

    Equals the biased per-test-point variance across models, summed over
    test points.
    """
    q = test_errors.shape[0]
    centered = test_errors - test_errors.mean(axis=0, keepdims=True)
    return float((centered ** 2).sum() / q)


def run_experiment(exp: LinRegExperiment) -> ExperimentResult:
    """Train the ensemble and compute every per-step diagnostic exactly."""
    snaps = train_linear_ensemble(
        exp.x_train, exp.y_train, exp.q, exp.steps, exp.lr, exp.seed,
        init_scale=exp.init_scale,
    )
    s_, q_ = exp.steps, exp.q
    xt, yt = exp.x_test, exp.y_test
    x, y = exp.x_train, exp.y_train

    disag = np.zeros(s_ + 1)
    test_sq = np.zeros((s_ + 1, q_))
    train_loss = np.zeros((s_ + 1, q_))
    overfit = np.zeros((s_, q_), dtype=bool)
    main_term = np.zeros((s_, q_))
    residual = np.zeros((s_, q_))
    cross_dot = np.zeros((s_, q_))

    for s in range(s_ + 1):
        w = snaps[:, s, :]                  # (Q, d)
        e_test = w @ xt - yt                # (Q, N_test)
        e_train = w @ x - y                 # (Q, M)
        disag[s] = disagreement(e_test)
        test_sq[s] = (e_test ** 2).sum(axis=1)
        train_loss[s] = 0.5 * (e_train ** 2).sum(axis=1)
        if s < s_:
            d_self = e_train @ x.T          # (Q, d)  gradient Delta(i,i)
            d_cross = e_test @ xt.T         # (Q, d)  cross gradient Delta(i,t)
            cross_dot[s] = (d_self * d_cross).sum(axis=1)
            main_term[s] = 2.0 * exp.lr * cross_dot[s]
            residual[s] = ((exp.lr * (d_self @ xt)) ** 2).sum(axis=1)
    overfit[:] = test_sq[1:] > test_sq[:-1]

    return ExperimentResult(
        disag=disag,
        test_sq_error=test_sq,
        train_loss=train_loss,
        overfit=overfit,
        main_term=main_term,
        residual=residual,
        cross_dot=cross_dot,
        snapshots=snaps,
    )


def check_lemma1(result: ExperimentResult, residual_ratio: float = 0.1) -> dict:
    """Sign test: test error rises over a step iff the gradient step opposes
    the cross gradient.

    The first-order argument drops an O(mu^2) term; here that term is
    computed exactly, and steps where it reaches ``residual_ratio`` of the
    first-order term (or where the first-order term vanishes) are excluded
    rather than trusted.
    """
    change = result.test_sq_error[1:] - result.test_sq_error[:-1]
    included = (result.main_term != 0) & (
        result.residual < residual_ratio * np.abs(result.main_term)
    )
    agree = np.sign(change) == np.sign(-result.cross_dot)
    n_inc = int(included.sum())
    return {
        "included": included,
        "agree": agree,
        "included_steps": n_inc,
        "excluded_steps": int(included.size - n_inc),
        "agreement_rate": float(agree[included].mean()) if n_inc else float("nan"),
    }


def check_lemma2(exp: LinRegExperiment) -> dict:
    """Compare the ensemble-mean weight after training with the least-squares
    solution obtained by a direct linear solve."""
    sxx = exp.x_train @ exp.x_train.T
    syx = exp.y_train @ exp.x_train.T
    if np.linalg.matrix_rank(sxx) < sxx.shape[0]:
        raise ValueError("Sxx is singular; closed form undefined")
    closed_form = np.linalg.solve(sxx.T, syx)
    snaps = train_linear_ensemble(
        exp.x_train, exp.y_train, exp.q, exp.steps, exp.lr, exp.seed,
        init_scale=exp.init_scale,
    )
    empirical = snaps[:, -1, :].mean(axis=0)
    return {
        "empirical_mean_w": empirical,
        "closed_form": closed_form,
        "deviation": float(np.linalg.norm(empirical - closed_form)),
    }


def overfit_disagreement_summary(result: ExperimentResult) -> dict:
    """How disagreement moves on transitions where every model overfits, and
    the correlation between the overfit count and the disagreement change."""
    d_disag = result.disag[1:] - result.disag[:-1]
    all_overfit = result.overfit.all(axis=1)
    counts = result.overfit.sum(axis=1)
    out = {
        "all_overfit_steps": int(all_overfit.sum()),
        "disag_decrease_fraction": (
            float((d_disag[all_overfit] < 0).mean()) if all_overfit.any() else float("nan")
        ),
    }
    if counts.std() > 0 and d_disag.std() > 0:
        out["overfit_disag_correlation"] = float(np.corrcoef(counts, d_disag)[0, 1])
    else:
        out["overfit_disag_correlation"] = float("nan")
    return out


def save_diagnostics_csv(result: ExperimentResult, path) -> None:
    """Per-transition table: step, disag, disag_change, overfit_count,
    lemma1_included, lemma1_agree."""
    lemma1 = check_lemma1(result)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "disag", "disag_change", "overfit_count",
             "lemma1_included", "lemma1_agree"]
        )
        for s in range(result.overfit.shape[0]):
            inc = lemma1["included"][s]
            writer.writerow(
                [
                    s,
                    repr(float(result.disag[s])),
                    repr(float(result.disag[s + 1] - result.disag[s])),
                    int(result.overfit[s].sum()),
                    int(inc.sum()),
                    int((lemma1["agree"][s] & inc).sum()),
                ]
            )
