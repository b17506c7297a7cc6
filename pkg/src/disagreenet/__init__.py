"""Noisy-label detection from ensemble agreement dynamics.

Train an ensemble of small classifiers, score each training example by how
early and how consistently the ensemble learns it, fit a two-component Beta
mixture to the score distribution, and flag the low-score side as noisy.
A companion linear-regression laboratory verifies the overfit/disagreement
dynamics the method builds on.
"""

from .bmm import BmmFit, fit_bmm, intersection_threshold
from .dataset import (
    LabeledDataset,
    NoiseSpec,
    cyclic_permutation,
    inject_noise,
    load_csv,
    make_blobs,
    save_csv,
)
from .errors import (
    DegenerateFitError,
    DisagreeNetError,
    FidelityError,
    IngestionError,
    ParseError,
    TraceFormatError,
    TrainingDivergenceError,
)
from .linreg import (
    ExperimentResult,
    LinRegExperiment,
    check_lemma1,
    check_lemma2,
    make_noisy_regression,
    run_experiment,
)
from .pipeline import (
    NoiseReport,
    disagreenet,
    filter_and_retrain,
    identification_metrics,
    normalize_scores,
    run_noise_identification,
)
from .scores import (
    BiSeries,
    ScoreTable,
    bi_series,
    binomial_distance,
    compute_scores,
    cum_loss,
    elp,
    lm,
    mean_margin,
    slope_analysis,
    tpa,
)
from .seeds import derive_seed
from .trace import EnsembleTrace, ingest_external, load_trace, save_trace
from .trainer import TrainConfig, train_ensemble, train_linear_ensemble

__version__ = "0.1.0"

__all__ = [
    "BiSeries",
    "BmmFit",
    "DegenerateFitError",
    "DisagreeNetError",
    "EnsembleTrace",
    "ExperimentResult",
    "FidelityError",
    "IngestionError",
    "LabeledDataset",
    "LinRegExperiment",
    "NoiseReport",
    "NoiseSpec",
    "ParseError",
    "ScoreTable",
    "TraceFormatError",
    "TrainConfig",
    "TrainingDivergenceError",
    "bi_series",
    "binomial_distance",
    "check_lemma1",
    "check_lemma2",
    "compute_scores",
    "cum_loss",
    "cyclic_permutation",
    "derive_seed",
    "disagreenet",
    "elp",
    "filter_and_retrain",
    "fit_bmm",
    "identification_metrics",
    "ingest_external",
    "inject_noise",
    "intersection_threshold",
    "lm",
    "load_csv",
    "load_trace",
    "make_blobs",
    "make_noisy_regression",
    "mean_margin",
    "normalize_scores",
    "run_experiment",
    "run_noise_identification",
    "save_csv",
    "save_trace",
    "slope_analysis",
    "tpa",
    "train_ensemble",
    "train_linear_ensemble",
]
